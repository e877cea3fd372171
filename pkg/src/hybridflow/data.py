"""Datasets: ground-truth generation, experiment splits, sample and checkpoint
files, and the generated desk-scale airfoil meshes the repo ships.

Ground-truth fields live in a small binary container (one file per
(mesh, aoa, mach) triple) keyed by a hash of the mesh, laid out as
``<root>/<mesh_id>/<aoa>_<mach>.fld`` with split definitions under
``<root>/splits/`` and manual exclusion lists under ``<root>/exclusions/``.
The dataset root comes from the CFDGCN_DATA_ROOT environment variable when
set, else ``./data``.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import os
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from . import solver as solvermod
from .mesh import Marker, Mesh, mesh_hash, parse_su2, triangulate, write_su2
from .solver import FreestreamSpec

logger = logging.getLogger(__name__)

DATA_ROOT_ENV = "CFDGCN_DATA_ROOT"

_SAMPLE_MAGIC = b"HFLD"
_SAMPLE_VERSION = 1
_SAMPLE_HEADER = struct.Struct("<4sI32sddQ")

_CHECKPOINT_FORMAT = "hybridflow-checkpoint"
_CHECKPOINT_VERSION = 1


class DatasetError(RuntimeError):
    pass


def resolve_data_root(root=None) -> Path:
    if root is not None:
        return Path(root)
    return Path(os.environ.get(DATA_ROOT_ENV, "data"))


# ---------------------------------------------------------------------------
# domain types


@dataclass
class FieldSample:
    """One labeled example: flow condition plus ground-truth node fields."""

    aoa: float
    mach: float
    mesh_id: str
    fields: np.ndarray  # (N, 3): vx, vy, p

    def __post_init__(self):
        self.fields = np.asarray(self.fields, dtype=np.float64)
        if self.fields.ndim != 2 or self.fields.shape[1] != 3:
            raise DatasetError(f"fields must be (N, 3), got {self.fields.shape}")


@dataclass
class SplitSpec:
    """Named train/test partition over (mesh_id, aoa, mach) triples."""

    name: str
    train: list[tuple[str, float, float]]
    test: list[tuple[str, float, float]]

    def __post_init__(self):
        overlap = set(self.train) & set(self.test)
        if overlap:
            raise DatasetError(f"split '{self.name}' has {len(overlap)} overlapping entries")


@dataclass
class MeshPair:
    fine: Mesh
    coarse: Mesh


@dataclass
class Dataset:
    """Meshes plus materialized train/test samples, ready for the pipeline."""

    meshes: dict[str, MeshPair]
    train: list[FieldSample]
    test: list[FieldSample] = field(default_factory=list)


# ---------------------------------------------------------------------------
# sample container


def sample_path(root, mesh_id: str, aoa: float, mach: float) -> Path:
    return resolve_data_root(root) / mesh_id / f"{aoa:g}_{mach:g}.fld"


def _atomic_write(path: Path, payload: bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(f".{path.name}.tmp{os.getpid()}")
    tmp.write_bytes(payload)
    os.replace(tmp, path)


def sample_bytes(sample: FieldSample, mesh_digest: str) -> bytes:
    digest = bytes.fromhex(mesh_digest)
    if len(digest) != 32:
        raise DatasetError("mesh hash must be a 64-char hex sha256 digest")
    header = _SAMPLE_HEADER.pack(_SAMPLE_MAGIC, _SAMPLE_VERSION, digest,
                                 sample.aoa, sample.mach, sample.fields.shape[0])
    body = np.ascontiguousarray(sample.fields, dtype="<f8").tobytes()
    return header + body


def save_sample(path, sample: FieldSample, mesh_digest: str) -> None:
    _atomic_write(Path(path), sample_bytes(sample, mesh_digest))


def load_sample(path, mesh_id: str, expected_digest: str | None = None) -> FieldSample:
    raw = Path(path).read_bytes()
    if len(raw) < _SAMPLE_HEADER.size:
        raise DatasetError(f"{path}: truncated sample file")
    magic, version, digest, aoa, mach, n = _SAMPLE_HEADER.unpack_from(raw)
    if magic != _SAMPLE_MAGIC:
        raise DatasetError(f"{path}: not a field sample file")
    if version != _SAMPLE_VERSION:
        raise DatasetError(f"{path}: unsupported sample version {version}")
    if expected_digest is not None and digest.hex() != expected_digest:
        raise DatasetError(f"{path}: mesh hash mismatch; sample was generated "
                           "for a different mesh")
    body = raw[_SAMPLE_HEADER.size:]
    if len(body) != 3 * n * 8:
        raise DatasetError(f"{path}: truncated sample file "
                           f"(expected {3 * n * 8} payload bytes, got {len(body)})")
    fields = np.frombuffer(body, dtype="<f8").reshape(n, 3).astype(np.float64)
    return FieldSample(aoa=aoa, mach=mach, mesh_id=mesh_id, fields=fields)


def save_dataset(root, samples: list[FieldSample], meshes: dict[str, Mesh]) -> None:
    """Persist samples under the standard layout; lossless against load_dataset."""
    digests = {mid: mesh_hash(m) for mid, m in meshes.items()}
    for s in samples:
        if s.mesh_id not in digests:
            raise DatasetError(f"no mesh provided for mesh_id '{s.mesh_id}'")
        save_sample(sample_path(root, s.mesh_id, s.aoa, s.mach), s, digests[s.mesh_id])


def load_dataset(root, entries: list[tuple[str, float, float]],
                 meshes: dict[str, Mesh]) -> list[FieldSample]:
    """Load the listed (mesh_id, aoa, mach) samples, re-validating mesh hashes."""
    digests = {mid: mesh_hash(m) for mid, m in meshes.items()}
    samples = []
    for mesh_id, aoa, mach in entries:
        if mesh_id not in digests:
            raise DatasetError(f"no mesh provided for mesh_id '{mesh_id}'")
        path = sample_path(root, mesh_id, aoa, mach)
        if not path.exists():
            raise DatasetError(f"missing sample file {path}")
        samples.append(load_sample(path, mesh_id, digests[mesh_id]))
    return samples


# ---------------------------------------------------------------------------
# ground-truth generation


def generate_ground_truth(fine_mesh: Mesh, params: list[tuple[float, float]],
                          tol: float = 1e-8, max_iters: int = 20000, *,
                          mesh_id: str = "naca0012", root=None, cfl: float = 0.8,
                          threads: int = 1,
                          marker_roles: dict | None = None) -> list[FieldSample]:
    """Converged fine-mesh solves for each (aoa, mach), cached on disk.

    A cached file whose mesh hash matches is loaded without solving. Runs
    that fail to reach `tol` within `max_iters` are logged and excluded from
    the returned list. Concurrent generators are safe: files are written via
    atomic rename.
    """
    if not params:
        raise DatasetError("params list is empty")
    digest = mesh_hash(fine_mesh)

    def produce(pair):
        aoa, mach = pair
        path = sample_path(root, mesh_id, aoa, mach)
        if path.exists():
            return load_sample(path, mesh_id, digest)
        out = solvermod.solve(fine_mesh, FreestreamSpec(aoa=aoa, mach=mach),
                              max_iters, residual_tol=tol, cfl=cfl,
                              marker_roles=marker_roles)
        if out.final_residual_norm >= tol:
            logger.warning("excluding aoa=%g mach=%g: residual %.3e after %d iterations",
                           aoa, mach, out.final_residual_norm, out.iterations_run)
            return None
        sample = FieldSample(aoa=aoa, mach=mach, mesh_id=mesh_id, fields=out.node_fields)
        save_sample(path, sample, digest)
        return sample

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(produce, params))
    else:
        results = [produce(p) for p in params]
    return [s for s in results if s is not None]


def flag_shock(sample: FieldSample, gamma: float = 1.4) -> bool:
    """Heuristic: does the local Mach number exceed 1 anywhere in the field?

    The sample stores (vx, vy, p) only; density is reconstructed from the
    isentropic relation against the freestream state, which is exact for
    smooth flow and close enough near shocks for an inspection aid.
    """
    vx, vy, p = sample.fields[:, 0], sample.fields[:, 1], sample.fields[:, 2]
    rho = np.maximum(gamma * np.maximum(p, 1e-12), 1e-12) ** (1.0 / gamma)
    a = np.sqrt(gamma * np.maximum(p, 1e-12) / rho)
    return bool(np.any(np.hypot(vx, vy) / a > 1.0))


# ---------------------------------------------------------------------------
# splits

_AOA_GRID = [float(a) for a in range(-10, 11)]
_MACH_TRAIN = [0.2, 0.3, 0.35, 0.4, 0.5, 0.55, 0.6, 0.7]
_MACH_TEST = [0.25, 0.45, 0.65]

SPLIT_NAMES = ("interpolation", "generalization", "multi-airfoil")


def _grid(mesh_id, aoas, machs):
    return [(mesh_id, a, m) for a in aoas for m in machs]


def make_split(name: str, data_root=None) -> SplitSpec:
    """The three experiment splits over the 21-AoA x 11-Mach parameter grid.

    interpolation: held-out Mach values interleaved with the training ones.
    generalization: every pair with Mach > 0.5 is test, so training never
    sees a shock; an exclusion list under <root>/exclusions/generalization.csv
    removes any manually flagged training pairs.
    multi-airfoil: train on naca4412 + rae2822, test on naca0012.
    """
    if name == "interpolation":
        return SplitSpec(name=name,
                         train=_grid("naca0012", _AOA_GRID, _MACH_TRAIN),
                         test=_grid("naca0012", _AOA_GRID, _MACH_TEST))
    if name == "generalization":
        universe = sorted(set(_MACH_TRAIN) | set(_MACH_TEST))
        train_mach = [m for m in universe if m <= 0.5]
        test_mach = [m for m in universe if m > 0.5]
        train = _grid("naca0012", _AOA_GRID, train_mach)
        excluded = load_exclusions(data_root, name)
        if excluded:
            train = [t for t in train if t not in excluded]
        return SplitSpec(name=name, train=train,
                         test=_grid("naca0012", _AOA_GRID, test_mach))
    if name == "multi-airfoil":
        train = _grid("naca4412", _AOA_GRID, _MACH_TRAIN) \
            + _grid("rae2822", _AOA_GRID, _MACH_TRAIN)
        return SplitSpec(name=name, train=train,
                         test=_grid("naca0012", _AOA_GRID, _MACH_TEST))
    raise DatasetError(f"unknown split '{name}'; expected one of {SPLIT_NAMES}")


def save_split(split: SplitSpec, data_root=None) -> Path:
    path = resolve_data_root(data_root) / "splits" / f"{split.name}.csv"
    path.parent.mkdir(parents=True, exist_ok=True)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["mesh_id", "aoa", "mach", "role"])
    for role, entries in (("train", split.train), ("test", split.test)):
        for mesh_id, aoa, mach in entries:
            writer.writerow([mesh_id, f"{aoa:g}", f"{mach:g}", role])
    _atomic_write(path, buf.getvalue().encode())
    return path


def load_split(name: str, data_root=None) -> SplitSpec:
    path = resolve_data_root(data_root) / "splits" / f"{name}.csv"
    if not path.exists():
        raise DatasetError(f"missing split file {path}")
    train, test = [], []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            entry = (row["mesh_id"], float(row["aoa"]), float(row["mach"]))
            (train if row["role"] == "train" else test).append(entry)
    return SplitSpec(name=name, train=train, test=test)


def load_exclusions(data_root, name: str) -> set[tuple[str, float, float]]:
    path = resolve_data_root(data_root) / "exclusions" / f"{name}.csv"
    if not path.exists():
        return set()
    out = set()
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            out.add((row["mesh_id"], float(row["aoa"]), float(row["mach"])))
    return out


# ---------------------------------------------------------------------------
# checkpoints (generic container; the pipeline decides what the arrays mean)


def save_checkpoint(path, arrays: dict[str, np.ndarray], meta: dict) -> None:
    meta = dict(meta)
    meta["format"] = _CHECKPOINT_FORMAT
    meta["version"] = _CHECKPOINT_VERSION
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    buf = io.BytesIO()
    np.savez(buf, __meta__=np.frombuffer(json.dumps(meta, sort_keys=True).encode(),
                                         dtype=np.uint8), **arrays)
    _atomic_write(path, buf.getvalue())


def load_checkpoint(path):
    path = Path(path)
    if not path.exists():
        raise DatasetError(f"missing checkpoint {path}")
    with np.load(path) as npz:
        if "__meta__" not in npz:
            raise DatasetError(f"{path}: not a checkpoint file")
        meta = json.loads(bytes(npz["__meta__"].tobytes()).decode())
        if meta.get("format") != _CHECKPOINT_FORMAT:
            raise DatasetError(f"{path}: not a checkpoint file")
        if meta.get("version") != _CHECKPOINT_VERSION:
            raise DatasetError(f"{path}: unsupported checkpoint version {meta.get('version')}")
        arrays = {k: npz[k] for k in npz.files if k != "__meta__"}
    return arrays, meta


# ---------------------------------------------------------------------------
# generated desk-scale meshes


def naca4_profile(x: np.ndarray, thickness: float, camber: float,
                  camber_pos: float, upper: bool) -> np.ndarray:
    """Surface points of a 4-digit profile at chordwise stations x in [0, 1]."""
    x = np.asarray(x, dtype=np.float64)
    t = thickness
    yt = 5.0 * t * (0.2969 * np.sqrt(x) - 0.1260 * x - 0.3516 * x ** 2
                    + 0.2843 * x ** 3 - 0.1036 * x ** 4)
    if camber <= 0.0:
        yc = np.zeros_like(x)
        slope = np.zeros_like(x)
    else:
        m, p = camber, camber_pos
        fore = x < p
        yc = np.where(fore, m / p ** 2 * (2 * p * x - x ** 2),
                      m / (1 - p) ** 2 * ((1 - 2 * p) + 2 * p * x - x ** 2))
        slope = np.where(fore, 2 * m / p ** 2 * (p - x),
                         2 * m / (1 - p) ** 2 * (p - x))
    theta = np.arctan(slope)
    sign = 1.0 if upper else -1.0
    px = x - sign * yt * np.sin(theta)
    py = yc + sign * yt * np.cos(theta)
    return np.stack([px, py], axis=1)


def airfoil_omesh(n_surface: int = 40, n_rings: int = 15, *, thickness: float = 0.12,
                  camber: float = 0.0, camber_pos: float = 0.4,
                  farfield_radius: float = 8.0, growth: float = 1.3) -> Mesh:
    """O-topology quad mesh around a 4-digit airfoil, chord 1 centered at the origin.

    Rings blend from the body to the farfield circle with geometric spacing.
    The element and marker layout matches what the solver expects: an
    'airfoil' marker on the body and a 'farfield' marker on the outer ring.
    n_surface must be even so the mesh is mirror-symmetric for symmetric
    profiles.
    """
    if n_surface % 2 != 0:
        raise ValueError("n_surface must be even")
    if n_rings < 2:
        raise ValueError("need at least 2 rings")
    i = np.arange(n_surface)
    phi = 2.0 * math.pi * i / n_surface
    xc = 0.5 * (1.0 + np.cos(phi))          # cosine clustering: TE at phi=0, LE at phi=pi
    upper = phi <= math.pi
    body = np.where(upper[:, None],
                    naca4_profile(xc, thickness, camber, camber_pos, upper=True),
                    naca4_profile(xc, thickness, camber, camber_pos, upper=False))
    body[:, 0] -= 0.5                        # center the chord
    outer = farfield_radius * np.stack([np.cos(phi), np.sin(phi)], axis=1)

    r = np.arange(n_rings, dtype=np.float64)
    s = (growth ** r - 1.0) / (growth ** (n_rings - 1) - 1.0)
    nodes = (1.0 - s[:, None, None]) * body[None, :, :] + s[:, None, None] * outer[None, :, :]
    nodes = nodes.reshape(-1, 2)

    def idx(ring, sector):
        return ring * n_surface + (sector % n_surface)

    elements = []
    for ring in range(n_rings - 1):
        for sec in range(n_surface):
            # counterclockwise in the flow domain: body-side edge runs against
            # the body parametrization
            elements.append((idx(ring, sec), idx(ring + 1, sec),
                             idx(ring + 1, sec + 1), idx(ring, sec + 1)))

    airfoil_segs = [(idx(0, sec), idx(0, sec + 1)) for sec in range(n_surface)]
    far_segs = [(idx(n_rings - 1, sec), idx(n_rings - 1, sec + 1)) for sec in range(n_surface)]
    mesh = Mesh(nodes=nodes, elements=elements,
                markers=[Marker("airfoil", airfoil_segs), Marker("farfield", far_segs)])

    from .mesh import element_orientations
    tri = triangulate(mesh)
    orient = element_orientations(tri.nodes, tri.element_array())
    if not np.all(orient > 0.0):
        raise DatasetError("generated mesh has non-positive element orientations; "
                           "try more surface points or a smaller growth factor")
    return mesh


def rectangle_mesh(nx: int, ny: int, *, width: float = 1.0, height: float = 1.0,
                   origin: tuple[float, float] = (0.0, 0.0),
                   tag: str = "farfield") -> Mesh:
    """Structured triangulated rectangle with a single boundary marker.

    Handy as an all-farfield domain: no body, so the freestream is an exact
    steady state.
    """
    xs = np.linspace(origin[0], origin[0] + width, nx + 1)
    ys = np.linspace(origin[1], origin[1] + height, ny + 1)
    gx, gy = np.meshgrid(xs, ys, indexing="xy")
    nodes = np.stack([gx.reshape(-1), gy.reshape(-1)], axis=1)

    def idx(ix, iy):
        return iy * (nx + 1) + ix

    elements = []
    for iy in range(ny):
        for ix in range(nx):
            a, b = idx(ix, iy), idx(ix + 1, iy)
            c, d = idx(ix + 1, iy + 1), idx(ix, iy + 1)
            elements.append((a, b, c))
            elements.append((a, c, d))
    segs = []
    for ix in range(nx):
        segs.append((idx(ix, 0), idx(ix + 1, 0)))
        segs.append((idx(ix + 1, ny), idx(ix, ny)))
    for iy in range(ny):
        segs.append((idx(nx, iy), idx(nx, iy + 1)))
        segs.append((idx(0, iy + 1), idx(0, iy)))
    return Mesh(nodes=nodes, elements=elements, markers=[Marker(tag, segs)])


DESK_FINE = "naca0012_fine.su2"
DESK_COARSE = "naca0012_coarse.su2"


def packaged_mesh_text(name: str) -> str:
    return resources.files("hybridflow").joinpath("meshes").joinpath(name).read_text()


def desk_mesh_pair(triangulated: bool = True) -> MeshPair:
    """The shipped ~600-node fine / ~80-node coarse airfoil meshes."""
    fine = parse_su2(packaged_mesh_text(DESK_FINE))
    coarse = parse_su2(packaged_mesh_text(DESK_COARSE))
    if triangulated:
        fine = triangulate(fine)
        coarse = triangulate(coarse)
    return MeshPair(fine=fine, coarse=coarse)


def make_desk_meshes(out_dir) -> tuple[Path, Path]:
    """Regenerate the shipped meshes (deterministic)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    fine = airfoil_omesh(n_surface=40, n_rings=15, farfield_radius=8.0, growth=1.3)
    coarse = airfoil_omesh(n_surface=16, n_rings=5, farfield_radius=8.0, growth=2.2)
    fine_path = out_dir / DESK_FINE
    coarse_path = out_dir / DESK_COARSE
    fine_path.write_text(write_su2(fine))
    coarse_path.write_text(write_su2(coarse))
    return fine_path, coarse_path


def export_fields_csv(path, mesh: Mesh, fields: np.ndarray) -> None:
    """Per-node CSV (x, y, vx, vy, p) for external plotting tools."""
    fields = np.asarray(fields, dtype=np.float64)
    if fields.shape != (mesh.num_nodes, 3):
        raise DatasetError(f"fields shape {fields.shape} does not match mesh "
                           f"({mesh.num_nodes} nodes)")
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["x", "y", "vx", "vy", "p"])
    for (x, y), (vx, vy, p) in zip(mesh.nodes, fields):
        writer.writerow([f"{x:.17g}", f"{y:.17g}", f"{vx:.17g}", f"{vy:.17g}", f"{p:.17g}"])
    _atomic_write(Path(path), buf.getvalue().encode())
