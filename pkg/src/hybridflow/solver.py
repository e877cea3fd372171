"""Differentiable steady 2-D compressible Euler solver on triangular meshes.

Cell-centered first-order finite volumes with a local Lax-Friedrichs flux,
explicit local pseudo-time stepping, freestream-ghost farfield boundaries and
a pressure-only slip wall on the body. Robust and deliberately simple: the
point is not shock resolution but a coarse flow layer whose outputs are
exactly differentiable with respect to the mesh coordinates, the angle of
attack and the Mach number.

Gradients come from an unrolled reverse sweep: `solve(record=True)` runs the
fixed iteration budget on a tape (see autodiff) and `solve_backward` replays
it in reverse. This differentiates the truncated iteration actually computed,
which is the right object when the coarse solve is not run to convergence.

Nondimensionalization: freestream density 1 and sound speed 1, so the
freestream pressure is 1/gamma and speeds are Mach numbers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from types import SimpleNamespace

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Var, value_of
from .mesh import Mesh

AIRFOIL = "airfoil"
FARFIELD = "farfield"

# columns of the per-cell primitive stack used during assembly
_RHO, _UX, _UY, _P, _EP, _A = range(6)


class SolverError(RuntimeError):
    """Raised for nonphysical states, bad meshes, or record mismatches."""

    def __init__(self, message: str, iteration: int | None = None):
        if iteration is not None:
            message = f"iteration {iteration}: {message}"
        super().__init__(message)
        self.iteration = iteration


@dataclass
class FreestreamSpec:
    """Farfield flow condition. aoa is in degrees; mach is nondimensional."""

    aoa: float
    mach: float
    gamma: float = 1.4

    def __post_init__(self):
        self.aoa = float(self.aoa)
        self.mach = float(self.mach)
        self.gamma = float(self.gamma)
        if not self.mach > 0.0:
            raise ValueError(f"mach must be > 0, got {self.mach}")
        if not -90.0 < self.aoa < 90.0:
            raise ValueError(f"aoa must lie in (-90, 90) degrees, got {self.aoa}")
        if not self.gamma > 1.0:
            raise ValueError(f"gamma must be > 1, got {self.gamma}")


@dataclass
class FlowState:
    """Per-cell conservative variables (rho, rho*u, rho*v, rho*E)."""

    conservative: np.ndarray  # (M, 4)

    def __post_init__(self):
        self.conservative = np.asarray(self.conservative, dtype=np.float64)
        if self.conservative.ndim != 2 or self.conservative.shape[1] != 4:
            raise ValueError(f"conservative state must be (M, 4), got {self.conservative.shape}")

    @property
    def num_cells(self) -> int:
        return self.conservative.shape[0]

    def primitives(self, gamma: float = 1.4) -> np.ndarray:
        """(M, 4) array of (rho, u, v, p)."""
        q = self.conservative
        rho = q[:, 0]
        u = q[:, 1] / rho
        v = q[:, 2] / rho
        p = (gamma - 1.0) * (q[:, 3] - 0.5 * rho * (u * u + v * v))
        return np.stack([rho, u, v, p], axis=1)

    @classmethod
    def from_primitives(cls, prim: np.ndarray, gamma: float = 1.4) -> "FlowState":
        prim = np.asarray(prim, dtype=np.float64)
        rho, u, v, p = prim[:, 0], prim[:, 1], prim[:, 2], prim[:, 3]
        e = p / (gamma - 1.0) + 0.5 * rho * (u * u + v * v)
        return cls(np.stack([rho, rho * u, rho * v, e], axis=1))

    def validate(self, gamma: float = 1.4) -> None:
        prim = self.primitives(gamma)
        if not np.all(prim[:, 0] > 0.0):
            raise SolverError("nonphysical state: nonpositive density")
        if not np.all(prim[:, 3] > 0.0):
            raise SolverError("nonphysical state: nonpositive pressure")


@dataclass
class ForwardRecord:
    """Tape and leaf variables of one recorded solve; input to solve_backward."""

    tape: Tape
    x: Var
    y: Var
    aoa: Var
    mach: Var
    node_fields: Var
    num_nodes: int
    spec: FreestreamSpec


@dataclass
class SolverOutput:
    node_fields: np.ndarray        # (N, 3): vx, vy, p at mesh nodes
    iterations_run: int
    final_residual_norm: float
    cell_state: FlowState | None = None
    record: ForwardRecord | None = None


def freestream_state(spec: FreestreamSpec) -> np.ndarray:
    """Conservative freestream cell values (rho=1, |u|=mach, p=1/gamma)."""
    aoa_rad = math.radians(spec.aoa)
    u = spec.mach * math.cos(aoa_rad)
    v = spec.mach * math.sin(aoa_rad)
    p = 1.0 / spec.gamma
    e = p / (spec.gamma - 1.0) + 0.5 * (u * u + v * v)
    return np.array([1.0, u, v, e], dtype=np.float64)


# ---------------------------------------------------------------------------
# topology (pure integer data, independent of coordinates)


@dataclass
class _Topology:
    tri: np.ndarray          # (M, 3)
    num_nodes: int
    int_left: np.ndarray     # (Fi,) owning cell; face normal points out of it
    int_right: np.ndarray
    int_a: np.ndarray        # (Fi,) face endpoints, ordered as traversed by int_left
    int_b: np.ndarray
    far_cell: np.ndarray
    far_a: np.ndarray
    far_b: np.ndarray
    wall_cell: np.ndarray
    wall_a: np.ndarray
    wall_b: np.ndarray


def _resolve_roles(mesh: Mesh, marker_roles: dict | None) -> dict[str, str]:
    roles: dict[str, str] = {}
    for m in mesh.markers:
        if marker_roles is not None and m.tag in marker_roles:
            role = marker_roles[m.tag]
        elif m.tag in (AIRFOIL, FARFIELD):
            role = m.tag
        else:
            raise SolverError(
                f"marker '{m.tag}' has no boundary role; pass marker_roles "
                f"mapping it to '{AIRFOIL}' or '{FARFIELD}'")
        if role not in (AIRFOIL, FARFIELD):
            raise SolverError(f"marker '{m.tag}': unknown role '{role}'")
        roles[m.tag] = role
    return roles


def _build_topology(mesh: Mesh, marker_roles: dict | None = None) -> _Topology:
    tri = mesh.element_array()
    n_nodes = mesh.num_nodes

    referenced = np.zeros(n_nodes, dtype=bool)
    referenced[tri.reshape(-1)] = True
    if not referenced.all():
        orphan = int(np.flatnonzero(~referenced)[0])
        raise SolverError(f"node {orphan} is not referenced by any element")

    edge_map: dict[tuple[int, int], list[tuple[int, int, int]]] = {}
    for e, (v0, v1, v2) in enumerate(tri):
        for a, b in ((v0, v1), (v1, v2), (v2, v0)):
            key = (a, b) if a < b else (b, a)
            edge_map.setdefault(key, []).append((e, int(a), int(b)))

    roles = _resolve_roles(mesh, marker_roles)
    marker_edges: dict[tuple[int, int], str] = {}
    for m in mesh.markers:
        for a, b in m.segments:
            key = (a, b) if a < b else (b, a)
            if key in marker_edges:
                raise SolverError(f"edge {key} appears in more than one marker")
            marker_edges[key] = roles[m.tag]

    int_faces: list[tuple[int, int, int, int]] = []
    far_faces: list[tuple[int, int, int]] = []
    wall_faces: list[tuple[int, int, int]] = []
    for key, owners in edge_map.items():
        if len(owners) > 2:
            raise SolverError(f"edge {key} is shared by {len(owners)} elements")
        if len(owners) == 2:
            if key in marker_edges:
                raise SolverError(f"marker edge {key} is interior to the mesh")
            (el, a, b), (er, _, _) = owners
            int_faces.append((el, er, a, b))
        else:
            role = marker_edges.get(key)
            if role is None:
                raise SolverError(f"boundary edge {key} is not covered by any marker")
            (e, a, b) = owners[0]
            if role == FARFIELD:
                far_faces.append((e, a, b))
            else:
                wall_faces.append((e, a, b))

    def cols(rows, n):
        arr = np.asarray(rows, dtype=np.int64).reshape(-1, n)
        return [np.ascontiguousarray(arr[:, j]) for j in range(n)]

    il, ir, ia, ib = cols(int_faces, 4)
    fc, fa, fb = cols(far_faces, 3)
    wc, wa, wb = cols(wall_faces, 3)
    return _Topology(tri=tri, num_nodes=n_nodes,
                     int_left=il, int_right=ir, int_a=ia, int_b=ib,
                     far_cell=fc, far_a=fa, far_b=fb,
                     wall_cell=wc, wall_a=wa, wall_b=wb)


# ---------------------------------------------------------------------------
# geometry and flux assembly (generic: runs on plain arrays or on the tape)


def _face_normals(x, y, a_idx, b_idx):
    # outward normal of the owning CCW cell, scaled by face length
    xa, ya = ad.take(x, a_idx), ad.take(y, a_idx)
    xb, yb = ad.take(x, b_idx), ad.take(y, b_idx)
    nvx = yb - ya
    nvy = xa - xb
    length = ad.sqrt(nvx * nvx + nvy * nvy)
    return nvx, nvy, length


def _geometry(topo: _Topology, x, y):
    tri = topo.tri
    xi, yi = ad.take(x, tri[:, 0]), ad.take(y, tri[:, 0])
    xj, yj = ad.take(x, tri[:, 1]), ad.take(y, tri[:, 1])
    xk, yk = ad.take(x, tri[:, 2]), ad.take(y, tri[:, 2])
    cross = (xj - xi) * (yk - yi) - (xk - xi) * (yj - yi)
    if not np.all(value_of(cross) > 0.0):
        bad = int(np.flatnonzero(value_of(cross) <= 0.0)[0])
        raise SolverError(f"element {bad} has non-positive orientation; "
                          "solver requires consistently counterclockwise triangles")
    area = 0.5 * cross
    l01 = ad.sqrt((xj - xi) * (xj - xi) + (yj - yi) * (yj - yi))
    l12 = ad.sqrt((xk - xj) * (xk - xj) + (yk - yj) * (yk - yj))
    l20 = ad.sqrt((xi - xk) * (xi - xk) + (yi - yk) * (yi - yk))
    perimeter = l01 + l12 + l20
    geom = SimpleNamespace()
    geom.area = area
    geom.inv_area = 1.0 / area
    geom.incircle_d = 4.0 * area / perimeter
    # quarter incircle diameter = area / perimeter: with the cell max wave
    # speed this makes CFL = 1 the explicit stability bound
    geom.dt_scale = area / perimeter
    geom.int_n = _face_normals(x, y, topo.int_a, topo.int_b)
    geom.far_n = _face_normals(x, y, topo.far_a, topo.far_b)
    geom.wall_n = _face_normals(x, y, topo.wall_a, topo.wall_b)
    return geom


def _freestream_values(aoa_deg, mach, gamma: float):
    """Freestream primitives/conservatives; aoa and mach may be tape Vars."""
    aoa_rad = aoa_deg * (math.pi / 180.0)
    u = mach * ad.cos(aoa_rad)
    v = mach * ad.sin(aoa_rad)
    p = 1.0 / gamma
    e = p / (gamma - 1.0) + 0.5 * (u * u + v * v)
    fs = SimpleNamespace()
    fs.u, fs.v, fs.p, fs.ep = u, v, p, e + p
    fs.sound = 1.0  # sqrt(gamma * p / rho) with rho=1, p=1/gamma
    fs.cons = ad.stack_last([np.float64(1.0), u, v, e])
    return fs


def _primitives(U, gamma: float, iteration: int | None = None):
    rho = ad.column(U, 0)
    mx = ad.column(U, 1)
    my = ad.column(U, 2)
    en = ad.column(U, 3)
    if not np.all(value_of(rho) > 0.0):
        raise SolverError("nonphysical state: nonpositive density", iteration)
    inv_rho = 1.0 / rho
    u = mx * inv_rho
    v = my * inv_rho
    ke = 0.5 * (mx * u + my * v)
    p = (gamma - 1.0) * (en - ke)
    if not np.all(value_of(p) > 0.0):
        raise SolverError("nonphysical state: nonpositive pressure", iteration)
    a = ad.sqrt(gamma * (p * inv_rho))
    P = ad.stack_last([rho, u, v, p, en + p, a])
    return P, u, v, p, a


def _side_flux(P_at, nvx, nvy, length):
    """Physical flux through a face (normal scaled by length) and the
    matching signal speed (|u.n| + a) * length for the dissipation term."""
    rho = ad.column(P_at, _RHO)
    u = ad.column(P_at, _UX)
    v = ad.column(P_at, _UY)
    p = ad.column(P_at, _P)
    ep = ad.column(P_at, _EP)
    a = ad.column(P_at, _A)
    un = u * nvx + v * nvy
    f0 = rho * un
    flux = ad.stack_last([f0, f0 * u + p * nvx, f0 * v + p * nvy, ep * un])
    lam = ad.absolute(un) + a * length
    return flux, lam


def _ghost_flux(fs, nvx, nvy, length):
    un = fs.u * nvx + fs.v * nvy
    flux = ad.stack_last([un, un * fs.u + fs.p * nvx, un * fs.v + fs.p * nvy, fs.ep * un])
    lam = ad.absolute(un) + fs.sound * length
    return flux, lam


def _assemble(topo: _Topology, geom, P, U, fs):
    """Per-cell residual: net outward flux over each cell's faces.

    The interior flux is computed once per face and scattered with opposite
    signs into the two incident cells, so conservation holds exactly.
    """
    n_cells = topo.tri.shape[0]
    parts = SimpleNamespace()

    nvx, nvy, length = geom.int_n
    pl = ad.take(P, topo.int_left)
    pr = ad.take(P, topo.int_right)
    fl, laml = _side_flux(pl, nvx, nvy, length)
    fr, lamr = _side_flux(pr, nvx, nvy, length)
    lam = ad.maximum(laml, lamr)
    du = ad.take(U, topo.int_right) - ad.take(U, topo.int_left)
    int_flux = 0.5 * (fl + fr) - ad.reshape(0.5 * lam, (-1, 1)) * du
    res = ad.scatter_add(topo.int_left, int_flux, n_cells) \
        + ad.scatter_add(topo.int_right, -int_flux, n_cells)
    parts.int_flux = int_flux

    nvx, nvy, length = geom.far_n
    pb = ad.take(P, topo.far_cell)
    fb, lamb = _side_flux(pb, nvx, nvy, length)
    fg, lamg = _ghost_flux(fs, nvx, nvy, length)
    lam = ad.maximum(lamb, lamg)
    du = fs.cons - ad.take(U, topo.far_cell)
    far_flux = 0.5 * (fb + fg) - ad.reshape(0.5 * lam, (-1, 1)) * du
    res = res + ad.scatter_add(topo.far_cell, far_flux, n_cells)
    parts.far_flux = far_flux

    nvx, nvy, _ = geom.wall_n
    pw = ad.take(ad.column(P, _P), topo.wall_cell)
    zero = np.zeros(len(topo.wall_cell))
    wall_flux = ad.stack_last([zero, pw * nvx, pw * nvy, zero])
    res = res + ad.scatter_add(topo.wall_cell, wall_flux, n_cells)
    parts.wall_flux = wall_flux

    return res, parts


def _node_average(topo: _Topology, geom, u, v, p):
    """Cell-area-weighted average of the primitive fields at the mesh nodes."""
    tri = topo.tri
    q = ad.stack_last([u, v, p])
    aq = ad.reshape(geom.area, (-1, 1)) * q
    num = ad.scatter_add(tri[:, 0], aq, topo.num_nodes) \
        + ad.scatter_add(tri[:, 1], aq, topo.num_nodes) \
        + ad.scatter_add(tri[:, 2], aq, topo.num_nodes)
    den = ad.scatter_add(tri[:, 0], geom.area, topo.num_nodes) \
        + ad.scatter_add(tri[:, 1], geom.area, topo.num_nodes) \
        + ad.scatter_add(tri[:, 2], geom.area, topo.num_nodes)
    return num / ad.reshape(den, (-1, 1))


def _rms(values: np.ndarray) -> float:
    return float(np.sqrt(np.mean(values * values)))


# ---------------------------------------------------------------------------
# public operations


def euler_residual(mesh: Mesh, state: FlowState, spec: FreestreamSpec,
                   marker_roles: dict | None = None) -> np.ndarray:
    """Net outward flux per cell for the given state, as an (M, 4) array."""
    topo = _build_topology(mesh, marker_roles)
    geom = _geometry(topo, mesh.nodes[:, 0], mesh.nodes[:, 1])
    fs = _freestream_values(spec.aoa, spec.mach, spec.gamma)
    P, *_ = _primitives(state.conservative, spec.gamma)
    res, _ = _assemble(topo, geom, P, state.conservative, fs)
    return res


def face_fluxes(mesh: Mesh, state: FlowState, spec: FreestreamSpec,
                marker_roles: dict | None = None):
    """Assembly diagnostics: the per-face flux arrays and the face incidence.

    Returns a namespace with int_left/int_right/int_flux, far_cell/far_flux,
    wall_cell/wall_flux and the assembled residual; the residual equals the
    signed scatter of exactly these flux arrays.
    """
    topo = _build_topology(mesh, marker_roles)
    geom = _geometry(topo, mesh.nodes[:, 0], mesh.nodes[:, 1])
    fs = _freestream_values(spec.aoa, spec.mach, spec.gamma)
    P, *_ = _primitives(state.conservative, spec.gamma)
    res, parts = _assemble(topo, geom, P, state.conservative, fs)
    return SimpleNamespace(
        residual=res,
        int_left=topo.int_left, int_right=topo.int_right, int_flux=parts.int_flux,
        far_cell=topo.far_cell, far_flux=parts.far_flux,
        wall_cell=topo.wall_cell, wall_flux=parts.wall_flux,
    )


def solve(mesh: Mesh, spec: FreestreamSpec, max_iters: int,
          residual_tol: float = 0.0, *, cfl: float = 0.8,
          record: bool = False, marker_roles: dict | None = None) -> SolverOutput:
    """Run the explicit pseudo-time iteration from freestream initial data.

    Stops when the residual RMS drops below residual_tol (checked before each
    step; pass 0 to always run the full budget, which keeps the recorded
    computation graph at a fixed shape) or after max_iters steps. With
    record=True the returned output carries a ForwardRecord for
    solve_backward. Deterministic: identical inputs give bit-identical
    outputs.
    """
    if max_iters < 1:
        raise ValueError(f"max_iters must be >= 1, got {max_iters}")
    topo = _build_topology(mesh, marker_roles)
    n_cells = topo.tri.shape[0]

    if record:
        tape = Tape()
        x = Var(mesh.nodes[:, 0].copy(), tape)
        y = Var(mesh.nodes[:, 1].copy(), tape)
        aoa = Var(np.float64(spec.aoa), tape)
        mach = Var(np.float64(spec.mach), tape)
    else:
        tape = None
        x = np.ascontiguousarray(mesh.nodes[:, 0])
        y = np.ascontiguousarray(mesh.nodes[:, 1])
        aoa = spec.aoa
        mach = spec.mach

    geom = _geometry(topo, x, y)
    fs = _freestream_values(aoa, mach, spec.gamma)
    U = fs.cons * np.ones((n_cells, 1))

    iterations_run = 0
    res_norm = math.inf
    for it in range(1, max_iters + 1):
        P, u, v, p, a = _primitives(U, spec.gamma, iteration=it)
        res, _ = _assemble(topo, geom, P, U, fs)
        res_norm = _rms(value_of(res))
        if residual_tol > 0.0 and res_norm < residual_tol:
            break
        speed = ad.sqrt(u * u + v * v) + a
        coef = (cfl * geom.dt_scale * geom.inv_area) / speed
        U = U - ad.reshape(coef, (-1, 1)) * res
        iterations_run = it

    P, u, v, p, a = _primitives(U, spec.gamma, iteration=iterations_run)
    node_fields = _node_average(topo, geom, u, v, p)

    rec = None
    if record:
        rec = ForwardRecord(tape=tape, x=x, y=y, aoa=aoa, mach=mach,
                            node_fields=node_fields, num_nodes=mesh.num_nodes,
                            spec=spec)
    return SolverOutput(
        node_fields=np.array(value_of(node_fields), copy=True),
        iterations_run=iterations_run,
        final_residual_norm=res_norm,
        cell_state=FlowState(np.array(value_of(U), copy=True)),
        record=rec,
    )


def cells_to_nodes(mesh: Mesh, state: FlowState, gamma: float = 1.4) -> np.ndarray:
    """(N, 3) node fields (vx, vy, p): area-weighted average over incident cells."""
    tri = mesh.element_array()
    if state.num_cells != tri.shape[0]:
        raise ValueError(f"state has {state.num_cells} cells, mesh has {tri.shape[0]} elements")
    x, y = mesh.nodes[:, 0], mesh.nodes[:, 1]
    xi, yi = x[tri[:, 0]], y[tri[:, 0]]
    xj, yj = x[tri[:, 1]], y[tri[:, 1]]
    xk, yk = x[tri[:, 2]], y[tri[:, 2]]
    area = 0.5 * np.abs((xj - xi) * (yk - yi) - (xk - xi) * (yj - yi))
    prim = state.primitives(gamma)
    q = prim[:, 1:4]  # u, v, p
    num = np.zeros((mesh.num_nodes, 3))
    den = np.zeros(mesh.num_nodes)
    for c in range(3):
        np.add.at(num, tri[:, c], area[:, None] * q)
        np.add.at(den, tri[:, c], area)
    if np.any(den == 0.0):
        orphan = int(np.flatnonzero(den == 0.0)[0])
        raise ValueError(f"node {orphan} is not referenced by any element")
    return num / den[:, None]


def solve_backward(mesh: Mesh, spec: FreestreamSpec, forward_record: ForwardRecord,
                   output_cotangent: np.ndarray):
    """Reverse-mode gradients of the recorded solve's node fields.

    Returns (d_nodes (N, 2), d_aoa, d_mach) for the cotangent (N, 3) applied
    to the node fields. Repeated calls on the same record are allowed and
    give identical results.
    """
    if forward_record is None:
        raise SolverError("solve was run without record=True; no forward record available")
    if forward_record.num_nodes != mesh.num_nodes:
        raise SolverError(
            f"record/mesh mismatch: record has {forward_record.num_nodes} nodes, "
            f"mesh has {mesh.num_nodes}")
    if forward_record.spec != spec:
        raise SolverError("record/spec mismatch: the record was produced for a different "
                          "freestream specification")
    cot = np.asarray(output_cotangent, dtype=np.float64)
    if cot.shape != forward_record.node_fields.value.shape:
        raise SolverError(f"cotangent shape {cot.shape} does not match node fields "
                          f"{forward_record.node_fields.value.shape}")
    forward_record.tape.backward(forward_record.node_fields, cot)

    def grad_or_zero(var, like):
        return var.grad if var.grad is not None else np.zeros_like(like)

    dx = grad_or_zero(forward_record.x, forward_record.x.value)
    dy = grad_or_zero(forward_record.y, forward_record.y.value)
    d_nodes = np.stack([dx, dy], axis=1)
    d_aoa = float(grad_or_zero(forward_record.aoa, 0.0))
    d_mach = float(grad_or_zero(forward_record.mach, 0.0))
    return d_nodes, d_aoa, d_mach
