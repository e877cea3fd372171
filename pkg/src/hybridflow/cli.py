"""Command-line entry point for mesh tooling, data generation, training,
evaluation, prediction, and gradient verification.

Exit codes: 0 success, 1 usage/configuration error, 2 data or mesh error,
3 solver failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

import numpy as np

from . import data as datamod
from . import gradcheck as gradcheckmod
from . import pipeline as pipelinemod
from .data import Dataset, DatasetError, MeshPair, desk_mesh_pair, resolve_data_root
from .mesh import MeshFormatError, element_orientations, parse_su2, triangulate, write_su2
from .pipeline import ConfigError, TrainConfig
from .solver import FreestreamSpec, SolverError

logger = logging.getLogger(__name__)

USAGE_ERROR = 1
DATA_ERROR = 2
SOLVER_ERROR = 3


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on usage errors; this tool reserves 2 for data errors
    def error(self, message):
        self.print_usage(sys.stderr)
        raise SystemExit_(USAGE_ERROR, f"error: {message}")


class SystemExit_(Exception):
    def __init__(self, code: int, message: str = ""):
        super().__init__(message)
        self.code = code
        self.message = message


# ---------------------------------------------------------------------------
# config plumbing

_CONFIG_FIELDS = {f.name: f for f in dataclasses.fields(TrainConfig)
                  if f.name != "upsample_chain"}


def load_config_file(path) -> dict:
    """Flat key=value file mirroring the TrainConfig fields."""
    values = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value, got '{raw}'")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if key not in _CONFIG_FIELDS:
            raise ConfigError(f"{path}:{lineno}: unknown config key '{key}'")
        values[key] = _parse_config_value(key, value)
    return values


def _parse_config_value(key: str, value: str):
    hints = {"lr": float, "cfl": float, "gt_tol": float,
             "freeze_boundary": bool, "rmse_per_sample_mean": bool,
             "split": str, "baseline": str, "out_dir": str, "data_root": str,
             "max_steps": int}
    kind = hints.get(key, int)
    if value.lower() in ("none", ""):
        return None
    if kind is bool:
        if value.lower() in ("1", "true", "yes", "on"):
            return True
        if value.lower() in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"config key '{key}' expects a boolean, got '{value}'")
    return kind(value)


def build_train_config(args) -> TrainConfig:
    values = {}
    if getattr(args, "config", None):
        values.update(load_config_file(args.config))
    mapping = {
        "lr": "lr", "batch_size": "batch_size", "coarse_iters": "coarse_iters",
        "epochs": "epochs", "split": "split", "seed": "seed",
        "baseline": "baseline", "threads": "threads", "out": "out_dir",
        "data_root": "data_root", "hidden_channels": "hidden_channels",
        "eval_every": "eval_every", "max_steps": "max_steps",
        "batch": "batch_size",
    }
    for arg_name, cfg_name in mapping.items():
        val = getattr(args, arg_name, None)
        if val is not None:
            values[cfg_name] = val
    return TrainConfig(**values)


def _load_mesh(path) -> "Mesh":
    with open(path) as fh:
        return parse_su2(fh)


def _mesh_pair(args) -> tuple[str, MeshPair]:
    """Fine/coarse meshes from flags, defaulting to the shipped desk pair."""
    mesh_id = getattr(args, "mesh_id", None) or "naca0012"
    if getattr(args, "mesh", None):
        fine = triangulate(_load_mesh(args.mesh))
        if getattr(args, "coarse_mesh", None):
            coarse = triangulate(_load_mesh(args.coarse_mesh))
        else:
            raise ConfigError("--coarse-mesh is required when --mesh is given")
        return mesh_id, MeshPair(fine=fine, coarse=coarse)
    return mesh_id, desk_mesh_pair()


def _split_dataset(args, cfg: TrainConfig) -> Dataset:
    mesh_id, pair = _mesh_pair(args)
    meshes = {mesh_id: pair}
    root = resolve_data_root(cfg.data_root)
    split = datamod.make_split(cfg.split, data_root=root)
    digests = {mid: datamod.mesh_hash(p.fine) for mid, p in meshes.items()}

    def load_entries(entries):
        out, missing = [], 0
        for mid, aoa, mach in entries:
            if mid not in meshes:
                missing += 1
                continue
            path = datamod.sample_path(root, mid, aoa, mach)
            if not path.exists():
                missing += 1
                continue
            out.append(datamod.load_sample(path, mid, digests[mid]))
        return out, missing

    train, miss_train = load_entries(split.train)
    test, miss_test = load_entries(split.test)
    if (miss_train or miss_test) and not getattr(args, "allow_missing", False):
        raise DatasetError(
            f"split '{cfg.split}' is missing {miss_train + miss_test} samples under "
            f"{root}; run gen-data first or pass --allow-missing to use what exists")
    if miss_train or miss_test:
        logger.warning("proceeding without %d missing samples", miss_train + miss_test)
    return Dataset(meshes=meshes, train=train, test=test)


# ---------------------------------------------------------------------------
# subcommands


def cmd_mesh_info(args) -> int:
    mesh = _load_mesh(args.mesh)
    tris = sum(1 for e in mesh.elements if len(e) == 3)
    quads = mesh.num_elements - tris
    print(f"nodes: {mesh.num_nodes}")
    print(f"elements: {mesh.num_elements} ({tris} triangles, {quads} quadrilaterals)")
    for m in mesh.markers:
        print(f"marker '{m.tag}': {len(m.segments)} segments")
    tri_mesh = triangulate(mesh)
    orient = element_orientations(tri_mesh.nodes, tri_mesh.element_array())
    pos, neg, zero = int((orient > 0).sum()), int((orient < 0).sum()), int((orient == 0).sum())
    print(f"orientations (after triangulation): {pos} positive, {neg} negative, {zero} zero")
    return 0


def cmd_convert(args) -> int:
    mesh = triangulate(_load_mesh(args.mesh))
    Path(args.out).write_text(write_su2(mesh))
    print(f"wrote {args.out}: {mesh.num_nodes} nodes, {mesh.num_elements} triangles")
    return 0


def _parse_pairs(text: str) -> list[tuple[float, float]]:
    pairs = []
    for chunk in text.split(","):
        chunk = chunk.strip()
        if not chunk:
            continue
        try:
            aoa, mach = chunk.split(":")
            pairs.append((float(aoa), float(mach)))
        except ValueError:
            raise ConfigError(f"bad --pairs entry '{chunk}'; expected AOA:MACH")
    if not pairs:
        raise ConfigError("--pairs produced no (aoa, mach) entries")
    return pairs


def cmd_gen_data(args) -> int:
    cfg = build_train_config(args)
    mesh_id, pair = _mesh_pair(args)
    root = resolve_data_root(cfg.data_root)
    if args.pairs:
        entries = [(mesh_id, a, m) for a, m in _parse_pairs(args.pairs)]
    else:
        split = datamod.make_split(cfg.split, data_root=root)
        entries = [e for e in split.train + split.test if e[0] == mesh_id]
    params = [(a, m) for _, a, m in entries]
    samples = datamod.generate_ground_truth(
        pair.fine, params, tol=args.tol, max_iters=args.max_iters,
        mesh_id=mesh_id, root=root, cfl=cfg.cfl, threads=cfg.threads)
    print(f"generated or loaded {len(samples)} samples under {root / mesh_id} "
          f"({len(params) - len(samples)} excluded)")
    return 0


def cmd_train(args) -> int:
    cfg = build_train_config(args)
    dataset = _split_dataset(args, cfg)
    result = pipelinemod.train(cfg, dataset)
    if result.metrics:
        last = result.metrics[-1]
        print(f"final: epoch {last['epoch']} step {last['step']} "
              f"train_rmse {last['train_rmse']:.6g} test_rmse {last['test_rmse']:.6g}")
    if result.log_path is not None:
        print(f"metrics: {result.log_path}")
    return 0


def cmd_eval(args) -> int:
    cfg = build_train_config(args)
    dataset = _split_dataset(args, cfg)
    params = None
    if cfg.baseline != "ucm":
        if not args.checkpoint:
            raise ConfigError("--checkpoint is required unless --baseline ucm")
        params, _, _ = pipelinemod.load_params(args.checkpoint)
    rmse, per_sample = pipelinemod.evaluate(params, dataset, cfg)
    print(f"test RMSE ({cfg.baseline}): {rmse:.8g} over {len(per_sample)} samples")
    return 0


def cmd_predict(args) -> int:
    cfg = build_train_config(args)
    mesh_id, pair = _mesh_pair(args)
    spec = FreestreamSpec(aoa=args.aoa, mach=args.mach)
    if cfg.baseline == "ucm" or not args.checkpoint:
        fields = pipelinemod.predict_ucm(pair.coarse, pair.fine, spec, cfg)
        source = "ucm"
    else:
        params, _, _ = pipelinemod.load_params(args.checkpoint)
        if params.concat_layer is None:
            fields = pipelinemod.predict_gcn_only(params, pair.fine, spec, cfg,
                                                  mesh_id=mesh_id)
            source = "gcn"
        else:
            fields = pipelinemod.forward(params, pair.fine, pair.coarse, spec, cfg,
                                         mesh_id=mesh_id).yhat
            source = "hybrid"
    datamod.export_fields_csv(args.out_csv, pair.fine, fields)
    print(f"wrote {args.out_csv} ({source} prediction, aoa={args.aoa:g}, mach={args.mach:g})")
    return 0


def cmd_gradcheck(args) -> int:
    report = gradcheckmod.run_all(seed=args.seed)
    worst = 0.0
    for name, err in report.items():
        print(f"{name}: {err:.3e}")
        worst = max(worst, err)
    print(f"worst: {worst:.3e} (threshold {args.max_rel_err:.1e})")
    return 0 if worst < args.max_rel_err else 1


def cmd_export_fields(args) -> int:
    _, pair = _mesh_pair(args)
    digest = datamod.mesh_hash(pair.fine)
    sample = datamod.load_sample(args.sample, args.mesh_id or "naca0012", digest)
    datamod.export_fields_csv(args.out, pair.fine, sample.fields)
    print(f"wrote {args.out} (aoa={sample.aoa:g}, mach={sample.mach:g})")
    return 0


# ---------------------------------------------------------------------------


def _add_mesh_flags(p):
    p.add_argument("--mesh", help="fine mesh in SU2 format (default: shipped desk mesh)")
    p.add_argument("--coarse-mesh", dest="coarse_mesh", help="coarse mesh in SU2 format")
    p.add_argument("--mesh-id", dest="mesh_id", help="dataset id for the mesh pair")


def _add_config_flags(p, out_dir=True):
    p.add_argument("--config", help="key=value config file; flags override it")
    p.add_argument("--split", choices=datamod.SPLIT_NAMES)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--coarse-iters", dest="coarse_iters", type=int)
    p.add_argument("--baseline", choices=pipelinemod.BASELINES)
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=int)
    if out_dir:
        p.add_argument("--out", help="output directory for logs and checkpoints")
    p.add_argument("--data-root", dest="data_root",
                   help="dataset root (default: $CFDGCN_DATA_ROOT or ./data)")
    p.add_argument("--hidden-channels", dest="hidden_channels", type=int)
    p.add_argument("--eval-every", dest="eval_every", type=int)
    p.add_argument("--max-steps", dest="max_steps", type=int)
    p.add_argument("--allow-missing", dest="allow_missing", action="store_true",
                   help="use whatever split samples exist instead of failing")


def make_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="hybridflow",
                     description="Hybrid coarse-solver + GCN flow-field surrogate")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("mesh-info", help="print mesh statistics")
    p.add_argument("--mesh", required=True)
    p.set_defaults(fn=cmd_mesh_info)

    p = sub.add_parser("convert", help="triangulate a mesh and write it out")
    p.add_argument("--mesh", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_convert)

    p = sub.add_parser("gen-data", help="generate ground-truth fields")
    _add_mesh_flags(p)
    _add_config_flags(p)
    p.add_argument("--pairs", help="comma-separated AOA:MACH list; overrides --split")
    p.add_argument("--tol", type=float, default=1e-8)
    p.add_argument("--max-iters", dest="max_iters", type=int, default=20000)
    p.set_defaults(fn=cmd_gen_data)

    p = sub.add_parser("train", help="train the model or a baseline")
    _add_mesh_flags(p)
    _add_config_flags(p)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint or the ucm baseline")
    _add_mesh_flags(p)
    _add_config_flags(p)
    p.add_argument("--checkpoint")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("predict", help="predict one condition and write CSV fields")
    _add_mesh_flags(p)
    _add_config_flags(p, out_dir=False)
    p.add_argument("--checkpoint")
    p.add_argument("--aoa", type=float, required=True)
    p.add_argument("--mach", type=float, required=True)
    p.add_argument("--out", dest="out_csv", required=True,
                   help="destination CSV for the predicted fields")
    p.set_defaults(fn=cmd_predict)

    p = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    p.add_argument("--max-rel-err", dest="max_rel_err", type=float, default=1e-4)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_gradcheck)

    p = sub.add_parser("export-fields", help="convert a stored sample to CSV")
    _add_mesh_flags(p)
    p.add_argument("--sample", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_export_fields)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = make_parser()
    try:
        args = parser.parse_args(argv)
        return args.fn(args)
    except SystemExit_ as err:
        if err.message:
            print(err.message, file=sys.stderr)
        return err.code
    except (ConfigError, MeshFormatError) as err:
        # MeshFormatError from bad user input files is a data problem when a
        # file parsed, a usage problem when the flag itself was wrong; report
        # parse failures as data errors
        code = DATA_ERROR if isinstance(err, MeshFormatError) else USAGE_ERROR
        print(f"error: {err}", file=sys.stderr)
        return code
    except (DatasetError, FileNotFoundError, KeyError) as err:
        print(f"error: {err}", file=sys.stderr)
        return DATA_ERROR
    except SolverError as err:
        print(f"solver failure: {err}", file=sys.stderr)
        return SOLVER_ERROR


if __name__ == "__main__":
    sys.exit(main())
