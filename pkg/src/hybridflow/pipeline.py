"""The full hybrid model and its training loop.

A coarse flow solve feeds node fields that are upsampled to the fine mesh and
concatenated into a stack of graph convolutions over the fine-mesh graph; the
whole composition is differentiable, so training updates both the GCN
parameters and the coarse-mesh node coordinates. Baselines are ablations of
the same pieces: the upsampled coarse solve alone ("ucm"), the GCN stack
alone ("gcn"), and the hybrid with mesh gradients suppressed ("frozen").

Coordinate updates pass through the mesh-flip projection before being
applied, so no training step ever changes an element's orientation sign.
"""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from types import SimpleNamespace

import numpy as np

from . import data as datamod
from . import gnn, meshopt, solver, upsample
from .data import Dataset, FieldSample
from .gnn import AdamState, GcnLayer, adam_step, gcn_backward, gcn_forward, normalized_adjacency
from .mesh import Mesh, build_graph, signed_distance
from .solver import FreestreamSpec, SolverError

logger = logging.getLogger(__name__)

BASELINES = ("none", "frozen", "gcn", "ucm")

INPUT_FEATURES = 5   # x, y, distance to body, aoa, mach
OUTPUT_FEATURES = 3  # vx, vy, p


class ConfigError(ValueError):
    pass


@dataclass
class TrainConfig:
    """Hyperparameters and run settings; defaults follow the reference setup."""

    lr: float = 5e-5
    batch_size: int = 16
    coarse_iters: int = 200
    epochs: int = 1
    split: str = "generalization"
    seed: int = 0
    knn_k: int = 3
    concat_layer: int = 3
    num_upsample: int = 1
    num_layers: int = 6
    hidden_channels: int = 512
    baseline: str = "none"
    freeze_boundary: bool = True
    cfl: float = 0.8
    eval_every: int = 1
    max_steps: int | None = None
    out_dir: str | None = None
    data_root: str | None = None
    threads: int = 1
    rmse_per_sample_mean: bool = False
    gt_tol: float = 1e-8
    gt_max_iters: int = 20000
    upsample_chain: list | None = None   # intermediate positions when num_upsample > 1

    def __post_init__(self):
        if self.lr <= 0:
            raise ConfigError(f"learning rate must be positive, got {self.lr}")
        for name in ("batch_size", "coarse_iters", "epochs", "knn_k", "concat_layer",
                     "num_upsample", "num_layers", "hidden_channels", "eval_every",
                     "threads"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.baseline not in BASELINES:
            raise ConfigError(f"unknown baseline '{self.baseline}'; expected {BASELINES}")
        if not 1 <= self.concat_layer < self.num_layers:
            raise ConfigError(f"concat_layer must lie in [1, {self.num_layers}), "
                              f"got {self.concat_layer}")
        if self.num_upsample > 1 and (self.upsample_chain is None
                                      or len(self.upsample_chain) != self.num_upsample - 1):
            raise ConfigError("num_upsample > 1 requires an explicit upsample_chain with "
                              "one intermediate position set per extra application")


def layer_dims(cfg_or_hidden, concat_layer: int | None = None,
               num_layers: int | None = None) -> list[tuple[int, int]]:
    """(fan_in, fan_out) per layer; the concat layer input grows by 3 channels."""
    if isinstance(cfg_or_hidden, TrainConfig):
        hidden = cfg_or_hidden.hidden_channels
        concat_layer = concat_layer if concat_layer is not None else cfg_or_hidden.concat_layer
        num_layers = cfg_or_hidden.num_layers
    else:
        hidden = cfg_or_hidden
        num_layers = num_layers or 6
    dims = []
    for i in range(num_layers):
        fan_in = INPUT_FEATURES if i == 0 else hidden
        if concat_layer is not None and i == concat_layer:
            fan_in += OUTPUT_FEATURES
        fan_out = OUTPUT_FEATURES if i == num_layers - 1 else hidden
        dims.append((fan_in, fan_out))
    return dims


@dataclass
class ModelParams:
    """Trainable state: the GCN stack plus per-mesh coarse node coordinates."""

    layers: list[GcnLayer]
    coarse_nodes: dict[str, np.ndarray]
    frozen_mesh: bool = False
    hidden_channels: int = 512
    concat_layer: int | None = 3   # None: pure-GCN architecture, no solver input

    def __post_init__(self):
        self.validate()

    def validate(self):
        dims = layer_dims(self.hidden_channels, self.concat_layer, len(self.layers))
        for i, (layer, (fin, fout)) in enumerate(zip(self.layers, dims)):
            if layer.weight.shape != (fin, fout):
                raise ConfigError(f"layer {i} weight shape {layer.weight.shape} breaks the "
                                  f"channel chain; expected {(fin, fout)}")

    @classmethod
    def initialize(cls, cfg: TrainConfig, coarse_meshes: dict[str, Mesh],
                   rng: np.random.Generator) -> "ModelParams":
        uses_solver = cfg.baseline in ("none", "frozen")
        concat = cfg.concat_layer if uses_solver else None
        layers = [GcnLayer.initialize(fin, fout, rng)
                  for fin, fout in layer_dims(cfg.hidden_channels, concat, cfg.num_layers)]
        coarse = {mid: np.array(m.nodes, copy=True) for mid, m in coarse_meshes.items()} \
            if uses_solver else {}
        return cls(layers=layers, coarse_nodes=coarse,
                   frozen_mesh=(cfg.baseline == "frozen"),
                   hidden_channels=cfg.hidden_channels, concat_layer=concat)

    def flatten(self) -> dict[str, np.ndarray]:
        out = {}
        for i, layer in enumerate(self.layers):
            out[f"layer{i}.weight"] = layer.weight
            out[f"layer{i}.bias"] = layer.bias
        for mid, nodes in self.coarse_nodes.items():
            out[f"coarse.{mid}"] = nodes
        return out

    def with_flat(self, flat: dict[str, np.ndarray]) -> "ModelParams":
        layers = [GcnLayer(weight=flat[f"layer{i}.weight"], bias=flat[f"layer{i}.bias"])
                  for i in range(len(self.layers))]
        coarse = {mid: flat[f"coarse.{mid}"] for mid in self.coarse_nodes}
        return ModelParams(layers=layers, coarse_nodes=coarse, frozen_mesh=self.frozen_mesh,
                           hidden_channels=self.hidden_channels, concat_layer=self.concat_layer)


@dataclass
class Prediction:
    yhat: np.ndarray          # (N, 3)
    coarse_fields: np.ndarray | None = None   # solver output at coarse nodes
    upsampled: np.ndarray | None = None       # after the upsampling chain


def loss_mse(y: np.ndarray, yhat: np.ndarray) -> float:
    """Mean squared error over all field entries (3N of them)."""
    y = np.asarray(y, dtype=np.float64)
    yhat = np.asarray(yhat, dtype=np.float64)
    if y.shape != yhat.shape:
        raise ValueError(f"shape mismatch: {y.shape} vs {yhat.shape}")
    diff = y - yhat
    return float(np.mean(diff * diff))


# ---------------------------------------------------------------------------
# per-mesh context (adjacency and static features are condition-independent)


class PipelineCache:
    """Memo for per-mesh quantities reused across samples and steps."""

    def __init__(self):
        self._fine: dict[str, SimpleNamespace] = {}
        self._solves: dict[tuple, SimpleNamespace] = {}

    def fine_context(self, mesh_id: str, mesh: Mesh) -> SimpleNamespace:
        ctx = self._fine.get(mesh_id)
        if ctx is None:
            adj = normalized_adjacency(build_graph(mesh))
            sdf = signed_distance(mesh.nodes, mesh, "airfoil")
            static = np.concatenate([mesh.nodes, sdf[:, None]], axis=1)
            ctx = SimpleNamespace(mesh=mesh, adj=adj, static=static)
            self._fine[mesh_id] = ctx
        return ctx

    def coarse_solution(self, key: tuple, compute):
        """Reuse unrecorded coarse solves; keyed by condition and mesh bytes.

        Only valid for solves without gradient recording: a recorded solve
        carries a tape that must be fresh per backward pass.
        """
        hit = self._solves.get(key)
        if hit is None:
            hit = compute()
            self._solves[key] = hit
        return hit


def build_features(fine_mesh: Mesh, spec: FreestreamSpec,
                   static: np.ndarray | None = None) -> np.ndarray:
    """(N, 5) node features: x, y, distance to the body, aoa (deg), mach."""
    if static is None:
        sdf = signed_distance(fine_mesh.nodes, fine_mesh, "airfoil")
        static = np.concatenate([fine_mesh.nodes, sdf[:, None]], axis=1)
    n = static.shape[0]
    cond = np.tile([spec.aoa, spec.mach], (n, 1))
    return np.concatenate([static, cond], axis=1)


# ---------------------------------------------------------------------------
# forward passes


def _coarse_to_fine(coarse_nodes: np.ndarray, coarse_mesh: Mesh, fine_mesh: Mesh,
                    spec: FreestreamSpec, cfg: TrainConfig, record: bool,
                    cache: PipelineCache | None = None, mesh_id: str = "default"):
    """Solve on the coarse mesh and upsample to the fine node positions."""
    def compute():
        work = Mesh(nodes=coarse_nodes, elements=coarse_mesh.elements,
                    markers=coarse_mesh.markers)
        sol = solver.solve(work, spec, cfg.coarse_iters, residual_tol=0.0,
                           cfl=cfg.cfl, record=record)
        positions = [np.asarray(coarse_nodes, dtype=np.float64)]
        if cfg.upsample_chain:
            positions.extend(np.asarray(p, dtype=np.float64) for p in cfg.upsample_chain)
        positions.append(fine_mesh.nodes)
        plans = [upsample.build_plan(positions[i + 1], positions[i], cfg.knn_k)
                 for i in range(len(positions) - 1)]
        values = [sol.node_fields]
        for plan in plans:
            values.append(upsample.apply(plan, values[-1]))
        return SimpleNamespace(work_mesh=work, sol=sol, positions=positions,
                               plans=plans, values=values, upsampled=values[-1])

    if record or cache is None:
        return compute()
    key = (mesh_id, spec.aoa, spec.mach, spec.gamma, cfg.coarse_iters, cfg.cfl,
           cfg.knn_k, hash(coarse_nodes.tobytes()))
    return cache.coarse_solution(key, compute)


def _forward_ctx(params: ModelParams, fine_mesh: Mesh, coarse_mesh: Mesh | None,
                 spec: FreestreamSpec, cfg: TrainConfig, *, mesh_id: str = "default",
                 cache: PipelineCache | None = None, record: bool = False):
    cache = cache or PipelineCache()
    fine_ctx = cache.fine_context(mesh_id, fine_mesh)
    features = build_features(fine_mesh, spec, static=fine_ctx.static)

    coarse_part = None
    if params.concat_layer is not None:
        if coarse_mesh is None:
            raise ConfigError("this model concatenates solver output; a coarse mesh "
                              "is required")
        coarse_nodes = params.coarse_nodes.get(mesh_id, coarse_mesh.nodes)
        coarse_part = _coarse_to_fine(coarse_nodes, coarse_mesh, fine_mesh, spec, cfg,
                                      record=record and not params.frozen_mesh,
                                      cache=cache, mesh_id=mesh_id)

    z_list = [features]
    pre_list = []
    z = features
    last = len(params.layers) - 1
    for i, layer in enumerate(params.layers):
        pre = fine_ctx.adj.matrix @ z @ layer.weight + layer.bias
        pre_list.append(pre)
        if i == last:
            z = pre
        else:
            z = np.maximum(pre, 0.0)
            if params.concat_layer is not None and i == params.concat_layer - 1:
                z = np.concatenate([z, coarse_part.upsampled], axis=1)
        z_list.append(z)

    return SimpleNamespace(fine_ctx=fine_ctx, features=features, coarse=coarse_part,
                           z_list=z_list, pre_list=pre_list, yhat=z,
                           mesh_id=mesh_id, spec=spec)


def forward(params: ModelParams, fine_mesh: Mesh, coarse_mesh: Mesh | None,
            spec: FreestreamSpec, cfg: TrainConfig, *, mesh_id: str = "default",
            cache: PipelineCache | None = None) -> Prediction:
    """Full model prediction on one flow condition."""
    ctx = _forward_ctx(params, fine_mesh, coarse_mesh, spec, cfg,
                       mesh_id=mesh_id, cache=cache)
    coarse_fields = ctx.coarse.sol.node_fields if ctx.coarse else None
    upsampled = ctx.coarse.upsampled if ctx.coarse else None
    return Prediction(yhat=ctx.yhat, coarse_fields=coarse_fields, upsampled=upsampled)


def forward_backward(params: ModelParams, fine_mesh: Mesh, coarse_mesh: Mesh | None,
                     spec: FreestreamSpec, cfg: TrainConfig, ground_truth: np.ndarray,
                     *, mesh_id: str = "default", cache: PipelineCache | None = None):
    """Loss plus gradients for every trainable tensor, keyed like flatten().

    The coarse-coordinate gradient combines the solver adjoint with the
    upsampling position term; with frozen_mesh it is identically zero and the
    solver adjoint is skipped entirely.
    """
    ctx = _forward_ctx(params, fine_mesh, coarse_mesh, spec, cfg,
                       mesh_id=mesh_id, cache=cache, record=True)
    y = np.asarray(ground_truth, dtype=np.float64)
    loss = loss_mse(y, ctx.yhat)
    adj = ctx.fine_ctx.adj

    grads: dict[str, np.ndarray] = {}
    g = 2.0 * (ctx.yhat - y) / y.size
    d_upsampled = None
    last = len(params.layers) - 1
    for i in range(last, -1, -1):
        dz, dw, db = gcn_backward(adj, ctx.z_list[i], params.layers[i],
                                  apply_relu=(i != last), output_cotangent=g,
                                  pre_activation=ctx.pre_list[i])
        grads[f"layer{i}.weight"] = dw
        grads[f"layer{i}.bias"] = db
        if params.concat_layer is not None and i == params.concat_layer:
            d_upsampled = dz[:, params.hidden_channels:]
            g = dz[:, :params.hidden_channels]
        else:
            g = dz

    if params.concat_layer is not None and mesh_id in params.coarse_nodes:
        coarse_nodes = params.coarse_nodes[mesh_id]
        if params.frozen_mesh:
            grads[f"coarse.{mesh_id}"] = np.zeros_like(coarse_nodes)
        else:
            part = ctx.coarse
            cot = d_upsampled
            d_first_positions = None
            for j in range(len(part.plans) - 1, -1, -1):
                d_vals, d_pos = upsample.apply_backward(part.plans[j], part.positions[j],
                                                        part.values[j], cot)
                cot = d_vals
                d_first_positions = d_pos
            d_nodes, _, _ = solver.solve_backward(part.work_mesh, spec,
                                                  part.sol.record, cot)
            grads[f"coarse.{mesh_id}"] = d_nodes + d_first_positions
    return loss, grads


def predict_ucm(coarse_mesh: Mesh, fine_mesh: Mesh, spec: FreestreamSpec,
                cfg: TrainConfig) -> np.ndarray:
    """No-learning baseline: coarse solve interpolated to the fine mesh."""
    part = _coarse_to_fine(coarse_mesh.nodes, coarse_mesh, fine_mesh, spec, cfg,
                           record=False)
    return part.upsampled


def predict_gcn_only(params: ModelParams, fine_mesh: Mesh, spec: FreestreamSpec,
                     cfg: TrainConfig | None = None, *,
                     cache: PipelineCache | None = None,
                     mesh_id: str = "default") -> np.ndarray:
    """Pure-GCN baseline: the convolution stack without any solver input."""
    if params.concat_layer is not None:
        raise ConfigError("params were built for the hybrid model; initialize with "
                          "baseline='gcn' for the pure-GCN architecture")
    cfg = cfg or TrainConfig(baseline="gcn", hidden_channels=params.hidden_channels)
    ctx = _forward_ctx(params, fine_mesh, None, spec, cfg, mesh_id=mesh_id, cache=cache)
    return ctx.yhat


# ---------------------------------------------------------------------------
# evaluation and training


def _predict_for_sample(params, sample: FieldSample, dataset: Dataset,
                        cfg: TrainConfig, cache: PipelineCache) -> np.ndarray:
    pair = dataset.meshes[sample.mesh_id]
    spec = FreestreamSpec(aoa=sample.aoa, mach=sample.mach)
    if cfg.baseline == "ucm":
        return predict_ucm(pair.coarse, pair.fine, spec, cfg)
    if cfg.baseline == "gcn":
        return predict_gcn_only(params, pair.fine, spec, cfg, cache=cache,
                                mesh_id=sample.mesh_id)
    return forward(params, pair.fine, pair.coarse, spec, cfg,
                   mesh_id=sample.mesh_id, cache=cache).yhat


def evaluate(params: ModelParams | None, dataset: Dataset, cfg: TrainConfig,
             samples: list[FieldSample] | None = None,
             cache: PipelineCache | None = None):
    """(RMSE, per-sample MSE list) over the dataset's test samples by default.

    RMSE pools all field entries; set cfg.rmse_per_sample_mean for the
    unweighted mean of per-sample MSEs instead (the two differ only when
    meshes differ in size).
    """
    samples = dataset.test if samples is None else samples
    cache = cache or PipelineCache()
    per_sample = []
    total_sq = 0.0
    total_n = 0
    for sample in samples:
        pred = _predict_for_sample(params, sample, dataset, cfg, cache)
        mse = loss_mse(sample.fields, pred)
        per_sample.append(mse)
        total_sq += mse * sample.fields.size
        total_n += sample.fields.size
    if not per_sample:
        return 0.0, []
    if cfg.rmse_per_sample_mean:
        rmse = float(np.sqrt(np.mean(per_sample)))
    else:
        rmse = float(np.sqrt(total_sq / total_n))
    return rmse, per_sample


@dataclass
class TrainResult:
    params: ModelParams | None
    adam: AdamState | None
    metrics: list[dict] = field(default_factory=list)
    log_path: Path | None = None


METRIC_COLUMNS = ("epoch", "step", "train_rmse", "test_rmse", "wall_seconds",
                  "flipped_elements_zeroed")


def train(cfg: TrainConfig, dataset: Dataset) -> TrainResult:
    """Adam training with batch-averaged gradients and projected mesh updates.

    Solver failures skip the offending sample; the step proceeds with the
    rest of the batch. The metric log gains one row per evaluation epoch.
    Fully deterministic for a fixed config and seed.
    """
    if cfg.baseline == "ucm":
        raise ConfigError("the ucm baseline has no trainable parameters; use evaluate")
    if not dataset.train:
        raise ConfigError("training dataset is empty")

    rng = np.random.default_rng(cfg.seed)
    coarse_meshes = {mid: pair.coarse for mid, pair in dataset.meshes.items()} \
        if cfg.baseline in ("none", "frozen") else {}
    params = ModelParams.initialize(cfg, coarse_meshes, rng)
    adam = AdamState.for_params(params.flatten(), lr=cfg.lr)
    cache = PipelineCache()

    pinned: dict[str, np.ndarray] = {}
    if cfg.freeze_boundary:
        for mid, mesh in coarse_meshes.items():
            nodes = [np.asarray(m.segments, dtype=np.int64).reshape(-1)
                     for m in mesh.markers]
            pinned[mid] = np.unique(np.concatenate(nodes)) if nodes else np.array([], int)

    log_path = None
    log_file = None
    writer = None
    if cfg.out_dir is not None:
        out_dir = Path(cfg.out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        log_path = out_dir / "metrics.csv"
        log_file = open(log_path, "a", newline="")
        writer = csv.writer(log_file, lineterminator="\n")
        if log_path.stat().st_size == 0:
            writer.writerow(METRIC_COLUMNS)

    metrics: list[dict] = []
    step = 0
    t_start = time.perf_counter()
    stop = False
    try:
        for epoch in range(cfg.epochs):
            order = rng.permutation(len(dataset.train))
            flipped_this_epoch = 0
            for start in range(0, len(order), cfg.batch_size):
                if cfg.max_steps is not None and step >= cfg.max_steps:
                    stop = True
                    break
                batch = [dataset.train[i] for i in order[start:start + cfg.batch_size]]
                grad_sum: dict[str, np.ndarray] = {}
                n_ok = 0
                for sample in batch:
                    pair = dataset.meshes[sample.mesh_id]
                    spec = FreestreamSpec(aoa=sample.aoa, mach=sample.mach)
                    try:
                        _, grads = forward_backward(
                            params, pair.fine,
                            pair.coarse if cfg.baseline in ("none", "frozen") else None,
                            spec, cfg, sample.fields, mesh_id=sample.mesh_id, cache=cache)
                    except SolverError as err:
                        logger.warning("skipping sample aoa=%g mach=%g (%s): %s",
                                       sample.aoa, sample.mach, sample.mesh_id, err)
                        continue
                    n_ok += 1
                    for k, v in grads.items():
                        grad_sum[k] = grad_sum.get(k, 0.0) + v
                if n_ok == 0:
                    logger.warning("entire batch failed; skipping step")
                    continue
                flat = params.flatten()
                grads = {k: grad_sum.get(k, np.zeros_like(v)) / n_ok
                         for k, v in flat.items()}
                updated, adam = adam_step(flat, grads, adam)
                for mid in params.coarse_nodes:
                    key = f"coarse.{mid}"
                    old = flat[key]
                    delta = updated[key] - old
                    if params.frozen_mesh:
                        updated[key] = old
                        continue
                    proj = meshopt.project_update(
                        old, delta, dataset.meshes[mid].coarse.element_array(),
                        pinned=pinned.get(mid, ()))
                    updated[key] = old + proj.projected
                    flipped_this_epoch += len(proj.flipped_elements)
                params = params.with_flat(updated)
                step += 1
            do_eval = (epoch % cfg.eval_every == 0) or (epoch == cfg.epochs - 1) or stop
            if do_eval:
                train_rmse, _ = evaluate(params, dataset, cfg, samples=dataset.train,
                                         cache=cache)
                test_rmse, _ = evaluate(params, dataset, cfg, cache=cache)
                wall = time.perf_counter() - t_start
                row = {"epoch": epoch, "step": step,
                       "train_rmse": train_rmse, "test_rmse": test_rmse,
                       "wall_seconds": wall,
                       "flipped_elements_zeroed": flipped_this_epoch}
                metrics.append(row)
                logger.info("epoch %d step %d train_rmse %.6g test_rmse %.6g",
                            epoch, step, train_rmse, test_rmse)
                if writer is not None:
                    writer.writerow([epoch, step, f"{train_rmse:.17g}",
                                     f"{test_rmse:.17g}", f"{wall:.3f}",
                                     flipped_this_epoch])
                    log_file.flush()
                if cfg.out_dir is not None:
                    save_params(Path(cfg.out_dir) / f"checkpoint_{epoch:05d}.npz",
                                params, adam, cfg)
            if stop:
                break
        if cfg.out_dir is not None:
            save_params(Path(cfg.out_dir) / "checkpoint_final.npz", params, adam, cfg)
    finally:
        if log_file is not None:
            log_file.close()
    return TrainResult(params=params, adam=adam, metrics=metrics, log_path=log_path)


# ---------------------------------------------------------------------------
# checkpoints


def save_params(path, params: ModelParams, adam: AdamState | None,
                cfg: TrainConfig | None = None) -> None:
    arrays = dict(params.flatten())
    if adam is not None:
        for k, v in adam.m.items():
            arrays[f"adam.m.{k}"] = v
        for k, v in adam.v.items():
            arrays[f"adam.v.{k}"] = v
    meta = {
        "num_layers": len(params.layers),
        "hidden_channels": params.hidden_channels,
        "concat_layer": params.concat_layer,
        "frozen_mesh": params.frozen_mesh,
        "mesh_ids": sorted(params.coarse_nodes),
        "adam": None if adam is None else {"lr": adam.lr, "beta1": adam.beta1,
                                           "beta2": adam.beta2, "eps": adam.eps,
                                           "step": adam.step},
        "seed": cfg.seed if cfg is not None else None,
    }
    datamod.save_checkpoint(path, arrays, meta)


def load_params(path):
    """(ModelParams, AdamState | None, meta) from a checkpoint file."""
    arrays, meta = datamod.load_checkpoint(path)
    layers = [GcnLayer(weight=arrays[f"layer{i}.weight"], bias=arrays[f"layer{i}.bias"])
              for i in range(meta["num_layers"])]
    coarse = {mid: arrays[f"coarse.{mid}"] for mid in meta["mesh_ids"]}
    params = ModelParams(layers=layers, coarse_nodes=coarse,
                         frozen_mesh=meta["frozen_mesh"],
                         hidden_channels=meta["hidden_channels"],
                         concat_layer=meta["concat_layer"])
    adam = None
    if meta.get("adam"):
        a = meta["adam"]
        adam = AdamState(lr=a["lr"], beta1=a["beta1"], beta2=a["beta2"], eps=a["eps"],
                         step=a["step"],
                         m={k[len("adam.m."):]: v for k, v in arrays.items()
                            if k.startswith("adam.m.")},
                         v={k[len("adam.v."):]: v for k, v in arrays.items()
                            if k.startswith("adam.v.")})
    return params, adam, meta
