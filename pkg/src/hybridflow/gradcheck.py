"""Finite-difference verification suites for every reverse-mode gradient.

Each checker compares an analytic gradient against central differences of the
corresponding forward map on a small instance and reports the worst relative
error, measured against the largest gradient entry of that tensor. Used by
the test suite and by the `gradcheck` CLI subcommand.
"""

from __future__ import annotations

import numpy as np

from . import gnn, pipeline, solver, upsample
from .data import airfoil_omesh
from .mesh import Graph, Mesh, triangulate
from .pipeline import ModelParams, TrainConfig, forward, forward_backward, loss_mse
from .solver import FreestreamSpec


def rel_err(got: np.ndarray, want: np.ndarray) -> float:
    got = np.asarray(got, dtype=np.float64)
    want = np.asarray(want, dtype=np.float64)
    scale = max(np.max(np.abs(got), initial=0.0), np.max(np.abs(want), initial=0.0), 1e-12)
    return float(np.max(np.abs(got - want), initial=0.0) / scale)


def _fd(f, x, eps=1e-6):
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        step = eps * max(1.0, abs(x[i]))
        up = x.copy()
        up[i] += step
        down = x.copy()
        down[i] -= step
        grad[i] = (f(up) - f(down)) / (2.0 * step)
    return grad


def check_solver(seed: int = 0, iters: int = 2) -> dict[str, float]:
    """Adjoint of the recorded solve vs finite differences (<= 50 cells)."""
    rng = np.random.default_rng(seed)
    mesh = triangulate(airfoil_omesh(n_surface=8, n_rings=3, farfield_radius=4.0,
                                     growth=1.5))
    assert mesh.num_elements <= 50
    spec = FreestreamSpec(aoa=3.0, mach=0.5)
    cot = rng.standard_normal((mesh.num_nodes, 3))
    out = solver.solve(mesh, spec, iters, residual_tol=0.0, record=True)
    d_nodes, d_aoa, d_mach = solver.solve_backward(mesh, spec, out.record, cot)

    def value(nodes, aoa, mach):
        m = Mesh(nodes, list(mesh.elements), mesh.markers)
        o = solver.solve(m, FreestreamSpec(aoa=aoa, mach=mach), iters, residual_tol=0.0)
        return float(np.sum(o.node_fields * cot))

    fd_nodes = _fd(lambda n: value(n.reshape(-1, 2), spec.aoa, spec.mach),
                   mesh.nodes.reshape(-1)).reshape(-1, 2)
    eps = 1e-6
    fd_aoa = (value(mesh.nodes, spec.aoa + eps, spec.mach)
              - value(mesh.nodes, spec.aoa - eps, spec.mach)) / (2 * eps)
    fd_mach = (value(mesh.nodes, spec.aoa, spec.mach + eps)
               - value(mesh.nodes, spec.aoa, spec.mach - eps)) / (2 * eps)
    return {
        "solver.mesh_coordinates": rel_err(d_nodes, fd_nodes),
        "solver.aoa": rel_err(d_aoa, fd_aoa),
        "solver.mach": rel_err(d_mach, fd_mach),
    }


def check_gnn(seed: int = 0) -> dict[str, float]:
    """Explicit layer backward vs finite differences (<= 10 nodes)."""
    rng = np.random.default_rng(seed)
    n, fin, fout = 8, 6, 4
    edges = sorted({(int(a), int(b)) for a, b in
                    ((min(i, j), max(i, j)) for i, j in
                     rng.integers(0, n, size=(20, 2)) if i != j)}
                   | {(i, i + 1) for i in range(n - 1)})
    adj = gnn.normalized_adjacency(Graph(num_nodes=n,
                                         edges=np.asarray(edges, dtype=np.int64)))
    layer = gnn.GcnLayer(weight=rng.standard_normal((fin, fout)),
                         bias=rng.standard_normal(fout))
    z = rng.standard_normal((n, fin))
    cot = rng.standard_normal((n, fout))
    out = {}
    for relu in (False, True):
        dz, dw, db = gnn.gcn_backward(adj, z, layer, relu, cot)

        def value(z_, w_, b_, relu=relu):
            o = gnn.gcn_forward(adj, z_, gnn.GcnLayer(weight=w_, bias=b_), relu)
            return float(np.sum(o * cot))

        tag = "relu" if relu else "linear"
        out[f"gnn.{tag}.features"] = rel_err(
            dz, _fd(lambda v: value(v.reshape(n, fin), layer.weight, layer.bias),
                    z.reshape(-1)).reshape(n, fin))
        out[f"gnn.{tag}.weight"] = rel_err(
            dw, _fd(lambda v: value(z, v.reshape(fin, fout), layer.bias),
                    layer.weight.reshape(-1)).reshape(fin, fout))
        out[f"gnn.{tag}.bias"] = rel_err(
            db, _fd(lambda v: value(z, layer.weight, v), layer.bias))
    return out


def check_upsample(seed: int = 0) -> dict[str, float]:
    rng = np.random.default_rng(seed)
    fine = rng.uniform(-1, 1, size=(11, 2))
    coarse = rng.uniform(-1, 1, size=(7, 2))
    values = rng.standard_normal((7, 3))
    plan = upsample.build_plan(fine, coarse, k=3)
    cot = rng.standard_normal((11, 3))
    d_values, d_pos = upsample.apply_backward(plan, coarse, values, cot)

    fd_values = _fd(lambda v: float(np.sum(upsample.apply(plan, v.reshape(7, 3)) * cot)),
                    values.reshape(-1)).reshape(7, 3)

    def value_positions(c):
        d2 = np.sum((fine[:, None, :] - c[plan.indices]) ** 2, axis=2)
        w = 1.0 / d2
        w /= w.sum(axis=1, keepdims=True)
        return float(np.sum(np.einsum("fk,fkc->fc", w, values[plan.indices]) * cot))

    fd_pos = _fd(lambda c: value_positions(c.reshape(7, 2)),
                 coarse.reshape(-1), eps=1e-7).reshape(7, 2)
    return {
        "upsample.values": rel_err(d_values, fd_values),
        "upsample.positions": rel_err(d_pos, fd_pos),
    }


def check_pipeline(seed: int = 0) -> dict[str, float]:
    """End-to-end loss gradient for every tensor (<= 30 fine nodes, 1 iteration)."""
    rng = np.random.default_rng(seed)
    fine = triangulate(airfoil_omesh(n_surface=8, n_rings=3, farfield_radius=4.0,
                                     growth=1.5))
    coarse = triangulate(airfoil_omesh(n_surface=6, n_rings=2, farfield_radius=4.0,
                                       growth=1.5))
    assert fine.num_nodes <= 30
    cfg = TrainConfig(hidden_channels=4, coarse_iters=1, lr=1e-3)
    params = ModelParams.initialize(cfg, {"default": coarse}, rng)
    spec = FreestreamSpec(aoa=2.0, mach=0.5)
    y = rng.standard_normal((fine.num_nodes, 3))
    _, grads = forward_backward(params, fine, coarse, spec, cfg, y)

    flat = params.flatten()

    def loss_of(name, arr):
        swapped = dict(flat)
        swapped[name] = arr
        pred = forward(params.with_flat(swapped), fine, coarse, spec, cfg)
        return loss_mse(y, pred.yhat)

    out = {}
    for name, value in flat.items():
        fd = _fd(lambda v, name=name: loss_of(name, v.reshape(value.shape)),
                 value.reshape(-1)).reshape(value.shape)
        out[f"pipeline.{name}"] = rel_err(grads[name], fd)
    return out


def run_all(seed: int = 0) -> dict[str, float]:
    report = {}
    report.update(check_solver(seed))
    report.update(check_gnn(seed))
    report.update(check_upsample(seed))
    report.update(check_pipeline(seed))
    return report
