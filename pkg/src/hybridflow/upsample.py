"""Squared-distance-weighted k-nearest-neighbor interpolation coarse -> fine.

Each fine node takes a convex combination of the values at its k nearest
coarse nodes with weights proportional to 1/d^2. A fine node that coincides
with a coarse node (d^2 below the snap tolerance) takes that node's value
exactly, which keeps the interpolation well-defined where 1/d^2 blows up.

Gradients treat the neighbor index sets as fixed: the interpolation is
piecewise smooth in the coarse positions and the derivative is taken on the
current piece.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import mesh as meshmod

SNAP_SQ_DIST = 1e-24


@dataclass
class UpsamplePlan:
    """Neighbor indices and normalized weights for one coarse -> fine map.

    Rows of ``weights`` sum to one; snapped rows carry a single unit weight.
    When ``recorded`` the plan keeps the raw squared distances and position
    snapshots needed for apply_backward.
    """

    indices: np.ndarray            # (Nf, k) int
    weights: np.ndarray            # (Nf, k), rows sum to 1
    snapped: np.ndarray            # (Nf,) bool
    recorded: bool
    fine_positions: np.ndarray | None = None
    coarse_positions: np.ndarray | None = None
    sq_dists: np.ndarray | None = None   # raw d^2 to each neighbor

    @property
    def num_fine(self) -> int:
        return self.indices.shape[0]

    @property
    def k(self) -> int:
        return self.indices.shape[1]


def build_plan(fine_positions: np.ndarray, coarse_positions: np.ndarray, k: int,
               record: bool = True) -> UpsamplePlan:
    """Neighbor sets via knn and normalized 1/d^2 weights."""
    fine_positions = np.asarray(fine_positions, dtype=np.float64)
    coarse_positions = np.asarray(coarse_positions, dtype=np.float64)
    idx, d2 = meshmod.knn(fine_positions, coarse_positions, k)
    snapped = d2[:, 0] < SNAP_SQ_DIST
    with np.errstate(divide="ignore", invalid="ignore"):
        w = 1.0 / d2
        weights = w / w.sum(axis=1, keepdims=True)
    if snapped.any():
        weights[snapped] = 0.0
        weights[snapped, 0] = 1.0
    return UpsamplePlan(
        indices=idx, weights=weights, snapped=snapped, recorded=record,
        fine_positions=fine_positions.copy() if record else None,
        coarse_positions=coarse_positions.copy() if record else None,
        sq_dists=d2 if record else None,
    )


def apply(plan: UpsamplePlan, coarse_values: np.ndarray) -> np.ndarray:
    """Interpolate (Nc, C) coarse values to (Nf, C); linear in the values."""
    coarse_values = np.asarray(coarse_values, dtype=np.float64)
    if coarse_values.ndim != 2:
        raise ValueError(f"coarse values must be 2-D, got shape {coarse_values.shape}")
    if coarse_values.shape[0] <= plan.indices.max():
        raise ValueError(f"plan references coarse index {plan.indices.max()} but "
                         f"values have {coarse_values.shape[0]} rows")
    gathered = coarse_values[plan.indices]          # (Nf, k, C)
    return np.einsum("fk,fkc->fc", plan.weights, gathered)


def apply_backward(plan: UpsamplePlan, coarse_positions: np.ndarray,
                   coarse_values: np.ndarray, output_cotangent: np.ndarray):
    """Gradients (d_values (Nc, C), d_positions (Nc, 2)) of apply().

    d_values is the exact transpose of the linear interpolation map.
    d_positions differentiates the normalized 1/d^2 weights with the neighbor
    sets held fixed; snapped fine nodes contribute no position gradient.
    """
    if not plan.recorded:
        raise ValueError("plan was built with record=False; position data unavailable")
    coarse_positions = np.asarray(coarse_positions, dtype=np.float64)
    coarse_values = np.asarray(coarse_values, dtype=np.float64)
    g = np.asarray(output_cotangent, dtype=np.float64)
    if not np.array_equal(coarse_positions, plan.coarse_positions):
        raise ValueError("coarse positions differ from the ones the plan was built for")
    nf, k = plan.indices.shape
    nc = coarse_positions.shape[0]
    if g.shape != (nf, coarse_values.shape[1]):
        raise ValueError(f"cotangent shape {g.shape} does not match output "
                         f"({nf}, {coarse_values.shape[1]})")

    d_values = np.zeros_like(coarse_values)
    np.add.at(d_values, plan.indices, plan.weights[:, :, None] * g[:, None, :])

    # position gradient: U_i = sum_j w_j D_j / S with w_j = 1/d_j^2
    out = apply(plan, coarse_values)                      # (Nf, C)
    gathered = coarse_values[plan.indices]                # (Nf, k, C)
    with np.errstate(divide="ignore"):
        w_raw = 1.0 / plan.sq_dists                       # (Nf, k)
    w_raw[plan.snapped] = 0.0       # snapped rows carry no position gradient
    s = w_raw.sum(axis=1)
    s[plan.snapped] = 1.0
    # dU/dw_j contracted with the cotangent
    du_dw = np.einsum("fc,fkc->fk", g, gathered - out[:, None, :]) / s[:, None]
    dd2 = du_dw * (-w_raw * w_raw)                        # chain through w = 1/d^2
    diff = coarse_positions[plan.indices] - plan.fine_positions[:, None, :]  # (Nf, k, 2)
    d_positions = np.zeros((nc, 2))
    np.add.at(d_positions, plan.indices, 2.0 * dd2[:, :, None] * diff)
    return d_values, d_positions
