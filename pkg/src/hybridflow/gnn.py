"""Graph convolution layers with explicit forward/backward passes and Adam.

The layer is out = relu(B Z W + b) with B the symmetric self-loop-normalized
adjacency, W an (F, F') weight matrix and b a single F' bias row broadcast
over all nodes. A per-node bias cannot transfer between meshes of different
sizes, which is why the bias is one row; this is the only deliberate change
relative to the formulation the layer comes from.

Backward passes are written out explicitly (no tape): with G the cotangent
masked by the ReLU derivative, dW = Zt B G, dZ = B G Wt, db = column sums
of G, using that B is symmetric.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

from .mesh import Graph

logger = logging.getLogger(__name__)


@dataclass
class GcnLayer:
    weight: np.ndarray  # (F, F')
    bias: np.ndarray    # (F',)

    def __post_init__(self):
        self.weight = np.asarray(self.weight, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weight.ndim != 2:
            raise ValueError(f"weight must be 2-D, got shape {self.weight.shape}")
        if self.bias.shape != (self.weight.shape[1],):
            raise ValueError(f"bias shape {self.bias.shape} does not match "
                             f"weight output dim {self.weight.shape[1]}")
        if not (np.isfinite(self.weight).all() and np.isfinite(self.bias).all()):
            raise ValueError("layer parameters must be finite")

    @classmethod
    def initialize(cls, fan_in: int, fan_out: int, rng: np.random.Generator) -> "GcnLayer":
        # uniform Glorot; bias starts at zero
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        w = rng.uniform(-bound, bound, size=(fan_in, fan_out))
        return cls(weight=w, bias=np.zeros(fan_out))


@dataclass
class NormalizedAdjacency:
    """Sparse symmetric matrix D^{-1/2} (A + I) D^{-1/2} with D_ii = 1 + degree_i."""

    matrix: sparse.csr_matrix

    @property
    def num_nodes(self) -> int:
        return self.matrix.shape[0]


def normalized_adjacency(graph: Graph) -> NormalizedAdjacency:
    n = graph.num_nodes
    edges = np.asarray(graph.edges, dtype=np.int64).reshape(-1, 2)
    degree = np.zeros(n, dtype=np.float64)
    np.add.at(degree, edges[:, 0], 1.0)
    np.add.at(degree, edges[:, 1], 1.0)
    dinv = 1.0 / np.sqrt(1.0 + degree)
    rows = np.concatenate([edges[:, 0], edges[:, 1], np.arange(n)])
    cols = np.concatenate([edges[:, 1], edges[:, 0], np.arange(n)])
    vals = dinv[rows] * dinv[cols]
    mat = sparse.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()
    return NormalizedAdjacency(matrix=mat)


def gcn_forward(adj: NormalizedAdjacency, Z: np.ndarray, layer: GcnLayer,
                apply_relu: bool = True) -> np.ndarray:
    """B Z W + b, optionally clamped at zero."""
    Z = np.asarray(Z, dtype=np.float64)
    if Z.ndim != 2 or Z.shape[0] != adj.num_nodes:
        raise ValueError(f"Z must be ({adj.num_nodes}, F), got {Z.shape}")
    if Z.shape[1] != layer.weight.shape[0]:
        raise ValueError(f"feature dim {Z.shape[1]} does not match "
                         f"weight input dim {layer.weight.shape[0]}")
    pre = adj.matrix @ Z @ layer.weight + layer.bias
    return np.maximum(pre, 0.0) if apply_relu else pre


def gcn_backward(adj: NormalizedAdjacency, Z: np.ndarray, layer: GcnLayer,
                 apply_relu: bool, output_cotangent: np.ndarray,
                 pre_activation: np.ndarray | None = None):
    """Gradients (dZ, dW, db) of the layer for the given output cotangent.

    The ReLU mask comes from the forward pre-activation; pass it to avoid the
    recompute when it was kept around.
    """
    Z = np.asarray(Z, dtype=np.float64)
    G = np.asarray(output_cotangent, dtype=np.float64)
    if G.shape != (Z.shape[0], layer.weight.shape[1]):
        raise ValueError(f"cotangent shape {G.shape} does not match output "
                         f"({Z.shape[0]}, {layer.weight.shape[1]})")
    if apply_relu:
        if pre_activation is None:
            pre_activation = adj.matrix @ Z @ layer.weight + layer.bias
        G = G * (pre_activation > 0.0)
    bz = adj.matrix @ Z
    dw = bz.T @ G
    dz = adj.matrix @ (G @ layer.weight.T)
    db = G.sum(axis=0)
    return dz, dw, db


# ---------------------------------------------------------------------------
# Adam


@dataclass
class AdamState:
    """Per-tensor first/second moment accumulators plus the shared step count."""

    lr: float = 5e-5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def for_params(cls, params: dict[str, np.ndarray], lr: float = 5e-5,
                   beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> "AdamState":
        return cls(lr=lr, beta1=beta1, beta2=beta2, eps=eps, step=0,
                   m={k: np.zeros_like(p) for k, p in params.items()},
                   v={k: np.zeros_like(p) for k, p in params.items()})


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
              state: AdamState):
    """One bias-corrected Adam update; returns (new params, new state).

    Purely functional: inputs are never mutated. If any gradient entry is
    non-finite the step is skipped entirely (reported via logging) and the
    inputs are returned unchanged.
    """
    for name in params:
        if name not in grads:
            raise KeyError(f"missing gradient for parameter '{name}'")
        if grads[name].shape != params[name].shape:
            raise ValueError(f"gradient shape {grads[name].shape} does not match "
                             f"parameter '{name}' shape {params[name].shape}")
    for name, g in grads.items():
        if not np.isfinite(g).all():
            logger.warning("non-finite gradient for '%s'; skipping optimizer step", name)
            return params, state

    t = state.step + 1
    b1, b2 = state.beta1, state.beta2
    new_params: dict[str, np.ndarray] = {}
    new_m: dict[str, np.ndarray] = {}
    new_v: dict[str, np.ndarray] = {}
    for name, p in params.items():
        g = grads[name]
        m = b1 * state.m[name] + (1.0 - b1) * g
        v = b2 * state.v[name] + (1.0 - b2) * g * g
        m_hat = m / (1.0 - b1 ** t)
        v_hat = v / (1.0 - b2 ** t)
        new_params[name] = p - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
        new_m[name] = m
        new_v[name] = v
    new_state = AdamState(lr=state.lr, beta1=b1, beta2=b2, eps=state.eps,
                          step=t, m=new_m, v=new_v)
    return new_params, new_state
