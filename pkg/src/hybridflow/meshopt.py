"""Guard the trainable coarse mesh against element inversion.

A gradient step on the coarse node coordinates can push a vertex across the
opposite edge of one of its triangles, reversing the sign of that element's
orientation cross product and breaking the flow solve. The projection here
zeroes the update rows of every offending element's vertices and repeats
until no element changes sign.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .mesh import element_orientations


@dataclass
class UpdateProjection:
    """Result of projecting a coordinate update onto the no-flip set.

    ``projected`` rows for ``frozen_nodes`` are exactly zero; every other row
    equals the corresponding input delta row. ``flipped_elements`` collects
    every element that triggered freezing across all rounds.
    """

    projected: np.ndarray          # (N, 2)
    frozen_nodes: set[int]
    rounds: int
    flipped_elements: set[int] = field(default_factory=set)


def detect_flips(nodes: np.ndarray, delta: np.ndarray, elements) -> set[int]:
    """Elements whose orientation sign changes (or hits zero) under nodes + delta.

    Raises ValueError if the input mesh already contains a zero-orientation
    element; that mesh is degenerate before any update is applied.
    """
    nodes = np.asarray(nodes, dtype=np.float64)
    delta = np.asarray(delta, dtype=np.float64)
    if delta.shape != nodes.shape:
        raise ValueError(f"delta shape {delta.shape} != nodes shape {nodes.shape}")
    before = element_orientations(nodes, elements)
    if np.any(before == 0.0):
        bad = int(np.flatnonzero(before == 0.0)[0])
        raise ValueError(f"degenerate input mesh: element {bad} has zero orientation")
    after = element_orientations(nodes + delta, elements)
    flipped = (np.sign(after) != np.sign(before)) | (after == 0.0)
    return {int(e) for e in np.flatnonzero(flipped)}


def project_update(nodes: np.ndarray, delta: np.ndarray, elements,
                   pinned=()) -> UpdateProjection:
    """Zero the rows of every flipped element's vertices until nothing flips.

    ``pinned`` node indices are zeroed unconditionally before the first check
    (used to keep boundary geometry fixed during training). Terminates in at
    most N rounds: every non-final round freezes at least one new node.
    """
    nodes = np.asarray(nodes, dtype=np.float64)
    tri = np.asarray(elements, dtype=np.int64).reshape(-1, 3)
    projected = np.array(delta, dtype=np.float64, copy=True)

    frozen: set[int] = set()
    for p in pinned:
        p = int(p)
        projected[p, :] = 0.0
        frozen.add(p)

    flipped_all: set[int] = set()
    rounds = 0
    while True:
        flips = detect_flips(nodes, projected, tri)
        rounds += 1
        if not flips:
            break
        flipped_all |= flips
        for e in sorted(flips):
            for v in tri[e]:
                projected[int(v), :] = 0.0
                frozen.add(int(v))
    return UpdateProjection(projected=projected, frozen_nodes=frozen,
                            rounds=rounds, flipped_elements=flipped_all)
