"""Scenario trees and the nested backward valuation recursion.

Nodes live in a flat arena in breadth-first order: all nodes of depth ``t``
occupy a contiguous id range, and the children of every node are contiguous
and ordered like their parents. The root has depth 0 and carries no
increment; a node at depth ``t >= 1`` carries the period-``t`` increments
``x_t`` (cashflow) and ``y_t`` (auxiliary information, length ``d``).
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .dist import WeightedSample
from .mappings import OneStepMapping, ValuationSchedule

__all__ = [
    "Node",
    "ScenarioTree",
    "ValuationResult",
    "backward_value",
    "affine_transform",
    "path_law",
    "save_tree",
    "load_tree",
]

_WEIGHT_TOL = 1e-12
# Upper bound on matrix elements handled per mapping call; keeps memory flat.
_BLOCK_ELEMENTS = 1 << 21


@dataclass(frozen=True)
class Node:
    id: int
    depth: int
    x: float
    y: np.ndarray
    children: list[tuple[int, float]]


class ScenarioTree:
    """Immutable filtration-respecting scenario tree.

    Args:
        horizon: number of periods ``T``.
        aux_dim: length ``d`` of the auxiliary increments.
        parent: parent id per node (``-1`` for the root, which must be id 0).
        weight: conditional probability of each node given its parent.
        x: cashflow increment per node (root entry ignored, stored as 0).
        y: auxiliary increments, shape ``(n, d)``.
    """

    def __init__(self, horizon: int, aux_dim: int, parent, weight, x, y=None):
        if horizon < 1:
            raise ValueError(f"horizon must be positive, got {horizon}")
        if aux_dim < 0:
            raise ValueError(f"aux_dim must be nonnegative, got {aux_dim}")
        parent = np.asarray(parent, dtype=np.int64)
        n = parent.size
        weight = np.asarray(weight, dtype=float).reshape(n)
        x = np.asarray(x, dtype=float).reshape(n).copy()
        if y is None:
            y = np.zeros((n, aux_dim))
        y = np.asarray(y, dtype=float).reshape(n, aux_dim).copy()
        if n == 0 or parent[0] != -1:
            raise ValueError("node 0 must be the root (parent -1)")
        if np.any(parent[1:] < 0) or np.any(parent[1:] >= np.arange(1, n)):
            raise ValueError("nodes must be in breadth-first order (parent id < child id)")
        if np.any(np.diff(parent[1:]) < 0):
            raise ValueError("children must be grouped contiguously in parent order")

        depth = np.zeros(n, dtype=np.int64)
        # parents precede children, so one vectorized pass per level suffices
        for _ in range(horizon):
            depth[1:] = depth[parent[1:]] + 1
        if np.any(np.diff(depth) < 0):
            raise ValueError("levels must be contiguous")
        if depth[-1] != horizon:
            raise ValueError(f"leaves must have depth {horizon}, deepest node has depth {depth[-1]}")

        count = np.bincount(parent[1:], minlength=n).astype(np.int64)
        start = np.zeros(n, dtype=np.int64)
        has = count > 0
        first_child = np.searchsorted(parent[1:], np.arange(n), side="left") + 1
        start[has] = first_child[has]
        inner = depth < horizon
        if np.any(count[inner] == 0):
            bad = int(np.flatnonzero(inner & (count == 0))[0])
            raise ValueError(f"node {bad} at depth {depth[bad]} < T has no children")
        if np.any(count[~inner] != 0):
            raise ValueError("nodes at depth T must be leaves")

        weight = weight.copy()
        weight[0] = 1.0
        if np.any(weight[1:] <= 0) or not np.all(np.isfinite(weight)):
            raise ValueError("child weights must be positive")
        sums = np.zeros(n)
        np.add.at(sums, parent[1:], weight[1:])
        if np.any(np.abs(sums[inner] - 1.0) > _WEIGHT_TOL):
            bad = int(np.flatnonzero(inner & (np.abs(sums - 1.0) > _WEIGHT_TOL))[0])
            raise ValueError(f"child weights of node {bad} sum to {sums[bad]!r}")
        x[0] = 0.0
        y[0] = 0.0

        offsets = np.searchsorted(depth, np.arange(horizon + 2), side="left")
        for arr in (parent, weight, x, y, depth, count, start, offsets):
            arr.setflags(write=False)
        self.horizon = int(horizon)
        self.aux_dim = int(aux_dim)
        self.parent = parent
        self.weight = weight
        self.x = x
        self.y = y
        self.depth = depth
        self.child_count = count
        self.child_start = start
        self.level_offsets = offsets

    @classmethod
    def from_levels(cls, child_counts: Sequence, x_levels: Sequence, y_levels=None, weight_levels=None):
        """Build from per-level arrays.

        ``child_counts[t]`` gives the number of children of each depth-``t``
        node (an int means the same count for every node); ``x_levels[t]``,
        ``y_levels[t]`` and ``weight_levels[t]`` describe the depth-``t+1``
        nodes in order. Weights default to uniform over siblings.
        """
        horizon = len(child_counts)
        if len(x_levels) != horizon:
            raise ValueError("need one x array per level")
        aux_dim = 0 if y_levels is None else np.asarray(y_levels[0]).reshape(len(x_levels[0]), -1).shape[1]
        parents = [np.array([-1])]
        weights = [np.array([1.0])]
        xs = [np.array([0.0])]
        ys = [np.zeros((1, aux_dim))]
        level_first, level_size = 0, 1
        for t in range(horizon):
            counts = child_counts[t]
            counts = np.full(level_size, int(counts)) if np.ndim(counts) == 0 else np.asarray(counts, dtype=np.int64)
            if counts.size != level_size or np.any(counts < 1):
                raise ValueError(f"level {t}: bad child counts")
            par = np.repeat(np.arange(level_first, level_first + level_size), counts)
            m = par.size
            xs.append(np.asarray(x_levels[t], dtype=float).reshape(m))
            ys.append(np.zeros((m, 0)) if aux_dim == 0 else np.asarray(y_levels[t], dtype=float).reshape(m, aux_dim))
            if weight_levels is None:
                weights.append(np.repeat(1.0 / counts, counts))
            else:
                weights.append(np.asarray(weight_levels[t], dtype=float).reshape(m))
            parents.append(par)
            level_first += level_size
            level_size = m
        return cls(
            horizon,
            aux_dim,
            np.concatenate(parents),
            np.concatenate(weights),
            np.concatenate(xs),
            np.concatenate(ys),
        )

    @classmethod
    def from_records(cls, records, horizon: int, aux_dim: int = 0):
        """Build from ``(id, depth, parent, weight, x, *y)`` records in any order.

        Ids are arbitrary integers; they are renumbered breadth-first, keeping
        sibling order by original id.
        """
        recs = sorted(records, key=lambda r: (int(r[1]), int(r[0])))
        by_id = {int(r[0]): r for r in recs}
        roots = [r for r in recs if int(r[2]) == -1]
        if len(roots) != 1:
            raise ValueError("exactly one root (parent -1) required")
        order = [int(roots[0][0])]
        children: dict[int, list[int]] = {}
        for r in recs:
            if int(r[2]) != -1:
                if int(r[2]) not in by_id:
                    raise ValueError(f"node {r[0]} references unknown parent {r[2]}")
                children.setdefault(int(r[2]), []).append(int(r[0]))
        head = 0
        while head < len(order):
            order.extend(children.get(order[head], []))
            head += 1
        if len(order) != len(recs):
            raise ValueError("records do not form a single tree")
        new_id = {old: i for i, old in enumerate(order)}
        parent = [-1 if int(by_id[o][2]) == -1 else new_id[int(by_id[o][2])] for o in order]
        weight = [float(by_id[o][3]) for o in order]
        x = [float(by_id[o][4]) for o in order]
        y = [[float(v) for v in by_id[o][5 : 5 + aux_dim]] for o in order]
        return cls(horizon, aux_dim, parent, weight, x, np.array(y).reshape(len(order), aux_dim))

    @property
    def n_nodes(self) -> int:
        return self.parent.size

    def level(self, t: int) -> np.ndarray:
        """Ids of the nodes at depth ``t``."""
        return np.arange(self.level_offsets[t], self.level_offsets[t + 1])

    def node(self, i: int) -> Node:
        self._check_id(i)
        s, c = self.child_start[i], self.child_count[i]
        kids = [(int(j), float(self.weight[j])) for j in range(s, s + c)]
        return Node(int(i), int(self.depth[i]), float(self.x[i]), self.y[i].copy(), kids)

    def path_sums(self) -> np.ndarray:
        """Cumulative cashflow ``sum_{s <= t} x_s`` along the path to each node."""
        out = self.x.copy()
        for t in range(2, self.horizon + 1):
            ids = self.level(t)
            out[ids] += out[self.parent[ids]]
        return out

    def _check_id(self, i: int) -> None:
        if not 0 <= i < self.n_nodes:
            raise IndexError(f"node id {i} out of range [0, {self.n_nodes})")

    def __repr__(self) -> str:
        return f"ScenarioTree(T={self.horizon}, d={self.aux_dim}, nodes={self.n_nodes})"


@dataclass(frozen=True)
class ValuationResult:
    """Output of :func:`backward_value`.

    ``node_values[i]`` is ``V_t`` at node ``i``; ``psi_values[i]`` is the path
    cashflow up to the node plus ``V_t``.
    """

    v0: float
    node_values: np.ndarray
    psi_values: np.ndarray


def _child_groups(tree: ScenarioTree, parents: np.ndarray):
    counts = tree.child_count[parents]
    for k in np.unique(counts):
        sel = parents[counts == k]
        yield sel, tree.child_start[sel][:, None] + np.arange(k)[None, :]


def _evaluate(mapping: OneStepMapping, values: np.ndarray, weights: np.ndarray, workers: int) -> np.ndarray:
    rows, k = values.shape
    block = max(1, _BLOCK_ELEMENTS // max(k, 1))
    bounds = [(lo, min(lo + block, rows)) for lo in range(0, rows, block)]
    if workers > 1 and len(bounds) < workers and rows >= workers:
        step = -(-rows // workers)
        bounds = [(lo, min(lo + step, rows)) for lo in range(0, rows, step)]
    out = np.empty(rows)

    def run(b):
        lo, hi = b
        out[lo:hi] = mapping.apply_rows(values[lo:hi], weights[lo:hi])

    if workers > 1 and len(bounds) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(run, bounds))
    else:
        for b in bounds:
            run(b)
    return out


def backward_value(tree: ScenarioTree, schedule: ValuationSchedule, workers: int = 1) -> ValuationResult:
    """Nested backward recursion ``V_T = 0``, ``V_t = phi_t(X_{t+1} + V_{t+1})``.

    Each node's conditional law is the weighted law of ``x + V`` over its
    children. Rows are evaluated independently, so the result is bit-identical
    for any ``workers``.
    """
    if len(schedule) != tree.horizon:
        raise ValueError(f"schedule length {len(schedule)} != tree horizon {tree.horizon}")
    values = np.zeros(tree.n_nodes)
    for t in range(tree.horizon - 1, -1, -1):
        target = tree.x + values
        for parents, idx in _child_groups(tree, tree.level(t)):
            values[parents] = _evaluate(schedule[t], target[idx], tree.weight[idx], workers)
    psi = tree.path_sums() + values
    return ValuationResult(float(values[0]), values, psi)


def affine_transform(tree: ScenarioTree, a: float, b) -> ScenarioTree:
    """Tree of ``a * X + b``: depth-``t`` increments become ``a * x + b_t``."""
    if not a >= 0:
        raise ValueError(f"scale must be nonnegative, got {a}")
    b = np.asarray(b, dtype=float).ravel()
    if b.size != tree.horizon:
        raise ValueError(f"shift has length {b.size}, expected {tree.horizon}")
    x = a * tree.x
    x[1:] += b[tree.depth[1:] - 1]
    return ScenarioTree(tree.horizon, tree.aux_dim, tree.parent, tree.weight, x, tree.y)


def path_law(tree: ScenarioTree, node: int) -> WeightedSample:
    """Law of the remaining cashflow ``sum_{s > t} X_s`` given the node."""
    tree._check_id(node)
    lo, hi = node, node + 1
    prob = np.ones(1)
    remaining = np.zeros(1)
    while tree.child_count[lo] > 0:
        nlo = tree.child_start[lo]
        nhi = tree.child_start[hi - 1] + tree.child_count[hi - 1]
        ids = np.arange(nlo, nhi)
        rel = tree.parent[ids] - lo
        prob = prob[rel] * tree.weight[ids]
        remaining = remaining[rel] + tree.x[ids]
        lo, hi = nlo, nhi
    return WeightedSample(remaining, prob, normalize=True)


_HEADER = "# mpvaluation scenario-tree v1"


def save_tree(tree: ScenarioTree, path) -> None:
    """Write one CSV record per node: ``id,depth,parent,weight,x,y1..yd``."""
    cols = ["id", "depth", "parent", "weight", "x"] + [f"y{k + 1}" for k in range(tree.aux_dim)]
    with open(path, "w") as fh:
        fh.write(f"{_HEADER}\n# horizon={tree.horizon} aux_dim={tree.aux_dim}\n")
        fh.write(",".join(cols) + "\n")
        for i in range(tree.n_nodes):
            row = [str(i), str(int(tree.depth[i])), str(int(tree.parent[i])), repr(float(tree.weight[i])), repr(float(tree.x[i]))]
            row += [repr(float(v)) for v in tree.y[i]]
            fh.write(",".join(row) + "\n")


def load_tree(path) -> ScenarioTree:
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0].strip() != _HEADER:
        raise ValueError(f"{path}: not a scenario-tree file")
    meta = dict(kv.split("=") for kv in lines[1].lstrip("# ").split())
    horizon, aux_dim = int(meta["horizon"]), int(meta["aux_dim"])
    records = []
    for line in lines[3:]:
        if line.strip():
            f = line.split(",")
            records.append((int(f[0]), int(f[1]), int(f[2]), float(f[3]), float(f[4]), *map(float, f[5:])))
    return ScenarioTree.from_records(records, horizon, aux_dim)
