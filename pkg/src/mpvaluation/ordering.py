"""Information ordering of limit values.

Two tools:

* a brute-force check that a nonincreasing profile ``c`` on the simplex
  maximizes ``sum_t sqrt(d_t)`` over all ``d`` whose prefix sums dominate
  those of ``c``;
* :func:`compare_filtrations`, which values the same Gaussian cash flow under a
  smaller and a larger information process and reports whether the value
  under less information is at least the value under more.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from itertools import combinations
from typing import Optional, Sequence

import numpy as np

from .gaussian import GaussianModel, limit_value, variance_schedule
from .mappings import OneStepMapping, ValuationSchedule

__all__ = [
    "DeltaProfile",
    "objective",
    "is_majorized_feasible",
    "lemma_check",
    "LemmaReport",
    "compare_filtrations",
    "FiltrationReport",
    "MAX_GRID_HORIZON",
]

SIMPLEX_TOL = 1e-12
MAX_GRID_HORIZON = 5
MARGINAL_TOL = 1e-10
ORDER_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class DeltaProfile:
    """A point of the probability simplex, typically normalized variance decrements."""

    c: np.ndarray

    def __post_init__(self):
        c = np.array(self.c, dtype=float).ravel()
        if c.size == 0:
            raise ValueError("empty profile")
        if np.any(c < 0):
            raise ValueError("profile entries must be nonnegative")
        if abs(c.sum() - 1.0) > SIMPLEX_TOL * max(1, c.size):
            raise ValueError(f"profile must sum to 1, got {c.sum()!r}")
        c.setflags(write=False)
        object.__setattr__(self, "c", c)

    def __len__(self) -> int:
        return self.c.size

    def is_nonincreasing(self) -> bool:
        return bool(np.all(np.diff(self.c) <= SIMPLEX_TOL))


def _as_array(c) -> np.ndarray:
    return c.c if isinstance(c, DeltaProfile) else DeltaProfile(c).c


def objective(c) -> float:
    """``sum_t sqrt(c_t)``."""
    return float(np.sqrt(_as_array(c)).sum())


def is_majorized_feasible(d, c) -> bool:
    """True iff every prefix sum of ``d`` is at least the matching prefix sum of ``c``."""
    d, c = _as_array(d), _as_array(c)
    if d.size != c.size:
        raise ValueError(f"length mismatch: {d.size} vs {c.size}")
    return bool(np.all(np.cumsum(d) >= np.cumsum(c) - SIMPLEX_TOL))


@lru_cache(maxsize=16)
def _simplex_grid(steps: int, dim: int) -> np.ndarray:
    """All integer vectors of length ``dim`` with nonnegative entries summing to ``steps``."""
    # stars and bars: bar positions among steps + dim - 1 slots
    bars = np.array(list(combinations(range(steps + dim - 1), dim - 1)), dtype=np.int64)
    bars = bars.reshape(-1, dim - 1)
    edges = np.hstack([np.full((bars.shape[0], 1), -1), bars, np.full((bars.shape[0], 1), steps + dim - 1)])
    grid = np.diff(edges, axis=1) - 1
    grid.setflags(write=False)
    return grid


@dataclass(frozen=True)
class LemmaReport:
    c: tuple
    grid_step: float
    max_found: float
    argmax: tuple
    c_objective: float
    c_is_max: bool
    hypothesis_holds: bool
    n_feasible: int

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def lemma_check(c, grid_step: float) -> LemmaReport:
    """Compare ``objective(c)`` with the best feasible point of a simplex grid.

    A ``c`` that is not nonincreasing is still checked; ``hypothesis_holds``
    is then False and ``c_is_max`` is expected to fail for some inputs.
    """
    c = _as_array(c)
    T = c.size
    if T > MAX_GRID_HORIZON:
        raise ValueError(f"grid enumeration supports T <= {MAX_GRID_HORIZON}, got {T}")
    if not grid_step > 0:
        raise ValueError("grid_step must be positive")
    steps = int(round(1.0 / grid_step))
    if abs(steps * grid_step - 1.0) > 1e-9:
        raise ValueError(f"grid_step {grid_step} does not divide 1")
    grid = _simplex_grid(steps, T) / steps
    feasible = np.all(np.cumsum(grid, axis=1) >= np.cumsum(c) - SIMPLEX_TOL, axis=1)
    pts = grid[feasible]
    vals = np.sqrt(pts).sum(axis=1)
    best = int(np.argmax(vals))
    c_obj = objective(c)
    return LemmaReport(
        c=tuple(float(v) for v in c),
        grid_step=float(grid_step),
        max_found=float(vals[best]),
        argmax=tuple(float(v) for v in pts[best]),
        c_objective=c_obj,
        c_is_max=bool(c_obj >= vals[best] - SIMPLEX_TOL),
        hypothesis_holds=bool(np.all(np.diff(c) <= SIMPLEX_TOL)),
        n_feasible=int(pts.shape[0]),
    )


@dataclass(frozen=True)
class FiltrationReport:
    v0_F: float
    v0_G: float
    deltas_F: tuple
    deltas_G: tuple
    convexity_holds: bool
    nested: bool
    prefix_dominated: bool
    ordering_holds: bool
    notes: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def _aux_slice(model: GaussianModel, t: int, coords: Sequence[int]) -> list[int]:
    base = (t - 1) * model.block_size
    return [base] + [base + 1 + k for k in coords]


def _is_sub_process(model_F: GaussianModel, model_G: GaussianModel, coords: Sequence[int]) -> bool:
    """Whether ``(X, Y_F)`` has the law of ``(X, Y_G[coords])``."""
    if len(coords) != model_F.aux_dim or any(not 0 <= k < model_G.aux_dim for k in coords):
        return False
    idx_G = np.concatenate([_aux_slice(model_G, t, coords) for t in range(1, model_G.horizon + 1)])
    idx_F = np.concatenate([_aux_slice(model_F, t, range(model_F.aux_dim)) for t in range(1, model_F.horizon + 1)])
    scale = max(1.0, float(np.abs(model_G.cov).max()))
    same_cov = np.allclose(model_G.cov[np.ix_(idx_G, idx_G)], model_F.cov[np.ix_(idx_F, idx_F)], rtol=0, atol=MARGINAL_TOL * scale)
    same_mean = np.allclose(model_G.mean[idx_G], model_F.mean[idx_F], rtol=0, atol=MARGINAL_TOL * scale)
    return bool(same_cov and same_mean)


def compare_filtrations(
    model_F: GaussianModel,
    model_G: GaussianModel,
    mapping: OneStepMapping,
    f_coords: Optional[Sequence[int]] = None,
) -> FiltrationReport:
    """Limit values of the same ``X`` under a smaller (F) and a larger (G) information process.

    ``f_coords`` lists which auxiliary coordinates of ``model_G`` reproduce
    the auxiliary process of ``model_F``; by default the leading ones.
    Inclusion of the information is only recognized in this coordinate
    form (``nested``).
    """
    if model_F.horizon != model_G.horizon:
        raise ValueError("models have different horizons")
    mean_F, cov_F = model_F.x_marginal()
    mean_G, cov_G = model_G.x_marginal()
    scale = max(1.0, float(np.abs(cov_F).max()))
    if not (
        np.allclose(mean_F, mean_G, rtol=0, atol=MARGINAL_TOL * scale)
        and np.allclose(cov_F, cov_G, rtol=0, atol=MARGINAL_TOL * scale)
    ):
        raise ValueError("models disagree on the law of X")
    coords = list(range(model_F.aux_dim)) if f_coords is None else [int(k) for k in f_coords]
    nested = _is_sub_process(model_F, model_G, coords)

    sched_F, sched_G = variance_schedule(model_F), variance_schedule(model_G)
    schedule = ValuationSchedule.constant(mapping, model_F.horizon)
    v0_F = limit_value(model_F, schedule)
    v0_G = limit_value(model_G, schedule)
    total = sched_F.total
    tol = SIMPLEX_TOL * max(total, 1.0)
    convex = bool(np.all(np.diff(sched_F.deltas) <= tol))
    notes = []
    if total > 0:
        prefix = bool(np.all(np.cumsum(sched_G.deltas) >= np.cumsum(sched_F.deltas) - tol))
    else:
        prefix = True
        notes.append("X is deterministic; all deltas vanish")
    if mapping.normal_value() < 0:
        notes.append("mapping has a negative value at the standard normal; the ordering reverses")
    return FiltrationReport(
        v0_F=v0_F,
        v0_G=v0_G,
        deltas_F=tuple(float(v) for v in sched_F.deltas),
        deltas_G=tuple(float(v) for v in sched_G.deltas),
        convexity_holds=convex,
        nested=nested,
        prefix_dominated=prefix,
        ordering_holds=bool(v0_F >= v0_G - ORDER_TOL),
        notes=notes,
    )
