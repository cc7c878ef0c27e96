"""Gaussian models of ``(X, Y)``, conditional-variance schedules, closed-form
limit values and exact conditional sampling for tree construction.

Coordinates are time-blocked: ``(x_1, y_1[0..d), x_2, y_2[0..d), ...)``, so the
information available at time ``t`` is always a contiguous prefix.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .mappings import ValuationSchedule, mapping_of_standard_normal
from .rng import keyed_generator
from .tree import ScenarioTree

logger = logging.getLogger(__name__)

__all__ = [
    "GaussianModel",
    "VarianceSchedule",
    "conditional_variance",
    "variance_schedule",
    "innovation_variance",
    "limit_value",
    "conditional_law",
    "build_tree",
    "save_model",
    "load_model",
]

PINV_RTOL = 1e-10
PSD_RTOL = 1e-8
SNAP_TOL = PINV_RTOL  # decrements below the pseudoinverse resolution are zero
CLAMP_TOL = 1e-8


def _psd_pinv(block: np.ndarray) -> np.ndarray:
    """Symmetric pseudoinverse; eigenvalues below ``PINV_RTOL * max`` are dropped."""
    if block.size == 0:
        return block.copy()
    evals, evecs = np.linalg.eigh(0.5 * (block + block.T))
    top = max(evals[-1], 0.0)
    if evals[0] < -PSD_RTOL * top - 1e-300:
        raise ValueError(f"conditioning block is not positive semidefinite (min eigenvalue {evals[0]:.3g})")
    keep = evals > PINV_RTOL * top
    if top == 0.0:
        keep[:] = False
    u = evecs[:, keep]
    return (u / evals[keep]) @ u.T


def _psd_factor(cov: np.ndarray) -> np.ndarray:
    """``L`` with ``L @ L.T == cov`` for a PSD (possibly singular) matrix."""
    evals, evecs = np.linalg.eigh(0.5 * (cov + cov.T))
    return evecs * np.sqrt(np.clip(evals, 0.0, None))


class GaussianModel:
    """Mean and covariance of the stacked, time-blocked vector ``(X, Y)``."""

    def __init__(self, horizon: int, aux_dim: int, mean, cov):
        q = 1 + aux_dim
        n = horizon * q
        mean = np.array(mean, dtype=float).reshape(-1)
        cov = np.array(cov, dtype=float)
        if horizon < 1 or aux_dim < 0:
            raise ValueError("horizon must be >= 1 and aux_dim >= 0")
        if mean.shape != (n,) or cov.shape != (n, n):
            raise ValueError(f"expected mean of length {n} and a {n}x{n} covariance")
        scale = max(float(np.max(np.abs(cov))), 1.0)
        if not np.allclose(cov, cov.T, atol=1e-10 * scale, rtol=0.0):
            raise ValueError("covariance is not symmetric")
        cov = 0.5 * (cov + cov.T)
        evals = np.linalg.eigvalsh(cov)
        if evals[0] < -PSD_RTOL * max(evals[-1], 0.0):
            raise ValueError(f"covariance is not positive semidefinite (min eigenvalue {evals[0]:.3g})")
        mean.setflags(write=False)
        cov.setflags(write=False)
        self.horizon = int(horizon)
        self.aux_dim = int(aux_dim)
        self.mean = mean
        self.cov = cov
        self._levels: dict[int, tuple[np.ndarray, np.ndarray, np.ndarray]] = {}

    @property
    def block_size(self) -> int:
        return 1 + self.aux_dim

    def x_index(self, t: int) -> int:
        """Coordinate of ``x_t`` (``t`` from 1)."""
        return (t - 1) * self.block_size

    def prefix(self, t: int) -> np.ndarray:
        """Coordinates observed by time ``t``."""
        return np.arange(t * self.block_size)

    def x_indices(self) -> np.ndarray:
        return np.arange(self.horizon) * self.block_size

    def tail_sum_coeffs(self, t: int) -> np.ndarray:
        """Coefficients of ``sum_{u >= t} X_u``."""
        c = np.zeros(self.horizon * self.block_size)
        c[self.x_indices()[t - 1 :]] = 1.0
        return c

    def x_marginal(self) -> tuple[np.ndarray, np.ndarray]:
        ix = self.x_indices()
        return self.mean[ix], self.cov[np.ix_(ix, ix)]

    def affine(self, a: float, b) -> "GaussianModel":
        """Model of ``(a X + b, Y)``."""
        b = np.asarray(b, dtype=float).ravel()
        scale = np.ones(self.horizon * self.block_size)
        shift = np.zeros_like(scale)
        scale[self.x_indices()] = a
        shift[self.x_indices()] = b
        return GaussianModel(
            self.horizon, self.aux_dim, scale * self.mean + shift, self.cov * np.outer(scale, scale)
        )

    def level_law(self, t: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """``(gain, cov, factor)`` of the block at time ``t+1`` given the prefix up to ``t``.

        The conditional mean is ``mean[next] + gain @ (history - mean[prefix])``.
        """
        if t not in self._levels:
            q = self.block_size
            past = self.prefix(t)
            nxt = np.arange(t * q, (t + 1) * q)
            s_pp = self.cov[np.ix_(past, past)]
            s_np = self.cov[np.ix_(nxt, past)]
            gain = s_np @ _psd_pinv(s_pp) if t > 0 else np.zeros((q, 0))
            cov = self.cov[np.ix_(nxt, nxt)] - gain @ s_np.T
            cov = 0.5 * (cov + cov.T)
            self._levels[t] = (gain, cov, _psd_factor(cov))
        return self._levels[t]

    def __repr__(self) -> str:
        return f"GaussianModel(T={self.horizon}, d={self.aux_dim})"


@dataclass(frozen=True)
class VarianceSchedule:
    """Per-period decrements of the conditional variance of the remaining cashflow."""

    deltas: np.ndarray
    total: float

    def normalized(self) -> np.ndarray:
        if self.total <= 0:
            raise ValueError("total variance is zero")
        return self.deltas / self.deltas.sum()


def conditional_variance(model: GaussianModel, target_coeffs, conditioning) -> float:
    """``Var(c^T Z | Z_I)`` for the linear functional ``c`` and index set ``I``."""
    c = np.asarray(target_coeffs, dtype=float).ravel()
    idx = np.asarray(conditioning, dtype=np.int64).ravel()
    if c.size != model.cov.shape[0]:
        raise ValueError(f"coefficient vector has length {c.size}, expected {model.cov.shape[0]}")
    if idx.size and (idx.min() < 0 or idx.max() >= c.size):
        raise ValueError("conditioning index out of range")
    total = float(c @ model.cov @ c)
    if idx.size == 0:
        return total
    cross = model.cov[idx] @ c
    return total - float(cross @ _psd_pinv(model.cov[np.ix_(idx, idx)]) @ cross)


def _clamp(v: float, scale: float, what: str) -> float:
    # roundoff residue of a zero decrement; relative to scale so that scaling the covariance commutes
    if abs(v) <= SNAP_TOL * scale:
        return 0.0
    if v >= 0.0:
        return v
    if v < -CLAMP_TOL * max(scale, 1.0):
        raise ValueError(f"{what} is negative ({v:.3g}); covariance is inconsistent")
    if v < -1e-12 * max(scale, 1.0):
        logger.warning("clamping %s = %.3g to zero", what, v)
    return 0.0


def variance_schedule(model: GaussianModel) -> VarianceSchedule:
    """``Var(S_t | Z_{<=t-1}) - Var(S_t | Z_{<=t})`` with ``S_t = sum_{u >= t} X_u``."""
    coeffs_all = model.tail_sum_coeffs(1)
    total = float(coeffs_all @ model.cov @ coeffs_all)
    deltas = np.empty(model.horizon)
    for t in range(1, model.horizon + 1):
        s = model.tail_sum_coeffs(t)
        before = conditional_variance(model, s, model.prefix(t - 1))
        after = conditional_variance(model, s, model.prefix(t))
        deltas[t - 1] = _clamp(before - after, total, f"variance decrement at t={t}")
    deltas.setflags(write=False)
    return VarianceSchedule(deltas, total)


def innovation_variance(model: GaussianModel, u: int) -> float:
    """``Var(E[S_u | Z_{<=u}] | Z_{<=u-1})``, computed through the regression coefficients."""
    s = model.tail_sum_coeffs(u)
    past = model.prefix(u)
    gain = _psd_pinv(model.cov[np.ix_(past, past)]) @ (model.cov[past] @ s)
    w = np.zeros_like(s)
    w[past] = gain
    return conditional_variance(model, w, model.prefix(u - 1))


def limit_value(model: GaussianModel, schedule: ValuationSchedule) -> float:
    """Closed form ``E[sum X_t] + sum_t phi_{t-1}(eps) sqrt(dVar_t)``."""
    if len(schedule) != model.horizon:
        raise ValueError(f"schedule length {len(schedule)} != model horizon {model.horizon}")
    sched = variance_schedule(model)
    mean = float(model.mean[model.x_indices()].sum())
    spread = sum(mapping_of_standard_normal(schedule[t]) * np.sqrt(sched.deltas[t]) for t in range(model.horizon))
    return mean + float(spread)


def conditional_law(model: GaussianModel, history) -> tuple[np.ndarray, np.ndarray]:
    """Mean and covariance of ``(x_{t+1}, y_{t+1})`` given the realized prefix."""
    h = np.asarray(history, dtype=float).ravel()
    q = model.block_size
    if h.size % q:
        raise ValueError(f"history length {h.size} is not a multiple of the block size {q}")
    t = h.size // q
    if t >= model.horizon:
        raise ValueError("history already covers the full horizon")
    gain, cov, _ = model.level_law(t)
    nxt = np.arange(t * q, (t + 1) * q)
    mean = model.mean[nxt] + gain @ (h - model.mean[: t * q])
    return mean, cov.copy()


def _branching(branching, horizon: int) -> list[int]:
    if np.ndim(branching) == 0:
        b = [int(branching)] * horizon
    else:
        b = [int(v) for v in branching]
    if len(b) != horizon:
        raise ValueError(f"need {horizon} branching factors, got {len(b)}")
    if any(v < 1 for v in b):
        raise ValueError("branching factors must be positive")
    return b


def build_tree(model: GaussianModel, branching, seed: int, workers: int = 1) -> ScenarioTree:
    """Nested Monte Carlo tree with exact conditional Gaussian branching.

    Every depth-``t`` node draws ``B_{t+1}`` iid children from its conditional
    law using a stream keyed by ``(seed, path)``, where ``path`` is the tuple
    of child positions from the root.
    """
    b = _branching(branching, model.horizon)
    q = model.block_size
    history = np.zeros((1, 0))
    paths = np.zeros((1, 0), dtype=np.int64)
    x_levels, y_levels = [], []
    for t in range(model.horizon):
        gain, _, factor = model.level_law(t)
        nxt = np.arange(t * q, (t + 1) * q)
        means = model.mean[nxt] + (history - model.mean[: t * q]) @ gain.T
        n_par, k = history.shape[0], b[t]
        children = np.empty((n_par, k, q))

        def draw(lo_hi):
            lo, hi = lo_hi
            for i in range(lo, hi):
                eps = keyed_generator(seed, *paths[i]).standard_normal((k, q))
                children[i] = means[i] + eps @ factor.T

        chunks = _chunks(n_par, workers)
        if len(chunks) > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                list(pool.map(draw, chunks))
        else:
            draw(chunks[0])
        flat = children.reshape(n_par * k, q)
        x_levels.append(flat[:, 0].copy())
        y_levels.append(flat[:, 1:].copy())
        if t + 1 < model.horizon:
            history = np.concatenate([np.repeat(history, k, axis=0), flat], axis=1)
            paths = np.concatenate(
                [np.repeat(paths, k, axis=0), np.tile(np.arange(k), n_par)[:, None]], axis=1
            )
    return ScenarioTree.from_levels(b, x_levels, y_levels if model.aux_dim else None)


def _chunks(n: int, workers: int) -> list[tuple[int, int]]:
    workers = max(1, min(int(workers), n))
    step = -(-n // workers)
    return [(lo, min(lo + step, n)) for lo in range(0, n, step)]


_HEADER = "# mpvaluation gaussian-model v1"


def save_model(model: GaussianModel, path) -> None:
    """Text format: header, ``horizon aux_dim``, mean row, covariance rows."""
    with open(path, "w") as fh:
        fh.write(f"{_HEADER}\n{model.horizon} {model.aux_dim}\n")
        fh.write(" ".join(repr(float(v)) for v in model.mean) + "\n")
        for row in model.cov:
            fh.write(" ".join(repr(float(v)) for v in row) + "\n")


def load_model(path) -> GaussianModel:
    lines = [ln for ln in Path(path).read_text().splitlines() if ln.strip()]
    if not lines or lines[0].strip() != _HEADER:
        raise ValueError(f"{path}: not a gaussian-model file")
    horizon, aux_dim = (int(v) for v in lines[1].split())
    mean = [float(v) for v in lines[2].split()]
    cov = [[float(v) for v in ln.split()] for ln in lines[3:]]
    return GaussianModel(horizon, aux_dim, mean, cov)

