"""Weighted empirical distributions and quantile-integral risk measures.

A :class:`WeightedSample` is a finite law on the real line. Risk measures are
of the form ``rho(Y) = int_0^1 F^{-1}_{-Y}(p) mu(dp)`` for a probability measure
``mu`` on ``[0, 1]`` described by a :class:`SpectralMeasure`.

Because the generalized inverse of a finite law is a step function of ``p``,
every quantile integral is evaluated exactly as a finite sum of
``step value * mu(step interval)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np

__all__ = [
    "WeightedSample",
    "SpectralMeasure",
    "PointMass",
    "TailUniform",
    "BoundedDensity",
    "CompactSupport",
    "quantile",
    "quantile_integral",
    "quantile_integral_rows",
    "spectral_risk",
    "var_at_level",
    "avar_at_level",
]

_HARD_TOL = 1e-6


class WeightedSample:
    """Finite weighted distribution.

    Weights are rescaled to sum to one. Inputs whose total deviates from one
    by more than ``1e-6`` are rejected unless ``normalize=True`` is passed.
    """

    def __init__(self, values, weights=None, *, normalize: bool = False):
        v = np.array(values, dtype=float).ravel()
        if v.size == 0:
            raise ValueError("WeightedSample needs at least one value")
        if not np.all(np.isfinite(v)):
            raise ValueError("WeightedSample values must be finite")
        if weights is None:
            w = np.full(v.size, 1.0 / v.size)
        else:
            w = np.array(weights, dtype=float).ravel()
            if w.shape != v.shape:
                raise ValueError(f"weights length {w.size} != values length {v.size}")
            if np.any(w < 0) or not np.all(np.isfinite(w)):
                raise ValueError("weights must be finite and nonnegative")
            total = w.sum()
            if total <= 0:
                raise ValueError("weights sum to zero")
            if not normalize and abs(total - 1.0) > _HARD_TOL:
                raise ValueError(f"weights sum to {total!r}, expected 1")
            if abs(total - 1.0) > 0.0:
                w = w / total
        v.setflags(write=False)
        w.setflags(write=False)
        self.values = v
        self.weights = w

    def __len__(self) -> int:
        return self.values.size

    def __repr__(self) -> str:
        return f"WeightedSample(n={self.values.size}, mean={self.mean():.6g})"

    @cached_property
    def sorted_view(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Distinct values ascending, their merged weights, cumulative weights."""
        uniq, inverse = np.unique(self.values, return_inverse=True)
        merged = np.zeros(uniq.size)
        np.add.at(merged, inverse, self.weights)
        cum = np.cumsum(merged)
        cum[-1] = 1.0
        return uniq, merged, cum

    def mean(self) -> float:
        return float(np.dot(self.weights, self.values))

    def std(self) -> float:
        """Population standard deviation (divides by total weight)."""
        m = self.mean()
        var = float(np.dot(self.weights, (self.values - m) ** 2))
        return float(np.sqrt(max(var, 0.0)))

    def abs_moment(self, order: float = 1.0) -> float:
        return float(np.dot(self.weights, np.abs(self.values) ** order))

    def map(self, a: float, b: float) -> "WeightedSample":
        """Law of ``a * Y + b`` on the same weights."""
        return WeightedSample(a * self.values + b, self.weights)

    def negate(self) -> "WeightedSample":
        return WeightedSample(-self.values, self.weights)


# ---------------------------------------------------------------------------
# Spectral measures
# ---------------------------------------------------------------------------


class SpectralMeasure:
    """Probability measure on [0, 1] used as a quantile weighting.

    Subclasses provide ``cdf(p) = mu([0, p])``. The mass of a half-open step
    interval ``(lo, hi]`` is ``cdf(hi) - cdf(lo)``, which matches the
    left-continuous generalized inverse exactly, including for atoms.
    """

    kind: str = ""

    def cdf(self, p: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def bound_constant(self) -> float:
        """Constant ``c`` with ``|int F^{-1}_W dmu| <= c E|W|`` for every W."""
        raise NotImplementedError

    def normal_integral(self) -> float:
        """``int Phi^{-1}(p) mu(dp)`` for the standard normal quantile."""
        raise NotImplementedError

    def to_dict(self) -> dict:
        raise NotImplementedError

    @staticmethod
    def from_dict(data: dict) -> "SpectralMeasure":
        kind = data.get("kind")
        if kind == "point_mass":
            return PointMass(float(data["p"]))
        if kind == "tail_uniform":
            return TailUniform(float(data["u"]))
        if kind == "var":
            return PointMass(1.0 - float(data["u"]))
        if kind == "avar":
            return TailUniform(float(data["u"]))
        if kind == "bounded_density":
            return BoundedDensity(data["breakpoints"], data["levels"])
        if kind == "compact_support":
            return CompactSupport(data["breakpoints"], data["levels"])
        if kind == "uniform":
            return BoundedDensity([0.0, 1.0], [1.0])
        raise ValueError(f"unknown spectral measure kind {kind!r}")


@dataclass(frozen=True)
class PointMass(SpectralMeasure):
    """Unit mass at ``p``; ``PointMass(1 - u)`` is V@R at level ``u``."""

    p: float
    kind = "point_mass"

    def __post_init__(self):
        if not 0.0 < self.p < 1.0:
            raise ValueError(f"point mass location must lie in (0, 1), got {self.p}")

    def cdf(self, p):
        return (np.asarray(p) >= self.p).astype(float)

    def bound_constant(self) -> float:
        return max(1.0 / self.p, 1.0 / (1.0 - self.p))

    def normal_integral(self) -> float:
        from scipy.special import ndtri

        return float(ndtri(self.p))

    def to_dict(self) -> dict:
        return {"kind": self.kind, "p": self.p}


class _PiecewiseDensity(SpectralMeasure):
    """Piecewise-constant density on ``[breakpoints[0], breakpoints[-1]]``."""

    def __init__(self, breakpoints: Sequence[float], levels: Sequence[float]):
        b = np.asarray(breakpoints, dtype=float)
        lv = np.asarray(levels, dtype=float)
        if b.ndim != 1 or b.size < 2 or lv.size != b.size - 1:
            raise ValueError("need m+1 breakpoints for m density levels")
        if np.any(np.diff(b) <= 0):
            raise ValueError("breakpoints must be strictly increasing")
        if b[0] < 0.0 or b[-1] > 1.0:
            raise ValueError("breakpoints must lie in [0, 1]")
        if np.any(lv < 0) or not np.all(np.isfinite(lv)):
            raise ValueError("density levels must be finite and nonnegative")
        cum = np.concatenate([[0.0], np.cumsum(lv * np.diff(b))])
        if abs(cum[-1] - 1.0) > 1e-12:
            raise ValueError(f"density integrates to {cum[-1]!r}, expected 1")
        cum[-1] = 1.0
        self.breakpoints = b
        self.levels = lv
        self._cum = cum

    def __repr__(self) -> str:
        return f"{type(self).__name__}(breakpoints={self.breakpoints.tolist()}, levels={self.levels.tolist()})"

    def __eq__(self, other) -> bool:
        return (
            type(self) is type(other)
            and np.array_equal(self.breakpoints, other.breakpoints)
            and np.array_equal(self.levels, other.levels)
        )

    __hash__ = None

    def cdf(self, p):
        return np.interp(p, self.breakpoints, self._cum, left=0.0, right=1.0)

    def density(self, p):
        p = np.asarray(p, dtype=float)
        idx = np.searchsorted(self.breakpoints, p, side="right") - 1
        inside = (idx >= 0) & (idx < self.levels.size)
        out = np.zeros_like(p)
        out[inside] = self.levels[idx[inside]]
        return out

    def normal_integral(self) -> float:
        from scipy.special import ndtri
        from scipy.stats import norm

        # d/dp phi(Phi^{-1}(p)) = -Phi^{-1}(p)
        edge = norm.pdf(ndtri(self.breakpoints))
        return float(np.dot(self.levels, edge[:-1] - edge[1:]))

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "breakpoints": self.breakpoints.tolist(),
            "levels": self.levels.tolist(),
        }


class BoundedDensity(_PiecewiseDensity):
    kind = "bounded_density"

    def bound_constant(self) -> float:
        return float(self.levels.max())


class CompactSupport(_PiecewiseDensity):
    """Density supported on ``[a, b]`` with ``0 < a < b < 1``."""

    kind = "compact_support"

    def __init__(self, breakpoints, levels):
        super().__init__(breakpoints, levels)
        if not (0.0 < self.breakpoints[0] and self.breakpoints[-1] < 1.0):
            raise ValueError("compact support must lie strictly inside (0, 1)")

    @property
    def a(self) -> float:
        return float(self.breakpoints[0])

    @property
    def b(self) -> float:
        return float(self.breakpoints[-1])

    def bound_constant(self) -> float:
        return max(1.0 / self.a, 1.0 / (1.0 - self.b))


class TailUniform(BoundedDensity):
    """Density ``1/u`` on ``[1 - u, 1]``; AV@R at level ``u``."""

    kind = "tail_uniform"

    def __init__(self, u: float):
        if not 0.0 < u < 1.0:
            raise ValueError(f"tail level must lie in (0, 1), got {u}")
        self.u = float(u)
        super().__init__([1.0 - u, 1.0], [1.0 / u])

    def __repr__(self) -> str:
        return f"TailUniform(u={self.u})"

    def normal_integral(self) -> float:
        from scipy.special import ndtri
        from scipy.stats import norm

        return float(norm.pdf(ndtri(1.0 - self.u)) / self.u)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "u": self.u}


# ---------------------------------------------------------------------------
# Quantiles and quantile integrals
# ---------------------------------------------------------------------------


def _check_level(p: float) -> None:
    if not 0.0 < p < 1.0:
        raise ValueError(f"probability level must lie in (0, 1), got {p}")


def quantile(sample: WeightedSample, p: float) -> float:
    """Generalized inverse ``min{m : F(m) >= p}``; exact, no interpolation."""
    _check_level(p)
    vals, _, cum = sample.sorted_view
    k = int(np.searchsorted(cum, p, side="left"))
    return float(vals[min(k, vals.size - 1)])


def quantile_integral_rows(values: np.ndarray, weights: np.ndarray, mu: SpectralMeasure) -> np.ndarray:
    """Row-wise ``int F^{-1}_W(p) mu(dp)`` for a batch of finite laws.

    ``values`` and ``weights`` have shape ``(rows, k)``; each row is one law.
    Rows are processed independently, so results do not depend on how a batch
    is split.
    """
    values = np.asarray(values, dtype=float)
    weights = np.asarray(weights, dtype=float)
    order = np.argsort(values, axis=1, kind="stable")
    v = np.take_along_axis(values, order, axis=1)
    w = np.take_along_axis(weights, order, axis=1)
    cum = np.cumsum(w, axis=1)
    cum[:, -1] = 1.0
    g = mu.cdf(cum)
    mass = np.empty_like(g)
    mass[:, 0] = g[:, 0]
    mass[:, 1:] = g[:, 1:] - g[:, :-1]
    return (v * mass).sum(axis=1)


def quantile_integral(sample: WeightedSample, mu: SpectralMeasure) -> float:
    """``int F^{-1}_Y(p) mu(dp)`` for the law of ``Y`` itself."""
    return float(quantile_integral_rows(sample.values[None, :], sample.weights[None, :], mu)[0])


def spectral_risk(sample: WeightedSample, mu: SpectralMeasure) -> float:
    """``rho(Y) = int F^{-1}_{-Y}(p) mu(dp)`` where ``sample`` is the law of Y."""
    return float(quantile_integral_rows(-sample.values[None, :], sample.weights[None, :], mu)[0])


def var_at_level(sample: WeightedSample, u: float) -> float:
    """Value-at-Risk ``F^{-1}_{-Y}(1 - u)``."""
    _check_level(u)
    return spectral_risk(sample, PointMass(1.0 - u))


def avar_at_level(sample: WeightedSample, u: float) -> float:
    """Average Value-at-Risk, the mean of V@R over levels in ``(0, u]``."""
    _check_level(u)
    return spectral_risk(sample, TailUniform(u))
