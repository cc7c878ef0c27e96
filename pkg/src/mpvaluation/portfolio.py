"""Compound-Poisson claims runoff: simulation, CLT scaling, Gaussian limit and
nested valuation of large portfolios.

Each of the ``M_n ~ Poisson(n * lam)`` claims produces a discounted payment
vector ``H = (H_1, ..., H_T)`` and payment indicators ``I = (I_1, ..., I_T)``:

* ``pattern="single"``: the claim pays ``Z * F * disc_D`` once, in period
  ``D ~ p``; ``I_t = 1{D = t}``.
* ``pattern="spread"``: the claim pays ``p_t * Z_t * F * disc_t`` in every
  period with ``p_t > 0``, with independent severities ``Z_t`` and one claim
  factor ``F`` shared by all of its payments; ``I_t = 1{p_t > 0}``.

Because the portfolio is compound Poisson, ``Cov(C_s, C_t) = n lam E[H_s H_t]``
for every ``n``, which gives the Gaussian limit covariance directly.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .gaussian import GaussianModel, limit_value
from .mappings import ValuationSchedule
from .rng import keyed_generator
from .tree import ScenarioTree, affine_transform, backward_value

__all__ = [
    "Lognormal",
    "Gamma",
    "Constant",
    "PortfolioModel",
    "ScalingPair",
    "CashflowSample",
    "simulate_cashflow",
    "simulate_many",
    "clt_scaling",
    "claim_moments",
    "gaussian_limit_of",
    "build_portfolio_tree",
    "empirical_value",
    "EmpiricalValue",
    "ConvergencePoint",
    "convergence_experiment",
    "replication_seed",
    "law_from_dict",
    "sampling_scheme",
]


@dataclass(frozen=True)
class Lognormal:
    mu: float
    sigma: float
    family = "lognormal"

    def __post_init__(self):
        if not self.sigma >= 0:
            raise ValueError("lognormal sigma must be >= 0")

    def moment(self, k: int) -> float:
        log_m = k * self.mu + 0.5 * k * k * self.sigma**2
        return float(np.exp(log_m)) if log_m < 700 else float("inf")

    def sample(self, rng: np.random.Generator, size) -> np.ndarray:
        return rng.lognormal(self.mu, self.sigma, size)

    def to_dict(self):
        return {"family": self.family, "mu": self.mu, "sigma": self.sigma}


@dataclass(frozen=True)
class Gamma:
    shape: float
    scale: float
    family = "gamma"

    def __post_init__(self):
        if not (self.shape > 0 and self.scale > 0):
            raise ValueError("gamma shape and scale must be positive")

    def moment(self, k: int) -> float:
        out = self.scale**k
        for j in range(k):
            out *= self.shape + j
        return float(out)

    def sample(self, rng: np.random.Generator, size) -> np.ndarray:
        return rng.gamma(self.shape, self.scale, size)

    def to_dict(self):
        return {"family": self.family, "shape": self.shape, "scale": self.scale}


@dataclass(frozen=True)
class Constant:
    """Degenerate law; useful for bookkeeping checks."""

    value: float
    family = "constant"

    def moment(self, k: int) -> float:
        return float(self.value**k)

    def sample(self, rng: np.random.Generator, size) -> np.ndarray:
        return np.full(size, float(self.value))

    def to_dict(self):
        return {"family": self.family, "value": self.value}


def law_from_dict(data: dict):
    family = data.get("family")
    if family == "lognormal":
        return Lognormal(float(data["mu"]), float(data["sigma"]))
    if family == "gamma":
        return Gamma(float(data["shape"]), float(data["scale"]))
    if family == "constant":
        return Constant(float(data["value"]))
    raise ValueError(f"unknown law family {family!r}")


@dataclass(frozen=True, eq=False)
class PortfolioModel:
    horizon: int
    intensity: float
    delay: np.ndarray
    severity: object
    factor: Optional[object] = None
    discount: Optional[np.ndarray] = None
    pattern: str = "single"

    def __post_init__(self):
        p = np.asarray(self.delay, dtype=float).ravel()
        if p.size != self.horizon:
            raise ValueError(f"delay law has length {p.size}, expected {self.horizon}")
        if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-12:
            raise ValueError("delay law must be a probability vector")
        if not self.intensity > 0:
            raise ValueError("intensity must be positive")
        disc = np.ones(self.horizon) if self.discount is None else np.asarray(self.discount, dtype=float).ravel()
        if disc.size != self.horizon or np.any(disc <= 0) or np.any(disc > 1):
            raise ValueError("discount factors must lie in (0, 1]")
        if self.pattern not in ("single", "spread"):
            raise ValueError(f"unknown payment pattern {self.pattern!r}")
        for law in (self.severity, self.factor):
            if law is not None and not np.isfinite(law.moment(2)):
                raise ValueError("severity and factor laws need finite second moments")
        object.__setattr__(self, "delay", p)
        object.__setattr__(self, "discount", disc)

    @classmethod
    def default(cls) -> "PortfolioModel":
        return cls(3, 1.0, np.full(3, 1.0 / 3.0), Lognormal(0.0, 0.5))

    @classmethod
    def from_dict(cls, data: dict) -> "PortfolioModel":
        return cls(
            horizon=int(data["horizon"]),
            intensity=float(data["intensity"]),
            delay=np.asarray(data["delay"], dtype=float),
            severity=law_from_dict(data["severity"]),
            factor=None if data.get("factor") is None else law_from_dict(data["factor"]),
            discount=None if data.get("discount") is None else np.asarray(data["discount"], dtype=float),
            pattern=data.get("pattern", "single"),
        )

    def to_dict(self) -> dict:
        return {
            "horizon": self.horizon,
            "intensity": self.intensity,
            "delay": self.delay.tolist(),
            "severity": self.severity.to_dict(),
            "factor": None if self.factor is None else self.factor.to_dict(),
            "discount": self.discount.tolist(),
            "pattern": self.pattern,
        }

    def _factor_moment(self, k: int) -> float:
        return 1.0 if self.factor is None else self.factor.moment(k)

    def _pays(self) -> np.ndarray:
        return self.delay > 0


@dataclass(frozen=True)
class ScalingPair:
    a_n: float
    b_n: np.ndarray


@dataclass(frozen=True)
class CashflowSample:
    c: np.ndarray
    counts: np.ndarray


def claim_moments(model: PortfolioModel) -> tuple[np.ndarray, np.ndarray]:
    """``E[h]`` and ``E[h h^T]`` for one claim, ``h = (H_1..H_T, I_1..I_T)``."""
    T = model.horizon
    p, disc = model.delay, model.discount
    ez, ez2 = model.severity.moment(1), model.severity.moment(2)
    ef, ef2 = model._factor_moment(1), model._factor_moment(2)
    mean = np.zeros(2 * T)
    second = np.zeros((2 * T, 2 * T))
    if model.pattern == "single":
        mean[:T] = p * ez * ef * disc
        mean[T:] = p
        second[:T, :T] = np.diag(p * ez2 * ef2 * disc**2)
        second[:T, T:] = np.diag(p * ez * ef * disc)
        second[T:, T:] = np.diag(p)
    else:
        pays = model._pays().astype(float)
        amt = p * disc
        mean[:T] = amt * ez * ef
        mean[T:] = pays
        hh = np.outer(amt, amt) * ef2 * ez**2
        np.fill_diagonal(hh, amt**2 * ef2 * ez2)
        second[:T, :T] = hh
        second[:T, T:] = np.outer(amt * ez * ef, pays)
        second[T:, T:] = np.outer(pays, pays)
    second[T:, :T] = second[:T, T:].T
    return mean, second


def clt_scaling(model: PortfolioModel, n: int) -> ScalingPair:
    """``a_n = sqrt(n lam)``, ``b_n = n lam E[H]``."""
    rate = n * model.intensity
    mean, _ = claim_moments(model)
    return ScalingPair(float(np.sqrt(rate)), rate * mean[: model.horizon])


def gaussian_limit_of(model: PortfolioModel, counts: bool = True) -> GaussianModel:
    """Zero-mean Gaussian limit of the scaled ``(X^n, Y^n)``.

    With ``counts=True`` the auxiliary process is the scaled number of
    payments per period (``d = 1``); otherwise ``d = 0``.
    """
    T = model.horizon
    _, second = claim_moments(model)
    if not counts:
        return GaussianModel(T, 0, np.zeros(T), second[:T, :T])
    order = np.ravel(np.column_stack([np.arange(T), T + np.arange(T)]))
    return GaussianModel(T, 1, np.zeros(2 * T), second[np.ix_(order, order)])


def _simulate(model: PortfolioModel, n: int, rng: np.random.Generator) -> CashflowSample:
    T = model.horizon
    m = int(rng.poisson(n * model.intensity))
    f = np.ones(m) if model.factor is None else model.factor.sample(rng, m)
    if model.pattern == "single":
        d = rng.choice(T, size=m, p=model.delay)
        pay = model.severity.sample(rng, m) * f * model.discount[d]
        c = np.bincount(d, weights=pay, minlength=T).astype(float)
        counts = np.bincount(d, minlength=T).astype(np.int64)
    else:
        c = np.zeros(T)
        counts = np.zeros(T, dtype=np.int64)
        for t in np.flatnonzero(model._pays()):
            c[t] = model.delay[t] * model.discount[t] * float(np.dot(model.severity.sample(rng, m), f))
            counts[t] = m
    return CashflowSample(c, counts)


def simulate_cashflow(model: PortfolioModel, n: int, seed: int, replication: int = 0) -> CashflowSample:
    """One draw of ``(C^n, counts)``; deterministic in ``(model, n, seed, replication)``."""
    if n < 1:
        raise ValueError("exposure must be a positive integer")
    return _simulate(model, n, keyed_generator(seed, 0, n, replication))


def simulate_many(model: PortfolioModel, n: int, seed: int, replications: int, workers: int = 1):
    """Arrays ``C`` and ``counts`` of shape ``(replications, T)``."""
    c = np.zeros((replications, model.horizon))
    counts = np.zeros((replications, model.horizon), dtype=np.int64)

    def run(r):
        s = simulate_cashflow(model, n, seed, r)
        c[r], counts[r] = s.c, s.counts

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(run, range(replications)))
    else:
        for r in range(replications):
            run(r)
    return c, counts


# ---------------------------------------------------------------------------
# Nested simulation
# ---------------------------------------------------------------------------


def _sum_by_child(values: np.ndarray, counts: np.ndarray) -> np.ndarray:
    owner = np.repeat(np.arange(counts.size), counts)
    return np.bincount(owner, weights=values, minlength=counts.size)


class _SpreadFilter:
    """Importance-resampled latent claims for the spread pattern.

    Particles are prior draws of ``(M, F_1..F_M)``, with ``M`` fixed to the
    observed payment count when counts are part of the information. They are
    weighted by a normal approximation of the likelihood of the observed
    aggregate payments and resampled to generate the next period.
    """

    def __init__(self, model: PortfolioModel, n: int, counts_observed: bool, particles: int):
        self.model = model
        self.rate = n * model.intensity
        self.counts_observed = counts_observed
        self.particles = particles
        ez, ez2 = model.severity.moment(1), model.severity.moment(2)
        self.ez = ez
        self.var_z = max(ez2 - ez * ez, 0.0)

    def _latent(self, rng, m_known):
        m = model_m = m_known
        fs = []
        for _ in range(self.particles):
            if m_known is None:
                model_m = int(rng.poisson(self.rate))
            fs.append(np.ones(model_m) if self.model.factor is None else self.model.factor.sample(rng, model_m))
        return fs, m

    def children(self, rng, c_hist: np.ndarray, n_hist: np.ndarray, k: int):
        model = self.model
        t = c_hist.size
        amt = model.delay * model.discount
        pays = np.flatnonzero(model._pays())
        observed = pays[pays < t]
        m_known = None
        if self.counts_observed and observed.size:
            m_known = int(n_hist[observed[0]])
        if t == 0 or (m_known is not None and model.factor is None):
            if m_known is None:
                latents = [None] * k
            else:
                latents = [np.ones(m_known)] * k
        else:
            fs, _ = self._latent(rng, m_known)
            logw = np.zeros(len(fs))
            for i, f in enumerate(fs):
                s1, s2 = f.sum(), float(np.dot(f, f))
                for s in observed:
                    mu = amt[s] * self.ez * s1
                    var = max(amt[s] ** 2 * self.var_z * s2, 1e-12 * (1.0 + mu * mu))
                    logw[i] += -0.5 * (c_hist[s] - mu) ** 2 / var - 0.5 * np.log(var)
            w = np.exp(logw - logw.max())
            pick = rng.choice(len(fs), size=k, p=w / w.sum())
            latents = [fs[j] for j in pick]
        c = np.zeros(k)
        counts = np.zeros(k, dtype=np.int64)
        pay_now = model.delay[t] > 0
        for j, f in enumerate(latents):
            if f is None:
                m = int(rng.poisson(self.rate))
                f = np.ones(m) if model.factor is None else model.factor.sample(rng, m)
            if pay_now:
                c[j] = amt[t] * float(np.dot(model.severity.sample(rng, f.size), f))
                counts[j] = f.size
        return c, counts


def _single_children(model: PortfolioModel, n: int, rng, t: int, k: int):
    counts = rng.poisson(n * model.intensity * model.delay[t], size=k)
    total = int(counts.sum())
    pay = model.severity.sample(rng, total)
    if model.factor is not None:
        pay = pay * model.factor.sample(rng, total)
    return model.discount[t] * _sum_by_child(pay, counts), counts.astype(np.int64)


def sampling_scheme(model: PortfolioModel, counts: bool) -> str:
    if model.pattern == "single":
        return "exact"
    if model.factor is None and counts and model.delay[0] > 0:
        return "exact"
    return "importance-resampled"


def build_portfolio_tree(
    model: PortfolioModel,
    n: int,
    branching,
    seed: int,
    counts: bool = True,
    particles: int = 64,
    workers: int = 1,
) -> ScenarioTree:
    """Nested simulation tree of the unscaled ``(C^n, counts)``.

    Node streams are keyed by ``(seed, n, path)``. Leaf counts are stored as the
    auxiliary coordinate when ``counts`` is true.
    """
    T = model.horizon
    b = [int(branching)] * T if np.ndim(branching) == 0 else [int(v) for v in branching]
    if len(b) != T or min(b) < 1:
        raise ValueError(f"need {T} positive branching factors")
    filt = _SpreadFilter(model, n, counts, particles) if model.pattern == "spread" else None
    c_hist = np.zeros((1, 0))
    n_hist = np.zeros((1, 0), dtype=np.int64)
    paths = np.zeros((1, 0), dtype=np.int64)
    x_levels, y_levels = [], []
    for t in range(T):
        k, n_par = b[t], c_hist.shape[0]
        c_new = np.zeros((n_par, k))
        n_new = np.zeros((n_par, k), dtype=np.int64)

        def draw(lo_hi):
            for i in range(*lo_hi):
                rng = keyed_generator(seed, 1, n, *paths[i])
                if filt is None:
                    c_new[i], n_new[i] = _single_children(model, n, rng, t, k)
                else:
                    c_new[i], n_new[i] = filt.children(rng, c_hist[i], n_hist[i], k)

        step = -(-n_par // max(1, workers))
        chunks = [(lo, min(lo + step, n_par)) for lo in range(0, n_par, step)]
        if len(chunks) > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                list(pool.map(draw, chunks))
        else:
            draw(chunks[0])
        x_levels.append(c_new.ravel())
        y_levels.append(n_new.reshape(-1, 1).astype(float))
        if t + 1 < T:
            c_hist = np.concatenate([np.repeat(c_hist, k, axis=0), c_new.reshape(-1, 1)], axis=1)
            n_hist = np.concatenate([np.repeat(n_hist, k, axis=0), n_new.reshape(-1, 1)], axis=1)
            paths = np.concatenate([np.repeat(paths, k, axis=0), np.tile(np.arange(k), n_par)[:, None]], axis=1)
    return ScenarioTree.from_levels(b, x_levels, y_levels if counts else None)


@dataclass(frozen=True)
class EmpiricalValue:
    """Nested value of a simulated portfolio and its large-portfolio approximation."""

    n: int
    v0_c: float
    v0_x: float
    v0_limit: float
    approximation: float
    gap: float
    a_n: float
    b_n: np.ndarray
    sampling: str
    extra: dict = field(default_factory=dict)


def empirical_value(
    model: PortfolioModel,
    n: int,
    schedule: ValuationSchedule,
    branching,
    seed: int,
    counts: bool = True,
    particles: int = 64,
    workers: int = 1,
    tree: Optional[ScenarioTree] = None,
) -> EmpiricalValue:
    """``V_0^n(C^n)`` by nested simulation next to ``a_n V_0(X) + sum b_n``.

    ``gap`` is ``|V_0^n(C^n) - a_n V_0(X) - sum b_n| / a_n``. A prebuilt tree
    (from :func:`build_portfolio_tree` with the same arguments) may be passed
    to value several schedules on one simulation.
    """
    if tree is None:
        tree = build_portfolio_tree(model, n, branching, seed, counts, particles, workers)
    scaling = clt_scaling(model, n)
    v0_c = backward_value(tree, schedule, workers).v0
    x_tree = affine_transform(tree, 1.0 / scaling.a_n, -scaling.b_n / scaling.a_n)
    v0_x = backward_value(x_tree, schedule, workers).v0
    v0_limit = limit_value(gaussian_limit_of(model, counts), schedule)
    approx = scaling.a_n * v0_limit + float(scaling.b_n.sum())
    return EmpiricalValue(
        n=n,
        v0_c=v0_c,
        v0_x=v0_x,
        v0_limit=v0_limit,
        approximation=approx,
        gap=abs(v0_c - approx) / scaling.a_n,
        a_n=scaling.a_n,
        b_n=scaling.b_n,
        sampling=sampling_scheme(model, counts),
    )


# ---------------------------------------------------------------------------
# Convergence experiment
# ---------------------------------------------------------------------------


def replication_seed(seed: int, replication: int) -> int:
    """Tree seed of one replication, derived from the root seed."""
    ss = np.random.SeedSequence(int(seed) & ((1 << 64) - 1), spawn_key=(2, int(replication)))
    return int(ss.generate_state(1, np.uint64)[0])


@dataclass(frozen=True)
class ConvergencePoint:
    """Pooled normalized error of one schedule at one exposure."""

    schedule: str
    n: int
    errors: np.ndarray  # signed (V_0^n(C^n) - approximation) / a_n per replication
    gap: float
    std_error: float


def convergence_experiment(
    model: PortfolioModel,
    exposures: Sequence[int],
    schedules: dict,
    branching,
    seed: int,
    replications: int,
    counts: bool = True,
    particles: int = 64,
    workers: int = 1,
) -> dict:
    """Nested values over a grid of exposures and replications.

    One tree per ``(n, replication)`` is shared by all schedules. Returns a dict
    with per-replication ``rows``, pooled ``points`` and the ``checks``:

    * ``nonincreasing``: each pooled gap is at most the previous one plus two
      standard errors of their difference;
    * ``below_threshold``: the pooled gap at the largest exposure is below
      ``0.1 * phi(eps) * sqrt(total variance)``.
    """
    exposures = sorted(int(n) for n in exposures)
    limit = gaussian_limit_of(model, counts)
    total = float(limit.x_marginal()[1].sum())
    rows = []
    for n in exposures:
        for r in range(replications):
            s = replication_seed(seed, r)
            tree = build_portfolio_tree(model, n, branching, s, counts, particles, workers)
            for name, sched in schedules.items():
                ev = empirical_value(model, n, sched, branching, s, counts, particles, workers, tree=tree)
                rows.append(
                    {
                        "schedule": name,
                        "n": n,
                        "replication": r,
                        "seed": s,
                        "v0_c": ev.v0_c,
                        "v0_x": ev.v0_x,
                        "v0_limit": ev.v0_limit,
                        "approximation": ev.approximation,
                        "a_n": ev.a_n,
                        "error": (ev.v0_c - ev.approximation) / ev.a_n,
                        "sampling": ev.sampling,
                    }
                )
    points, checks = {}, {}
    for name, sched in schedules.items():
        pts = []
        for n in exposures:
            e = np.array([row["error"] for row in rows if row["schedule"] == name and row["n"] == n])
            se = float(e.std(ddof=1) / np.sqrt(e.size)) if e.size > 1 else float("nan")
            pts.append(ConvergencePoint(name, n, e, float(abs(e.mean())), se))
        monotone = all(
            b.gap <= a.gap + 2.0 * np.hypot(a.std_error, b.std_error) for a, b in zip(pts, pts[1:])
        )
        phi0 = sched[0].normal_value()
        threshold = 0.1 * abs(phi0) * np.sqrt(total)
        points[name] = pts
        checks[name] = {
            "nonincreasing": bool(monotone),
            "threshold": float(threshold),
            "final_gap": pts[-1].gap,
            "below_threshold": bool(pts[-1].gap < threshold),
        }
    return {"rows": rows, "points": points, "checks": checks, "total_variance": total}
