import mpmath
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.stats import norm

from mpvaluation.dist import BoundedDensity, CompactSupport, PointMass, TailUniform, WeightedSample
from mpvaluation.mappings import (
    CoC,
    GeneralLL,
    MeanStd,
    OneStepMapping,
    QuantileMixture,
    ValuationSchedule,
    apply_mapping,
    coc_ll,
    growth_bound,
    mapping_of_standard_normal,
    power_utility,
)

RHO_995 = norm.ppf(0.995)

UNIFORM = BoundedDensity([0.0, 1.0], [1.0])

ALL_MAPPINGS = [
    CoC(0.06, PointMass(0.995)),
    CoC(0.25, TailUniform(0.05)),
    coc_ll(0.06, PointMass(0.995)),
    coc_ll(0.1, TailUniform(0.01)),
    power_utility(0.5, TailUniform(0.1)),
    GeneralLL(0.7, 0.8, CompactSupport([0.5, 0.9], [2.5])),
    MeanStd(1.0),
    MeanStd(0.0),
    QuantileMixture(0.3, UNIFORM, TailUniform(0.2)),
    QuantileMixture(0.6, BoundedDensity([0, 0.5, 1], [0.5, 1.5]), PointMass(0.9)),
]
MONOTONE = [m for m in ALL_MAPPINGS if not isinstance(m, MeanStd)]


@st.composite
def laws(draw, max_size=10):
    vals = draw(st.lists(st.floats(-100, 100), min_size=1, max_size=max_size))
    raw = draw(st.lists(st.floats(0.01, 1.0), min_size=len(vals), max_size=len(vals)))
    return WeightedSample(vals, raw, normalize=True)


def test_coc_example():
    law = WeightedSample([-1.0, 1.0], [0.5, 0.5])
    assert apply_mapping(CoC(0.1, PointMass(0.75)), law) == pytest.approx(0.1 / 1.1, abs=1e-15)


@pytest.mark.parametrize("m", ALL_MAPPINGS, ids=lambda m: m.kind)
@pytest.mark.parametrize("c", [-3.5, 0.0, 2.0, 1e4])
def test_constant_law(m, c):
    assert apply_mapping(m, WeightedSample([c, c, c])) == pytest.approx(c, abs=1e-12 * max(1, abs(c)))


def test_general_ll_no_shortfall_returns_r():
    # r = V@R-type quantile at the top; every outcome is below r only when the law is constant
    m = coc_ll(0.06, PointMass(0.995))
    law = WeightedSample([2.0])
    assert apply_mapping(m, law) == 2.0


def test_empty_law_rejected():
    with pytest.raises(ValueError):
        apply_mapping(MeanStd(1.0), WeightedSample([]))


@pytest.mark.parametrize("bad", [lambda: CoC(-0.1, UNIFORM), lambda: GeneralLL(1.0, 0.0, UNIFORM),
                                 lambda: GeneralLL(1.0, 1.5, UNIFORM), lambda: MeanStd(-1.0),
                                 lambda: QuantileMixture(1.2, UNIFORM, UNIFORM), lambda: GeneralLL(-1, 1, UNIFORM)])
def test_parameter_ranges(bad):
    with pytest.raises(ValueError):
        bad()


def test_closed_forms():
    assert mapping_of_standard_normal(MeanStd(2.0)) == 2.0
    coc = mapping_of_standard_normal(CoC(0.06, PointMass(0.995)))
    assert coc == pytest.approx(0.06 / 1.06 * RHO_995, abs=1e-12)
    assert coc == pytest.approx(0.145801, abs=1e-6)
    ll = mapping_of_standard_normal(coc_ll(0.06, PointMass(0.995)))
    assert ll == pytest.approx(RHO_995 - (RHO_995 * norm.cdf(RHO_995) + norm.pdf(RHO_995)) / 1.06, abs=1e-12)
    assert ll == pytest.approx(0.144310, abs=1e-6)
    assert ll <= coc


@pytest.mark.parametrize("rho", [TailUniform(0.01), PointMass(0.5), PointMass(0.001)])
@pytest.mark.parametrize("beta", [0.1, 0.3, 0.5, 0.9])
def test_power_utility_quadrature_against_mpmath(beta, rho):
    mpmath.mp.dps = 30
    r = rho.normal_integral()
    moment = mpmath.quad(lambda z: (r - z) ** beta * mpmath.npdf(z), [-mpmath.inf, r - 1, r])
    expected = r - float(moment) ** (1 / beta)
    assert mapping_of_standard_normal(power_utility(beta, rho)) == pytest.approx(expected, abs=1e-10)


def test_power_utility_beta_one_matches_closed_form():
    a = GeneralLL(0.8, 1.0, TailUniform(0.05)).normal_value()
    b = GeneralLL(0.8, 1.0 - 1e-9, TailUniform(0.05)).normal_value()
    assert a == pytest.approx(b, abs=1e-7)


def test_quantile_mixture_with_uniform_is_coc():
    eta = 0.2
    mu = TailUniform(0.05)
    qm = QuantileMixture(1 / (1 + eta), UNIFORM, mu)
    coc = CoC(eta, mu)
    law = WeightedSample(np.random.default_rng(1).normal(size=50))
    assert apply_mapping(qm, law) == pytest.approx(apply_mapping(coc, law), abs=1e-12)
    assert qm.normal_value() == pytest.approx(coc.normal_value(), abs=1e-12)


def test_general_ll_normal_sample():
    eps = np.random.default_rng(11).standard_normal(1_000_000)
    v = apply_mapping(GeneralLL(1 / 1.06, 1.0, PointMass(0.995)), WeightedSample(eps))
    assert abs(v - 0.1443) < 0.01


@pytest.mark.parametrize("m", ALL_MAPPINGS, ids=lambda m: m.kind)
@given(law=laws(), a=st.floats(0, 50), b=st.floats(-50, 50))
def test_homogeneity_cash_additivity(m, law, a, b):
    lhs = apply_mapping(m, law.map(a, b))
    rhs = a * apply_mapping(m, law) + b
    scale = 1 + a * np.abs(law.values).max() + abs(b)
    assert abs(lhs - rhs) <= 1e-10 * scale


@pytest.mark.parametrize("m", MONOTONE, ids=lambda m: m.kind)
@given(law=laws(), data=st.data())
def test_monotone(m, law, data):
    bumps = np.array(data.draw(st.lists(st.floats(0, 10), min_size=len(law), max_size=len(law))))
    higher = WeightedSample(law.values + bumps, law.weights)
    assert apply_mapping(m, higher) >= apply_mapping(m, law) - 1e-10


def test_mean_std_not_monotone():
    y = WeightedSample([0.0, 1.0])
    y_up = WeightedSample([1.0, 1.0])
    assert np.all(y_up.values >= y.values)
    m = MeanStd(2.0)
    assert apply_mapping(m, y_up) < apply_mapping(m, y)  # 1.0 < 1.5


@pytest.mark.parametrize("eta", [0.0, 0.06, 0.5, 3.0])
@pytest.mark.parametrize("rho", [PointMass(0.995), TailUniform(0.01), UNIFORM])
@given(law=laws())
def test_limited_liability_below_coc(eta, rho, law):
    assert apply_mapping(coc_ll(eta, rho), law) <= apply_mapping(CoC(eta, rho), law) + 1e-10


@pytest.mark.parametrize("m", ALL_MAPPINGS, ids=lambda m: m.kind)
@given(law=laws())
def test_growth_bound(m, law):
    assert abs(apply_mapping(m, law)) <= growth_bound(m, law) * (1 + 1e-12) + 1e-12


@pytest.mark.parametrize("m", ALL_MAPPINGS, ids=lambda m: m.kind)
def test_dict_roundtrip(m):
    again = OneStepMapping.from_dict(m.to_dict())
    assert again.to_dict() == m.to_dict()
    law = WeightedSample([-1.0, 0.3, 2.0], [0.2, 0.5, 0.3])
    assert apply_mapping(again, law) == apply_mapping(m, law)


def test_schedule():
    s = ValuationSchedule.constant(MeanStd(1.0), 3)
    assert len(s) == 3 and s.is_time_homogeneous()
    s2 = ValuationSchedule([MeanStd(1.0), MeanStd(2.0)])
    assert not s2.is_time_homogeneous()
    with pytest.raises(ValueError):
        ValuationSchedule([])
    with pytest.raises(TypeError):
        ValuationSchedule([1.0])


# 10^7 draws: closed form vs empirical, 3 standard errors from 20 batch means
@pytest.mark.parametrize("m", ALL_MAPPINGS, ids=lambda m: m.kind)
def test_closed_form_vs_large_normal_sample(m):
    eps = np.random.default_rng(2024).standard_normal(10_000_000)
    full = apply_mapping(m, WeightedSample(eps))
    batches = np.array([apply_mapping(m, WeightedSample(b)) for b in eps.reshape(20, -1)])
    se = batches.std(ddof=1) / np.sqrt(20)
    assert abs(full - mapping_of_standard_normal(m)) <= 3 * se + 1e-12
