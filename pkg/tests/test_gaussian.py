import numpy as np
import pytest

from conftest import random_model
from mpvaluation.dist import PointMass, TailUniform
from mpvaluation.gaussian import (
    GaussianModel,
    build_tree,
    conditional_law,
    conditional_variance,
    innovation_variance,
    limit_value,
    load_model,
    save_model,
    variance_schedule,
)
from mpvaluation.mappings import CoC, MeanStd, ValuationSchedule, coc_ll
from mpvaluation.tree import backward_value


def test_model_validation():
    with pytest.raises(ValueError):
        GaussianModel(2, 0, np.zeros(2), [[1.0, 0.5], [0.4, 1.0]])
    with pytest.raises(ValueError):
        GaussianModel(2, 0, np.zeros(2), [[1.0, 2.0], [2.0, 1.0]])  # eigenvalue -1
    with pytest.raises(ValueError):
        GaussianModel(2, 1, np.zeros(2), np.eye(2))
    # roundoff-level negative eigenvalue is accepted
    GaussianModel(2, 0, np.zeros(2), [[1.0, 1.0], [1.0, 1.0 - 1e-12]])


def test_conditional_variance_examples(iid2):
    s = np.ones(2)
    assert conditional_variance(iid2, s, []) == 2.0
    assert conditional_variance(iid2, s, [0, 1]) == pytest.approx(0.0, abs=1e-14)
    assert conditional_variance(iid2, s, [0]) == pytest.approx(1.0, abs=1e-14)


def test_conditional_variance_matches_direct_schur_complement():
    rng = np.random.default_rng(0)
    m = random_model(rng, 3, 1)
    c = rng.normal(size=6)
    idx = [0, 2, 3]
    s = m.cov
    cross = s[idx] @ c
    direct = c @ s @ c - cross @ np.linalg.solve(s[np.ix_(idx, idx)], cross)
    assert conditional_variance(m, c, idx) == pytest.approx(direct, rel=1e-10)


def test_schedule_examples(iid2, iid2_revealed):
    np.testing.assert_allclose(variance_schedule(iid2).deltas, [1.0, 1.0], atol=1e-14)
    np.testing.assert_allclose(variance_schedule(iid2_revealed).deltas, [2.0, 0.0], atol=1e-12)


def test_limit_examples(iid2, iid2_revealed):
    for c in (0.5, 1.0, 2.0):
        sched = ValuationSchedule.constant(MeanStd(c), 2)
        assert limit_value(iid2, sched) == pytest.approx(2 * c, abs=1e-14)
        assert limit_value(iid2_revealed, sched) == pytest.approx(np.sqrt(2) * c, abs=1e-12)
    flat = GaussianModel(3, 0, [1.0, -2.0, 5.0], np.zeros((3, 3)))
    assert limit_value(flat, ValuationSchedule.constant(CoC(0.06, PointMass(0.995)), 3)) == 4.0


@pytest.mark.parametrize("seed", range(20))
def test_telescoping_and_innovation_identity(seed):
    rng = np.random.default_rng(seed)
    T, d = int(rng.integers(1, 7)), int(rng.integers(0, 3))
    m = random_model(rng, T, d, singular=seed % 3 == 0)
    vs = variance_schedule(m)
    assert np.all(vs.deltas >= 0)
    assert abs(vs.deltas.sum() - vs.total) <= 1e-8 * max(vs.total, 1e-300)
    for u in range(1, T + 1):
        assert innovation_variance(m, u) == pytest.approx(vs.deltas[u - 1], abs=1e-8 * max(vs.total, 1.0))


def test_schedule_invariant_to_mean():
    rng = np.random.default_rng(3)
    m = random_model(rng, 4, 1)
    shifted = GaussianModel(4, 1, m.mean + rng.normal(size=8) * 100, m.cov)
    np.testing.assert_allclose(variance_schedule(shifted).deltas, variance_schedule(m).deltas, atol=1e-10)


@pytest.mark.parametrize("seed", range(10))
def test_limit_affine_equivariance(seed):
    rng = np.random.default_rng(seed)
    m = random_model(rng, 3, 1)
    a, b = rng.uniform(0, 5), rng.normal(size=3)
    for mp in (MeanStd(1.2), coc_ll(0.06, TailUniform(0.01))):
        sched = ValuationSchedule.constant(mp, 3)
        v = limit_value(m, sched)
        assert limit_value(m.affine(a, b), sched) == pytest.approx(a * v + b.sum(), abs=1e-9)


def test_negative_decrement_is_an_error():
    from mpvaluation import gaussian

    with pytest.raises(ValueError):
        gaussian._clamp(-1e-3, 1.0, "delta")
    assert gaussian._clamp(-1e-10, 1.0, "delta") == 0.0


def test_conditional_law_bivariate():
    rho = 0.6
    m = GaussianModel(2, 0, np.zeros(2), [[1.0, rho], [rho, 1.0]])
    mean, cov = conditional_law(m, [1.5])
    assert mean[0] == pytest.approx(rho * 1.5)
    assert cov[0, 0] == pytest.approx(1 - rho**2)
    indep = GaussianModel(2, 1, [1.0, 2.0, 3.0, 4.0], np.diag([1.0, 2.0, 3.0, 4.0]))
    mean, cov = conditional_law(indep, [10.0, -10.0])
    np.testing.assert_allclose(mean, [3.0, 4.0])
    np.testing.assert_allclose(cov, np.diag([3.0, 4.0]))
    with pytest.raises(ValueError):
        conditional_law(m, [1.0, 2.0])


def test_conditional_law_vs_exact_draws():
    # regression residuals of x_3 on the prefix, from 10^5 joint draws
    rng = np.random.default_rng(21)
    m = random_model(rng, 3, 1)
    z = rng.multivariate_normal(m.mean, m.cov, size=100_000)
    _, cov = conditional_law(m, z[0, :4])
    past, nxt = z[:, :4], z[:, 4:]
    design = np.column_stack([np.ones(len(z)), past])
    coef, *_ = np.linalg.lstsq(design, nxt, rcond=None)
    resid = nxt - design @ coef
    emp = np.cov(resid, rowvar=False)
    # standard error of a sample covariance entry: sqrt((s_ii s_jj + s_ij^2) / n)
    se = np.sqrt((np.outer(np.diag(cov), np.diag(cov)) + cov**2) / len(z))
    assert np.all(np.abs(emp - cov) <= 3 * se)


def test_build_tree_examples():
    det = GaussianModel(3, 0, [1.0, 2.0, 3.0], np.zeros((3, 3)))
    sched = ValuationSchedule.constant(CoC(0.06, PointMass(0.995)), 3)
    tree = build_tree(det, (4, 3, 2), seed=1)
    assert np.all(tree.x[tree.depth == 2] == 2.0)
    assert backward_value(tree, sched).v0 == pytest.approx(6.0, abs=1e-12)
    m = random_model(np.random.default_rng(2), 3, 1)
    chain = build_tree(m, 1, seed=5)
    assert chain.n_nodes == 4
    assert backward_value(chain, sched).v0 == pytest.approx(chain.path_sums()[-1], abs=1e-12)
    with pytest.raises(ValueError):
        build_tree(m, (2, 0, 2), seed=1)


def test_build_tree_reproducible_and_worker_independent():
    m = random_model(np.random.default_rng(6), 3, 2, singular=True)
    a = build_tree(m, (7, 5, 3), seed=2**63 + 11)
    b = build_tree(m, (7, 5, 3), seed=2**63 + 11, workers=3)
    np.testing.assert_array_equal(a.x, b.x)
    np.testing.assert_array_equal(a.y, b.y)
    c = build_tree(m, (7, 5, 3), seed=12)
    assert not np.array_equal(a.x, c.x)


def test_subtree_independent_of_siblings():
    # a node's stream depends only on its path, so widening the root keeps the first subtree
    m = random_model(np.random.default_rng(7), 2, 0)
    narrow = build_tree(m, (2, 3), seed=4)
    wide = build_tree(m, (5, 3), seed=4)
    np.testing.assert_array_equal(narrow.x[1:3], wide.x[1:3])
    np.testing.assert_array_equal(narrow.x[narrow.level(2)[:3]], wide.x[wide.level(2)[:3]])


def test_save_load(tmp_path):
    m = random_model(np.random.default_rng(1), 3, 1)
    save_model(m, tmp_path / "m.txt")
    again = load_model(tmp_path / "m.txt")
    np.testing.assert_array_equal(again.mean, m.mean)
    np.testing.assert_array_equal(again.cov, m.cov)
    assert (again.horizon, again.aux_dim) == (3, 1)
