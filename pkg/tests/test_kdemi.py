import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from lrw_ood import tensor as T
from lrw_ood.errors import DimensionError, UsageError
from lrw_ood.gradcheck import gradcheck
from lrw_ood.kdemi import (
    VAR_FLOOR,
    GaussianKde,
    estimate_mi_continuous,
    kde_density,
    mi_suff_loss,
    mi_terms,
    rem_variance,
    silverman_bandwidth,
    total_loss,
)


def gaussian_mi_bits(rho):
    return -0.5 * math.log2(1.0 - rho * rho)


def correlated_pair(rho, n, seed):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(n)
    y = rho * x + math.sqrt(1 - rho * rho) * rng.standard_normal(n)
    return x, y


# ---------------------------------------------------------------- bandwidth


def test_silverman_formula_value():
    # (4/3)^(1/5) * 4^(-1/5)
    assert silverman_bandwidth(4, 1) == pytest.approx(0.802742, abs=1e-6)
    assert silverman_bandwidth(4, 1) == pytest.approx((4 / 3) ** 0.2 * 4 ** (-0.2), rel=1e-15)


@settings(max_examples=50, deadline=None)
@given(st.integers(2, 10**6), st.integers(1, 32))
def test_silverman_positive_and_decreasing(n, d):
    assert silverman_bandwidth(n, d) > 0
    assert silverman_bandwidth(n + 1, d) < silverman_bandwidth(n, d)


def test_silverman_needs_two_samples():
    with pytest.raises(UsageError):
        silverman_bandwidth(1, 3)


# ---------------------------------------------------------------- density


def test_single_sample_at_query_is_standard_normal_peak():
    kde = GaussianKde(np.array([[0.0]]), bandwidth=1.0, var_diag=[1.0])
    assert kde_density(kde, [0.0]) == pytest.approx(1.0 / math.sqrt(2 * math.pi), rel=1e-14)
    assert kde_density(kde, [0.0]) == pytest.approx(0.39894, abs=1e-5)


def test_one_dimensional_mass_is_one():
    samples = np.random.default_rng(1).standard_normal(200) * 2.0 + 1.0
    kde = GaussianKde(samples)
    width = kde.bandwidth * math.sqrt(kde.var_diag[0])
    grid = np.linspace(samples.min() - 6 * width, samples.max() + 6 * width, 20001)
    mass = np.trapezoid(kde.density(grid), grid)
    assert abs(mass - 1.0) < 0.01


def test_translation_invariance():
    rng = np.random.default_rng(2)
    samples, query = rng.standard_normal((50, 3)), rng.standard_normal(3)
    shift = np.array([3.0, -7.5, 0.25])
    a = kde_density(GaussianKde(samples), query)
    b = kde_density(GaussianKde(samples + shift), query + shift)
    assert abs(a - b) < 1e-10


def test_variance_floor_and_dimension_check():
    kde = GaussianKde(np.ones((5, 2)))
    np.testing.assert_array_equal(kde.var_diag, [VAR_FLOOR, VAR_FLOOR])
    with pytest.raises(DimensionError):
        kde.log_density(np.zeros((1, 3)))
    with pytest.raises(UsageError):
        GaussianKde(np.zeros((3, 1)), bandwidth=0.0)


@settings(max_examples=50, deadline=None)
@given(
    arrays(np.float64, st.tuples(st.integers(2, 20), st.integers(1, 4)), elements=st.floats(-10, 10)),
    st.floats(-20, 20),
)
def test_density_positive_and_finite(samples, offset):
    kde = GaussianKde(samples)
    query = samples[:1] + offset * 1e-3
    dens = kde.density(query)
    assert np.all(np.isfinite(kde.log_density(samples + offset)))
    assert np.all(dens > 0) and np.all(np.isfinite(dens))


# ---------------------------------------------------------------- continuous MI estimator


def test_gaussian_pair_within_tolerance():
    x, y = correlated_pair(0.8, 2000, seed=0)
    assert gaussian_mi_bits(0.8) == pytest.approx(0.7370, abs=1e-4)
    assert abs(estimate_mi_continuous(x, y) - gaussian_mi_bits(0.8)) < 0.08


def test_estimator_not_meaningfully_negative():
    for seed in range(3):
        rng = np.random.default_rng(seed)
        assert estimate_mi_continuous(rng.standard_normal(500), rng.standard_normal(500)) > -0.05


# ---------------------------------------------------------------- sufficiency loss


@pytest.mark.parametrize("loo", [False, True])
def test_independent_labels_give_near_zero_loss(loo):
    rng = np.random.default_rng(3)
    h, y = rng.standard_normal((2000, 8)), rng.integers(0, 2, 2000)
    assert abs(mi_suff_loss(T.Tensor(h), y, leave_one_out=loo).item()) < 0.05


def test_low_dimensional_independence_pointwise_ratio_near_zero():
    rng = np.random.default_rng(4)
    h, y = rng.standard_normal((2000, 2)), rng.integers(0, 2, 2000)
    assert abs(mi_terms(T.Tensor(h), y, leave_one_out=True).pointwise_mi_bits().mean()) < 0.05


@pytest.mark.parametrize("loo", [False, True])
def test_separated_clusters_reach_one_bit(loo):
    rng = np.random.default_rng(5)
    y = np.repeat([0, 1], 150)
    h = rng.standard_normal((300, 2)) * 0.1
    h[y == 1] += 40.0
    terms = mi_terms(T.Tensor(h), y, leave_one_out=loo)
    assert terms.pointwise_mi_bits().mean() == pytest.approx(1.0, abs=1e-6)
    assert mi_suff_loss(T.Tensor(h), y, leave_one_out=loo).item() < -0.1


def test_singleton_class_dropped_with_warning():
    rng = np.random.default_rng(6)
    h, y = rng.standard_normal((11, 2)), np.array([0] * 5 + [1] * 5 + [2])
    with pytest.warns(UserWarning, match=r"\[2\]"):
        terms = mi_terms(T.Tensor(h), y)
    assert len(terms.nodes) == 10 and 10 not in terms.nodes


def test_no_usable_class_raises():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        with pytest.raises(UsageError):
            mi_terms(T.Tensor(np.zeros((2, 2))), np.array([0, 1]))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.01, 100.0))
def test_loss_is_invariant_to_embedding_scale(seed, scale):
    rng = np.random.default_rng(seed)
    h, y = rng.standard_normal((30, 3)), np.repeat([0, 1, 2], 10)
    a = mi_suff_loss(T.Tensor(h), y).item()
    b = mi_suff_loss(T.Tensor(h * scale), y).item()
    assert a == pytest.approx(b, rel=1e-8, abs=1e-12)


def test_reference_cap_uses_every_centre_when_large():
    rng = np.random.default_rng(7)
    h, y = rng.standard_normal((40, 2)), np.repeat([0, 1], 20)
    a = mi_suff_loss(T.Tensor(h), y).item()
    assert mi_suff_loss(T.Tensor(h), y, max_reference=20).item() == a
    assert mi_suff_loss(T.Tensor(h), y, max_reference=5).item() != a


# ---------------------------------------------------------------- variance and total


def test_rem_variance_cases():
    assert rem_variance([T.Tensor(0.7)] * 3).item() == 0.0
    assert rem_variance([T.Tensor(0.7)]).item() == 0.0
    assert rem_variance([T.Tensor(0.0), T.Tensor(2.0)]).item() == 1.0
    with pytest.raises(UsageError):
        rem_variance([])


def _walk_embeddings(k, n=12, d=3, seed=0):
    rng = np.random.default_rng(seed)
    return [T.Tensor(rng.standard_normal((n, d)), requires_grad=True) for _ in range(k)]


def test_single_walk_total_is_sufficiency_term():
    y = np.repeat([0, 1, 2], 4)
    bd = total_loss(_walk_embeddings(1), y)
    assert bd.rem_term.item() == 0.0
    assert bd.total.item() == bd.suff_terms[0].item()


def test_identical_walks_have_zero_variance():
    h = _walk_embeddings(1)[0]
    bd = total_loss([h, h, h], np.repeat([0, 1, 2], 4))
    assert bd.rem_term.item() == 0.0


@settings(max_examples=20, deadline=None)
@given(st.integers(1, 5), st.integers(0, 1000))
def test_total_decomposes_exactly(k, seed):
    bd = total_loss(_walk_embeddings(k, seed=seed), np.repeat([0, 1, 2], 4))
    suff = [t.item() for t in bd.suff_terms]
    assert bd.rem_term.item() >= 0.0
    assert abs(bd.total.item() - (bd.rem_term.item() + np.mean(suff))) < 1e-12
    assert bd.as_floats()["suff_terms"] == suff


def test_no_rem_drops_variance():
    bd = total_loss(_walk_embeddings(3), np.repeat([0, 1, 2], 4), use_rem=False)
    assert bd.rem_term.item() == 0.0


@pytest.mark.parametrize("loo", [False, True])
def test_total_loss_gradient_on_twelve_nodes(loo):
    hs = _walk_embeddings(3, seed=8)
    y = np.repeat([0, 1, 2], 4)
    result = gradcheck(lambda: total_loss(hs, y, leave_one_out=loo).total, hs)
    assert result.max_rel_error < 1e-4, result.worst
