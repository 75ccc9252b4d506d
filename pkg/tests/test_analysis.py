import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mcqsim import analysis as A
from mcqsim.traffic import Catalog, RateMatrix, build_rate_matrix, zipf_pmf


def test_infinite_rate_limits():
    sol = A.multicast_fixed_point(np.array([np.inf]), Catalog.uniform(1), A.EQ6)
    assert sol.d == pytest.approx((1 + math.sqrt(5)) / 2, rel=1e-9)
    sol = A.multicast_fixed_point(np.full(100, np.inf), Catalog.uniform(100), A.EQ6)
    assert sol.d == pytest.approx(100.99, abs=0.01)
    assert sol.d == pytest.approx(A.upper_bound_eq6(1.0, 100), rel=1e-9)


def test_light_traffic_and_zero_rates():
    cat = Catalog.uniform(10)
    assert A.multicast_fixed_point(np.zeros(10), cat).d == 0.0
    assert A.multicast_fixed_point(np.full(10, 1e-9), cat).d < 1e-8


@settings(max_examples=200, deadline=None)
@given(m=st.integers(1, 60), scale=st.floats(1e-3, 1e3), alpha=st.floats(0, 2),
       mode=st.sampled_from(A.BRACKET_MODES))
def test_fixed_point_residual_and_bound(m, scale, alpha, mode):
    lam = scale * zipf_pmf(m, alpha)
    sol = A.multicast_fixed_point(lam, Catalog.uniform(m), mode)
    assert sol.residual < 1e-9 * max(1.0, sol.d)
    assert 0 <= sol.rho < 1
    if mode == A.EQ6:
        assert sol.d <= A.upper_bound_eq6(1.0, m) * (1 + 1e-9)


@settings(max_examples=100, deadline=None)
@given(m=st.integers(2, 30), seed=st.integers(0, 10 ** 6), k=st.integers(0, 29),
       bump=st.floats(1.01, 10))
def test_monotone_in_each_rate(m, seed, k, bump):
    rng = np.random.default_rng(seed)
    lam = rng.exponential(0.3, m)
    # equal sizes: with mixed sizes a rate change also moves E[S]
    cat = Catalog.uniform(m, rng.uniform(0.5, 2))
    hi = lam.copy()
    hi[k % m] *= bump
    assert A.multicast_fixed_point(hi, cat).d >= A.multicast_fixed_point(lam, cat).d


def test_map_is_decreasing_above_pole():
    lam = 2 * zipf_pmf(20, 1.0)
    sol = A.multicast_fixed_point(lam, Catalog.uniform(20))
    ds = np.linspace(max(sol.d0, 1e-6) * 1.001 + 1e-6, 5 * sol.d + 1, 200)
    rho = np.array([np.sum(lam / (1 + lam * d)) for d in ds])
    f = rho / (1 - rho) * 0.5
    assert np.all(np.diff(f) < 0)


def test_per_file_delay():
    assert A.per_file_mean_delay(2.0, 2.0, 3.0) == 3.0
    assert A.per_file_mean_delay(2.0, 1.0, 3.0) == pytest.approx(0.75 * 3.0)
    assert A.per_file_mean_delay(1e9, 1e-9, 3.0) == pytest.approx(1.5)
    with pytest.raises(ValueError):
        A.per_file_mean_delay(0.0, 0.0, 1.0)


def test_fifo_closed_form():
    rm = build_rate_matrix(5, 1, 0.5, zipf_pmf(5, 1.0))
    assert A.fifo_mean_delay(rm, Catalog.uniform(5)) == pytest.approx(0.5)
    rm = build_rate_matrix(5, 1, 1.2, zipf_pmf(5, 1.0))
    assert math.isinf(A.fifo_mean_delay(rm, Catalog.uniform(5)))
    assert A.fifo_mean_delay(build_rate_matrix(5, 1, 0.0, zipf_pmf(5, 1.0)), Catalog.uniform(5)) == 0


def test_service_moments_mixture():
    es, var = A.service_moments([1.0, 3.0], [1.0, 2.0])
    assert es == pytest.approx(1.75) and var == pytest.approx(0.1875)


def test_lru_fed_without_cache_is_multicast():
    rm = build_rate_matrix(50, 6, 0.6, zipf_pmf(50, 1.0))
    cat = Catalog.uniform(50)
    a = A.lru_fed_fixed_point(rm, 0, cat)
    b = A.multicast_fixed_point(rm.file_rates, cat)
    assert a.d == b.d
    assert a.extra["hit_ratio"] == 0.0


def test_lru_fed_everything_cached():
    rm = build_rate_matrix(5, 3, 0.6, zipf_pmf(5, 1.0))
    sol = A.lru_fed_fixed_point(rm, 5, Catalog.uniform(5))
    assert sol.d == 0.0 and sol.extra["request_delay"] == 0.0


def test_fading_reduces_to_multicast():
    rm = build_rate_matrix(30, 4, 0.2, zipf_pmf(30, 1.0))
    cat = Catalog.uniform(30)
    a = A.fading_fixed_point(rm, [1.0] * 4, cat)
    b = A.multicast_fixed_point(rm.file_rates, cat)
    assert a.d == pytest.approx(b.d, abs=1e-8)


def test_fading_single_user_geometric():
    rm = RateMatrix(np.array([[0.1]]))
    sol = A.fading_fixed_point(rm, [0.5], Catalog.uniform(1))
    assert sol.mean_service == pytest.approx(2.0)
    assert sol.var_service == pytest.approx(2.0)  # (1 - r) / r^2


def test_transmission_moments_single_user():
    m1, m2 = A.transmission_moments([0.25], np.array([[True]]))
    assert m1[0] == pytest.approx(4.0) and m2[0] == pytest.approx(12.0 + 16.0)  # Var + mean^2


def test_fading_paths_agree():
    # homogeneous binomial shortcut vs explicit enumeration vs Monte Carlo
    L = 6
    rm = build_rate_matrix(20, L, 0.3, zipf_pmf(20, 1.0))
    cat = Catalog.uniform(20)
    r = [0.8] * L
    fast = A.fading_fixed_point(rm, r, cat)
    het = A.fading_fixed_point(rm, [0.8] * (L - 1) + [0.8 - 1e-12], cat)
    mc = A.fading_fixed_point(rm, [0.8] * (L - 1) + [0.8 - 1e-12], cat, exact_limit=0,
                              samples=200_000)
    assert het.d == pytest.approx(fast.d, rel=1e-8)
    assert mc.d == pytest.approx(fast.d, rel=0.02)


def test_coded_per_user_service_time():
    rm = build_rate_matrix(100, 10, 0.05, zipf_pmf(100, 1.0))
    sols = A.coded_per_user_fixed_point(rm, 10, Catalog.uniform(100))
    assert len(sols) == 10
    assert all(s.mean_service == pytest.approx(4.5) for s in sols)
    tiny = build_rate_matrix(100, 10, 1e-9, zipf_pmf(100, 1.0))
    assert A.coded_per_user_fixed_point(tiny, 10, Catalog.uniform(100))[0].d < 1e-6
