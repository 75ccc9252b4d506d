import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from mcqsim.channel import (ChannelModel, ChannelSampler, draw_transmission_count,
                            draw_transmission_count_rounds, nt_cdf,
                            success_probability_awgn_rayleigh, worst_rate_service_time)


def test_success_probability():
    assert success_probability_awgn_rayleigh(10, 1) == pytest.approx(math.exp(-0.3))
    assert success_probability_awgn_rayleigh(10, 0) == 1.0
    assert success_probability_awgn_rayleigh(1e12, 1) == pytest.approx(1.0)


def test_nt_cdf_examples():
    assert nt_cdf([0.5], 1) == 0.5
    assert nt_cdf([0.5], 2) == 0.75
    assert nt_cdf([0.5, 0.5], 1) == 0.25
    assert nt_cdf([1.0, 1.0, 1.0], 1) == 1.0
    assert nt_cdf([], 3) == 1.0


@given(st.lists(st.floats(0.05, 1.0), min_size=1, max_size=6))
def test_nt_cdf_monotone(probs):
    vals = [nt_cdf(probs, n) for n in range(1, 60)]
    assert all(b >= a for a, b in zip(vals, vals[1:]))
    assert nt_cdf(probs, 2000) == pytest.approx(1.0)


def test_all_success_is_one_transmission():
    rng = np.random.default_rng(0)
    assert all(draw_transmission_count([1.0, 1.0], rng) == 1 for _ in range(100))


def test_geometric_mean():
    rng = np.random.default_rng(1)
    n = 10 ** 6
    x = rng.geometric(0.5, n)  # oracle population, compared below via the model
    draws = np.array([draw_transmission_count([0.5], rng) for _ in range(n)])
    assert draws.mean() == pytest.approx(2.0, rel=0.01)
    assert stats.ks_2samp(draws[:100_000], x[:100_000]).pvalue > 1e-3


def test_two_users_first_round():
    rng = np.random.default_rng(2)
    draws = np.array([draw_transmission_count([0.5, 0.5], rng) for _ in range(200_000)])
    assert np.mean(draws == 1) == pytest.approx(0.25, abs=0.005)


def test_round_simulation_has_same_law():
    probs = [0.5, 0.7, 0.9]
    rng = np.random.default_rng(4)
    a = np.array([draw_transmission_count(probs, rng) for _ in range(50_000)])
    b = np.array([draw_transmission_count_rounds(probs, rng) for _ in range(50_000)])
    for n in range(1, 8):
        assert np.mean(a <= n) == pytest.approx(nt_cdf(probs, n), abs=0.01)
        assert np.mean(b <= n) == pytest.approx(nt_cdf(probs, n), abs=0.01)


def test_worst_rate_units():
    bw, snr, bits = 10e6, 10.0, 10e6
    # gain giving spectral efficiency bits/bw = 1 under the /2 convention
    g = (2 ** 2 - 1) / snr
    assert worst_rate_service_time([g], bits, snr, bw) == pytest.approx(1.0)
    assert worst_rate_service_time([g, 5 * g], bits, snr, bw) == pytest.approx(1.0)
    assert worst_rate_service_time([5 * g], bits, snr, bw) < 1.0


def test_sampler_error_free_uses_nominal():
    s = ChannelSampler(ChannelModel(), 3, np.random.default_rng(0))
    assert s.service_time(1.7, (0, 2)) == 1.7


def test_rayleigh_model():
    m = ChannelModel.rayleigh_retransmit(4, 10.0, 1.0)
    assert m.success_for(4) == pytest.approx((math.exp(-0.3),) * 4)
    with pytest.raises(ValueError):
        ChannelModel("retransmit", (1.5,))
