import math
from dataclasses import replace

import numpy as np
import pytest

from mcqsim.channel import ChannelModel
from mcqsim.simulator import (CDLS, CDLS_M, FIFO, LRU_CM, LRU_M, MULTICAST, PCS_M, SOJOURN,
                              SchemeConfig, batch_means_ci, run, simulate_replication, sweep,
                              trend_unstable)
from mcqsim.traffic import RateMatrix


def cfg(**kw):
    base = dict(scheme=MULTICAST, file_count=20, user_count=4, per_user_rate=0.3,
                horizon_events=20_000, seed=5)
    base.update(kw)
    return SchemeConfig(**base)


def test_zero_rate_run():
    st = simulate_replication(cfg(per_user_rate=0.0))
    assert st.arrivals == st.hits == st.type1 == st.served == 0
    assert st.mean_delay == 0.0 and not st.unstable


@pytest.mark.parametrize("scheme", [FIFO, MULTICAST, LRU_M, LRU_CM, CDLS, CDLS_M, PCS_M])
def test_request_conservation(scheme):
    c = cfg(scheme=scheme, cache_capacity=4 if scheme != FIFO else 0, per_user_rate=0.2)
    st = simulate_replication(c)
    assert st.arrivals == c.horizon_events
    assert st.conserved
    assert st.waiting == 0 and st.in_service == 0  # queue drains past the horizon


def test_replications_are_reproducible():
    a = run(cfg(replications=2))
    b = run(cfg(replications=2))
    assert a.mean_delay == b.mean_delay and a.ci95 == b.ci95
    assert a.replications[0].mean_delay != a.replications[1].mean_delay


def test_multicast_queue_and_wait_bounds():
    M = 20
    st = simulate_replication(cfg(per_user_rate=50.0))
    assert st.max_queue_len <= M
    assert st.max_wait <= M * 1.0 + 1e-9
    assert not st.unstable


def test_two_state_oracle_single_file():
    # One file, one user, merging, unit service. Every request waits the
    # residual of the ongoing service (uniform, mean 1/2) or nothing if idle.
    # A busy period holds a geometric number of services with mean e^lam,
    # separated by exponential idle periods of mean 1/lam.
    lam = 0.5
    p_busy = math.exp(lam) / (1 / lam + math.exp(lam))
    c = SchemeConfig(scheme=MULTICAST, rates=RateMatrix(np.array([[lam]])), file_count=1,
                     horizon_events=400_000, seed=2)
    st = simulate_replication(c)
    assert st.mean_delay == pytest.approx(p_busy / 2, rel=0.02)


def test_fifo_md1():
    c = SchemeConfig(scheme=FIFO, file_count=10, user_count=1, per_user_rate=0.5,
                     horizon_events=200_000, seed=3)
    st = simulate_replication(c)
    assert abs(st.mean_delay - 0.5) < max(st.ci95, 0.025)


def test_fifo_order_preserved():
    trace = []
    simulate_replication(cfg(scheme=FIFO, per_user_rate=0.2, horizon_events=2000), trace=trace)
    arrivals = [f for _, ev, f, _ in trace if ev == "arrival"]
    starts = [fs[0] for _, ev, fs, _ in trace if ev == "start"]
    assert starts == arrivals


def test_fifo_overload_flagged():
    st = simulate_replication(cfg(scheme=FIFO, user_count=1, per_user_rate=1.3,
                                  horizon_events=50_000))
    assert st.unstable
    assert not simulate_replication(cfg(scheme=FIFO, user_count=1, per_user_rate=0.5)).unstable


def _trace(c):
    t = []
    simulate_replication(c, trace=t)
    return t


def test_lru_without_cache_is_multicast():
    assert _trace(cfg(scheme=LRU_M, cache_capacity=0)) == _trace(cfg())


def test_perfect_channel_is_error_free():
    ch = ChannelModel("retransmit", (1.0,))
    assert _trace(cfg(channel=ch)) == _trace(cfg())


def test_pcs_without_cache_single_user_is_merged_fifo():
    a = _trace(cfg(scheme=PCS_M, user_count=1, cache_capacity=0, per_user_rate=0.7))
    b = _trace(cfg(scheme=MULTICAST, user_count=1, per_user_rate=0.7))
    assert a == b
    assert all(ev[3] == 1.0 for ev in a if ev[1] == "start")


@pytest.mark.parametrize("scheme", [CDLS, CDLS_M, LRU_CM])
def test_coded_transmissions_are_decodable(scheme):
    log = []
    simulate_replication(cfg(scheme=scheme, cache_capacity=6, per_user_rate=0.5), decisions=log)
    assert log, "expected some coded transmissions"
    assert all(ok for checks in log for *_, ok in checks)


def test_sojourn_includes_service():
    q = simulate_replication(cfg())
    s = simulate_replication(cfg(metric=SOJOURN))
    assert s.mean_delay == pytest.approx(q.mean_delay + 1.0, rel=1e-9)


def test_sweep_fifo_diverges():
    base = cfg(scheme=FIFO, user_count=1, horizon_events=30_000)
    out = sweep(base, "per_user_rate", [0.3, 0.6, 1.4])
    assert [v for v, _ in out] == [0.3, 0.6, 1.4]
    delays = [st.mean_delay for _, st in out]
    assert delays[0] < delays[1] < delays[2]
    assert out[2][1].unstable and not out[0][1].unstable
    with pytest.raises(ValueError):
        sweep(base, "per_user_rate", [])


def test_config_validation():
    with pytest.raises(ValueError):
        cfg(scheme="NOPE")
    with pytest.raises(ValueError):
        cfg(scheme="UPO-M", cache_capacity=3)  # t = 0.6
    with pytest.raises(ValueError):
        cfg(scheme="FADING-RETX")
    c = cfg(channel=ChannelModel.rayleigh_retransmit(4, 10.0)).with_axis("snr", 100.0)
    assert c.channel.success[0] == pytest.approx(math.exp(-0.03))
    assert replace(cfg(), user_count=7).with_axis("user_count", 3).user_count == 3


def test_batch_means_and_trend():
    rng = np.random.default_rng(0)
    x = rng.normal(size=20_000)
    ci = batch_means_ci(x)
    assert 0 < ci < 0.05
    t = np.arange(10_000.0)
    assert trend_unstable(t, t / 10)
    assert not trend_unstable(t, rng.poisson(3, t.size))
