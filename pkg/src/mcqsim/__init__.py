"""Queueing models of cache-aided multicast and coded delivery on a shared downlink."""

__version__ = "0.1.0"

from .analysis import (FixedPointSolution, coded_per_user_fixed_point, fading_fixed_point,
                       fifo_mean_delay, lru_fed_fixed_point, multicast_fixed_point,
                       per_file_mean_delay)
from .cache import LruCache, PartitionPlacement, che_constant, miss_probability
from .channel import ChannelModel, draw_transmission_count, nt_cdf, success_probability_awgn_rayleigh
from .simulator import DelayStats, SchemeConfig, run, simulate_replication, sweep
from .traffic import Catalog, RateMatrix, RequestEvent, build_rate_matrix, zipf_pmf

__all__ = [
    "Catalog", "ChannelModel", "DelayStats", "FixedPointSolution", "LruCache",
    "PartitionPlacement", "RateMatrix", "RequestEvent", "SchemeConfig", "build_rate_matrix",
    "che_constant", "coded_per_user_fixed_point", "draw_transmission_count",
    "fading_fixed_point", "fifo_mean_delay", "lru_fed_fixed_point", "miss_probability",
    "multicast_fixed_point", "nt_cdf", "per_file_mean_delay", "run", "simulate_replication",
    "success_probability_awgn_rayleigh", "sweep", "zipf_pmf",
]
