"""Experiment files: INI-style ``key = value`` sections.

Example::

    [catalog]
    M = 100
    file_time_s = 1.0

    [traffic]
    users = 10
    per_user_rate = 0.1
    zipf_alpha = 1.0

    [scheme]
    name = MULTICAST
"""
from __future__ import annotations

import configparser
import os
from dataclasses import dataclass, field

from .channel import CHANNEL_KINDS, ERROR_FREE, RETRANSMIT, ChannelModel, success_probability_awgn_rayleigh
from .simulator import (FADING_RETX, LRU_SCHEMES, METRICS, PARTITION_SCHEMES, QUEUING_DELAY,
                        SCHEMES, SchemeConfig)

# section -> {key: (parser, default)}; a default of REQUIRED must be given
REQUIRED = object()

SCHEMA = {
    "catalog": {"M": (int, REQUIRED), "file_time_s": (float, 1.0)},
    "traffic": {"users": (int, REQUIRED), "per_user_rate": (float, REQUIRED),
                "zipf_alpha": (float, 1.0)},
    "cache": {"capacity": (float, 0.0)},
    "channel": {"kind": (str, ERROR_FREE), "r": (str, None), "snr": (float, 10.0),
                "bandwidth_hz": (float, 10e6), "fixed_rate": (float, 1.0)},
    "scheme": {"name": (str, REQUIRED)},
    "run": {"horizon_events": (int, 200_000), "warmup_frac": (float, 0.2), "seed": (int, 1),
            "replications": (int, 1), "metric": (str, QUEUING_DELAY)},
}

SHARED_SECTIONS = ("catalog", "traffic")


class ConfigError(ValueError):
    def __init__(self, msg: str, path: str = "<config>", line: int | None = None):
        self.path, self.line, self.msg = path, line, msg
        loc = f"{path}:{line}" if line else path
        super().__init__(f"{loc}: {msg}")


@dataclass
class Experiment:
    path: str
    config: SchemeConfig
    values: dict = field(default_factory=dict)  # section -> {key: raw string}


def _line_of(lines, section, key=None):
    cur = None
    for n, raw in enumerate(lines, 1):
        s = raw.strip()
        if s.startswith("[") and s.endswith("]"):
            cur = s[1:-1].strip()
            if key is None and cur == section:
                return n
        elif cur == section and key is not None and "=" in s:
            if s.split("=", 1)[0].strip() == key:
                return n
    return None


def parse_experiment(text: str, path: str = "<config>") -> Experiment:
    lines = text.splitlines()
    cp = configparser.ConfigParser(interpolation=None, strict=True,
                                   delimiters=("=",), comment_prefixes=("#", ";"),
                                   inline_comment_prefixes=("#",))
    cp.optionxform = str  # keys are case-sensitive (M)
    try:
        cp.read_string(text, source=path)
    except configparser.MissingSectionHeaderError as e:
        raise ConfigError("key outside of any [section]", path, e.lineno) from None
    except (configparser.DuplicateSectionError, configparser.DuplicateOptionError) as e:
        raise ConfigError(e.message.split(":", 1)[-1].strip(), path, e.lineno) from None
    except configparser.ParsingError as e:
        ln = e.errors[0][0] if e.errors else None
        raise ConfigError("malformed line (expected key = value)", path, ln) from None

    for sec in cp.sections():
        if sec not in SCHEMA:
            raise ConfigError(f"unknown section [{sec}]", path, _line_of(lines, sec))
        for key in cp[sec]:
            if key not in SCHEMA[sec]:
                raise ConfigError(f"unknown key {key!r} in [{sec}]", path, _line_of(lines, sec, key))

    values = {sec: dict(cp[sec]) for sec in cp.sections()}

    def get(sec, key):
        conv, default = SCHEMA[sec][key]
        if sec in values and key in values[sec]:
            raw = values[sec][key]
            try:
                return conv(raw)
            except ValueError:
                raise ConfigError(f"bad value {raw!r} for {key}", path, _line_of(lines, sec, key)) from None
        if default is REQUIRED:
            if sec not in values:
                raise ConfigError(f"missing section [{sec}]", path)
            raise ConfigError(f"missing key {key!r} in [{sec}]", path, _line_of(lines, sec))
        return default

    scheme = get("scheme", "name").upper()
    if scheme not in SCHEMES:
        raise ConfigError(f"unknown scheme {scheme!r}", path, _line_of(lines, "scheme", "name"))
    if (scheme in LRU_SCHEMES or scheme in PARTITION_SCHEMES) and "capacity" not in values.get("cache", {}):
        raise ConfigError(f"scheme {scheme} needs [cache] capacity", path)
    metric = get("run", "metric")
    if metric not in METRICS:
        raise ConfigError(f"metric must be one of {METRICS}", path, _line_of(lines, "run", "metric"))

    users = get("traffic", "users")
    kind = get("channel", "kind")
    if kind not in CHANNEL_KINDS:
        raise ConfigError(f"channel kind must be one of {CHANNEL_KINDS}", path,
                          _line_of(lines, "channel", "kind"))
    if scheme == FADING_RETX and kind != RETRANSMIT:
        raise ConfigError("FADING-RETX needs [channel] kind = retransmit", path)
    snr, fixed = get("channel", "snr"), get("channel", "fixed_rate")
    success = ()
    if kind == RETRANSMIT:
        raw_r = get("channel", "r")
        try:
            if raw_r is None:
                success = (success_probability_awgn_rayleigh(snr, fixed),)
            else:
                success = tuple(float(x) for x in raw_r.split(","))
        except ValueError as e:
            raise ConfigError(f"bad success probability: {e}", path, _line_of(lines, "channel", "r")) from None

    try:
        channel = ChannelModel(kind, success, snr, get("channel", "bandwidth_hz"), fixed)
        cfg = SchemeConfig(
            scheme=scheme,
            file_count=get("catalog", "M"),
            file_time=get("catalog", "file_time_s"),
            user_count=users,
            per_user_rate=get("traffic", "per_user_rate"),
            zipf_alpha=get("traffic", "zipf_alpha"),
            cache_capacity=get("cache", "capacity"),
            channel=channel,
            horizon_events=get("run", "horizon_events"),
            warmup_frac=get("run", "warmup_frac"),
            seed=get("run", "seed"),
            replications=get("run", "replications"),
            metric=metric,
        )
    except ValueError as e:
        if isinstance(e, ConfigError):
            raise
        raise ConfigError(str(e), path) from None
    return Experiment(path, cfg, values)


def load_experiment(path) -> Experiment:
    path = os.fspath(path)
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as e:
        raise ConfigError(f"cannot read config: {e.strerror}", path) from None
    return parse_experiment(text, path)


def shared_mismatches(experiments, ignore=()) -> list:
    """Keys of the shared sections that differ between experiments."""
    bad = []
    base = experiments[0]
    for sec in SHARED_SECTIONS:
        for key, (conv, default) in SCHEMA[sec].items():
            if key in ignore:
                continue
            ref = base.values.get(sec, {}).get(key)
            for ex in experiments[1:]:
                other = ex.values.get(sec, {}).get(key)
                same = ref == other
                if not same and ref is not None and other is not None:
                    try:
                        same = conv(ref) == conv(other)
                    except ValueError:
                        pass
                if not same:
                    bad.append(f"[{sec}] {key}: {base.path}={ref!r} vs {ex.path}={other!r}")
    return bad
