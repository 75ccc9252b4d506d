"""Command-line front end: ``mcqsim simulate|analyze|sweep|compare``.

Every command writes CSV (header row, comma separated, CRLF line ends) to
``--out`` or stdout. Exit codes: 0 ok, 2 configuration error, 3 runtime
error.
"""
from __future__ import annotations

import argparse
import csv
import io
import math
import sys
from dataclasses import replace
from pathlib import Path

from . import __version__
from . import analysis as A
from .channel import RETRANSMIT
from .config import ConfigError, load_experiment, shared_mismatches
from .simulator import (FADING_RETX, FIFO, LRU_M, MULTICAST, PCS_M, SOJOURN, SWEEP_AXES,
                        _pool_map, aggregate, default_workers, simulate_replication)

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3

ANALYZABLE = (FIFO, MULTICAST, LRU_M, FADING_RETX, PCS_M)
AXIS_KEYS = {"user_count": "users", "per_user_rate": "per_user_rate", "alpha": "zipf_alpha",
             "C": "capacity", "snr": "snr"}

SIM_COLUMNS = ["scheme", "users", "per_user_rate", "M", "C", "alpha", "channel", "metric",
               "replication", "mean_delay_s", "ci95_s", "mean_wait_s", "mean_sojourn_s",
               "mean_type1_delay_s", "type1_count", "type2_count", "hits", "max_queue_len",
               "unstable_flag"]
ANALYZE_COLUMNS = ["scheme", "scope", "lambda", "lambda_eff", "d_fixed_point", "rho", "residual",
                   "type1_delay_s", "mixture_delay_s", "request_delay_s"]
COMPARE_COLUMNS = ["scheme", "axis_value", "mean_sojourn_s", "ci95_s", "unstable_flag"]


class UsageError(Exception):
    pass


def _fmt(x):
    if isinstance(x, bool):
        return int(x)
    if isinstance(x, float):
        if math.isnan(x):
            return ""
        if math.isinf(x):
            return "unstable"
        return format(x, ".10g")
    return x


def _write(rows, columns, out):
    buf = io.StringIO(newline="")
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(r.get(c, "")) for c in columns])
    data = buf.getvalue()
    if out is None or out == "-":
        sys.stdout.write(data)
        sys.stdout.flush()
    else:
        with open(out, "w", newline="", encoding="utf-8") as fh:
            fh.write(data)


def _sim_row(cfg, st, rep):
    return {
        "scheme": cfg.scheme, "users": cfg.user_count, "per_user_rate": float(cfg.per_user_rate),
        "M": cfg.file_count, "C": float(cfg.cache_capacity), "alpha": float(cfg.zipf_alpha),
        "channel": cfg.channel.kind, "metric": cfg.metric, "replication": rep,
        "mean_delay_s": st.mean_delay, "ci95_s": st.ci95, "mean_wait_s": st.mean_wait,
        "mean_sojourn_s": st.mean_sojourn, "mean_type1_delay_s": st.mean_type1_wait,
        "type1_count": st.type1, "type2_count": st.type2, "hits": st.hits,
        "max_queue_len": st.max_queue_len, "unstable_flag": st.unstable,
    }


def _overrides(cfg, args):
    kw = {}
    if getattr(args, "seed", None) is not None:
        kw["seed"] = args.seed
    if getattr(args, "reps", None) is not None:
        if args.reps < 1:
            raise UsageError("--reps must be >= 1")
        kw["replications"] = args.reps
    if getattr(args, "horizon", None) is not None:
        if args.horizon < 1:
            raise UsageError("--horizon must be >= 1")
        kw["horizon_events"] = args.horizon
    return replace(cfg, **kw) if kw else cfg


def _parse_values(axis, text):
    if axis not in SWEEP_AXES:
        raise UsageError(f"--axis must be one of {', '.join(SWEEP_AXES)}")
    try:
        vals = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"--values must be comma-separated numbers, got {text!r}") from None
    if not vals:
        raise UsageError("--values is empty")
    if axis == "user_count":
        if any(v != int(v) or v < 1 for v in vals):
            raise UsageError("user_count values must be positive integers")
        vals = [int(v) for v in vals]
    return vals


def _run_points(cfgs):
    """Simulate every replication of every config; returns aggregated stats
    and per-replication lists in input order."""
    jobs = [(c, r) for c in cfgs for r in range(c.replications)]
    flat = _pool_map(simulate_replication, jobs, default_workers())
    out, pos = [], 0
    for c in cfgs:
        reps = flat[pos:pos + c.replications]
        pos += c.replications
        out.append((aggregate(reps), reps))
    return out


def cmd_simulate(args):
    cfg = _overrides(load_experiment(args.config).config, args)
    (agg, reps), = _run_points([cfg])
    rows = [_sim_row(cfg, st, r) for r, st in enumerate(reps)]
    rows.append(_sim_row(cfg, agg, "all"))
    _write(rows, SIM_COLUMNS, args.out)


def cmd_sweep(args):
    cfg = _overrides(load_experiment(args.config).config, args)
    values = _parse_values(args.axis, args.values)
    cfgs = [cfg.with_axis(args.axis, v) for v in values]
    rows = []
    for c, (agg, _) in zip(cfgs, _run_points(cfgs)):
        rows.append(_sim_row(c, agg, "all"))
    _write(rows, SIM_COLUMNS, args.out)


def _solution_rows(scheme, sol, scope_all="all", request_delay=None):
    rows = [{
        "scheme": scheme, "scope": scope_all, "lambda": float(sol.file_rates.sum()),
        "lambda_eff": float(sol.effective_rates.sum()), "d_fixed_point": sol.d, "rho": sol.rho,
        "residual": sol.residual, "type1_delay_s": sol.d, "mixture_delay_s": sol.mixture_delay(),
        "request_delay_s": request_delay if request_delay is not None else math.nan,
    }]
    per_file = sol.per_file_delay()
    for i, (lam, lp) in enumerate(zip(sol.file_rates, sol.effective_rates)):
        if lam <= 0:
            continue
        rows.append({"scheme": scheme, "scope": f"file:{i + 1}", "lambda": float(lam),
                     "lambda_eff": float(lp), "d_fixed_point": sol.d, "rho": sol.rho,
                     "residual": sol.residual, "type1_delay_s": sol.d,
                     "mixture_delay_s": float(per_file[i])})
    return rows


def cmd_analyze(args):
    ex = load_experiment(args.config)
    cfg = ex.config
    scheme = cfg.scheme
    if scheme not in ANALYZABLE:
        raise UsageError(f"{scheme} is a simulation-only scheme; analyze supports "
                         f"{', '.join(ANALYZABLE)}")
    mode = args.bracket_mode
    rm, cat = cfg.rate_matrix, cfg.catalog
    if scheme == FIFO:
        d = A.fifo_mean_delay(rm, cat)
        es, _ = A.service_moments(rm.file_rates, cat.sizes) if rm.total_rate else (0.0, 0.0)
        rows = [{"scheme": scheme, "scope": "all", "lambda": rm.total_rate,
                 "lambda_eff": rm.total_rate, "d_fixed_point": d, "rho": rm.total_rate * es,
                 "residual": 0.0, "type1_delay_s": d, "mixture_delay_s": d, "request_delay_s": d}]
    elif scheme == PCS_M:
        rows = []
        for j, sol in enumerate(A.coded_per_user_fixed_point(rm, cfg.cache_capacity, cat, mode)):
            rows += _solution_rows(scheme, sol, f"user:{j + 1}", sol.mixture_delay())[:1]
    elif scheme == LRU_M:
        sol = A.lru_fed_fixed_point(rm, cfg.cache_capacity, cat, mode)
        rows = _solution_rows(scheme, sol, request_delay=sol.extra["request_delay"])
    elif scheme == FADING_RETX or (scheme == MULTICAST and cfg.channel.kind == RETRANSMIT):
        r = cfg.channel.success_for(rm.user_count)
        sol = A.fading_fixed_point(rm, r, cat, mode)
        rows = _solution_rows(scheme, sol, request_delay=sol.mixture_delay())
    elif cfg.channel.kind != "error-free":
        raise UsageError("analysis of MULTICAST supports error-free or retransmit channels only")
    else:
        sol = A.multicast_fixed_point(rm.file_rates, cat, mode)
        rows = _solution_rows(scheme, sol, request_delay=sol.mixture_delay())
    _write(rows, ANALYZE_COLUMNS, args.out)


def cmd_compare(args):
    folder = Path(args.config_dir)
    paths = sorted(folder.glob("*.ini")) if folder.is_dir() else []
    if not paths:
        raise UsageError(f"no *.ini configs found in {folder}")
    exps = [load_experiment(p) for p in paths]
    values = _parse_values(args.axis, args.values)
    bad = shared_mismatches(exps, ignore=(AXIS_KEYS[args.axis],))
    if bad:
        raise UsageError("configs disagree on shared settings:\n  " + "\n  ".join(bad))
    cfgs, labels = [], []
    for ex in exps:
        base = replace(_overrides(ex.config, args), metric=SOJOURN)
        for v in values:
            cfgs.append(base.with_axis(args.axis, v))
            labels.append((base.scheme, v))
    rows = []
    for (scheme, v), (agg, _) in zip(labels, _run_points(cfgs)):
        rows.append({"scheme": scheme, "axis_value": v, "mean_sojourn_s": agg.mean_sojourn,
                     "ci95_s": agg.ci95, "unstable_flag": agg.unstable})
    _write(rows, COMPARE_COLUMNS, args.out)


def build_parser():
    p = argparse.ArgumentParser(prog="mcqsim", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, sim=True):
        sp.add_argument("--out", "-o", default=None, help="CSV path (default stdout)")
        if sim:
            sp.add_argument("--seed", type=int, default=None)
            sp.add_argument("--reps", type=int, default=None, help="replications")
            sp.add_argument("--horizon", type=int, default=None,
                            help="requests per replication (overrides [run] horizon_events)")

    sp = sub.add_parser("simulate", help="simulate one configuration")
    sp.add_argument("config")
    common(sp)
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("analyze", help="analytical mean delay")
    sp.add_argument("config")
    sp.add_argument("--bracket-mode", choices=A.BRACKET_MODES, default=A.EQ5)
    common(sp, sim=False)
    sp.set_defaults(func=cmd_analyze)

    sp = sub.add_parser("sweep", help="simulate along one parameter axis")
    sp.add_argument("config")
    sp.add_argument("--axis", required=True, choices=SWEEP_AXES)
    sp.add_argument("--values", required=True, help="comma-separated values")
    common(sp)
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("compare", help="sweep several scheme configs (sojourn metric)")
    sp.add_argument("config_dir")
    sp.add_argument("--axis", required=True, choices=SWEEP_AXES)
    sp.add_argument("--values", required=True, help="comma-separated values")
    common(sp)
    sp.set_defaults(func=cmd_compare)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code == 0 else EXIT_CONFIG
    try:
        args.func(args)
    except (ConfigError, UsageError) as e:
        print(f"mcqsim: error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as e:  # noqa: BLE001 - surfaced as exit code 3
        print(f"mcqsim: runtime error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
