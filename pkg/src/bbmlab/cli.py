"""Command-line interface: ad hoc runs and canned experiment recipes.

Every command computes its rows completely before anything is written, then
writes the CSV atomically (temp file + rename) together with a JSON manifest
recording all parameters, the seed, the package version and the wall clock.
CSV bodies are deterministic in (arguments, seed); timestamps live only in
the manifest, so re-running a manifest reproduces the CSV byte for byte.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import math
import os
import sys
import time
from datetime import datetime, timezone

from . import __version__, analytic
from .config import ConfigError, ExperimentSpec, experiment_from_config, parse_config
from .engine import (
    BudgetExceededError,
    backend_name,
    confinement_probability_mc,
    sample_counts,
)
from .estimators import (
    estimate_expected_mass,
    estimate_ld_probability,
    fit_decay_rate,
    lln_trend,
    prop_a_distribution_test,
)
from .model import ModelParams, RadiusSchedule, default_dt

__all__ = ["main"]


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # type: ignore[override]
        raise ConfigError("E_USAGE", message)


def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _emit(args, header, rows, parameters: dict, started: float) -> None:
    body = io.StringIO()
    writer = csv.writer(body, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_cell(v) for v in row])
    text = body.getvalue()
    out = getattr(args, "out", None)
    if not out:
        sys.stdout.write(text)
        return
    manifest = {
        "command": args.command,
        "version": __version__,
        "backend": backend_name(),
        "parameters": parameters,
        "rows": len(rows),
        "csv": os.path.basename(out),
        "wall_clock_seconds": time.time() - started,
        "written_at": datetime.now(timezone.utc).isoformat(),
    }
    tmp = out + ".tmp"
    try:
        with open(tmp, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, out)
        with open(out + ".manifest.json", "w", encoding="utf-8") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)
            fh.write("\n")
    except OSError:
        for path in (tmp, out, out + ".manifest.json"):
            try:
                os.unlink(path)
            except OSError:
                pass
        raise


def _add_common(parser: argparse.ArgumentParser, *, replicates: int | None) -> None:
    parser.add_argument("--seed", type=int, default=0, help="64-bit RNG seed")
    if replicates is not None:
        parser.add_argument("--replicates", type=int, default=replicates)
    parser.add_argument(
        "--threads", type=int, default=0, help="worker processes; 0 = auto (BBM_THREADS or CPUs)"
    )
    parser.add_argument("--out", default=None, help="CSV output path (stdout when omitted)")


def _add_model(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--dimension", type=int, default=1)
    parser.add_argument("--beta", type=float, required=True, help="branching rate")
    parser.add_argument("--kappa", type=float, default=1.0)
    parser.add_argument("--t-max", type=float, default=None)
    parser.add_argument("--dt", type=float, default=None)
    parser.add_argument("--radius-kind", choices=("power", "logarithmic", "fixed"), default="power")
    parser.add_argument("--radius-coefficient", type=float, default=1.0)
    parser.add_argument("--radius-exponent", type=float, default=0.4)
    parser.add_argument("--no-bridge", action="store_true", help="disable the bridge correction")


def _schedule_from_args(args, *, allow_fixed: bool) -> RadiusSchedule:
    if args.radius_kind == "power":
        if not (0.0 < args.radius_exponent < 0.5):
            raise ConfigError(
                "E_SUBDIFFUSIVITY",
                f"subdiffusivity violated: radius exponent must lie in (0, 1/2), "
                f"got {args.radius_exponent}",
            )
        return RadiusSchedule.power(args.radius_coefficient, args.radius_exponent)
    if args.radius_coefficient <= 0:
        raise ConfigError("E_CONFIG_VALUE", "radius coefficient must be positive")
    if args.radius_kind == "logarithmic":
        return RadiusSchedule.logarithmic(args.radius_coefficient)
    if not allow_fixed:
        raise ConfigError("E_FIXED_RADIUS", "this command needs a growing radius schedule")
    return RadiusSchedule.fixed(args.radius_coefficient)


def _params_from_args(args, times, *, allow_fixed: bool) -> ModelParams:
    if not (args.beta > 0):
        raise ConfigError("E_CONFIG_VALUE", "beta must be positive")
    if args.dimension < 1:
        raise ConfigError("E_CONFIG_VALUE", "dimension must be >= 1")
    if not times or any(t <= 0 for t in times):
        raise ConfigError("E_CONFIG_VALUE", "times must be positive")
    if any(b <= a for a, b in zip(times, times[1:])):
        raise ConfigError("E_CONFIG_VALUE", "times must be strictly increasing")
    schedule = _schedule_from_args(args, allow_fixed=allow_fixed)
    t_max = args.t_max if args.t_max is not None else times[-1]
    if not (t_max > 0) or times[-1] > t_max:
        raise ConfigError("E_CONFIG_VALUE", "need 0 < times <= t_max")
    dt = args.dt if args.dt is not None else default_dt(schedule, times[0], t_max)
    if not (0 < dt <= t_max):
        raise ConfigError("E_CONFIG_VALUE", "need 0 < dt <= t_max")
    if not (args.kappa > 0):
        raise ConfigError("E_CONFIG_VALUE", "kappa must be positive")
    return ModelParams(
        dimension=args.dimension,
        branching_rate=args.beta,
        kappa=args.kappa,
        t_max=t_max,
        radius=schedule,
        dt=dt,
        bridge_correction=not args.no_bridge,
    )


def _params_dict(params: ModelParams) -> dict:
    fields = dataclasses.asdict(params)
    fields["radius"] = dataclasses.asdict(params.radius)
    return fields


def _times_arg(raw: str) -> list[float]:
    try:
        return [float(s) for s in raw.split(",") if s.strip()]
    except ValueError:
        raise ConfigError("E_CONFIG_VALUE", f"bad time list {raw!r}") from None


def _cmd_simulate(args) -> None:
    started = time.time()
    times = _times_arg(args.obs)
    params = _params_from_args(args, times, allow_fixed=True)
    totals, actives, truncated = sample_counts(
        params, times, args.replicates, args.seed, threads=args.threads
    )
    rows = []
    for rep in range(args.replicates):
        for j, t in enumerate(times):
            if totals[rep, j] < 0:
                continue  # beyond this replicate's truncation cut
            rows.append(
                (
                    rep,
                    float(t),
                    int(totals[rep, j]),
                    int(actives[rep, j]),
                    params.radius_at(float(t)),
                    bool(truncated[rep]),
                )
            )
    _emit(
        args,
        ("replicate", "t", "total", "active", "radius", "truncated"),
        rows,
        {
            "model": _params_dict(params),
            "observation_times": times,
            "replicates": args.replicates,
            "seed": args.seed,
            "threads": args.threads,
        },
        started,
    )


def _cmd_expect(args) -> None:
    started = time.time()
    params = _params_from_args(args, [args.t], allow_fixed=True)
    est = estimate_expected_mass(params, args.t, args.replicates, args.seed, threads=args.threads)
    rows = [
        (
            params.dimension,
            params.branching_rate,
            args.t,
            args.replicates,
            est.value,
            est.std_error,
            est.detail["log_mean"],
            est.detail["mean_total"],
        )
    ]
    _emit(
        args,
        ("dimension", "beta", "t", "replicates", "mean_active", "std_error", "log_mean", "mean_total"),
        rows,
        {
            "model": _params_dict(params),
            "t": args.t,
            "replicates": args.replicates,
            "seed": args.seed,
            "threads": args.threads,
        },
        started,
    )


def _cmd_ldp(args) -> None:
    started = time.time()
    params = _params_from_args(args, [args.t], allow_fixed=False)
    est = estimate_ld_probability(
        params, args.t, args.replicates, args.seed, args.mode, threads=args.threads
    )
    rate = analytic.rate_function(params.kappa, params.branching_rate)
    rows = [
        (
            params.kappa,
            args.t,
            params.radius_at(args.t),
            args.mode,
            args.replicates,
            est.value,
            est.std_error,
            est.zero_hit,
            est.upper_bound,
            est.detail["p_t"],
            est.detail["threshold"],
            rate.value,
        )
    ]
    _emit(
        args,
        (
            "kappa",
            "t",
            "r",
            "mode",
            "replicates",
            "p_hat",
            "std_error",
            "zero_hit",
            "upper_bound",
            "p_t",
            "threshold",
            "rate_analytic",
        ),
        rows,
        {
            "model": _params_dict(params),
            "t": args.t,
            "mode": args.mode,
            "replicates": args.replicates,
            "seed": args.seed,
            "threads": args.threads,
        },
        started,
    )


def _lln_rows(params: ModelParams, times, replicates, seed, epsilon, threads):
    summaries = lln_trend(params, times, replicates, seed, epsilon=epsilon, threads=threads)
    return [
        (
            s.t,
            s.radius,
            replicates,
            s.median,
            s.iqr,
            s.median_nonzero,
            s.iqr_nonzero,
            s.zero_fraction,
            s.within_fraction,
            s.epsilon,
            s.target,
            s.unreliable,
        )
        for s in summaries
    ]


_LLN_HEADER = (
    "t",
    "r",
    "replicates",
    "median",
    "iqr",
    "median_nonzero",
    "iqr_nonzero",
    "zero_fraction",
    "within_fraction",
    "epsilon",
    "target",
    "unreliable",
)


def _cmd_lln(args) -> None:
    started = time.time()
    times = _times_arg(args.t)
    params = _params_from_args(args, times, allow_fixed=False)
    rows = _lln_rows(params, times, args.replicates, args.seed, args.epsilon, args.threads)
    _emit(
        args,
        _LLN_HEADER,
        rows,
        {
            "model": _params_dict(params),
            "times": times,
            "epsilon": args.epsilon,
            "replicates": args.replicates,
            "seed": args.seed,
            "threads": args.threads,
        },
        started,
    )


def _cmd_propa(args) -> None:
    started = time.time()
    if not (args.beta > 0):
        raise ConfigError("E_CONFIG_VALUE", "beta must be positive")
    if args.t < 0:
        raise ConfigError("E_CONFIG_VALUE", "t must be nonnegative")
    tv, tail_ok = prop_a_distribution_test(
        args.beta, args.t, args.replicates, args.seed, threads=args.threads
    )
    rows = [(args.beta, args.t, args.replicates, tv, tail_ok)]
    _emit(
        args,
        ("beta", "t", "replicates", "tv_distance", "tail_check"),
        rows,
        {
            "beta": args.beta,
            "t": args.t,
            "replicates": args.replicates,
            "seed": args.seed,
            "threads": args.threads,
        },
        started,
    )


def _conf_rows(dimension, b, times, replicates, seed, dt, bridge, threads):
    rows = []
    for t in times:
        leading = analytic.confinement_center(dimension, b, t, mode="leading_term")
        series = (
            analytic.confinement_center(dimension, b, t, mode="series") if dimension == 1 else None
        )
        mc = confinement_probability_mc(
            dimension, b, t, replicates, seed, dt=dt, bridge=bridge, threads=threads
        )
        rows.append((dimension, b, float(t), leading, series, mc.value, mc.std_error, replicates))
    return rows


_CONF_HEADER = (
    "dimension",
    "b",
    "t",
    "leading_term",
    "series",
    "monte_carlo",
    "mc_std_error",
    "replicates",
)


def _cmd_conf(args) -> None:
    started = time.time()
    if args.dimension < 1:
        raise ConfigError("E_CONFIG_VALUE", "dimension must be >= 1")
    if not (args.b > 0):
        raise ConfigError("E_CONFIG_VALUE", "b must be positive")
    times = _times_arg(args.t)
    if not times or any(t <= 0 for t in times):
        raise ConfigError("E_CONFIG_VALUE", "times must be positive")
    dt = args.dt if args.dt is not None else min(times[0] / 16.0, 0.01 * args.b * args.b)
    rows = _conf_rows(
        args.dimension, args.b, times, args.replicates, args.seed, dt, not args.no_bridge, args.threads
    )
    _emit(
        args,
        _CONF_HEADER,
        rows,
        {
            "dimension": args.dimension,
            "b": args.b,
            "times": times,
            "dt": dt,
            "bridge_correction": not args.no_bridge,
            "replicates": args.replicates,
            "seed": args.seed,
            "threads": args.threads,
        },
        started,
    )


def _eigen_rows(dims):
    rows = []
    for d in dims:
        eig = analytic.eigenvalue(d)
        rows.append((d, d / 2 - 1, eig.first_zero, eig.lambda_d))
    return rows


_EIGEN_HEADER = ("dimension", "nu", "j_first_zero", "lambda")


def _cmd_eigen(args) -> None:
    started = time.time()
    try:
        dims = [int(s) for s in args.dimensions.split(",") if s.strip()]
    except ValueError:
        raise ConfigError("E_CONFIG_VALUE", f"bad dimension list {args.dimensions!r}") from None
    if not dims or any(d < 1 for d in dims):
        raise ConfigError("E_CONFIG_VALUE", "dimensions must be integers >= 1")
    rows = _eigen_rows(dims)
    _emit(args, _EIGEN_HEADER, rows, {"dimensions": dims}, started)


def _run_theorem1(spec: ExperimentSpec, threads: int):
    params = spec.params
    assert params is not None
    p_t = {
        t: confinement_probability_mc(
            params.dimension,
            params.radius_at(t),
            t,
            max(50_000, spec.replicates),
            spec.seed,
            dt=params.dt,
            bridge=params.bridge_correction,
            threads=threads,
        )
        for t in spec.grid_t
    }
    rows = []
    for kappa in spec.grid_kappa:
        point_params = dataclasses.replace(params, kappa=kappa)
        estimates = [
            estimate_ld_probability(
                point_params, t, spec.replicates, spec.seed, "stratified", p_t=p_t[t], threads=threads
            )
            for t in spec.grid_t
        ]
        fit = fit_decay_rate(
            [(params.radius_at(t), est.value) for t, est in zip(spec.grid_t, estimates)],
            std_errors=[est.std_error for est in estimates],
        )
        rate = analytic.rate_function(kappa, params.branching_rate)
        for t, est in zip(spec.grid_t, estimates):
            rows.append(
                (
                    kappa,
                    float(t),
                    params.radius_at(t),
                    est.value,
                    est.std_error,
                    est.zero_hit,
                    fit.slope,
                    fit.slope_se,
                    rate.value,
                )
            )
    header = (
        "kappa",
        "t",
        "r",
        "p_hat",
        "std_error",
        "zero_hit",
        "slope",
        "slope_se",
        "rate_analytic",
    )
    return header, rows


def _cmd_run(args) -> None:
    started = time.time()
    try:
        with open(args.config, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError("E_OUTPUT", f"cannot read config {args.config!r}: {exc}") from None
    spec = experiment_from_config(parse_config(text))
    if args.out is not None:
        spec = dataclasses.replace(spec, output_path=args.out)
    args.out = spec.output_path
    args.command = f"run:{spec.recipe}"
    threads = args.threads

    if spec.recipe == "eigen_table":
        _emit(args, _EIGEN_HEADER, _eigen_rows(spec.grid_d), {"dimensions": list(spec.grid_d)}, started)
        return
    if spec.recipe == "propa_check":
        tv, tail_ok = prop_a_distribution_test(
            spec.beta, spec.t, spec.replicates, spec.seed, threads=threads
        )
        rows = [(spec.beta, spec.t, spec.replicates, tv, tail_ok)]
        _emit(
            args,
            ("beta", "t", "replicates", "tv_distance", "tail_check"),
            rows,
            {"beta": spec.beta, "t": spec.t, "replicates": spec.replicates, "seed": spec.seed},
            started,
        )
        return
    if spec.recipe == "confinement_table":
        params = spec.params
        rows = _conf_rows(
            params.dimension,
            spec.ball_radius,
            spec.grid_t,
            spec.replicates,
            spec.seed,
            params.dt,
            params.bridge_correction,
            threads,
        )
        _emit(
            args,
            _CONF_HEADER,
            rows,
            {
                "model": _params_dict(params),
                "b": spec.ball_radius,
                "times": list(spec.grid_t),
                "replicates": spec.replicates,
                "seed": spec.seed,
                "threads": threads,
            },
            started,
        )
        return
    if spec.recipe == "theorem1_rate_curve":
        header, rows = _run_theorem1(spec, threads)
        _emit(
            args,
            header,
            rows,
            {
                "model": _params_dict(spec.params),
                "grid_kappa": list(spec.grid_kappa),
                "grid_t": list(spec.grid_t),
                "replicates": spec.replicates,
                "seed": spec.seed,
                "threads": threads,
            },
            started,
        )
        return
    if spec.recipe == "theorem2_lln_trend":
        rows = _lln_rows(
            spec.params, list(spec.grid_t), spec.replicates, spec.seed, spec.epsilon, threads
        )
        _emit(
            args,
            _LLN_HEADER,
            rows,
            {
                "model": _params_dict(spec.params),
                "times": list(spec.grid_t),
                "epsilon": spec.epsilon,
                "replicates": spec.replicates,
                "seed": spec.seed,
                "threads": threads,
            },
            started,
        )
        return
    # expectation_check
    params = spec.params
    est = estimate_expected_mass(params, spec.t, spec.replicates, spec.seed, threads=threads)
    if params.dimension == 1:
        # valid for any schedule: the predicate compares the running max
        # against the radius at the observation time only
        p_t = analytic.confinement_center(1, params.radius_at(spec.t), spec.t, mode="series")
        p_source = "series"
    else:
        mc = confinement_probability_mc(
            params.dimension,
            params.radius_at(spec.t),
            spec.t,
            max(50_000, spec.replicates),
            spec.seed,
            dt=params.dt,
            bridge=params.bridge_correction,
            threads=threads,
        )
        p_t, p_source = mc.value, "monte_carlo"
    target = math.exp(analytic.expected_mass(params, spec.t, p_t))
    z = (est.value - target) / est.std_error if est.std_error > 0 else math.inf
    rows = [
        (
            params.dimension,
            params.branching_rate,
            spec.t,
            spec.replicates,
            est.value,
            est.std_error,
            p_t,
            p_source,
            target,
            z,
        )
    ]
    _emit(
        args,
        (
            "dimension",
            "beta",
            "t",
            "replicates",
            "mean_active",
            "std_error",
            "p_t",
            "p_t_source",
            "target",
            "z_score",
        ),
        rows,
        {
            "model": _params_dict(params),
            "t": spec.t,
            "replicates": spec.replicates,
            "seed": spec.seed,
            "threads": threads,
        },
        started,
    )


def _build_parser() -> _Parser:
    parser = _Parser(prog="bbmlab", description="Branching Brownian motion laboratory")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="per-replicate snapshot dump")
    _add_model(p)
    p.add_argument("--obs", required=True, help="comma-separated observation times")
    _add_common(p, replicates=100)
    p.set_defaults(handler=_cmd_simulate)

    p = sub.add_parser("expect", help="sample mean of the active count")
    _add_model(p)
    p.add_argument("--t", type=float, required=True)
    _add_common(p, replicates=1000)
    p.set_defaults(handler=_cmd_expect)

    p = sub.add_parser("ldp", help="lower-deviation probability")
    _add_model(p)
    p.add_argument("--t", type=float, required=True)
    p.add_argument("--mode", choices=("naive", "stratified"), default="stratified")
    _add_common(p, replicates=10_000)
    p.set_defaults(handler=_cmd_ldp)

    p = sub.add_parser("lln", help="mass-correction statistic summary")
    _add_model(p)
    p.add_argument("--t", required=True, help="comma-separated observation times")
    p.add_argument("--epsilon", type=float, default=None)
    _add_common(p, replicates=500)
    p.set_defaults(handler=_cmd_lln)

    p = sub.add_parser("propa", help="total-count law against the geometric distribution")
    p.add_argument("--beta", type=float, required=True)
    p.add_argument("--t", type=float, required=True)
    _add_common(p, replicates=100_000)
    p.set_defaults(handler=_cmd_propa)

    p = sub.add_parser("conf", help="confinement probability table")
    p.add_argument("--dimension", type=int, default=1)
    p.add_argument("--b", type=float, required=True, help="ball radius")
    p.add_argument("--t", required=True, help="comma-separated times")
    p.add_argument("--dt", type=float, default=None)
    p.add_argument("--no-bridge", action="store_true")
    _add_common(p, replicates=100_000)
    p.set_defaults(handler=_cmd_conf)

    p = sub.add_parser("eigen", help="principal Dirichlet eigenvalue table")
    p.add_argument("--dimensions", default="1,2,3")
    _add_common(p, replicates=None)
    p.set_defaults(handler=_cmd_eigen)

    p = sub.add_parser("run", help="run a recipe from a flat key=value config")
    p.add_argument("config")
    _add_common(p, replicates=None)
    p.set_defaults(handler=_cmd_run)

    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        args.handler(args)
    except ConfigError as exc:
        print(f"ERROR {exc.code}: {exc}", file=sys.stderr)
        return 2
    except BudgetExceededError as exc:
        print(f"ERROR E_BUDGET: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"ERROR E_OUTPUT: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"ERROR E_CONFIG_VALUE: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
