"""Command-line interface.

Subcommands: analytic (closed forms only), simulate (estimates with
stderr), compare (simulation against closed forms with z-scores, exit 2
on gate failure), sweep (correlation sweep tables).  All take a config
file (docs/config.md); command-line flags override config values.  Exit
codes: 0 success, 1 usage/validation error, 2 comparison gate failure.
"""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

from . import analytics, experiments, simulator
from .config import ConfigError, RunConfig, parse_config

__all__ = ["main", "entrypoint"]


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with code 2 on bad usage; this CLI reserves 2 for the
    # compare gate, so map usage problems to exit 1 instead
    def error(self, message):
        raise _UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="aoistats", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", metavar="{analytic,simulate,compare,sweep}")
    for name, helptext in [
        ("analytic", "print closed-form statistics"),
        ("simulate", "run the simulator and print estimates"),
        ("compare", "check simulation against the closed forms"),
        ("sweep", "tabulate the correlation coefficient along a parameter grid"),
    ]:
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--config", required=True, type=Path, help="configuration file")
        p.add_argument("--output", type=Path, help="CSV output path (overrides config)")
        p.add_argument("--seed", type=int, help="RNG seed (overrides config)")
        p.add_argument("--horizon", type=float, help="simulated time per replication")
        p.add_argument("--replications", type=int, help="number of replications")
        p.add_argument("--burn-in", type=float, dest="burn_in", help="warm-up span discarded per replication")
        p.add_argument("--workers", type=int, default=1, help="parallel replication processes")
        p.add_argument("--trace", type=Path, help="write an event trace CSV for replication 0")
    return parser


def _load_config(args) -> RunConfig:
    text = Path(args.config).read_text()
    cfg = parse_config(text)
    if args.output is not None:
        cfg.output = str(args.output)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.horizon is not None:
        if args.horizon <= 0:
            raise ConfigError([f"--horizon must be positive, got {args.horizon}"])
        cfg.horizon = args.horizon
    if args.replications is not None:
        if args.replications < 2:
            raise ConfigError([f"--replications must be at least 2, got {args.replications}"])
        cfg.replications = args.replications
    if args.burn_in is not None:
        if not 0 <= args.burn_in < cfg.horizon:
            raise ConfigError([f"--burn-in must lie in [0, horizon), got {args.burn_in}"])
        cfg.burn_in = args.burn_in
    return cfg


def _require_spec(cfg: RunConfig, command: str):
    if cfg.spec is None:
        raise ConfigError([f"{command}: the config must define at least one source line"])
    return cfg.spec


def _print_table(header, rows, out):
    widths = [max(len(str(r[i])) for r in [header, *rows]) for i in range(len(header))]
    line = "  ".join(str(h).ljust(w) for h, w in zip(header, widths))
    print(line, file=out)
    print("-" * len(line), file=out)
    for r in rows:
        print("  ".join(str(c).ljust(w) for c, w in zip(r, widths)), file=out)


def _fmt(v: float) -> str:
    return f"{v:.6g}"


def _cmd_analytic(cfg: RunConfig) -> int:
    spec = _require_spec(cfg, "analytic")
    K = spec.num_sources
    stats = analytics.aoi_statistics(spec)
    rows = []
    quantities: list[tuple[str, float]] = []
    for k in range(K):
        pm = analytics.palm_means(spec, k)
        quantities += [
            (f"aoi_mean[{k + 1}]", float(stats.mean[k])),
            (f"aoi_variance[{k + 1}]", float(stats.variance[k])),
            (f"aoi_cv[{k + 1}]", float(stats.cv[k])),
            (f"update_share[{k + 1}]", analytics.source_update_share(spec, k)),
            (f"update_rate[{k + 1}]", pm.update_rate),
            (f"delay_mean[{k + 1}]", pm.delay_mean),
            (f"peak_mean[{k + 1}]", pm.peak_mean),
        ]
    quantities += [
        ("departure_rate", analytics.departure_rate(spec)),
        ("pushout_rate", analytics.pushout_rate(spec)),
    ]
    if K == 2:
        quantities += [
            ("aoi_covariance", analytics.aoi_covariance(spec)),
            ("aoi_correlation", analytics.aoi_correlation(spec)),
        ]
    for s_row in cfg.s_grid:
        label = "(" + ",".join(f"{v:g}" for v in s_row) + ")"
        quantities.append((f"joint_laplace{label}", analytics.joint_aoi_laplace(spec, s_row)))
    rows = [(name, _fmt(value)) for name, value in quantities]
    _print_table(("quantity", "value"), rows, sys.stdout)
    if cfg.output:
        with open(cfg.output, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["quantity", "value"])
            for name, value in quantities:
                writer.writerow([name, repr(float(value))])
        print(f"wrote {cfg.output}", file=sys.stdout)
    return 0


def _report_quantities(report) -> list[tuple[str, simulator.Estimate]]:
    K = report.spec.num_sources
    out = []
    for s_row, est in report.joint_laplace.items():
        label = "(" + ",".join(f"{v:g}" for v in s_row) + ")"
        out.append((f"joint_laplace{label}", est))
    for s_row, est in report.palm_joint_laplace.items():
        label = "(" + ",".join(f"{v:g}" for v in s_row) + ")"
        out.append((f"palm_joint_laplace{label}", est))
    stats = report.statistics
    for k in range(K):
        out.append(
            (f"aoi_mean[{k + 1}]",
             simulator.Estimate(float(stats.mean[k]), float(stats.mean_stderr[k]), report.replications))
        )
        out.append(
            (f"aoi_variance[{k + 1}]",
             simulator.Estimate(float(stats.variance[k]), float(stats.variance_stderr[k]), report.replications))
        )
    if K == 2:
        out.append(
            ("aoi_correlation",
             simulator.Estimate(float(stats.correlation[0, 1]),
                                float(stats.correlation_stderr[0, 1]), report.replications))
        )
    out.append(("departure_rate", report.departure_rate))
    out.append(("pushout_rate", report.pushout_rate))
    for k in range(K):
        out.append((f"update_share[{k + 1}]", report.palm.update_share[k]))
        out.append((f"update_rate[{k + 1}]", report.palm.update_rate[k]))
        out.append((f"delay_mean[{k + 1}]", report.palm.delay_mean[k]))
        out.append((f"peak_mean[{k + 1}]", report.palm.peak_mean[k]))
    return out


def _cmd_simulate(cfg: RunConfig, workers: int, trace) -> int:
    spec = _require_spec(cfg, "simulate")
    if trace is not None:
        burn = cfg.burn_in if cfg.burn_in is not None else simulator.default_burn_in(spec)
        simulator.run_replication(
            spec, cfg.horizon, burn, cfg.seed, 0,
            cfg.s_grid or simulator.default_s_grid(spec.num_sources),
            trace_path=trace,
        )
        print(f"wrote event trace {trace}")
    report = simulator.simulate(
        spec,
        horizon=cfg.horizon,
        burn_in=cfg.burn_in,
        replications=cfg.replications,
        seed=cfg.seed,
        s_grid=cfg.s_grid or None,
        workers=workers,
    )
    print(
        f"simulated {report.replications} replications, horizon {report.horizon:g}, "
        f"burn-in {report.burn_in:g}, seed {report.seed}"
    )
    quantities = _report_quantities(report)
    rows = [(name, _fmt(est.value), _fmt(est.stderr)) for name, est in quantities]
    _print_table(("quantity", "value", "stderr"), rows, sys.stdout)
    for flag in report.flags:
        print(f"note: {flag}", file=sys.stderr)
    if cfg.output:
        with open(cfg.output, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["quantity", "value", "stderr"])
            for name, est in quantities:
                writer.writerow([name, repr(float(est.value)), repr(float(est.stderr))])
        print(f"wrote {cfg.output}")
    return 0


def _cmd_compare(cfg: RunConfig, workers: int) -> int:
    spec = _require_spec(cfg, "compare")
    rows, passed, attempts = experiments.compare_with_retry(
        spec,
        horizon=cfg.horizon,
        burn_in=cfg.burn_in,
        replications=cfg.replications,
        seed=cfg.seed,
        s_grid=cfg.s_grid or None,
        workers=workers,
    )
    table = [
        (r.quantity, _fmt(r.analytic), _fmt(r.simulated), _fmt(r.stderr), _fmt(r.z),
         "pass" if r.passed else "FAIL")
        for r in rows
    ]
    _print_table(("quantity", "analytic", "simulated", "stderr", "z", "gate"), table, sys.stdout)
    print(f"{'all quantities within' if passed else 'GATE FAILED at'} 3 stderr ({attempts} attempt(s))")
    if cfg.output:
        experiments.write_comparison_csv(rows, cfg.output)
        print(f"wrote {cfg.output}")
    if not passed:
        print("comparison gate failed", file=sys.stderr)
        return 2
    return 0


def _cmd_sweep(cfg: RunConfig) -> int:
    if cfg.sweep is None:
        raise ConfigError(["sweep: the config must define sweep settings (sweep = lambda2 | service_rate)"])
    sw = cfg.sweep
    families = sw.families or experiments.DEFAULT_FAMILIES
    if sw.kind == "lambda2":
        points = experiments.sweep_cc_vs_lambda2(
            sw.lambda1, sw.mean_service, families, sw.grid or experiments.DEFAULT_LAMBDA2_GRID
        )
        axis = "lambda2"
    else:
        points = experiments.sweep_cc_vs_service_rate(
            sw.lambda1, sw.lambda2, families, sw.grid or experiments.DEFAULT_SERVICE_RATE_GRID
        )
        axis = "service rate"
    for family in families:
        own = [p for p in points if p.family == family]
        best = min(own, key=lambda p: p.cc)
        print(f"{family}: min cc {best.cc:.6g} at {axis} {best.param:.6g} over {len(own)} points")
    if cfg.output:
        experiments.write_sweep_csv(points, cfg.output)
        print(f"wrote {cfg.output}")
    else:
        writer = csv.writer(sys.stdout)
        writer.writerow(["param", "family", "cc"])
        for p in points:
            writer.writerow([repr(float(p.param)), p.family, repr(float(p.cc))])
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise _UsageError("a subcommand is required")
        cfg = _load_config(args)
        if args.command == "analytic":
            return _cmd_analytic(cfg)
        if args.command == "simulate":
            return _cmd_simulate(cfg, args.workers, args.trace)
        if args.command == "compare":
            return _cmd_compare(cfg, args.workers)
        return _cmd_sweep(cfg)
    except _UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return 1
    except ConfigError as exc:
        print(exc, file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ValueError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def entrypoint() -> None:
    sys.exit(main())
