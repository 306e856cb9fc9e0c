"""Command-line front end.

Subcommands: ``check-spec``, ``simulate``, ``compare``, ``verify-terminal``.
Exit codes: 0 ok, 2 configuration error, 3 infeasible, 4 failed check or
certification.
"""
import argparse
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .closed_loop import (
    convergence_sector_check,
    cumulative_cost_compare,
    decrease_monitor,
    run_closed_loop,
    sector_bounds,
    stability_preconditions,
    traffic_audit,
)
from .config import load_config
from .errors import (
    CertificationFailed,
    ConfigError,
    IllConditioned,
    Infeasible,
    InternalFeasibilityLoss,
    NonConvergent,
    PreconditionViolated,
)
from .ncs import SetupVariant
from .terminal import verify_assumption2
from .token_bucket import assumption4_threshold, inter_transmission_bound
from .trace_io import gnuplot_script, write_compare_csv, write_trace_csv

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_INFEASIBLE = 3
EXIT_CHECK = 4


def _u64(text):
    value = int(text)
    if not 0 <= value < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return value


def _interval(lo, hi):
    return f"{{{lo}}}" if lo == hi else f"[{lo}, {hi}]"


def check_spec_report(config):
    """Return ``(lines, ok)`` for the parameter and assumption checks."""
    spec, N = config.spec, config.N
    q, margin_ok, margin = inter_transmission_bound(spec)
    divisible = spec.c % spec.g == 0
    lines = [
        f"config: {config.name}",
        f"bucket: b={spec.b} c={spec.c} g={spec.g} r={spec.r}",
        f"q = {q}",
        f"M = {spec.M}",
        f"N = {N}",
        f"rate bound g/c = {spec.rate_bound:g}",
    ]
    ok = True
    if divisible:
        lines.append("transmission margin: not applicable (c divisible by g)")
    else:
        lines.append(f"transmission margin qg - c = {margin}: {'pass' if margin_ok else 'FAIL'}")
        ok &= margin_ok
    lines.append(f"c/g not an integer: {'FAIL' if divisible else 'pass'}")
    ok &= not divisible
    if config.variant is SetupVariant.DIRECT_LINK:
        try:
            threshold = assumption4_threshold(spec, config.weights.psi)
        except PreconditionViolated as exc:
            lines.append(f"sigma threshold: FAIL ({exc})")
            ok = False
        else:
            passed = config.weights.sigma >= threshold
            lines.append(
                f"sigma threshold (sigma >= {threshold:.17g}): "
                f"{'pass' if passed else 'FAIL'} (sigma = {config.weights.sigma:.17g})"
            )
            ok &= passed
    else:
        lines.append("sigma threshold: not applicable (bucket-only setup)")
    sector, solve_sector = sector_bounds(spec, N, spec.M)
    lines.append(f"bucket sector (all k): {_interval(*sector)}")
    lines.append(f"bucket sector (solve instants): {_interval(*solve_sector)}")
    if config.variant is SetupVariant.DIRECT_LINK:
        checklist = stability_preconditions(config.problem())
        lines.append("stability preconditions (informational):")
        lines += [f"  {name}: {'yes' if value else 'no'}" for name, value in checklist.items()]
    lines.append(f"overall: {'pass' if ok else 'FAIL'}")
    return lines, ok


def simulate(config):
    """Run the closed loop and the trace diagnostics."""
    problem = config.problem()
    trace = run_closed_loop(problem, config.scenario)
    trace.label = config.name
    diagnostics = {
        "sector": convergence_sector_check(trace, config.spec, config.N, problem.M),
        "traffic": traffic_audit(trace, config.spec),
        "decrease": decrease_monitor(trace, config.weights, config.spec),
    }
    return trace, diagnostics


def summary_lines(config, trace, diag):
    sector, traffic, decrease = diag["sector"], diag["traffic"], diag["decrease"]
    final = trace.final_state
    return [
        f"config: {config.name}",
        f"steps: {len(trace)}",
        f"final beta: {final.beta}",
        f"final |x_p|: {np.linalg.norm(final.x_p):.6e}",
        f"cumulative cost: {trace[-1].cumulative_cost:.17g}",
        f"sector check (tail): {'pass' if sector.passed else 'FAIL'} "
        f"sector {_interval(*sector.sector)}, min beta {sector.min_beta}; "
        f"solve sector {_interval(*sector.solve_sector)}, min beta {sector.min_beta_at_solves}",
        f"traffic audit: {'pass' if traffic.passed else 'FAIL'} "
        f"{traffic.transmissions} transmissions in {traffic.steps} steps "
        f"(rate {traffic.achieved_rate:.4f}, bound {traffic.rate_bound:.4f})",
        f"decrease monitor: {'pass' if decrease.passed else 'FAIL'} "
        f"{decrease.checked} pairs checked, worst slack {decrease.worst_slack:.6e}",
    ]


def _out_dir(args, config):
    out = Path(args.out) if args.out else config.output_dir
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_run(out, config, trace, diag, emit_plot):
    csv_path = write_trace_csv(trace, out / f"{config.name}.csv")
    lines = summary_lines(config, trace, diag)
    (out / f"{config.name}_summary.txt").write_text("\n".join(lines) + "\n")
    if emit_plot:
        n, m = config.plant.state_dim, config.plant.input_dim
        (out / f"{config.name}.gp").write_text(gnuplot_script(csv_path.name, n, m, config.name))
    return lines


def _load(path, seed):
    config = load_config(path)
    if seed is not None:
        config.seed = seed
    return config


def cmd_check_spec(args):
    config = _load(args.config[0], args.seed)
    lines, ok = check_spec_report(config)
    print("\n".join(lines))
    return EXIT_OK if ok else EXIT_CHECK


def cmd_simulate(args):
    config = _load(args.config[0], args.seed)
    trace, diag = simulate(config)
    print("\n".join(_write_run(_out_dir(args, config), config, trace, diag, args.emit_plot)))
    return EXIT_OK


def _unique_labels(names):
    labels, seen = [], {}
    for name in names:
        seen[name] = seen.get(name, 0) + 1
        labels.append(name if seen[name] == 1 else f"{name}_{seen[name]}")
    return labels


def cmd_compare(args):
    configs = [_load(path, args.seed) for path in args.config]
    if len(configs) < 2:
        raise ConfigError("compare needs at least two --config files")
    skeleton = {(c.scenario.duration, tuple(s.step for s in c.scenario.setpoints)) for c in configs}
    if len(skeleton) != 1:
        raise ConfigError("compare: configs must share duration and set-point steps")
    for config, label in zip(configs, _unique_labels([c.name for c in configs])):
        config.name = label
    with ThreadPoolExecutor() as pool:
        results = list(pool.map(simulate, configs))
    out = _out_dir(args, configs[0])
    for config, (trace, diag) in zip(configs, results):
        print("\n".join(_write_run(out, config, trace, diag, args.emit_plot)))
        print()
    report = cumulative_cost_compare([(c.name, t) for c, (t, _) in zip(configs, results)])
    write_compare_csv(report.labels, report.cumulative, out / "compare.csv")
    lines = ["segment_end," + ",".join(f"cum_cost_{label}" for label in report.labels) + ",cheapest"]
    for end, best in zip(report.segment_ends, report.dominance):
        values = ",".join(f"{v:.17g}" for v in report.cumulative[:, end])
        lines.append(f"{end},{values},{best}")
    (out / "compare_report.csv").write_text("\n".join(lines) + "\n")
    print("\n".join(lines))
    return EXIT_OK


def cmd_verify_terminal(args):
    config = _load(args.config[0], args.seed)
    np.set_printoptions(precision=10, suppress=False, linewidth=120)
    try:
        ing = config.ingredients()
    except (NonConvergent, IllConditioned) as exc:
        print(f"terminal synthesis failed: {exc}")
        print("the held-input lifted pair is probably not stabilizable")
        return EXIT_CHECK
    print(f"config: {config.name}")
    print(f"q = {ing.q}")
    print(f"P =\n{ing.P}")
    print(f"K =\n{ing.K}")
    print(f"residual eigenvalue: {ing.residual_eig:.6e}")
    if ing.region.kind == "ellipsoid":
        print(f"terminal ellipsoid level: {ing.region.rho:.17g}")
    W = config.weights
    try:
        report = verify_assumption2(config.plant, W.Q, W.R, ing, seed=config.seed)
    except CertificationFailed as exc:
        print(f"certification: FAIL ({exc})")
        if exc.sample is not None:
            print(f"worst sample: {exc.sample}")
        return EXIT_CHECK
    print(f"residual bound: {report.residual_bound:.6e}")
    print(f"sampled worst margin: {report.worst_margin:.6e} over {report.sample_count} samples")
    print("certification: pass")
    return EXIT_OK


COMMANDS = {
    "check-spec": cmd_check_spec,
    "simulate": cmd_simulate,
    "compare": cmd_compare,
    "verify-terminal": cmd_verify_terminal,
}


def build_parser():
    parser = argparse.ArgumentParser(prog="tokenroll", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", action="append", required=True, metavar="PATH",
                       help="experiment config (repeat for compare)")
        p.add_argument("--out", metavar="DIR", help="output directory (default: config output.dir)")
        p.add_argument("--seed", type=_u64, help="override the config seed")
        p.add_argument("--emit-plot", action="store_true", help="also write a gnuplot script")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    if args.command != "compare" and len(args.config) > 1:
        print(f"error: {args.command} takes a single --config", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (Infeasible, InternalFeasibilityLoss) as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (CertificationFailed, NonConvergent, IllConditioned) as exc:
        print(f"check failed: {exc}", file=sys.stderr)
        return EXIT_CHECK


if __name__ == "__main__":
    sys.exit(main())
