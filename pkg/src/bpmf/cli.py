"""Command-line interface: ``bpmf infer``, ``bpmf ofdm-ber`` and ``bpmf verify``.

Exit codes:

    0  success (inference converged, sweep finished, all checks passed)
    1  invalid input (unreadable or malformed graph/scenario file, bad flag values)
    2  inference stopped at the iteration limit or diverged
    3  contradiction: hard constraints leave no configuration with positive mass
    4  refused: the convergent schedule does not apply and --loopy was not given,
       or no schedule applies; the witness is printed
    5  at least one verification check failed
"""
from __future__ import annotations

import argparse
import json
import os
import sys

EXIT_OK, EXIT_INPUT, EXIT_MAXITER, EXIT_CONTRADICTION, EXIT_REFUSED, EXIT_CHECKS = 0, 1, 2, 3, 4, 5


def _seed(text: str) -> int:
    try:
        v = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit value")
    return v


def _positive_int(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


class _Parser(argparse.ArgumentParser):
    # argparse's own status 2 would read as "iteration limit"
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="bpmf", description=__doc__.split("\n")[0],
                                formatter_class=argparse.RawDescriptionHelpFormatter,
                                epilog=__doc__.split("\n", 2)[2])
    sub = p.add_subparsers(dest="command", required=True)

    inf = sub.add_parser("infer", help="run BP/MF message passing on a JSON graph document")
    inf.add_argument("--config", required=True, help="graph document (JSON)")
    inf.add_argument("--out", help="directory for beliefs.json and trace.csv (default: beliefs to stdout)")
    inf.add_argument("--loopy", action="store_true",
                     help="allow the damped loopy schedule when the BP part has cycles")
    inf.add_argument("--max-iters", type=_positive_int, help="override the document's iteration limit")
    inf.add_argument("--seed", type=_seed, default=0,
                     help="accepted for uniformity; inference is deterministic and does not use it")

    ber = sub.add_parser("ofdm-ber", help="Monte-Carlo BER sweep of the OFDM receivers")
    src = ber.add_mutually_exclusive_group()
    src.add_argument("--config", help="scenario file (JSON)")
    src.add_argument("--scenario", default="desk", help="bundled scenario: desk, table1_m25, table1_m13")
    ber.add_argument("--receivers", default="bpmf,bp_gauss,perfect_csi",
                     help="comma-separated subset of bpmf, bp_gauss, perfect_csi")
    ber.add_argument("--trials", type=_positive_int, help="trials per SNR point (default: scenario bit budget)")
    ber.add_argument("--snr", help="comma-separated Eb/N0 grid in dB (overrides the scenario)")
    ber.add_argument("--seed", type=_seed, help="master seed (default: the scenario's)")
    ber.add_argument("--jobs", type=_positive_int, default=1, help="worker processes")
    ber.add_argument("--out", help="CSV output path (default: stdout)")

    ver = sub.add_parser("verify", help="run the oracle-backed check suite")
    ver.add_argument("--full", action="store_true", help="include the desk-scale BER experiment (minutes)")
    ver.add_argument("--jobs", type=_positive_int, default=1, help="worker processes for Monte-Carlo checks")
    ver.add_argument("--out", help="also write the report to this file")
    return p


# ---------------------------------------------------------------- infer


def cmd_infer(args) -> int:
    from .factor_graph import check_algorithm1_applicable, mf_condition_holds
    from .graph_io import GraphSpecError, beliefs_to_json, load_graph_spec
    from .message_passing import UpdateConfig
    from .scheduler import StopRule, run_algorithm1, run_loopy
    from .tabular import ContradictionError

    try:
        spec = load_graph_spec(args.config)
    except GraphSpecError as exc:
        print(f"error: {args.config}: {exc}", file=sys.stderr)
        return EXIT_INPUT
    g, part = spec.graph, spec.part
    stop = spec.stop
    if args.max_iters:
        stop = StopRule(args.max_iters, stop.rel_f_tol, stop.delta_tol)
    app = check_algorithm1_applicable(g, part)
    try:
        if app:
            schedule = "convergent"
            state, trace = run_algorithm1(g, part, stop=stop, em=spec.em)
        elif args.loopy and mf_condition_holds(g, part):
            schedule = "loopy"
            state, trace = run_loopy(g, part, UpdateConfig(damping=spec.damping), stop, spec.em, spec.n_inner)
        else:
            print(f"refused: {app.describe(g)}", file=sys.stderr)
            if app.reason == "bp_part_has_cycle":
                print("hint: pass --loopy to run the damped loopy schedule", file=sys.stderr)
            return EXIT_REFUSED
    except ContradictionError as exc:
        print(f"contradiction: {exc}", file=sys.stderr)
        return EXIT_CONTRADICTION
    beliefs = beliefs_to_json(g, state)
    F = trace.rows[-1]["free_energy"]
    result = {"schedule": schedule, "status": trace.status, "iterations": trace.iterations,
              "free_energy": F if F == F and abs(F) != float("inf") else str(F), "beliefs": beliefs}
    text = json.dumps(result, indent=2, sort_keys=False) + "\n"
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "beliefs.json"), "w") as fh:
            fh.write(text)
        with open(os.path.join(args.out, "trace.csv"), "w", newline="") as fh:
            trace.to_csv(fh)
    else:
        sys.stdout.write(text)
    print(f"{schedule} schedule: {trace.status} after {trace.iterations} iterations, "
          f"free energy {F:.17g}", file=sys.stderr)
    return EXIT_OK if trace.status == "converged" else EXIT_MAXITER


# ---------------------------------------------------------------- ofdm-ber


def cmd_ofdm_ber(args) -> int:
    from .ofdm.receivers import RECEIVERS
    from .ofdm.scenario import bundled_scenario, load_scenario
    from .ofdm.simulate import ber_csv, ber_sweep

    try:
        if args.config:
            sc = load_scenario(args.config)
        else:
            sc = bundled_scenario(args.scenario)
        if args.snr:
            sc = sc.replace(ebn0_db=tuple(float(s) for s in args.snr.split(",")))
    except FileNotFoundError as exc:
        print(f"error: cannot read scenario: {exc.filename}", file=sys.stderr)
        return EXIT_INPUT
    except (ValueError, TypeError, json.JSONDecodeError) as exc:
        print(f"error: invalid scenario: {exc}", file=sys.stderr)
        return EXIT_INPUT
    receivers = tuple(r.strip() for r in args.receivers.split(",") if r.strip())
    bad = [r for r in receivers if r not in RECEIVERS]
    if bad or not receivers:
        print(f"error: unknown receivers {bad}; choose from {', '.join(RECEIVERS)}", file=sys.stderr)
        return EXIT_INPUT
    points = ber_sweep(sc, receivers, trials=args.trials, master_seed=args.seed, jobs=args.jobs)
    text = ber_csv(points)
    if args.out:
        with open(args.out, "w", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    contra = sum(p.contradictions for p in points)
    if contra:
        print(f"warning: {contra} receiver runs hit a contradiction; their bits were counted as all-zero decisions",
              file=sys.stderr)
    return EXIT_OK


# ---------------------------------------------------------------- verify


def cmd_verify(args) -> int:
    from .verify import report, run_checks

    results = run_checks(full=args.full, jobs=args.jobs, out=sys.stderr)
    text = report(results)
    sys.stdout.write(text)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    return EXIT_OK if all(r.passed for r in results) else EXIT_CHECKS


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    handler = {"infer": cmd_infer, "ofdm-ber": cmd_ofdm_ber, "verify": cmd_verify}[args.command]
    return handler(args)


if __name__ == "__main__":
    sys.exit(main())
