"""Command-line workflows: design, analyze, simulate.

Exit codes: 0 continue or success, 2 reject (efficacy), 1 any error.
"""

import argparse
import hashlib
import logging
import os
import sys
import time
from dataclasses import dataclass, field

from src.adjusted_sp import compare_sp
from src.comparators import cox_wald, km_compare
from src.config import EXIT_CONTINUE, EXIT_ERROR, EXIT_REJECT, METHODS, TOTAL_ALPHA, VERSION
from src.errors import GSSurvivalError, MonitoringError
from src.gs_design import (Decision, GSDesign, MonitoringState, SpendingFunction,
                           boundaries, monitor)
from src.logger import configure_logging
from src.mpi_comm import Communicator
from src.survival_data import ingest_csv, snapshot
from src.trial_sim import read_scenario, simulate_scenario, true_survival

logger = logging.getLogger(__name__)

SIDE_ALIASES = {
    "2": "two_sided", "two_sided": "two_sided", "two-sided": "two_sided",
    "1": "one_sided_upper", "upper": "one_sided_upper", "one_sided_upper": "one_sided_upper",
    "lower": "one_sided_lower", "one_sided_lower": "one_sided_lower",
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # exit code 2 is reserved for "reject"
    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}")


def _fractions(text):
    try:
        return tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _sides(text):
    try:
        return SIDE_ALIASES[text.strip().lower()]
    except KeyError:
        raise argparse.ArgumentTypeError(
            f"sides must be one of {sorted(SIDE_ALIASES)}, got {text!r}") from None


def build_parser():
    parser = _Parser(prog="gs-survival",
                     description="Group sequential comparison of adjusted survival probabilities")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="More logging (repeatable)")
    parser.add_argument("--version", action="version", version=f"%(prog)s {VERSION}")
    commands = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    design = commands.add_parser("design", help="Compute error-spending boundaries")
    design.add_argument("--alpha", type=float, default=None, help=f"Total alpha (default {TOTAL_ALPHA})")
    design.add_argument("--sides", type=_sides, default="two_sided", help="2, upper or lower")
    design.add_argument("--spending", default="power:3", help="power:RHO, obf, pocock or table:IF/ALPHA,...")
    design.add_argument("--info-fractions", type=_fractions, required=True, help="e.g. 0.5,0.75,1")
    design.add_argument("--total-information", type=float, default=None,
                        help="Target total information used when monitoring")
    design.add_argument("--grid-points", type=int, default=None, help="Integration grid size")
    design.add_argument("--out", default=None, help="Write the design file here")

    analyze = commands.add_parser("analyze", help="Run one interim analysis against a design")
    analyze.add_argument("data", help="CSV with id,arm,entry,time,event,z1..zp")
    analyze.add_argument("design", help="Design file written by 'design'")
    analyze.add_argument("--t0", type=float, required=True, help="Fixed survival time compared")
    analyze.add_argument("--u", type=float, default=None,
                         help="Calendar time of the analysis (default: last observed time)")
    analyze.add_argument("--method", choices=METHODS, default="adjusted", help="Test statistic")
    analyze.add_argument("--state", default=None, help="Monitoring state file, read and updated")
    analyze.add_argument("--total-information", type=float, default=None,
                         help="Overrides the design's target total information")
    analyze.add_argument("--report", default=None, help="Also write the report to this file")

    simulate = commands.add_parser("simulate", help="Monte Carlo operating characteristics")
    simulate.add_argument("scenario", help="Scenario file")
    simulate.add_argument("--replicates", type=int, default=None, help="Override the scenario's count")
    simulate.add_argument("--seed", type=int, default=None, help="Override the scenario's seed")
    simulate.add_argument("--out", default=None, help="OC CSV path (stdout if omitted)")
    simulate.add_argument("--plot-data", default=None, help="Also write plot data CSV here")
    return parser


def file_sha256(path):
    digest = hashlib.sha256()
    with open(path, "rb") as handle:
        for chunk in iter(lambda: handle.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()


def cmd_design(args, out=None):
    out = out or sys.stdout
    if args.alpha is None:
        print(f"notice: --alpha not given; using {TOTAL_ALPHA}", file=sys.stderr)
        args.alpha = TOTAL_ALPHA
    sf = SpendingFunction.parse(args.spending, args.alpha, args.sides)
    extra = {"grid_points": args.grid_points} if args.grid_points else {}
    design = boundaries(sf, args.info_fractions, total_information=args.total_information, **extra)
    print(f"{design.K}-stage {design.sides} design, alpha={design.total_alpha}, "
          f"spending {sf.label}", file=out)
    print(design.table(), file=out)
    if args.out:
        design.save(args.out)
        print(f"Design written to {args.out}", file=out)
    return EXIT_CONTINUE


@dataclass(frozen=True)
class AnalysisReport:
    method: str
    t0: float
    total_information: float
    stages: tuple
    estimate: dict = field(default_factory=dict)
    provenance: dict = field(default_factory=dict)

    @property
    def decision(self):
        return self.stages[-1].decision

    def render(self):
        lines = [f"Method {self.method}, t0={self.t0:g}, target information {self.total_information:.6g}",
                 f"{'Stage':>5} {'u':>9} {'Info':>11} {'IF':>7} {'Bound':>9} {'Z':>9}  Decision"]
        for s in self.stages:
            u = f"{s.calendar_time:9.4f}" if s.calendar_time is not None else f"{'-':>9}"
            lines.append(f"{s.index:>5} {u} {s.info_level:>11.4f} {s.info_fraction:>7.4f} "
                         f"{s.critical_value:>9.4f} {s.z:>9.4f}  {s.decision.value}")
        for key, value in self.estimate.items():
            lines.append(f"{key}: {value}")
        lines.append("# provenance")
        lines.extend(f"{key}: {value}" for key, value in self.provenance.items())
        return "\n".join(lines) + "\n"


def _stage_estimate(method, snap, t0):
    if method == "adjusted":
        r = compare_sp(snap, t0)
        return r.z, r.info_level, {"S0": f"{r.s_hat[0]:.6f}", "S1": f"{r.s_hat[1]:.6f}",
                                   "difference": f"{r.diff:.6f}", "se": f"{r.se:.6f}"}
    if method == "km":
        r = km_compare(snap, t0)
        if r.zero_variance:
            raise MonitoringError(f"Kaplan-Meier variance is zero at u={snap.calendar_time}; "
                                  "no information to monitor")
        return r.z, r.info_level, {"S0": f"{r.s_hat[0]:.6f}", "S1": f"{r.s_hat[1]:.6f}",
                                   "difference": f"{r.diff:.6f}", "se": f"{r.se:.6f}"}
    r = cox_wald(snap)
    return r.z, r.info_level, {"beta_W": f"{r.beta_w_hat:.6f}", "se": f"{r.se:.6f}"}


def cmd_analyze(args, out=None):
    out = out or sys.stdout
    design = GSDesign.load(args.design)
    dataset = ingest_csv(args.data)
    u = args.u
    if u is None:
        u = dataset.study_end
        print(f"notice: --u not given; analysing at the last observed time u={u:g}", file=sys.stderr)
    total = args.total_information or design.total_information

    if args.state and os.path.exists(args.state):
        state = MonitoringState.load(args.state, design)
        if args.total_information and state.total_information != args.total_information:
            raise MonitoringError("--total-information differs from the value in the state file")
        for key, value in (("method", args.method), ("t0", repr(float(args.t0)))):
            if key in state.meta and state.meta[key] != value:
                raise MonitoringError(
                    f"state file was recorded with {key}={state.meta[key]}, not {value}")
    else:
        state = MonitoringState(design, total)
    state.meta.update(method=args.method, t0=repr(float(args.t0)))

    if state.concluded:
        last = state.stages[-1]
        raise MonitoringError(f"monitoring already concluded ({last.decision.value} at stage "
                              f"{last.index}); no further stages are evaluated")
    last_u = state.stages[-1].calendar_time if state.stages else None
    if last_u is not None and not u > last_u:
        raise MonitoringError(f"analysis time u={u} does not follow the previous stage at u={last_u}")

    z, info, estimate = _stage_estimate(args.method, snapshot(dataset, u), args.t0)
    decision = monitor(state, info, z, u)
    if args.state:
        state.save(args.state)

    provenance = {
        "data_file": args.data, "data_sha256": file_sha256(args.data),
        "design_file": args.design, "design_sha256": file_sha256(args.design),
        "options": f"method={args.method} t0={args.t0:g} u={u:g}",
        "version": VERSION,
    }
    report = AnalysisReport(args.method, float(args.t0), state.total_information,
                            tuple(state.stages), estimate, provenance)
    text = report.render()
    out.write(text)
    if args.report:
        with open(args.report, "w", encoding="utf-8") as handle:
            handle.write(text)
    print(f"Decision: {decision.value}", file=out)
    return EXIT_REJECT if decision == Decision.REJECT else EXIT_CONTINUE


def cmd_simulate(args, out=None, comm=None):
    out = out or sys.stdout
    comm = comm or Communicator()
    scenario = read_scenario(args.scenario)
    start_time = time.time()
    result = simulate_scenario(scenario, replicates=args.replicates, seed=args.seed, comm=comm)
    end_time = time.time()

    if comm.is_root:
        if args.out:
            result.oc.to_csv(args.out)
        else:
            out.write(result.oc.to_csv())
        if args.plot_data:
            result.oc.to_csv(args.plot_data, plot=True)
        logger.info("Scenario %s: beta_W=%.5f, analysis times %s, %d replicates on %d ranks "
                    "in %.2f seconds", scenario.name, result.beta_w,
                    ", ".join(f"{u:.3f}" for u in result.schedule.calendar_times),
                    result.oc.replicates, comm.size, end_time - start_time)
        logger.info("True survival at tau=%g: S0=%.4f, S1=%.4f, difference %.4f",
                    scenario.tau, true_survival(result.scenario, 0), true_survival(result.scenario, 1),
                    result.oc.true_difference)
    comm.barrier()
    return EXIT_CONTINUE


COMMANDS = {"design": cmd_design, "analyze": cmd_analyze, "simulate": cmd_simulate}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(exc, file=sys.stderr)
        return EXIT_ERROR

    comm = Communicator() if args.command == "simulate" else None
    configure_logging(args.verbose, comm.rank if comm else 0)
    try:
        if comm is not None:
            return cmd_simulate(args, comm=comm)
        return COMMANDS[args.command](args)
    except (GSSurvivalError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
