"""Command-line entry point.

Every subcommand reads a JSON parameter document, writes its outputs and a
``manifest.json`` into ``--out``, and exits with 0 on success, 1 when a
validation criterion fails, 2 on configuration errors and 3 on numerical
failures.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from .departure import DepartureAnalysis, MarkingError, build_mmap, departure_rates
from .model import ModelError, ModelParams
from .rg import CapExhaustedError, SingularBlockError, compute_rg_negative, compute_rg_positive
from .simulator import SimConfig, SimulationError, simulate, write_mark_log
from .sojourn import CONVENTIONS, sojourn_summary
from .stability import drift_table, is_stable
from .stationary import StationaryError, mean_queue_length_A, mean_queue_length_B, solve_stationary
from .validation import analytic_checks, simulation_checks, trend_checks

EXIT_OK, EXIT_CRITERION, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3


class ConfigError(ValueError):
    pass


def parse_grid(text: str) -> list[float]:
    """``a:b:step`` inclusive of ``b`` (up to rounding), or a comma list."""
    try:
        if ":" in text:
            a, b, step = (float(x) for x in text.split(":"))
            if step <= 0 or b < a:
                raise ValueError
            count = int(np.floor((b - a) / step + 1e-9)) + 1
            return [round(a + k * step, 12) for k in range(count)]
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise ConfigError(f"bad grid {text!r}; expected a:b:step") from None


def _dump_json(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _write_csv(path: Path, header: list[str], rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="matchq", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(name, help_text):
        sp = sub.add_parser(name, help=help_text)
        sp.add_argument("--params", required=True, help="JSON parameter document")
        sp.add_argument("--out", default="matchq-out", help="output directory")
        sp.add_argument("--tol", type=float, default=1e-8, help="numerical tolerance")
        sp.add_argument("--kneg", type=int, help="number of negative levels kept")
        sp.add_argument("--kpos", type=int, help="number of positive levels kept")
        return sp

    sp = common("stability", "drift table per level")
    sp.add_argument("--levels", type=int, default=10)
    sp = common("analyze", "stationary distribution and mean queue lengths")
    sp.add_argument("--dump-rg", action="store_true", help="write R/G residuals per level")
    sp = common("sojourn", "mean sojourn time estimates")
    sp.add_argument("--convention", choices=CONVENTIONS, default="pasta")
    sp = common("departures", "departure rates and mark probabilities")
    sp.add_argument("--sequence", help="comma-separated marks, oldest first")
    sp.add_argument("--direction", choices=("forward", "backward"), default="forward")
    for name, help_text in (("simulate", "discrete-event simulation"),
                            ("validate", "analytic results against oracles and simulation")):
        sp = common(name, help_text)
        sp.add_argument("--seed", type=int, default=2026)
        sp.add_argument("--events", type=int, default=1_250_000)
        sp.add_argument("--reps", type=int, default=10)
        sp.add_argument("--warmup", type=float, default=0.2)
        if name == "simulate":
            sp.add_argument("--mark-log", action="store_true", help="write the departure mark log")
    sp = common("sweep", "E_Q1 and E_Q2 over impatience-rate grids")
    sp.add_argument("--theta1-grid")
    sp.add_argument("--theta2-grid")
    return parser


def _window(args) -> dict:
    if (args.kneg is None) != (args.kpos is None):
        raise ConfigError("--kneg and --kpos must be given together")
    if args.kneg is not None and (args.kneg < 2 or args.kpos < 2):
        raise ConfigError("--kneg and --kpos must be at least 2")
    return {"k_neg": args.kneg, "k_pos": args.kpos}


def _sim_config(args, p: ModelParams, keep_log: bool = False) -> SimConfig:
    try:
        return SimConfig(p, events=args.events, warmup_fraction=args.warmup, seed=args.seed,
                         replications=args.reps, keep_log=keep_log)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def cmd_stability(args, p, out: Path) -> int:
    report = is_stable(p)
    rows = [[r.level, repr(r.up_rate), repr(r.down_rate)] for r in drift_table(p, args.levels)]
    _write_csv(out / "drift.csv", ["level", "up", "down"], rows)
    _dump_json(out / "stability.json", {"stable": report.stable, "k_star": report.k_star,
                                        "l_star": report.l_star})
    print("level,up,down")
    for row in rows:
        print(",".join(str(x) for x in row))
    return EXIT_OK


def cmd_analyze(args, p, out: Path) -> int:
    dist = solve_stationary(p, **_window(args))
    doc = {"E_Q1": mean_queue_length_A(dist), "E_Q2": mean_queue_length_B(dist),
           "tail_mass": dist.tail_mass_bound, "window": list(dist.window)}
    _dump_json(out / "analysis.json", doc)
    dist.write_csv(out / "pi.csv")
    if args.dump_rg:
        rows = []
        for rg in (compute_rg_negative(p), compute_rg_positive(p)):
            for level in rg.levels():
                rows.append([rg.axis, level, repr(rg.residual_R.get(level, float("nan"))),
                             repr(rg.residual_G.get(level, float("nan")))])
        _write_csv(out / "rg_residuals.csv", ["axis", "level", "residual_R", "residual_G"], rows)
    print(json.dumps(doc, sort_keys=True))
    return EXIT_OK


def cmd_sojourn(args, p, out: Path) -> int:
    dist = solve_stationary(p, **_window(args))
    doc = sojourn_summary(dist, args.convention)
    _dump_json(out / "sojourn.json", doc)
    print(json.dumps(doc, sort_keys=True))
    return EXIT_OK


def cmd_departures(args, p, out: Path) -> int:
    dist = solve_stationary(p, **_window(args))
    mmap = build_mmap(p, dist.k_neg, dist.k_pos)
    analysis = DepartureAnalysis(dist, mmap)
    if args.sequence:
        try:
            value = analysis.sequence_probability(args.sequence, args.direction)
        except MarkingError as exc:
            raise ConfigError(str(exc)) from None
        _dump_json(out / "sequence.json", {"sequence": args.sequence.split(","),
                                           "direction": args.direction, "probability": value})
        print(repr(value))
        return EXIT_OK
    doc = {"rates": departure_rates(dist, mmap), **analysis.mark_probabilities()}
    _dump_json(out / "departures.json", doc)
    print(json.dumps(doc, sort_keys=True))
    return EXIT_OK


def cmd_simulate(args, p, out: Path) -> int:
    result = simulate(_sim_config(args, p, keep_log=args.mark_log))
    doc = result.to_dict()
    _dump_json(out / "simulation.json", doc)
    if args.mark_log:
        write_mark_log(out / "mark_log.csv", result)
    print(json.dumps({k: doc[k] for k in ("mean_Q1", "mean_Q2", "mean_sojourn_A")}, sort_keys=True))
    return EXIT_OK


def cmd_validate(args, p, out: Path) -> int:
    checks = analytic_checks(p, args.tol) + trend_checks(p)
    checks += simulation_checks(p, _sim_config(args, p))
    header = ["criterion", "quantity", "analytic", "reference", "tolerance", "result"]
    _write_csv(out / "validation.csv", header, [c.row() for c in checks])
    width = max(len(c.criterion) + len(c.quantity) for c in checks) + 3
    for c in checks:
        label = f"{c.criterion}: {c.quantity}"
        print(f"{label:<{width}} {'pass' if c.passed else 'FAIL'}  "
              f"analytic={c.analytic:.10g} reference={c.reference:.10g} tol={c.tolerance:.3g}")
    failed = [c for c in checks if not c.passed]
    print(f"{len(checks) - len(failed)}/{len(checks)} checks passed")
    return EXIT_CRITERION if failed else EXIT_OK


def cmd_sweep(args, p, out: Path) -> int:
    g1 = parse_grid(args.theta1_grid) if args.theta1_grid else [p.theta1]
    g2 = parse_grid(args.theta2_grid) if args.theta2_grid else [p.theta2]
    rows = []
    for t1 in g1:
        for t2 in g2:
            try:
                q = p.replace(theta1=t1, theta2=t2)
            except ModelError as exc:
                raise ConfigError(str(exc)) from None
            dist = solve_stationary(q)
            rows.append([repr(t1), repr(t2), repr(mean_queue_length_A(dist)),
                         repr(mean_queue_length_B(dist))])
    _write_csv(out / "sweep.csv", ["theta1", "theta2", "E_Q1", "E_Q2"], rows)
    print("theta1,theta2,E_Q1,E_Q2")
    for row in rows:
        print(",".join(row))
    return EXIT_OK


COMMANDS = {
    "stability": cmd_stability,
    "analyze": cmd_analyze,
    "sojourn": cmd_sojourn,
    "departures": cmd_departures,
    "simulate": cmd_simulate,
    "validate": cmd_validate,
    "sweep": cmd_sweep,
}


def _manifest(args, p: ModelParams) -> dict:
    doc = {
        "command": args.command,
        "params_path": str(args.params),
        "params": p.to_dict(),
        "output_dir": str(args.out),
        "tolerances": {"tol": args.tol},
        "window": {"kneg": args.kneg, "kpos": args.kpos},
    }
    for key in ("seed", "events", "reps", "warmup", "convention", "sequence", "direction",
                "theta1_grid", "theta2_grid", "dump_rg", "levels"):
        if hasattr(args, key):
            doc[key] = getattr(args, key)
    return doc


def _error(kind: str, message: str, out: Path | None, code: int) -> int:
    doc = {"error": kind, "message": message, "exit_code": code}
    print(json.dumps(doc, sort_keys=True), file=sys.stderr)
    if out is not None:
        try:
            _dump_json(out / "error.json", doc)
        except OSError:
            pass
    return code


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    out = Path(args.out)
    try:
        try:
            out.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise ConfigError(f"cannot create output directory: {exc}") from None
        try:
            p = ModelParams.from_json(args.params)
        except FileNotFoundError:
            raise ConfigError(f"parameter file {args.params} not found") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"parameter file is not valid JSON: {exc}") from None
        _dump_json(out / "manifest.json", _manifest(args, p))
        return COMMANDS[args.command](args, p, out)
    except (ConfigError, ModelError, MarkingError) as exc:
        return _error("config", str(exc), out if out.is_dir() else None, EXIT_CONFIG)
    except (SingularBlockError, CapExhaustedError, StationaryError, SimulationError,
            ArithmeticError, np.linalg.LinAlgError) as exc:
        return _error("numerical", str(exc), out if out.is_dir() else None, EXIT_NUMERIC)


if __name__ == "__main__":
    sys.exit(main())
