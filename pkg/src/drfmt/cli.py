"""Command-line front end for solving, verifying and benchmarking.

Exit codes are the contract: 0 on success, 1 for unreadable or invalid
input (and for failed verification checks), 2 for numerical failures
inside a solve, 3 for a breached structural guarantee. Machine-readable
output is JSON (CSV for bench records); a plain table is rendered
instead when stdout is a terminal and ``--json`` is absent. The
``DRFMT_SEED`` environment variable overrides built-in default seeds.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time

import numpy as np

from . import bench
from .baseline import MnwConfig, social_welfare, solve_mnw_pwl
from .fairness import (
    ENVY_TOL,
    fairness_report,
    normalized_max_envy,
    report_to_json_dict,
    strategyproofness_fuzz,
)
from .lp import LpNumericalError
from .mechanism import (
    InvariantError,
    floor_units,
    result_to_json,
    run,
    run_alternative_variant,
)
from .model import (
    normalize,
    parse_instance,
    serialize_instance,
    utility,
    validate,
)

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_NUMERIC = 2
EXIT_INVARIANT = 3

DEFAULT_CHECKS = "ef,po,si"
DEFAULT_FUZZ_TRIALS = 100


class _Parser(argparse.ArgumentParser):
    """argparse variant whose usage errors exit with the input code."""

    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(EXIT_INPUT)


def _default_seed() -> int:
    value = os.environ.get("DRFMT_SEED")
    if value is None:
        return 0
    try:
        return int(value)
    except ValueError:
        raise ValueError(f"DRFMT_SEED must be an integer, got {value!r}")


def _read_text(path: str) -> str:
    if path == "-":
        return sys.stdin.read()
    with open(path, encoding="utf-8") as fh:
        return fh.read()


def _emit(args, text: str) -> None:
    if not text.endswith("\n"):
        text += "\n"
    out = getattr(args, "output", None)
    if out and out != "-":
        with open(out, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _machine_output(args) -> bool:
    if getattr(args, "json", False) or getattr(args, "output", None):
        return True
    return not sys.stdout.isatty()


def _load_instance(path: str):
    raw = parse_instance(_read_text(path))
    problems = validate(raw)
    if problems:
        raise ValueError("invalid instance: " + "; ".join(problems))
    return raw


def _table(header, rows) -> str:
    cells = [tuple(str(c) for c in row) for row in rows]
    widths = [max(len(h), max((len(r[k]) for r in cells), default=0))
              for k, h in enumerate(header)]
    lines = ["  ".join(h.ljust(widths[k]) for k, h in enumerate(header))]
    for r in cells:
        lines.append("  ".join(c.ljust(widths[k]) for k, c in enumerate(r)))
    return "\n".join(lines)


def _structure(text: str):
    try:
        parts = tuple(int(p) for p in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(
            f"structure must be comma-separated integers, got {text!r}")
    if not parts or min(parts) < 1:
        raise argparse.ArgumentTypeError(
            "structure sizes must be positive")
    return parts


# ---------------------------------------------------------------- commands


def cmd_validate(args) -> int:
    try:
        raw = parse_instance(_read_text(args.instance))
        problems = validate(raw)
    except ValueError as exc:
        problems = [str(exc)]
    doc = {"valid": not problems, "problems": problems}
    if _machine_output(args):
        _emit(args, json.dumps(doc, indent=2, sort_keys=True))
    elif problems:
        _emit(args, _table(("problem",), [(p,) for p in problems]))
    else:
        _emit(args, "instance is valid")
    return EXIT_OK if not problems else EXIT_INPUT


def cmd_solve(args) -> int:
    raw = _load_instance(args.instance)
    inst = normalize(raw)
    if args.variant in ("drfmt", "alt"):
        engine = run if args.variant == "drfmt" else run_alternative_variant
        result = engine(inst, trace=args.trace)
        units = floor_units(raw, result.fractional.x) if args.rounded \
            else None
        _emit(args, result_to_json(result, inst, units=units,
                                   trace=args.trace))
        return EXIT_OK

    alloc = solve_mnw_pwl(inst)
    matrix = floor_units(raw, alloc.x) if args.rounded else alloc.x
    table = {}
    for i, name in enumerate(inst.agent_names):
        row = {}
        for r, rid in enumerate(inst.resource_ids):
            v = matrix[i, r]
            if abs(v) > 1e-12:
                row[rid] = int(v) if args.rounded else float(v)
        table[name] = row
    doc = {
        "allocation_kind": "units" if args.rounded else "fractional",
        "utilities": {name: utility(inst, i, alloc.x)
                      for i, name in enumerate(inst.agent_names)},
        "allocation": table,
    }
    _emit(args, json.dumps(doc, indent=2, sort_keys=True))
    return EXIT_OK


def _allocation_matrix(doc, inst) -> np.ndarray:
    """A fractional matrix from either a solve output or a bare mapping."""
    if not isinstance(doc, dict):
        raise ValueError("allocation file must hold a JSON object")
    kind = "fractional"
    table = doc
    if "allocation" in doc:
        table = doc["allocation"]
        kind = doc.get("allocation_kind", "fractional")
    if kind not in ("fractional", "units"):
        raise ValueError(f"unknown allocation_kind {kind!r}")
    agent_index = {name: i for i, name in enumerate(inst.agent_names)}
    x = np.zeros((inst.n, inst.num_resources))
    for name, row in table.items():
        if name not in agent_index:
            raise ValueError(f"allocation names unknown agent {name!r}")
        if not isinstance(row, dict):
            raise ValueError(f"allocation row for {name!r} must be an "
                             f"object")
        for rid, v in row.items():
            if rid not in inst.resource_index:
                raise ValueError(f"allocation names unknown resource "
                                 f"{rid!r}")
            x[agent_index[name], inst.resource_index[rid]] = float(v)
    if kind == "units":
        totals = inst.meta_unit_totals[inst.resource_meta].astype(float)
        x = x / totals[None, :]
    return x


def cmd_verify(args) -> int:
    raw = _load_instance(args.instance)
    inst = normalize(raw)
    checks = tuple(c.strip() for c in args.checks.split(",") if c.strip())
    if not checks:
        raise ValueError("no checks requested")
    allocation = None
    if args.allocation is not None:
        allocation = _allocation_matrix(
            json.loads(_read_text(args.allocation)), inst)
    report = fairness_report(raw, checks, allocation=allocation)

    passed: dict = {}
    if "ef" in checks:
        passed["ef"] = bool(report.envy.max() <= ENVY_TOL)
    if "po" in checks:
        passed["po"] = bool(report.pareto.is_pareto)
    if "si" in checks:
        if report.sharing_incentive is None:
            passed["si"] = "skipped (instance has no contributions)"
        else:
            passed["si"] = all(v["ok"]
                               for v in report.sharing_incentive.values())
    if "prop" in checks:
        passed["prop"] = all(v["ok"]
                             for v in report.proportionality.values())
    ok = not any(v is False for v in passed.values())

    doc = report_to_json_dict(report, inst)
    doc["passed"] = passed
    doc["ok"] = ok
    if _machine_output(args):
        _emit(args, json.dumps(doc, indent=2, sort_keys=True))
    else:
        rows = [(check, verdict if isinstance(verdict, str)
                 else ("pass" if verdict else "FAIL"))
                for check, verdict in passed.items()]
        _emit(args, _table(("check", "verdict"), rows))
    return EXIT_OK if ok else EXIT_INPUT


def cmd_fuzz(args) -> int:
    raw = _load_instance(args.instance)
    inst = normalize(raw)
    if not 0 <= args.agent < inst.n:
        raise ValueError(f"agent index {args.agent} out of range for "
                         f"{inst.n} agents")
    seed = args.seed if args.seed is not None else _default_seed()
    findings = strategyproofness_fuzz(raw, args.agent, args.trials, seed)
    doc = {
        "agent": inst.agent_names[args.agent],
        "trials": args.trials,
        "seed": seed,
        "violations": findings["violations"],
        "max_gain": findings["max_gain"],
    }
    if _machine_output(args):
        _emit(args, json.dumps(doc, indent=2, sort_keys=True))
    else:
        _emit(args, f"{len(findings['violations'])} violations in "
                    f"{args.trials} trials (max gain "
                    f"{findings['max_gain']:.3g})")
    return EXIT_OK


def cmd_gen(args) -> int:
    seed = args.seed if args.seed is not None else _default_seed()
    raw = bench.generate_instance(seed, args.n, args.structure)
    _emit(args, serialize_instance(raw))
    return EXIT_OK


_BENCH_KEYS = {"meta_structure", "agent_counts", "trials_per_count",
               "seed", "mechanisms", "supply_mult", "mnw_grid_points",
               "oracle_unit_cap"}


def _bench_config(doc) -> bench.BenchConfig:
    if not isinstance(doc, dict):
        raise ValueError("bench config must be a JSON object")
    unknown = set(doc) - _BENCH_KEYS
    if unknown:
        raise ValueError(f"unknown bench config keys: {sorted(unknown)}")
    kwargs = {k: tuple(v) if isinstance(v, list) else v
              for k, v in doc.items()}
    kwargs.setdefault("seed", _default_seed())
    return bench.BenchConfig(**kwargs)


def cmd_bench(args) -> int:
    cfg = _bench_config(json.loads(_read_text(args.config)))
    records = list(bench.run_trials(cfg))
    csv_text = bench.to_csv(records)
    if args.output and args.output != "-":
        with open(args.output, "w", encoding="utf-8") as fh:
            fh.write(csv_text)
        text, _ = bench.summarize(records)
        sys.stdout.write(text)
    elif sys.stdout.isatty() and not args.json:
        text, _ = bench.summarize(records)
        sys.stdout.write(text)
    else:
        sys.stdout.write(csv_text)
    return EXIT_OK


def cmd_compare(args) -> int:
    raw = _load_instance(args.instance)
    inst = normalize(raw)
    totals = inst.meta_unit_totals[inst.resource_meta].astype(float)
    metrics = {}
    for name in ("drfmt", "mnw-pwl"):
        t0 = time.perf_counter()
        if name == "drfmt":
            result = run(inst)
            x = result.fractional.x
            rounds = len(result.rounds)
        else:
            x = solve_mnw_pwl(inst, MnwConfig()).x
            rounds = None
        wall_ms = (time.perf_counter() - t0) * 1e3
        frac = floor_units(raw, x) / totals[None, :]
        metrics[name] = {
            "wall_ms": round(wall_ms, 3),
            "rounds": rounds,
            "social_welfare": social_welfare(inst, frac),
            "norm_max_envy": float(normalized_max_envy(inst, frac)),
        }
    doc = {"mechanisms": metrics}
    if _machine_output(args):
        _emit(args, json.dumps(doc, indent=2, sort_keys=True))
    else:
        header = ("mechanism", "wall_ms", "rounds", "social_welfare",
                  "norm_max_envy")
        rows = [(name, m["wall_ms"],
                 "-" if m["rounds"] is None else m["rounds"],
                 f"{m['social_welfare']:.6g}", f"{m['norm_max_envy']:.3g}")
                for name, m in metrics.items()]
        _emit(args, _table(header, rows))
    return EXIT_OK


# ------------------------------------------------------------------ wiring


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="drfmt", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="subcommand", required=True,
                                parser_class=_Parser)

    def common(p):
        p.add_argument("--json", action="store_true",
                       help="force JSON output even on a terminal")
        p.add_argument("-o", "--output", default=None,
                       help="write output to this file instead of stdout")

    p = sub.add_parser("validate", help="parse and validate an instance")
    p.add_argument("instance", help="instance file, or - for stdin")
    common(p)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("solve", help="run the allocation engine")
    p.add_argument("instance")
    p.add_argument("--rounded", action="store_true",
                   help="emit integer units instead of fractional shares")
    p.add_argument("--trace", action="store_true",
                   help="include per-round shadow prices and witnesses")
    p.add_argument("--variant", choices=("drfmt", "alt", "mnw-pwl"),
                   default="drfmt")
    common(p)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("verify", help="check fairness properties")
    p.add_argument("instance")
    p.add_argument("allocation", nargs="?", default=None,
                   help="allocation JSON to judge (default: solve afresh)")
    p.add_argument("--checks", default=DEFAULT_CHECKS,
                   help="comma list from ef,po,si,prop "
                        f"(default {DEFAULT_CHECKS})")
    common(p)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("fuzz", help="hunt for profitable misreports")
    p.add_argument("instance")
    p.add_argument("--agent", type=int, default=0,
                   help="index of the agent to perturb")
    p.add_argument("--trials", type=int, default=DEFAULT_FUZZ_TRIALS)
    p.add_argument("--seed", type=int, default=None)
    common(p)
    p.set_defaults(func=cmd_fuzz)

    p = sub.add_parser("gen", help="emit a random instance")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--structure", type=_structure, default=(1, 2, 3, 4),
                   help="meta-type sizes, e.g. 1,2,3")
    common(p)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("bench", help="run the benchmark sweep")
    p.add_argument("config", help="JSON config file, or - for stdin")
    common(p)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("compare", help="one-instance mechanism comparison")
    p.add_argument("instance")
    common(p)
    p.set_defaults(func=cmd_compare)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except InvariantError as exc:
        sys.stderr.write(f"invariant breach: {exc}\n")
        return EXIT_INVARIANT
    except LpNumericalError as exc:
        sys.stderr.write(f"numerical failure: {exc}\n")
        return EXIT_NUMERIC
    except (ValueError, OSError, KeyError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_INPUT
    except RuntimeError as exc:
        sys.stderr.write(f"numerical failure: {exc}\n")
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
