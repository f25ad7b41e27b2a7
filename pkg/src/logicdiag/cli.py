"""Command-line interface for the diagnosis engine.

Exit codes: 0 success, 1 usage error, 2 data or validation error,
3 internal contract violation. All randomness flows from --seed (or the
LOGICDIAG_SEED environment variable when the flag is absent), and output
is byte-identical across runs for identical flags and inputs.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import __version__
from .diagnosis import Strategy, enumerate_minimal_diagnoses
from .errors import (
    ContractViolation,
    DiagnosisBoundExceeded,
    LogicDiagError,
    ValidationError,
)
from .fuzzy import ConflictGrouping, FuzzyConfig, ProbBatch
from .hierarchy import id_table, parse_hierarchy
from .pipeline import RevisionConfig, revise_batch
from .rules import assignment_from_names, compile_rules
from .simulator import SimConfig, train
from .tensorio import read_tensor, write_labels, write_stats

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_INTERNAL = 3


class _Parser(argparse.ArgumentParser):
    # usage problems exit 1, not argparse's default 2
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _load_hierarchy(path: str):
    return parse_hierarchy(Path(path).read_text())


def _resolve_seed(value: int | None) -> int:
    if value is not None:
        return value
    env = os.environ.get("LOGICDIAG_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise ValidationError(f"LOGICDIAG_SEED must be an integer, got {env!r}")
    return 0


def _emit(text: str) -> None:
    sys.stdout.write(text)
    if not text.endswith("\n"):
        sys.stdout.write("\n")


def cmd_validate_hierarchy(args) -> int:
    h = _load_hierarchy(args.hierarchy)
    if args.json:
        table = [
            {
                "id": i,
                "name": h.name(i),
                "level": h.level_of(i),
                "parent_id": -1 if h.is_root(i) else h.parent(i),
            }
            for i in range(len(h))
        ]
        _emit(json.dumps(
            {"nodes": len(h), "levels": h.num_levels, "leaves": h.num_leaves,
             "table": table},
            indent=2, sort_keys=True))
    else:
        _emit(f"nodes\t{len(h)}")
        _emit(f"levels\t{h.num_levels}")
        _emit(id_table(h))
    return EXIT_OK


def cmd_compile_rules(args) -> int:
    h = _load_hierarchy(args.hierarchy)
    k = compile_rules(h)
    if args.json:
        rules = [
            {
                "kind": r.kind.value,
                "anchor": h.name(r.anchor),
                "consequents": [h.name(c) for c in r.consequents],
            }
            for r in k.rules
        ]
        _emit(json.dumps({"rules": rules}, indent=2, sort_keys=True))
    else:
        lines = [
            f"{r.kind.value}\t{h.name(r.anchor)}\t"
            + ",".join(h.name(c) for c in r.consequents)
            for r in k.rules
        ]
        _emit("\n".join(lines))
    return EXIT_OK


def _parse_assignment(h, spec: str) -> np.ndarray:
    text = spec.strip()
    if text and set(text) <= {"0", "1"}:
        if len(text) != len(h):
            raise ValidationError(
                f"bitstring length {len(text)} does not match {len(h)} concepts"
            )
        return np.array([c == "1" for c in text])
    names = [n.strip() for n in text.split(",") if n.strip()]
    return assignment_from_names(h, names)


def cmd_diagnose(args) -> int:
    h = _load_hierarchy(args.hierarchy)
    k = compile_rules(h)
    a = _parse_assignment(h, args.assignment)
    max_card = args.max_card or h.num_levels + 2
    bound_exceeded = False
    try:
        ds = enumerate_minimal_diagnoses(k, a, max_card)
    except DiagnosisBoundExceeded:
        ds = []
        bound_exceeded = True
    name_sets = [[h.name(o) for o in d.flips] for d in ds]
    if args.json:
        _emit(json.dumps(
            {"consistent": not ds and not bound_exceeded,
             "bound_exceeded": bound_exceeded,
             "max_cardinality": max_card,
             "diagnoses": name_sets},
            indent=2, sort_keys=True))
        return EXIT_OK
    if bound_exceeded:
        _emit(f"inconsistent: no diagnosis within cardinality {max_card}")
    elif not ds:
        _emit("consistent")
    else:
        _emit(f"inconsistent: {len(ds)} minimal diagnoses")
        for names in name_sets:
            _emit(",".join(names))
    return EXIT_OK


def _revision_config(args, h) -> RevisionConfig:
    return RevisionConfig(
        binarize_threshold=args.threshold,
        strategy=Strategy(args.strategy),
        fuzzy=FuzzyConfig(q=args.q, conflict_grouping=ConflictGrouping(args.grouping)),
        max_cardinality=args.max_card or h.num_levels + 2,
        seed=_resolve_seed(args.seed),
        tau=args.tau,
    )


def _resolve_threads(value: int) -> int:
    return value if value > 0 else (os.cpu_count() or 1)


def cmd_revise(args) -> int:
    h = _load_hierarchy(args.hierarchy)
    batch = read_tensor(args.probs)
    cfg = _revision_config(args, h)
    result = revise_batch(batch, h, cfg, threads=_resolve_threads(args.threads))
    write_labels(args.out_labels, result.leaf_labels)
    stats = result.stats.to_dict()
    stats["strategy"] = cfg.strategy.value
    stats["seed"] = cfg.seed
    write_stats(args.out_stats, stats)
    summary = {k: stats[k] for k in
               ("num_rows", "consistent", "revised", "bound_exceeded", "ignored")}
    if args.json:
        _emit(json.dumps(summary, indent=2, sort_keys=True))
    else:
        _emit("\t".join(f"{k}={v}" for k, v in summary.items()))
    return EXIT_OK


def cmd_bench(args) -> int:
    h = _load_hierarchy(args.hierarchy)
    seed = _resolve_seed(args.seed)
    rng = np.random.default_rng(seed)
    probs = rng.random((args.rows, len(h)), dtype=np.float32)
    batch = ProbBatch.from_array(probs)
    cfg = _revision_config(args, h)
    rules = compile_rules(h)
    threads = _resolve_threads(args.threads)
    t0 = time.perf_counter()
    for _ in range(args.repeat):
        revise_batch(batch, h, cfg, rules=rules, threads=threads)
    elapsed = (time.perf_counter() - t0) / args.repeat
    _emit(f"rows={args.rows}\tconcepts={len(h)}\tthreads={threads}\t"
          f"seconds={elapsed:.3f}\trows_per_second={args.rows / elapsed:.0f}")
    return EXIT_OK


_SIM_FIELDS = {f.name: f for f in fields(SimConfig)}
_SIM_ALIASES = {"lambda": "lambda_"}


def _parse_sim_config(text: str, seed_override: int | None) -> SimConfig:
    values: dict = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValidationError(f"config line {lineno}: expected key=value, got {raw!r}")
        key, _, value = line.partition("=")
        key = _SIM_ALIASES.get(key.strip(), key.strip())
        value = value.strip()
        if key not in _SIM_FIELDS:
            raise ValidationError(f"config line {lineno}: unknown key {key!r}")
        values[key] = _convert_sim_value(key, value)
    if seed_override is not None:
        values["seed"] = seed_override
    elif "seed" not in values and os.environ.get("LOGICDIAG_SEED") is not None:
        values["seed"] = _resolve_seed(None)
    return SimConfig(**values)


def _convert_sim_value(key: str, value: str):
    target = _SIM_FIELDS[key].type
    if key == "strategy":
        return Strategy(value)
    if target in ("bool", bool):
        if value.lower() in ("true", "1", "yes"):
            return True
        if value.lower() in ("false", "0", "no"):
            return False
        raise ValidationError(f"{key}: expected a boolean, got {value!r}")
    if target in ("int", int):
        return int(value)
    if target in ("float", float):
        return float(value)
    return value


def cmd_simulate(args) -> int:
    text = Path(args.config).read_text() if args.config else ""
    cfg = _parse_sim_config(text, args.seed)
    report = train(cfg)
    Path(args.out).write_text(report.to_json())
    final = report.final_metrics["miou_per_level"]
    summary = {f"miou_level_{k}": round(v, 4) for k, v in sorted(final.items())}
    if args.json:
        _emit(json.dumps(summary, indent=2, sort_keys=True))
    else:
        _emit("\t".join(f"{k}={v}" for k, v in summary.items()))
    return EXIT_OK


def build_parser() -> _Parser:
    parser = _Parser(prog="logicdiag", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate-hierarchy", help="check a hierarchy file and print its id table")
    p.add_argument("--hierarchy", required=True)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_validate_hierarchy)

    p = sub.add_parser("compile-rules", help="print the ground rules of a hierarchy")
    p.add_argument("--hierarchy", required=True)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_compile_rules)

    p = sub.add_parser("diagnose", help="list minimal diagnoses for one assignment")
    p.add_argument("--hierarchy", required=True)
    p.add_argument("--assignment", required=True,
                   help="comma-separated concept names or a 0/1 bitstring")
    p.add_argument("--max-card", type=int, default=None)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_diagnose)

    def add_revision_flags(p):
        p.add_argument("--strategy", choices=[s.value for s in Strategy],
                       default=Strategy.SAMPLING.value)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--q", type=int, default=5)
        p.add_argument("--threshold", type=float, default=0.5)
        p.add_argument("--tau", type=float, default=0.95)
        p.add_argument("--max-card", type=int, default=None)
        p.add_argument("--grouping", choices=[g.value for g in ConflictGrouping],
                       default=ConflictGrouping.PER_FAMILY.value)
        p.add_argument("--threads", type=int, default=0,
                       help="worker threads; 0 = available parallelism")

    p = sub.add_parser("revise", help="repair a probability batch into leaf labels")
    p.add_argument("--hierarchy", required=True)
    p.add_argument("--probs", required=True)
    p.add_argument("--out-labels", required=True)
    p.add_argument("--out-stats", required=True)
    add_revision_flags(p)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_revise)

    p = sub.add_parser("bench", help="measure revision throughput on random data")
    p.add_argument("--hierarchy", required=True)
    p.add_argument("--rows", type=int, default=262144)
    p.add_argument("--repeat", type=int, default=1)
    add_revision_flags(p)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("simulate", help="run the synthetic training loop")
    p.add_argument("--config", default=None, help="key=value config file")
    p.add_argument("--out", required=True, help="path for the JSON report")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_simulate)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ContractViolation as exc:
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    except (LogicDiagError, FileNotFoundError, IsADirectoryError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # no stack traces for users
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
