"""Command line interface.

Exit codes: 0 success (all integrity checks pass; optimisation failures
alone only warn), 1 integrity failure or an uncaught mutation, 2 usage,
parse or schema errors.
"""

from __future__ import annotations

import argparse
import json
import sys

from . import __version__
from .checks import (
    CATEGORY_NAMES,
    ModelSchema,
    audit_root_ref,
    generate_checks,
    inject_audit_sheet,
    load_schema,
    run_checks,
)
from .detect import (
    SurveyCounts,
    analyze_workbook,
    compute_metrics,
    count_unique_formulae,
    detect_tests,
    published_consistency,
    render_survey_report,
)
from .errors import AuditKitError
from .evaluate import IterationPolicy, evaluate
from .fixture import generate_reference_model
from .graph import build_graph, to_dot
from .mutate import load_mutations, run_campaign, standard_mutations
from .workbook import CellError, load_workbook, parse_a1, save_workbook


def _policy(args) -> IterationPolicy:
    return IterationPolicy(
        max_iterations=getattr(args, "max_iterations", 100),
        tolerance=getattr(args, "iter_tolerance", 1e-9),
    )


def _emit(args, payload: dict, text: str) -> None:
    if getattr(args, "report", "text") == "json":
        args.json = True
    if getattr(args, "json", False):
        print(json.dumps(payload, indent=2, default=str))
    else:
        print(text, end="" if text.endswith("\n") else "\n")


def cmd_eval(args) -> int:
    wb = load_workbook(args.workbook)
    ev = evaluate(wb, _policy(args))
    errors = sum(1 for v in ev.values.values() if isinstance(v, CellError))
    lines = [
        f"cells evaluated: {len(ev.values)}",
        f"converged: {ev.converged} (iterations used: {ev.iterations_used},"
        f" max residual: {ev.max_residual:g})",
        f"error cells: {errors}",
    ]
    shown = {}
    if args.cell:
        wanted = [parse_a1(t) for t in args.cell]
    else:
        wanted = [c.ref.with_sheet(sh.name) for sh in wb.sheets for c in sh.iter_cells()]
    for ref in wanted:
        value = ev.value(ref)
        shown[ref.to_a1()] = value
        lines.append(f"{ref.to_a1()} = {value!r}")
    _emit(args, {
        "command": "eval",
        "workbook": args.workbook,
        "config": {"max_iterations": args.max_iterations, "tolerance": args.iter_tolerance},
        "cells_evaluated": len(ev.values),
        "converged": ev.converged,
        "iterations_used": ev.iterations_used,
        "max_residual": ev.max_residual,
        "error_cells": errors,
        "values": shown,
    }, "\n".join(lines))
    return 0


def _report_checks(args, results, converged: bool) -> int:
    strict_inputs = not args.no_strict_inputs

    def blocking(r) -> bool:
        if r.kind != "integrity":
            return False
        if r.category == 13 and not strict_inputs:
            return False
        return True

    integrity_failures = [r for r in results if not r.passed and blocking(r)]
    soft_failures = [r for r in results if not r.passed and not blocking(r)]
    lines = []
    for r in results:
        status = "pass" if r.passed else "FAIL"
        cat = CATEGORY_NAMES.get(r.category, "?")
        lines.append(f"[{status}] {r.id} ({r.kind}, {cat}): {r.description}")
        if not r.passed and r.failing_periods:
            lines.append(f"       failing periods: {r.failing_periods}")
    lines.append(f"{len(results)} checks, {len(integrity_failures)} blocking failures,"
                 f" {len(soft_failures)} warnings")
    for r in soft_failures:
        lines.append(f"warning: {r.id} failed ({r.kind})")
    payload = {
        "command": "check",
        "config": {
            "tolerance": args.tolerance,
            "strict_inputs": strict_inputs,
            "max_iterations": args.max_iterations,
        },
        "converged": converged,
        "checks": [
            {
                "id": r.id,
                "category": r.category,
                "kind": r.kind,
                "passed": r.passed,
                "failing_periods": r.failing_periods,
                "residual": r.residual,
                "description": r.description,
            }
            for r in results
        ],
        "blocking_failures": len(integrity_failures),
        "warnings": len(soft_failures),
    }
    _emit(args, payload, "\n".join(lines))
    return 1 if integrity_failures else 0


def cmd_check(args) -> int:
    wb = load_workbook(args.workbook)
    schema = load_schema(args.schema)
    policy = _policy(args)
    specs = generate_checks(wb, schema)
    if args.inject:
        injected = inject_audit_sheet(wb, specs)
        save_workbook(injected, args.inject)
    ev = evaluate(wb, policy)
    results = run_checks(wb, schema, tolerance=args.tolerance, policy=policy,
                         eval_result=ev, specs=specs)
    return _report_checks(args, results, ev.converged)


def cmd_detect(args) -> int:
    wb = load_workbook(args.workbook)
    ev = evaluate(wb, _policy(args))
    report = detect_tests(wb, values=ev.values, check_sheets=args.check_sheets)
    lines = [f"check sheets: {', '.join(report.check_sheets) or '(none)'}",
             f"tests found: {len(report.tests)}"]
    for t in report.tests:
        cat = CATEGORY_NAMES.get(t.category, "?")
        lines.append(
            f"  {t.sheet}: {t.kind} cat {t.category} ({cat}), {len(t.cells)} cells,"
            f" {t.attributed_formula_count} formulas, {t.rule}"
            + (f' -- "{t.label}"' if t.label else "")
        )
    payload = {
        "command": "detect",
        "workbook": args.workbook,
        "config": {"check_sheets": sorted(args.check_sheets) if args.check_sheets else None},
        "check_sheets": report.check_sheets,
        "tests": [
            {
                "sheet": t.sheet,
                "kind": t.kind,
                "category": t.category,
                "cells": [c.to_a1() for c in t.cells],
                "attributed_formula_count": t.attributed_formula_count,
                "rule": t.rule,
                "label": t.label,
            }
            for t in report.tests
        ],
    }
    _emit(args, payload, "\n".join(lines))
    return 0


def cmd_analyze(args) -> int:
    wb = load_workbook(args.workbook)
    ev = evaluate(wb, _policy(args))
    name = args.name or args.workbook
    report, metrics = analyze_workbook(name, wb, values=ev.values, check_sheets=args.check_sheets)
    text = render_survey_report([metrics], title=f"Analysis of {name}")
    text += (f"\ntests: {len(report.tests)}"
             f" ({len(report.integrity_tests)} integrity,"
             f" {len(report.optimisation_tests)} optimisation)\n")
    payload = {
        "command": "analyze",
        "workbook": args.workbook,
        "config": {"check_sheets": sorted(args.check_sheets) if args.check_sheets else None},
        "metrics": {
            "t": metrics.t, "o": metrics.o, "i": metrics.i, "c": metrics.c,
            "pct_testing": metrics.pct_testing,
            "calcs_per_integrity": metrics.calcs_per_integrity,
        },
        "tests": len(report.tests),
        "integrity_tests": len(report.integrity_tests),
        "optimisation_tests": len(report.optimisation_tests),
    }
    _emit(args, payload, text)
    return 0


def cmd_survey(args) -> int:
    metrics = []
    flags = []
    for path in args.workbook:
        wb = load_workbook(path)
        ev = evaluate(wb, _policy(args))
        _report, m = analyze_workbook(path, wb, values=ev.values)
        metrics.append(m)
    if args.counts:
        with open(args.counts, encoding="utf-8") as fh:
            data = json.load(fh)
        for entry in data:
            m = compute_metrics(SurveyCounts(entry["name"], entry["t"], entry["o"], entry["i"]))
            metrics.append(m)
            if "printed_pct" in entry:
                ok = published_consistency(entry["t"], entry["o"], entry["i"], entry["printed_pct"])
                if not ok:
                    flags.append(
                        f"{entry['name']}: printed {100 * entry['printed_pct']:g}% is inconsistent"
                        f" with counts ({100 * m.pct_testing:.1f}% computed)"
                    )
    text = render_survey_report(metrics)
    for f in flags:
        text += f"note: {f}\n"
    payload = {
        "command": "survey",
        "config": {"counts": args.counts, "workbooks": list(args.workbook)},
        "columns": [
            {
                "name": m.name, "t": m.t, "o": m.o, "i": m.i, "c": m.c,
                "pct_testing": m.pct_testing,
                "calcs_per_integrity": None if m.calcs_per_integrity == float("inf")
                else m.calcs_per_integrity,
            }
            for m in metrics
        ],
        "inconsistencies": flags,
    }
    _emit(args, payload, text)
    return 0


def cmd_mutate(args) -> int:
    wb = load_workbook(args.workbook)
    schema = load_schema(args.schema)
    policy = _policy(args)
    if args.suite == "standard":
        mutations = standard_mutations(wb, schema, seed=args.seed)
    else:
        mutations = load_mutations(args.suite)
    report = run_campaign(wb, schema, mutations, policy=policy)
    lines = []
    for o in report.outcomes:
        status = "caught" if o.caught else "MISSED"
        lines.append(
            f"[{status}] {o.mutation.id}: expected cat {o.mutation.expected_category},"
            f" fired {o.failing_categories}"
        )
    if report.kill_rate is None:
        lines.append("kill rate: n/a (empty suite, vacuous pass)")
    else:
        lines.append(f"kill rate: {report.caught_count}/{len(report.outcomes)}")
    payload = {
        "command": "mutate",
        "config": {"max_iterations": args.max_iterations, "seed": args.seed,
                   "suite": args.suite},
        "outcomes": [
            {
                "id": o.mutation.id,
                "kind": o.mutation.kind,
                "expected_category": o.mutation.expected_category,
                "caught": o.caught,
                "expected_hit": o.expected_hit,
                "failing_categories": o.failing_categories,
            }
            for o in report.outcomes
        ],
        "kill_rate": report.kill_rate,
    }
    _emit(args, payload, "\n".join(lines))
    return 0 if report.all_caught else 1


def cmd_gen_fixture(args) -> int:
    import os

    wb, schema = generate_reference_model(args.scale)
    os.makedirs(args.out, exist_ok=True)
    model_path = os.path.join(args.out, "model.wbk")
    schema_path = os.path.join(args.out, "schema.json")
    audited_path = os.path.join(args.out, "audited.wbk")
    save_workbook(wb, model_path)
    with open(schema_path, "w", encoding="utf-8") as fh:
        fh.write(schema.to_json() + "\n")
    specs = generate_checks(wb, schema)
    audited = inject_audit_sheet(wb, specs)
    save_workbook(audited, audited_path)
    summary = {
        "command": "gen-fixture",
        "config": {"scale": args.scale},
        "model": model_path,
        "schema": schema_path,
        "audited": audited_path,
        "unique_formulae": count_unique_formulae(audited),
        "tests": len(specs),
    }
    _emit(args, summary,
          f"wrote {model_path}, {schema_path} and {audited_path}\n"
          f"unique formulae: {summary['unique_formulae']}, tests: {summary['tests']}")
    return 0


def cmd_graph(args) -> int:
    wb = load_workbook(args.workbook)
    g = build_graph(wb)
    if args.dot:
        sys.stdout.write(to_dot(g))
        return 0
    cyclic = sum(1 for comp in g.sccs if len(comp) > 1)
    lines = [
        f"nodes: {len(g.nodes)}",
        f"edges: {sum(len(v) for v in g.dependents.values())}",
        f"strongly connected components: {len(g.sccs)} ({cyclic} cyclic)",
    ]
    _emit(args, {
        "command": "graph",
        "workbook": args.workbook,
        "nodes": len(g.nodes),
        "edges": sum(len(v) for v in g.dependents.values()),
        "sccs": len(g.sccs),
        "cyclic_sccs": cyclic,
    }, "\n".join(lines))
    return 0


def _add_common(p, schema=False):
    p.add_argument("--json", action="store_true", help="emit a JSON report")
    p.add_argument("--report", choices=("text", "json"), default="text",
                   help="report format (same as --json when set to json)")
    p.add_argument("--max-iterations", type=int, default=100,
                   help="iteration cap for circular models")
    p.add_argument("--iter-tolerance", type=float, default=1e-9,
                   help="convergence residual tolerance")
    if schema:
        p.add_argument("--schema", required=True, help="model schema (JSON)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="audit",
        description="Generate, inject, execute and survey spreadsheet self-checks.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("eval", help="evaluate a workbook")
    p.add_argument("workbook")
    p.add_argument("--cell", action="append", help="Sheet!A1 cell to print (repeatable)")
    _add_common(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("check", help="generate and run self-checks against a schema")
    p.add_argument("workbook")
    _add_common(p, schema=True)
    p.add_argument("--tolerance", type=float, default=None, help="numeric check tolerance")
    p.add_argument("--inject", help="write a copy with the Audit sheet to this path")
    p.add_argument("--no-strict-inputs", action="store_true",
                   help="input checks (category 13) warn instead of blocking")
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("detect", help="find existing self-checks in a workbook")
    p.add_argument("workbook")
    p.add_argument("--check-sheets", nargs="*", default=None,
                   help="sheet names treated as dedicated check sheets")
    _add_common(p)
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("analyze", help="detect tests and report survey metrics")
    p.add_argument("workbook")
    p.add_argument("--name", help="column name in the report")
    p.add_argument("--check-sheets", nargs="*", default=None)
    _add_common(p)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("survey", help="columnar survey over workbooks and/or count files")
    p.add_argument("workbook", nargs="*")
    p.add_argument("--counts", help="JSON list of {name,t,o,i[,printed_pct]} entries")
    _add_common(p)
    p.set_defaults(func=cmd_survey)

    p = sub.add_parser("mutate", help="run a seeded-fault campaign")
    p.add_argument("workbook")
    _add_common(p, schema=True)
    p.add_argument("--suite", default="standard",
                   help="'standard' or a JSON file describing the mutations")
    p.add_argument("--seed", type=int, default=0,
                   help="period selection seed for the standard suite")
    p.set_defaults(func=cmd_mutate)

    p = sub.add_parser("gen-fixture", help="generate the reference model")
    p.add_argument("--scale", type=int, default=10)
    p.add_argument("--out", default="fixture",
                   help="output directory (model.wbk, schema.json, audited.wbk)")
    _add_common(p)
    p.set_defaults(func=cmd_gen_fixture)

    p = sub.add_parser("graph", help="dependency graph summary or DOT output")
    p.add_argument("workbook")
    p.add_argument("--dot", action="store_true", help="print Graphviz DOT")
    _add_common(p)
    p.set_defaults(func=cmd_graph)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except AuditKitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
