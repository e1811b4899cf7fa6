"""Self-check generation and execution driven by a model schema.

The schema is an explicit sidecar (JSON) declaring the financial structure
of a workbook: timeline, statement rows, subtotals, the balance sheet
footings, loans, cascade, identities and so on.  ``generate_checks`` turns
it into concrete boolean test formulas grouped into the fifteen check
categories; ``inject_audit_sheet`` materialises them on a dedicated Audit
sheet with one AND cell per check, an overall AND root and a NOT(root)
flag cell; ``run_checks`` executes the same comparisons numerically
against an evaluated workbook.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field

from .errors import NoRootError, SchemaError, SheetExistsError
from .evaluate import EvalResult, IterationPolicy, evaluate, evaluate_expression, solve_irr
from .workbook import CellError, CellRef, Workbook, col_to_letters, format_number, letters_to_col, parse_a1

CATEGORY_NAMES = {
    1: "Balance sheet",
    2: "Addition",
    3: "Signs",
    4: "Sources=Uses",
    5: "Accounting identities",
    6: "Clears out",
    7: "Cascade",
    8: "Ratio inclusion",
    9: "Tax inclusion",
    10: "Yield analysis",
    11: "Physical identities",
    12: "Converged",
    13: "Inputs ok",
    14: "Outputs ok",
    15: "Others",
}

OPTIMISATION_CATEGORY = 14
DEFAULT_TOLERANCE = 0.005
RATE_TOLERANCE = 1e-6

AUDIT_SHEET = "Audit"
AUDIT_ROOT_ROW = 1
AUDIT_FLAG_ROW = 2
AUDIT_FIRST_TEST_ROW = 4
AUDIT_LABEL_COL = 1  # A
AUDIT_AND_COL = 2  # B
AUDIT_PAYLOAD_COL = 3  # C


# ---------------------------------------------------------------------------
# Schema model


@dataclass(frozen=True)
class RowSpec:
    sheet: str
    row: int

    def cell(self, col: int) -> CellRef:
        return CellRef(self.sheet, col, self.row)

    def __str__(self):
        return f"{self.sheet}!{self.row}"


def parse_rowspec(text: str) -> RowSpec:
    if "!" not in text:
        raise SchemaError(f"row spec needs Sheet!row: {text!r}")
    sheet, rest = text.split("!", 1)
    if not rest.isdigit():
        raise SchemaError(f"row spec needs a bare row number: {text!r}")
    return RowSpec(sheet, int(rest))


@dataclass
class ModelSchema:
    timeline_labels: list = field(default_factory=list)
    timeline_start_col: int = 2
    check_tolerance: float = DEFAULT_TOLERANCE
    balance: dict | None = None  # assets_total / liab_equity_total RowSpec, computed_by_balancing
    balance_sheet_rows: list = field(default_factory=list)  # RowSpec
    subtotals: list = field(default_factory=list)  # {id,total RowSpec,components [RowSpec]}
    sign_rules: list = field(default_factory=list)  # {row RowSpec, sign ">=0"/"<=0", label}
    sources_uses: dict | None = None  # {sources:[RowSpec], uses:[RowSpec]}
    identities: list = field(default_factory=list)  # {id,left,right,kind per-period|life-total}
    finite_life: bool = False
    cascade: dict | None = None  # {residue RowSpec, net_cash RowSpec}
    loans: list = field(default_factory=list)  # {id,drawdown,interest,repayment RowSpec, rate_cell CellRef}
    physical_identities: list = field(default_factory=list)  # {id,producer,consumer RowSpec}
    input_rules: list = field(default_factory=list)  # {kind:range|sums_to_one|in_timeline,...}
    output_thresholds: list = field(default_factory=list)  # {id,ratio_row,comparator,threshold_cell}
    convergence_pairs: list = field(default_factory=list)  # {lhs CellRef, rhs CellRef}
    external_checks: list = field(default_factory=list)  # {id,category 8|9,formulas,label}
    other_checks: list = field(default_factory=list)  # {id,cell CellRef,expected,tolerance,label}

    @property
    def n_periods(self) -> int:
        return len(self.timeline_labels)

    def period_col(self, i: int) -> int:
        return self.timeline_start_col + i

    # -- serialization -------------------------------------------------------

    @classmethod
    def from_json(cls, text: str) -> "ModelSchema":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"schema is not valid JSON: {exc}")
        if data.get("version") != 1:
            raise SchemaError("unsupported schema version (expected 1)")
        s = cls()
        tl = data.get("timeline") or {}
        s.timeline_labels = tl.get("labels", [])
        s.timeline_start_col = letters_to_col(tl.get("start_col", "B"))
        s.check_tolerance = float(data.get("check_tolerance", DEFAULT_TOLERANCE))
        if "balance" in data:
            b = data["balance"]
            s.balance = {
                "assets_total": parse_rowspec(b["assets_total"]),
                "liab_equity_total": parse_rowspec(b["liab_equity_total"]),
                "computed_by_balancing": bool(b.get("computed_by_balancing", False)),
            }
        s.balance_sheet_rows = [parse_rowspec(r) for r in data.get("balance_sheet_rows", [])]
        for st in data.get("subtotals", []):
            s.subtotals.append({
                "id": st["id"],
                "total": parse_rowspec(st["total"]),
                "components": [parse_rowspec(c) for c in st["components"]],
            })
        for sr in data.get("sign_rules", []):
            if sr["sign"] not in (">=0", "<=0"):
                raise SchemaError(f"sign rule must be '>=0' or '<=0': {sr}")
            s.sign_rules.append({
                "row": parse_rowspec(sr["row"]),
                "sign": sr["sign"],
                "label": sr.get("label", ""),
            })
        if "sources_uses" in data:
            su = data["sources_uses"]
            s.sources_uses = {
                "sources": [parse_rowspec(r) for r in su["sources"]],
                "uses": [parse_rowspec(r) for r in su["uses"]],
            }
        for ident in data.get("identities", []):
            kind = ident.get("kind", "per-period")
            if kind not in ("per-period", "life-total"):
                raise SchemaError(f"identity kind must be per-period or life-total: {ident}")
            s.identities.append({
                "id": ident["id"],
                "left": [parse_rowspec(r) for r in ident["left"]],
                "right": [parse_rowspec(r) for r in ident["right"]],
                "kind": kind,
            })
        s.finite_life = bool(data.get("finite_life", False))
        if "cascade" in data:
            c = data["cascade"]
            s.cascade = {"residue": parse_rowspec(c["residue"]), "net_cash": parse_rowspec(c["net_cash"])}
        for loan in data.get("loans", []):
            s.loans.append({
                "id": loan["id"],
                "drawdown": parse_rowspec(loan["drawdown"]),
                "interest": parse_rowspec(loan["interest"]),
                "repayment": parse_rowspec(loan["repayment"]),
                "rate_cell": parse_a1(loan["rate_cell"]),
            })
        for ph in data.get("physical_identities", []):
            s.physical_identities.append({
                "id": ph["id"],
                "producer": parse_rowspec(ph["producer"]),
                "consumer": parse_rowspec(ph["consumer"]),
            })
        for rule in data.get("input_rules", []):
            kind = rule.get("kind")
            if kind == "range":
                s.input_rules.append({
                    "kind": "range",
                    "cell": parse_a1(rule["cell"]),
                    "min": float(rule["min"]),
                    "max": float(rule["max"]),
                })
            elif kind == "sums_to_one":
                s.input_rules.append({
                    "kind": "sums_to_one",
                    "cells": [parse_a1(c) for c in rule["cells"]],
                })
            elif kind == "in_timeline":
                s.input_rules.append({"kind": "in_timeline", "cell": parse_a1(rule["cell"])})
            else:
                raise SchemaError(f"unknown input rule kind: {rule}")
        for th in data.get("output_thresholds", []):
            if th["comparator"] not in (">=", "<=", ">", "<"):
                raise SchemaError(f"bad comparator in threshold: {th}")
            s.output_thresholds.append({
                "id": th["id"],
                "ratio_row": parse_rowspec(th["ratio_row"]),
                "comparator": th["comparator"],
                "threshold_cell": parse_a1(th["threshold_cell"]),
            })
        for pair in data.get("convergence_pairs", []):
            s.convergence_pairs.append({"lhs": parse_a1(pair["lhs"]), "rhs": parse_a1(pair["rhs"])})
        for ext in data.get("external_checks", []):
            if ext.get("category") not in (8, 9):
                raise SchemaError("external checks must be category 8 or 9")
            s.external_checks.append({
                "id": ext["id"],
                "category": ext["category"],
                "formulas": list(ext["formulas"]),
                "label": ext.get("label", ""),
            })
        for oc in data.get("other_checks", []):
            s.other_checks.append({
                "id": oc["id"],
                "cell": parse_a1(oc["cell"]),
                "expected": float(oc["expected"]),
                "tolerance": float(oc.get("tolerance", s.check_tolerance)),
                "label": oc.get("label", ""),
            })
        return s

    def to_json(self) -> str:
        def rs(r):
            return str(r)

        data = {
            "version": 1,
            "timeline": {
                "labels": self.timeline_labels,
                "start_col": col_to_letters(self.timeline_start_col),
            },
            "check_tolerance": self.check_tolerance,
            "finite_life": self.finite_life,
        }
        if self.balance:
            data["balance"] = {
                "assets_total": rs(self.balance["assets_total"]),
                "liab_equity_total": rs(self.balance["liab_equity_total"]),
                "computed_by_balancing": self.balance["computed_by_balancing"],
            }
        if self.balance_sheet_rows:
            data["balance_sheet_rows"] = [rs(r) for r in self.balance_sheet_rows]
        if self.subtotals:
            data["subtotals"] = [
                {"id": st["id"], "total": rs(st["total"]), "components": [rs(c) for c in st["components"]]}
                for st in self.subtotals
            ]
        if self.sign_rules:
            data["sign_rules"] = [
                {"row": rs(sr["row"]), "sign": sr["sign"], "label": sr["label"]} for sr in self.sign_rules
            ]
        if self.sources_uses:
            data["sources_uses"] = {
                "sources": [rs(r) for r in self.sources_uses["sources"]],
                "uses": [rs(r) for r in self.sources_uses["uses"]],
            }
        if self.identities:
            data["identities"] = [
                {"id": i["id"], "left": [rs(r) for r in i["left"]], "right": [rs(r) for r in i["right"]], "kind": i["kind"]}
                for i in self.identities
            ]
        if self.cascade:
            data["cascade"] = {"residue": rs(self.cascade["residue"]), "net_cash": rs(self.cascade["net_cash"])}
        if self.loans:
            data["loans"] = [
                {
                    "id": ln["id"],
                    "drawdown": rs(ln["drawdown"]),
                    "interest": rs(ln["interest"]),
                    "repayment": rs(ln["repayment"]),
                    "rate_cell": ln["rate_cell"].to_a1(),
                }
                for ln in self.loans
            ]
        if self.physical_identities:
            data["physical_identities"] = [
                {"id": p["id"], "producer": rs(p["producer"]), "consumer": rs(p["consumer"])}
                for p in self.physical_identities
            ]
        if self.input_rules:
            rules = []
            for rule in self.input_rules:
                if rule["kind"] == "range":
                    rules.append({"kind": "range", "cell": rule["cell"].to_a1(), "min": rule["min"], "max": rule["max"]})
                elif rule["kind"] == "sums_to_one":
                    rules.append({"kind": "sums_to_one", "cells": [c.to_a1() for c in rule["cells"]]})
                else:
                    rules.append({"kind": "in_timeline", "cell": rule["cell"].to_a1()})
            data["input_rules"] = rules
        if self.output_thresholds:
            data["output_thresholds"] = [
                {
                    "id": t["id"],
                    "ratio_row": rs(t["ratio_row"]),
                    "comparator": t["comparator"],
                    "threshold_cell": t["threshold_cell"].to_a1(),
                }
                for t in self.output_thresholds
            ]
        if self.convergence_pairs:
            data["convergence_pairs"] = [
                {"lhs": p["lhs"].to_a1(), "rhs": p["rhs"].to_a1()} for p in self.convergence_pairs
            ]
        if self.external_checks:
            data["external_checks"] = self.external_checks
        if self.other_checks:
            data["other_checks"] = [
                {
                    "id": oc["id"],
                    "cell": oc["cell"].to_a1(),
                    "expected": oc["expected"],
                    "tolerance": oc["tolerance"],
                    "label": oc["label"],
                }
                for oc in self.other_checks
            ]
        return json.dumps(data, indent=2)


def load_schema(path) -> ModelSchema:
    with open(path, encoding="utf-8") as fh:
        return ModelSchema.from_json(fh.read())


def validate_schema(wb: Workbook, schema: ModelSchema) -> None:
    """Every referenced row or cell must exist; loan rate cells must be numbers."""

    def need_row(row: RowSpec, what: str):
        sh = wb.sheet(row.sheet)
        if sh is None or not any(r == row.row for (r, _c) in sh.cells):
            raise SchemaError(f"{what}: row {row} not present in workbook")

    def need_cell(ref: CellRef, what: str):
        if wb.cell(ref) is None:
            raise SchemaError(f"{what}: cell {ref.to_a1()} not present in workbook")

    if not schema.timeline_labels:
        raise SchemaError("timeline: at least one period required")
    if schema.balance:
        need_row(schema.balance["assets_total"], "balance")
        need_row(schema.balance["liab_equity_total"], "balance")
    for row in schema.balance_sheet_rows:
        need_row(row, "balance_sheet_rows")
    for st in schema.subtotals:
        need_row(st["total"], f"subtotal {st['id']}")
        for c in st["components"]:
            need_row(c, f"subtotal {st['id']}")
    for sr in schema.sign_rules:
        need_row(sr["row"], "sign rule")
    if schema.sources_uses:
        for row in schema.sources_uses["sources"] + schema.sources_uses["uses"]:
            need_row(row, "sources_uses")
    for ident in schema.identities:
        for row in ident["left"] + ident["right"]:
            need_row(row, f"identity {ident['id']}")
    if schema.cascade:
        need_row(schema.cascade["residue"], "cascade")
        need_row(schema.cascade["net_cash"], "cascade")
    for loan in schema.loans:
        for key in ("drawdown", "interest", "repayment"):
            need_row(loan[key], f"loan {loan['id']}")
        need_cell(loan["rate_cell"], f"loan {loan['id']} rate cell")
        cell = wb.cell(loan["rate_cell"])
        if not cell.is_formula and not isinstance(cell.value, (int, float)):
            raise SchemaError(f"loan {loan['id']}: rate cell must hold a number")
    for ph in schema.physical_identities:
        need_row(ph["producer"], f"physical identity {ph['id']}")
        need_row(ph["consumer"], f"physical identity {ph['id']}")
    for rule in schema.input_rules:
        for ref in rule.get("cells", [rule.get("cell")]):
            if ref is not None:
                need_cell(ref, "input rule")
    for th in schema.output_thresholds:
        need_row(th["ratio_row"], f"threshold {th['id']}")
        need_cell(th["threshold_cell"], f"threshold {th['id']}")
    for pair in schema.convergence_pairs:
        need_cell(pair["lhs"], "convergence pair")
        need_cell(pair["rhs"], "convergence pair")
    for oc in schema.other_checks:
        need_cell(oc["cell"], f"other check {oc['id']}")


# ---------------------------------------------------------------------------
# Check specs


@dataclass
class CheckSpec:
    id: str
    category: int
    kind: str  # "integrity" | "optimisation"
    description: str
    formulas: list  # [(CellRef on Audit, formula text)], leaf + support cells
    and_cell: CellRef
    and_formula: str
    label_cell: CellRef
    subject: dict  # executor metadata, not part of the public contract

    @property
    def boolean_row(self) -> int:
        return self.and_cell.row


@dataclass
class CheckResult:
    id: str
    category: int
    kind: str
    passed: bool
    failing_periods: list
    residual: float
    description: str = ""


class _AuditLayout:
    """Allocates audit-sheet rows; every test gets a block of payload rows
    with its AND cell and label on the boolean (last) row."""

    def __init__(self, n_periods: int):
        self.n_periods = n_periods
        self.next_row = AUDIT_FIRST_TEST_ROW

    def block(self, payload_rows: int) -> list:
        rows = list(range(self.next_row, self.next_row + payload_rows))
        self.next_row += payload_rows + 1  # blank separator row
        return rows

    def payload_cols(self, count: int | None = None):
        n = self.n_periods if count is None else count
        return [AUDIT_PAYLOAD_COL + i for i in range(n)]


def _aref(col: int, row: int, col_abs=False, row_abs=True) -> str:
    return "{}{}{}{}".format("$" if col_abs else "", col_to_letters(col), "$" if row_abs else "", row)


def _mref(row: RowSpec, col: int, col_abs=False, row_abs=True) -> str:
    return f"{row.sheet}!{_aref(col, row.row, col_abs, row_abs)}"


def _cref(ref: CellRef) -> str:
    """Fully absolute rendering of a schema cell reference."""
    return f"{ref.sheet}!${col_to_letters(ref.col)}${ref.row}"


def _fmt(x: float) -> str:
    return format_number(float(x))


class _CheckBuilder:
    def __init__(self, wb: Workbook, schema: ModelSchema):
        self.wb = wb
        self.schema = schema
        self.layout = _AuditLayout(schema.n_periods)
        self.specs = []
        self.tol = schema.check_tolerance

    def _audit(self, col: int, row: int) -> CellRef:
        return CellRef(AUDIT_SHEET, col, row)

    def add(self, check_id, category, description, payload, bool_row, bool_cols, subject):
        """payload: list of (row, col, formula-text) already laid out."""
        kind = "optimisation" if category == OPTIMISATION_CATEGORY else "integrity"
        formulas = [(self._audit(col, row), text) for row, col, text in payload]
        first, last = bool_cols[0], bool_cols[-1]
        and_formula = f"=AND({_aref(first, bool_row)}:{_aref(last, bool_row)})"
        self.specs.append(
            CheckSpec(
                id=check_id,
                category=category,
                kind=kind,
                description=description,
                formulas=formulas,
                and_cell=self._audit(AUDIT_AND_COL, bool_row),
                and_formula=and_formula,
                label_cell=self._audit(AUDIT_LABEL_COL, bool_row),
                subject=subject,
            )
        )

    # -- helpers emitting the common 3-row shape -----------------------------

    def pair_rows_check(self, check_id, category, description, lhs_exprs, rhs_exprs, subject, tol=None):
        """Three payload rows: LHS restatement, RHS restatement, boolean
        |LHS-RHS| <= tol; expressions are per-period formula bodies."""
        tol = self.tol if tol is None else tol
        rows = self.layout.block(3)
        r_lhs, r_rhs, r_bool = rows
        cols = self.layout.payload_cols(len(lhs_exprs))
        payload = []
        for col, expr in zip(cols, lhs_exprs):
            payload.append((r_lhs, col, "=" + expr))
        for col, expr in zip(cols, rhs_exprs):
            payload.append((r_rhs, col, "=" + expr))
        for col in cols:
            payload.append((r_bool, col, f"=ABS({_aref(col, r_lhs)}-{_aref(col, r_rhs)})<={_fmt(tol)}"))
        self.add(check_id, category, description, payload, r_bool, cols, subject)

    def single_bool_check(self, check_id, category, description, payload_rows_exprs, bool_expr, subject):
        """payload_rows_exprs: list of single-cell expressions placed in the
        first payload column, one per row; bool_expr may reference them via
        the provided row numbers (callable)."""
        rows = self.layout.block(len(payload_rows_exprs) + 1)
        col = AUDIT_PAYLOAD_COL
        payload = []
        for row, make in zip(rows[:-1], payload_rows_exprs):
            payload.append((row, col, "=" + (make(rows) if callable(make) else make)))
        r_bool = rows[-1]
        payload.append((r_bool, col, "=" + bool_expr(rows)))
        self.add(check_id, category, description, payload, r_bool, [col], subject)

    # -- per-period sum expression helpers -----------------------------------

    def row_expr(self, row: RowSpec, period: int) -> str:
        return _mref(row, self.schema.period_col(period))

    def sum_expr(self, rows, period: int) -> str:
        return "+".join(self.row_expr(r, period) for r in rows)

    def life_sum_expr(self, rows) -> str:
        first = self.schema.period_col(0)
        last = self.schema.period_col(self.schema.n_periods - 1)
        parts = []
        for r in rows:
            parts.append(
                f"SUM({r.sheet}!${col_to_letters(first)}${r.row}:${col_to_letters(last)}${r.row})"
            )
        return "+".join(parts)


def generate_checks(wb: Workbook, schema: ModelSchema) -> list:
    """One CheckSpec per schema entry, mapped onto the 15 categories."""
    validate_schema(wb, schema)
    b = _CheckBuilder(wb, schema)
    periods = range(schema.n_periods)

    # 1 balance sheet balances
    if schema.balance:
        if schema.balance["computed_by_balancing"]:
            warnings.warn(
                "balance sheet is computed by a balancing item; the balance "
                "check proves nothing and is not generated"
            )
        else:
            assets = schema.balance["assets_total"]
            liab = schema.balance["liab_equity_total"]
            b.pair_rows_check(
                "c01-balance", 1, "Balance sheet balances",
                [b.row_expr(assets, p) for p in periods],
                [b.row_expr(liab, p) for p in periods],
                {"type": "balance", "assets": assets, "liab": liab},
            )

    # 4 sources match uses
    if schema.sources_uses:
        su = schema.sources_uses
        b.pair_rows_check(
            "c04-sources-uses", 4, "Sources = Uses of funds",
            [b.sum_expr(su["sources"], p) for p in periods],
            [b.sum_expr(su["uses"], p) for p in periods],
            {"type": "sources_uses", **su},
        )

    # 7 cascade residue equals net cash
    if schema.cascade:
        c = schema.cascade
        b.pair_rows_check(
            "c07-cascade", 7, "Cash cascade residue = net cash flow",
            [b.row_expr(c["residue"], p) for p in periods],
            [b.row_expr(c["net_cash"], p) for p in periods],
            {"type": "cascade", **c},
        )

    # 2 statements add up
    for st in schema.subtotals:
        b.pair_rows_check(
            f"c02-add-{st['id']}", 2, f"Adds up: {st['id']} subtotal",
            [b.row_expr(st["total"], p) for p in periods],
            [b.sum_expr(st["components"], p) for p in periods],
            {"type": "subtotal", **st},
        )

    # 6 balance sheet clears out
    if schema.finite_life and schema.balance_sheet_rows:
        last_col = schema.period_col(schema.n_periods - 1)
        abs_terms = "+".join(f"ABS({_cref(r.cell(last_col))})" for r in schema.balance_sheet_rows)
        plain_terms = "+".join(_cref(r.cell(last_col)) for r in schema.balance_sheet_rows)
        b.single_bool_check(
            "c06-clears-out", 6, "Balance sheet clears out at end of life",
            [abs_terms, plain_terms],
            lambda rows: f"MAX({_aref(AUDIT_PAYLOAD_COL, rows[0])},"
                         f"ABS({_aref(AUDIT_PAYLOAD_COL, rows[1])}))<={_fmt(b.tol)}",
            {"type": "clears_out", "rows": schema.balance_sheet_rows},
        )

    # 3 expected signs
    for i, sr in enumerate(schema.sign_rules):
        row = sr["row"]
        clamp = "MIN" if sr["sign"] == ">=0" else "MAX"
        rows_lhs = [b.row_expr(row, p) for p in periods]
        rows_rhs = [f"{clamp}({_mref(row, schema.period_col(p))},0)" for p in periods]
        # |clamped shortfall| must be ~0
        blk = b.layout.block(3)
        r_val, r_clamp, r_bool = blk
        cols = b.layout.payload_cols()
        payload = []
        for col, expr in zip(cols, rows_lhs):
            payload.append((r_val, col, "=" + expr))
        for col in cols:
            payload.append((r_clamp, col, f"={clamp}({_aref(col, r_val)},0)"))
        for col in cols:
            payload.append((r_bool, col, f"=ABS({_aref(col, r_clamp)})<={_fmt(b.tol)}"))
        label = sr["label"] or str(row)
        b.add(
            f"c03-sign-{i}", 3, f"Sign: {label} {sr['sign']}",
            payload, r_bool, cols,
            {"type": "sign", **sr},
        )

    # 5 identities
    for ident in schema.identities:
        if ident["kind"] == "per-period":
            b.pair_rows_check(
                f"c05-ident-{ident['id']}", 5, f"Identity holds: {ident['id']}",
                [b.sum_expr(ident["left"], p) for p in periods],
                [b.sum_expr(ident["right"], p) for p in periods],
                {"type": "identity", **ident},
            )
        else:
            b.single_bool_check(
                f"c05-ident-{ident['id']}", 5, f"Identity over life: {ident['id']}",
                [b.life_sum_expr(ident["left"]), b.life_sum_expr(ident["right"])],
                lambda rows: f"ABS({_aref(AUDIT_PAYLOAD_COL, rows[0])}-{_aref(AUDIT_PAYLOAD_COL, rows[1])})<={_fmt(b.tol)}",
                {"type": "identity", **ident},
            )

    # 10 yield reconciles to the rate assumption
    for loan in schema.loans:
        blk = b.layout.block(3)
        r_flow, r_bal, r_bool = blk
        cols = b.layout.payload_cols()
        payload = []
        for p, col in zip(periods, cols):
            mcol = schema.period_col(p)
            payload.append((
                r_flow, col,
                f"={_mref(loan['interest'], mcol)}+{_mref(loan['repayment'], mcol)}-{_mref(loan['drawdown'], mcol)}",
            ))
        for col in cols:
            prev = _aref(col - 1, r_bal)
            payload.append((r_bal, col, f"={prev}*(1+{_cref(loan['rate_cell'])})-{_aref(col, r_flow)}"))
        last = cols[-1]
        payload.append((r_bool, AUDIT_PAYLOAD_COL, f"=ABS({_aref(last, r_bal)})<={_fmt(b.tol)}"))
        b.add(
            f"c10-yield-{loan['id']}", 10,
            f"Yield reconciles to interest rate assumption: {loan['id']}",
            payload, r_bool, [AUDIT_PAYLOAD_COL],
            {"type": "yield", **loan},
        )

    # 11 physical identities
    for ph in schema.physical_identities:
        b.pair_rows_check(
            f"c11-phys-{ph['id']}", 11, f"Physical identity: {ph['id']}",
            [b.row_expr(ph["producer"], p) for p in periods],
            [b.row_expr(ph["consumer"], p) for p in periods],
            {"type": "physical", **ph},
        )

    # 12 iterative solution converged
    if schema.convergence_pairs:
        for i, pair in enumerate(schema.convergence_pairs):
            b.single_bool_check(
                f"c12-converged-{i}", 12, "Iterative solution converged",
                [_cref(pair["lhs"]), _cref(pair["rhs"])],
                lambda rows: f"ABS({_aref(AUDIT_PAYLOAD_COL, rows[0])}-{_aref(AUDIT_PAYLOAD_COL, rows[1])})<={_fmt(b.tol)}",
                {"type": "converged", **pair},
            )

    # 13 inputs make sense
    for i, rule in enumerate(schema.input_rules):
        if rule["kind"] == "range":
            lo, hi = rule["min"], rule["max"]
            b.single_bool_check(
                f"c13-input-{i}", 13, f"Input within range: {rule['cell'].to_a1()}",
                [_cref(rule["cell"]),
                 lambda rows: f"MAX({_aref(AUDIT_PAYLOAD_COL, rows[0])}-{_fmt(hi)},{_fmt(lo)}-{_aref(AUDIT_PAYLOAD_COL, rows[0])})"],
                lambda rows: f"{_aref(AUDIT_PAYLOAD_COL, rows[1])}<={_fmt(b.tol)}",
                {"type": "input", **rule},
            )
        elif rule["kind"] == "sums_to_one":
            total = "+".join(_cref(c) for c in rule["cells"])
            b.single_bool_check(
                f"c13-input-{i}", 13, "Input shares sum to one",
                [total, lambda rows: f"{_aref(AUDIT_PAYLOAD_COL, rows[0])}-1"],
                lambda rows: f"ABS({_aref(AUDIT_PAYLOAD_COL, rows[1])})<={_fmt(b.tol)}",
                {"type": "input", **rule},
            )
        else:  # in_timeline
            labels = schema.timeline_labels
            if not all(isinstance(x, (int, float)) for x in labels):
                raise SchemaError("in_timeline rules need a numeric timeline")
            lo, hi = float(labels[0]), float(labels[-1])
            b.single_bool_check(
                f"c13-input-{i}", 13, f"Input date within model timeline: {rule['cell'].to_a1()}",
                [_cref(rule["cell"]),
                 lambda rows: f"MAX({_aref(AUDIT_PAYLOAD_COL, rows[0])}-{_fmt(hi)},{_fmt(lo)}-{_aref(AUDIT_PAYLOAD_COL, rows[0])})"],
                lambda rows: f"{_aref(AUDIT_PAYLOAD_COL, rows[1])}<={_fmt(b.tol)}",
                {"type": "input", **rule, "min": lo, "max": hi},
            )

    # 14 outputs meet requirements
    for th in schema.output_thresholds:
        blk = b.layout.block(3)
        r_ratio, r_thresh, r_bool = blk
        cols = b.layout.payload_cols()
        payload = []
        for p, col in zip(periods, cols):
            payload.append((r_ratio, col, "=" + b.row_expr(th["ratio_row"], p)))
        for col in cols:
            payload.append((r_thresh, col, "=" + _cref(th["threshold_cell"])))
        for col in cols:
            payload.append((r_bool, col, f"={_aref(col, r_ratio)}{th['comparator']}{_aref(col, r_thresh)}"))
        b.add(
            f"c14-output-{th['id']}", 14,
            f"Covenant threshold met: {th['id']} {th['comparator']} target",
            payload, r_bool, cols,
            {"type": "threshold", **th},
        )

    # 8 / 9 externally supplied inclusion analyses: wrapper AND cell only
    for ext in schema.external_checks:
        blk = b.layout.block(len(ext["formulas"]))
        cols = [AUDIT_PAYLOAD_COL]
        payload = [(row, AUDIT_PAYLOAD_COL, f_text) for row, f_text in zip(blk, ext["formulas"])]
        r_bool = blk[-1]
        first_cell = _aref(AUDIT_PAYLOAD_COL, blk[0])
        last_cell = _aref(AUDIT_PAYLOAD_COL, blk[-1])
        kind_name = "Ratio inclusion analysis" if ext["category"] == 8 else "Tax reconciliation"
        spec_desc = ext["label"] or f"{kind_name}: {ext['id']}"
        b.add(
            f"c0{ext['category']}-ext-{ext['id']}", ext["category"], spec_desc,
            payload, r_bool, [AUDIT_PAYLOAD_COL],
            {"type": "external", **ext},
        )
        # override the AND cell to wrap the user formulas
        b.specs[-1].and_formula = f"=AND({first_cell}:{last_cell})"

    # 15 other: reasonableness against a hard-wired expected value
    for oc in schema.other_checks:
        expected = oc["expected"]
        b.single_bool_check(
            f"c15-other-{oc['id']}", 15,
            oc["label"] or f"Reasonableness: {oc['id']} near expected value",
            [_cref(oc["cell"]), lambda rows: f"{_aref(AUDIT_PAYLOAD_COL, rows[0])}-{_fmt(expected)}"],
            lambda rows: f"ABS({_aref(AUDIT_PAYLOAD_COL, rows[1])})<={_fmt(oc['tolerance'])}",
            {"type": "other", **oc},
        )

    return b.specs


# ---------------------------------------------------------------------------
# Injection


def inject_audit_sheet(wb: Workbook, specs, sheet_name: str = AUDIT_SHEET) -> Workbook:
    """New workbook with the audit sheet materialised; original untouched."""
    if wb.sheet(sheet_name) is not None:
        raise SheetExistsError(f"sheet {sheet_name!r} already exists")
    out = wb.copy()
    out.add_sheet(sheet_name)
    and_rows = []
    for spec in specs:
        for ref, text in spec.formulas:
            out.set_cell(CellRef(sheet_name, ref.col, ref.row), formula=text)
        out.set_cell(CellRef(sheet_name, spec.and_cell.col, spec.and_cell.row), formula=spec.and_formula)
        out.set_cell(CellRef(sheet_name, spec.label_cell.col, spec.label_cell.row), value=spec.description)
        and_rows.append(spec.and_cell.row)
    first, last = (min(and_rows), max(and_rows)) if and_rows else (AUDIT_FIRST_TEST_ROW, AUDIT_FIRST_TEST_ROW)
    root = f"=AND({_aref(AUDIT_AND_COL, first, row_abs=False)}:{_aref(AUDIT_AND_COL, last, row_abs=False)})"
    out.set_cell(CellRef(sheet_name, AUDIT_AND_COL, AUDIT_ROOT_ROW), formula=root)
    out.set_cell(CellRef(sheet_name, AUDIT_LABEL_COL, AUDIT_ROOT_ROW), value="All tests pass")
    out.set_cell(
        CellRef(sheet_name, AUDIT_AND_COL, AUDIT_FLAG_ROW),
        formula=f"=NOT({_aref(AUDIT_AND_COL, AUDIT_ROOT_ROW, row_abs=False)})",
    )
    out.set_cell(CellRef(sheet_name, AUDIT_LABEL_COL, AUDIT_FLAG_ROW), value="Warning flag (red stripe)")
    return out


def audit_root_ref(sheet_name: str = AUDIT_SHEET) -> CellRef:
    return CellRef(sheet_name, AUDIT_AND_COL, AUDIT_ROOT_ROW)


def audit_flag_ref(sheet_name: str = AUDIT_SHEET) -> CellRef:
    return CellRef(sheet_name, AUDIT_AND_COL, AUDIT_FLAG_ROW)


# ---------------------------------------------------------------------------
# Execution


def _num(v) -> float:
    if isinstance(v, bool):
        return 1.0 if v else 0.0
    if isinstance(v, (int, float)):
        return float(v)
    if v is None:
        return 0.0
    return math.nan  # text or error: poison the comparison


def _row_values(ev: EvalResult, schema: ModelSchema, row: RowSpec):
    return [_num(ev.value(row.cell(schema.period_col(p)))) for p in range(schema.n_periods)]


def _sum_rows(ev, schema, rows):
    cols = [0.0] * schema.n_periods
    for row in rows:
        for i, v in enumerate(_row_values(ev, schema, row)):
            cols[i] += v
    return cols


def _per_period_result(spec, schema, lhs, rhs, tolerance):
    failing = []
    residual = 0.0
    for i, (a, b) in enumerate(zip(lhs, rhs)):
        diff = abs(a - b)
        if math.isnan(diff):
            diff = math.inf
        if diff > tolerance:
            failing.append(schema.timeline_labels[i])
        residual = max(residual, 0.0 if diff <= tolerance else diff)
    return CheckResult(spec.id, spec.category, spec.kind, not failing, failing, residual, spec.description)


def life_total_reconcile(spec, schema, ev, tolerance) -> CheckResult:
    """Σ over all periods of the left rows against Σ of the right rows."""
    left = sum(_sum_rows(ev, schema, spec.subject["left"]))
    right = sum(_sum_rows(ev, schema, spec.subject["right"]))
    diff = abs(left - right)
    if math.isnan(diff):
        diff = math.inf
    passed = diff <= tolerance
    last = [schema.timeline_labels[-1]] if not passed else []
    return CheckResult(spec.id, spec.category, spec.kind, passed, last, 0.0 if passed else diff, spec.description)


def run_checks(
    wb: Workbook,
    schema: ModelSchema,
    tolerance: float | None = None,
    policy: IterationPolicy | None = None,
    eval_result: EvalResult | None = None,
    specs=None,
):
    """Execute every generated check numerically; one CheckResult per spec."""
    tol = schema.check_tolerance if tolerance is None else tolerance
    specs = generate_checks(wb, schema) if specs is None else specs
    ev = eval_result if eval_result is not None else evaluate(wb, policy)
    results = []
    for spec in specs:
        sub = spec.subject
        kind = sub["type"]
        if kind == "balance":
            lhs = _row_values(ev, schema, sub["assets"])
            rhs = _row_values(ev, schema, sub["liab"])
            results.append(_per_period_result(spec, schema, lhs, rhs, tol))
        elif kind == "sources_uses":
            results.append(_per_period_result(
                spec, schema, _sum_rows(ev, schema, sub["sources"]), _sum_rows(ev, schema, sub["uses"]), tol))
        elif kind == "cascade":
            results.append(_per_period_result(
                spec, schema, _row_values(ev, schema, sub["residue"]), _row_values(ev, schema, sub["net_cash"]), tol))
        elif kind == "subtotal":
            results.append(_per_period_result(
                spec, schema, _row_values(ev, schema, sub["total"]), _sum_rows(ev, schema, sub["components"]), tol))
        elif kind == "clears_out":
            last_col = schema.period_col(schema.n_periods - 1)
            residual = 0.0
            for row in sub["rows"]:
                v = abs(_num(ev.value(row.cell(last_col))))
                if math.isnan(v):
                    v = math.inf
                residual = max(residual, v)
            passed = residual <= tol
            failing = [] if passed else [schema.timeline_labels[-1]]
            results.append(CheckResult(spec.id, spec.category, spec.kind, passed, failing,
                                       0.0 if passed else residual, spec.description))
        elif kind == "sign":
            values = _row_values(ev, schema, sub["row"])
            if sub["sign"] == ">=0":
                lhs = [min(v, 0.0) for v in values]
            else:
                lhs = [max(v, 0.0) for v in values]
            results.append(_per_period_result(spec, schema, lhs, [0.0] * len(lhs), tol))
        elif kind == "identity":
            if sub["kind"] == "life-total":
                results.append(life_total_reconcile(spec, schema, ev, tol))
            else:
                results.append(_per_period_result(
                    spec, schema, _sum_rows(ev, schema, sub["left"]), _sum_rows(ev, schema, sub["right"]), tol))
        elif kind == "yield":
            flows = []
            draws = _row_values(ev, schema, sub["drawdown"])
            ints = _row_values(ev, schema, sub["interest"])
            reps = _row_values(ev, schema, sub["repayment"])
            for d, i2, r2 in zip(draws, ints, reps):
                flows.append(-d + i2 + r2)
            rate = _num(ev.value(sub["rate_cell"]))
            try:
                implied = solve_irr(flows)
                residual = abs(implied - rate)
            except NoRootError:
                residual = math.inf
            passed = residual <= RATE_TOLERANCE
            results.append(CheckResult(spec.id, spec.category, spec.kind, passed,
                                       [] if passed else list(schema.timeline_labels),
                                       0.0 if passed else residual, spec.description))
        elif kind == "physical":
            results.append(_per_period_result(
                spec, schema, _row_values(ev, schema, sub["producer"]), _row_values(ev, schema, sub["consumer"]), tol))
        elif kind == "converged":
            lhs = _num(ev.value(sub["lhs"]))
            rhs = _num(ev.value(sub["rhs"]))
            diff = abs(lhs - rhs)
            if math.isnan(diff):
                diff = math.inf
            passed = ev.converged and diff <= tol
            results.append(CheckResult(spec.id, spec.category, spec.kind, passed,
                                       [], 0.0 if passed else max(diff, ev.max_residual), spec.description))
        elif kind == "input":
            if sub["kind"] == "sums_to_one":
                total = sum(_num(ev.value(c)) for c in sub["cells"])
                diff = abs(total - 1.0)
            else:
                v = _num(ev.value(sub["cell"]))
                diff = max(v - sub["max"], sub["min"] - v, 0.0)
            if math.isnan(diff):
                diff = math.inf
            passed = diff <= tol
            results.append(CheckResult(spec.id, spec.category, spec.kind, passed, [],
                                       0.0 if passed else diff, spec.description))
        elif kind == "threshold":
            ratios = _row_values(ev, schema, sub["ratio_row"])
            target = _num(ev.value(sub["threshold_cell"]))
            cmp = sub["comparator"]
            failing = []
            residual = 0.0
            for i, v in enumerate(ratios):
                if cmp == ">=":
                    short = target - v
                elif cmp == "<=":
                    short = v - target
                elif cmp == ">":
                    short = target - v if v > target else math.inf if v == target else target - v
                else:
                    short = v - target
                ok = short <= 0 if cmp in (">=", "<=") else short < 0
                if math.isnan(short):
                    ok, short = False, math.inf
                if not ok:
                    failing.append(schema.timeline_labels[i])
                    residual = max(residual, short)
            results.append(CheckResult(spec.id, spec.category, spec.kind, not failing, failing,
                                       residual, spec.description))
        elif kind == "external":
            ok = True
            for f_text in sub["formulas"]:
                v = evaluate_expression(wb, ev, f_text, AUDIT_SHEET if wb.sheet(AUDIT_SHEET) else wb.sheets[0].name)
                if v is not True:
                    ok = False
            results.append(CheckResult(spec.id, spec.category, spec.kind, ok, [],
                                       0.0 if ok else math.inf, spec.description))
        elif kind == "other":
            v = _num(ev.value(sub["cell"]))
            diff = abs(v - sub["expected"])
            if math.isnan(diff):
                diff = math.inf
            passed = diff <= sub["tolerance"]
            results.append(CheckResult(spec.id, spec.category, spec.kind, passed, [],
                                       0.0 if passed else diff, spec.description))
        else:
            raise SchemaError(f"unknown check subject {kind!r} for {spec.id}")
    return results
