"""Reference project-finance model generator.

Builds a self-consistent single-asset project financing: capex funded by
equity and debt (with an arrangement fee that is circular in total
funding), straight-line depreciation, amortising debt, all free cash paid
out as dividends, equity repaid at the end of life.  The accounting is
exact, so the balance sheet balances and clears out by construction and
the full self-check suite passes on the baseline.

``scale`` stretches the model: more periods, more subtotal/sign/identity
blocks on the Pad sheet, more covenant tests, and enough filler
calculation formulas that the testing density lands near one formula of
testing for every five of calculation.
"""

from __future__ import annotations

import json

from .checks import ModelSchema, generate_checks, inject_audit_sheet
from .detect import count_unique_formulae
from .workbook import CellRef, Workbook, col_to_letters

CALC_PER_TEST = 21  # calculation uniques per test the generator pads up to
START_COL = 3  # period columns C..


def _periods(scale: int) -> int:
    return 8 + 2 * scale


class _Builder:
    def __init__(self, scale: int):
        if scale < 1:
            raise ValueError("scale must be >= 1")
        self.scale = scale
        self.P = _periods(scale)
        self.wb = Workbook()
        self.const = 0  # distinct multiplier source
        self.schema_data = {
            "version": 1,
            "timeline": {"labels": list(range(1, self.P + 1)), "start_col": "C"},
            "finite_life": True,
        }

    def next_const(self) -> int:
        self.const += 1
        return self.const

    def cols(self):
        return range(START_COL, START_COL + self.P)

    def set(self, sheet, col, row, formula=None, value=None, label=None):
        self.wb.set_cell(CellRef(sheet, col, row), formula=formula, value=value, label=label)

    def text(self, sheet, row, text):
        self.set(sheet, 1, row, value=text)

    def fill(self, sheet, row, first_formula, rest_formula=None, label=None):
        """Fill a row across all period columns.  ``{c}``, ``{pc}`` expand to
        the current and previous column letters; the same formula shape in
        every column keeps the row at one unique normalized formula."""
        rest_formula = first_formula if rest_formula is None else rest_formula
        for i, col in enumerate(self.cols()):
            tmpl = first_formula if i == 0 else rest_formula
            src = tmpl.format(c=col_to_letters(col), pc=col_to_letters(col - 1))
            if src.startswith("="):
                self.set(sheet, col, row, formula=src, label=label if i == 0 else None)
            else:
                self.set(sheet, col, row, value=float(src), label=label if i == 0 else None)


def _build_core(b: _Builder) -> None:
    P = b.P
    wb = b.wb
    for name in ("Inputs", "Work", "Fund", "PL", "BS", "Flow", "Casc", "Ratios", "Pad"):
        wb.add_sheet(name)

    capex = 1000.0
    eq_share, dt_share = 0.3, 0.7
    rate = 0.08
    volume, price = 100.0, 2.6
    opex = 60.0
    fee_rate = 0.02
    life = P - 1  # operating periods

    ip = [
        (3, capex, "Capex"),
        (4, eq_share, "Equity share"),
        (5, dt_share, "Debt share"),
        (6, rate, "Interest rate"),
        (7, opex, "Opex per period"),
        (9, volume, "Output volume"),
        (10, price, "Output price"),
        (11, 2.0, "Operations start period"),
        (15, fee_rate, "Arrangement fee rate"),
    ]
    for row, value, label in ip:
        b.text("Inputs", row, label)
        b.set("Inputs", 2, row, value=value, label=label)

    # Work: timeline, capex/fee (circular in total funding), production
    b.text("Work", 2, "Period")
    b.set("Work", START_COL, 2, value=1.0)
    for col in list(b.cols())[1:]:
        b.set("Work", col, 2, formula=f"={col_to_letters(col - 1)}2+1")
    b.fill("Work", 15, "=IF(Work!{c}$2=1,Inputs!$B$3,0)", label="Capex spend")
    b.fill("Work", 16, "=IF(Work!{c}$2=1,Inputs!$B$15*{c}17,0)", label="Arrangement fee")
    b.fill("Work", 17, "=Work!{c}15+Work!{c}16", label="Total funding")
    # non-circular restatement of the fee, for the convergence check
    b.set("Work", START_COL, 24, formula=f"=Inputs!$B$15*{col_to_letters(START_COL)}17",
          label="Fee restated (non-circular)")
    b.fill("Work", 20, "=IF(Work!{c}$2=1,0,Inputs!$B$9)", label="Output produced")
    b.fill("Work", 21, "=PL!{c}4/Inputs!$B$10", label="Output sold")

    # Fund: drawdowns, debt amortisation, equity account
    b.fill("Fund", 4, "=Inputs!$B$4*Work!{c}17", label="Equity drawn")
    b.fill("Fund", 5, "=Inputs!$B$5*Work!{c}17", label="Debt drawn")
    b.fill("Fund", 6, "=Fund!{pc}8*Inputs!$B$6", label="Interest")
    b.fill("Fund", 7, f"=IF(Work!{{c}}$2=1,0,Fund!$C$5/{life})", label="Principal repayment")
    b.fill("Fund", 8, "=Fund!{pc}8+Fund!{c}5-Fund!{c}7", label="Debt balance")
    b.fill("Fund", 9, "=Fund!{pc}9+Fund!{c}4-Fund!{c}10", label="Equity balance")
    b.fill("Fund", 10, f"=IF(Work!{{c}}$2={P},Fund!$C$4,0)", label="Equity repaid")

    # PL
    b.fill("PL", 4, "=IF(Work!{c}$2=1,0,Inputs!$B$9*Inputs!$B$10)", label="Revenue")
    b.fill("PL", 5, "=IF(Work!{c}$2=1,0,-Inputs!$B$7)", label="Operating costs")
    b.fill("PL", 6, "=PL!{c}4+PL!{c}5", label="EBITDA")
    b.fill("PL", 7, f"=IF(Work!{{c}}$2=1,0,-Work!$C$17/{life})", label="Depreciation")
    b.fill("PL", 8, "=-Fund!{c}6", label="Interest expense")
    b.fill("PL", 9, "=PL!{c}6+PL!{c}7+PL!{c}8", label="Profit")

    # Casc: cash cascade (waterfall)
    b.fill("Casc", 4, "=PL!{c}6+Fund!{c}4+Fund!{c}5-Work!{c}15-Work!{c}16",
           label="Cash available")
    b.fill("Casc", 5, "=-Fund!{c}6", label="Less interest")
    b.fill("Casc", 6, "=Casc!{c}4+Casc!{c}5", label="After interest")
    b.fill("Casc", 7, "=-Fund!{c}7", label="Less principal")
    b.fill("Casc", 8, "=Casc!{c}6+Casc!{c}7", label="After debt service")
    b.fill("Casc", 9, "=-Fund!{c}10", label="Less equity repayment")
    b.fill("Casc", 10, "=Casc!{c}8+Casc!{c}9", label="After equity")
    b.fill("Casc", 11, "=-PL!{c}9", label="Dividends")
    b.fill("Casc", 12, "=Casc!{c}10+Casc!{c}11", label="Residue (net cash)")

    # Flow: independent direct-method net cash restatement
    b.fill(
        "Flow", 4,
        "=PL!{c}4+PL!{c}5+Fund!{c}4+Fund!{c}5"
        "-Work!{c}15-Work!{c}16-Fund!{c}6-Fund!{c}7-Fund!{c}10-PL!{c}9",
        label="Net cash flow",
    )

    # BS
    b.fill("BS", 4, "=BS!{pc}4+Work!{c}15+Work!{c}16+PL!{c}7", label="Net book value")
    b.fill("BS", 5, "=BS!{pc}5+Casc!{c}12", label="Cash")
    b.fill("BS", 6, "=BS!{c}4+BS!{c}5", label="Total assets")
    b.fill("BS", 8, "=Fund!{c}8", label="Debt")
    b.fill("BS", 9, "=Fund!{c}9", label="Equity")
    b.fill("BS", 10, "=BS!{pc}10+PL!{c}9+Casc!{c}11", label="Retained earnings")
    b.fill("BS", 11, "=BS!{c}8+BS!{c}9+BS!{c}10", label="Total liabilities and equity")

    total_funding = capex / (1.0 - dt_share * 0.0 - fee_rate)  # fee on total funding

    b.schema_data.update({
        "balance": {"assets_total": "BS!6", "liab_equity_total": "BS!11"},
        "balance_sheet_rows": ["BS!4", "BS!5", "BS!8", "BS!9", "BS!10"],
        "subtotals": [
            {"id": "ebitda", "total": "PL!6", "components": ["PL!4", "PL!5"]},
            {"id": "profit", "total": "PL!9", "components": ["PL!6", "PL!7", "PL!8"]},
            {"id": "assets", "total": "BS!6", "components": ["BS!4", "BS!5"]},
            {"id": "liabeq", "total": "BS!11", "components": ["BS!8", "BS!9", "BS!10"]},
        ],
        "sign_rules": [
            {"row": "BS!5", "sign": ">=0", "label": "Cash balance"},
            {"row": "BS!4", "sign": ">=0", "label": "Net book value"},
            {"row": "Fund!8", "sign": ">=0", "label": "Debt balance"},
            {"row": "PL!4", "sign": ">=0", "label": "Revenue"},
            {"row": "PL!5", "sign": "<=0", "label": "Operating costs"},
        ],
        "sources_uses": {"sources": ["Fund!4", "Fund!5"], "uses": ["Work!15", "Work!16"]},
        "identities": [
            {"id": "interest-ties", "left": ["Casc!5"], "right": ["PL!8"], "kind": "per-period"},
            {"id": "equity-returned", "left": ["Fund!4"], "right": ["Fund!10"], "kind": "life-total"},
        ],
        "cascade": {"residue": "Casc!12", "net_cash": "Flow!4"},
        "loans": [{
            "id": "senior",
            "drawdown": "Fund!5",
            "interest": "Fund!6",
            "repayment": "Fund!7",
            "rate_cell": "Inputs!B6",
        }],
        "physical_identities": [{"id": "output", "producer": "Work!20", "consumer": "Work!21"}],
        "input_rules": [
            {"kind": "sums_to_one", "cells": ["Inputs!B4", "Inputs!B5"]},
            {"kind": "range", "cell": "Inputs!B6", "min": 0.0, "max": 1.0},
            {"kind": "in_timeline", "cell": "Inputs!B11"},
        ],
        "convergence_pairs": [{"lhs": "Work!C16", "rhs": "Work!C24"}],
        "other_checks": [{
            "id": "funding",
            "cell": "Work!C17",
            "expected": round(total_funding, 2),
            "tolerance": 0.01,
            "label": "Reasonableness: total funding near expected value",
        }],
        "output_thresholds": [],
    })


def _add_thresholds(b: _Builder) -> None:
    """2*scale covenant-style tests on the Ratios sheet, all passing."""
    thresholds = []
    for k in range(2 * b.scale):
        row = 4 + k
        c = b.next_const()
        b.fill("Ratios", row, f"=Inputs!$B$9*{c + 1}/Inputs!$B$9",
               label=f"Cover ratio {k + 1}")
        b.text("Ratios", row, f"Cover ratio {k + 1}")
        b.set("Inputs", 4, 4 + k, value=c + 0.5, label=f"Covenant floor {k + 1}")
        thresholds.append({
            "id": f"cover{k + 1}",
            "ratio_row": f"Ratios!{row}",
            "comparator": ">=",
            "threshold_cell": f"Inputs!{'D'}{4 + k}",
        })
    b.schema_data["output_thresholds"] = thresholds


def _add_extra_tests(b: _Builder, count: int) -> None:
    """Cycle additional cat 2/3/5/13/15 tests onto the Pad sheet."""
    pad_row = 4
    input_row = 40  # spare literal inputs live at Inputs!F40...
    kinds = ["subtotal", "sign", "identity", "input", "other"]
    for n in range(count):
        kind = kinds[n % len(kinds)]
        if kind == "subtotal":
            a, t = pad_row, pad_row + 2
            c1, c2 = b.next_const(), b.next_const()
            b.fill("Pad", a, f"=Inputs!$B$3*{c1}")
            b.fill("Pad", a + 1, f"=Inputs!$B$3*{c2}")
            b.fill("Pad", t, f"={{c}}${a}+{{c}}${a + 1}")
            b.schema_data["subtotals"].append({
                "id": f"pad{n}",
                "total": f"Pad!{t}",
                "components": [f"Pad!{a}", f"Pad!{a + 1}"],
            })
            pad_row = t + 2
        elif kind == "sign":
            c = b.next_const()
            b.fill("Pad", pad_row, f"=Inputs!$B$9*{c}")
            b.schema_data["sign_rules"].append({
                "row": f"Pad!{pad_row}", "sign": ">=0", "label": f"Pad line {n}",
            })
            pad_row += 2
        elif kind == "identity":
            c = b.next_const()
            b.fill("Pad", pad_row, f"=Inputs!$B$3*{c}")
            b.fill("Pad", pad_row + 1, f"=Inputs!$B$3*{c}*1")
            b.schema_data["identities"].append({
                "id": f"pad{n}",
                "left": [f"Pad!{pad_row}"],
                "right": [f"Pad!{pad_row + 1}"],
                "kind": "per-period",
            })
            pad_row += 3
        elif kind == "input":
            b.set("Inputs", 6, input_row, value=0.5, label=f"Share input {n}")
            b.schema_data["input_rules"].append({
                "kind": "range", "cell": f"Inputs!F{input_row}", "min": 0.0, "max": 1.0,
            })
            input_row += 1
        else:  # other
            c = b.next_const()
            b.fill("Pad", pad_row, f"=Inputs!$B$3*{c}")
            b.schema_data["other_checks"].append({
                "id": f"pad{n}",
                "cell": f"Pad!{col_to_letters(START_COL)}{pad_row}",
                "expected": 1000.0 * c,
                "tolerance": 0.005,
                "label": f"Reasonableness: pad line {n} near expected value",
            })
            pad_row += 2


def _pad_filler(b: _Builder, schema: ModelSchema, target_calc_uniques: int) -> None:
    current = count_unique_formulae(b.wb)
    row = 5000
    while current < target_calc_uniques:
        c = b.next_const()
        b.set("Pad", START_COL, row, formula=f"=Inputs!$B$3*{c}")
        row += 1
        current += 1


def generate_reference_model(scale: int = 10):
    """Build the reference model at the given scale.

    Returns (workbook-without-audit, schema).  Inject the audit sheet with
    ``build_fixture`` or ``inject_audit_sheet`` to get the testable model.
    """
    b = _Builder(scale)
    _build_core(b)
    _add_thresholds(b)
    fixed_tests = (
        1  # balance
        + len(b.schema_data["subtotals"])
        + len(b.schema_data["sign_rules"])
        + 1  # sources = uses
        + len(b.schema_data["identities"])
        + 1  # clears out
        + 1  # cascade
        + len(b.schema_data["loans"])
        + len(b.schema_data["physical_identities"])
        + len(b.schema_data["convergence_pairs"])
        + len(b.schema_data["input_rules"])
        + len(b.schema_data["other_checks"])
        + len(b.schema_data["output_thresholds"])
    )
    extra = max(0, 10 * scale - fixed_tests)
    _add_extra_tests(b, extra)
    schema = ModelSchema.from_json(json.dumps(b.schema_data))
    n_tests = len(generate_checks(b.wb, schema))
    _pad_filler(b, schema, CALC_PER_TEST * n_tests)
    return b.wb, schema


def build_fixture(scale: int = 10):
    """(workbook-with-audit-sheet, schema) for the reference model."""
    wb, schema = generate_reference_model(scale)
    specs = generate_checks(wb, schema)
    return inject_audit_sheet(wb, specs), schema
