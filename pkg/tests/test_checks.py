import json

import pytest

from audit_kit.checks import (
    AUDIT_SHEET,
    CATEGORY_NAMES,
    ModelSchema,
    audit_flag_ref,
    audit_root_ref,
    generate_checks,
    inject_audit_sheet,
    parse_rowspec,
    run_checks,
    validate_schema,
)
from audit_kit.detect import count_unique_formulae
from audit_kit.errors import SchemaError, SheetExistsError
from audit_kit.evaluate import evaluate
from audit_kit.workbook import loads_workbook, parse_a1


def test_fifteen_categories_named():
    assert set(CATEGORY_NAMES) == set(range(1, 16))
    assert all(isinstance(v, str) and v for v in CATEGORY_NAMES.values())


def test_parse_rowspec():
    rs = parse_rowspec("BS!6")
    assert rs.sheet == "BS" and rs.row == 6
    for bad in ("BS", "BS!x", "BS!6:7"):
        with pytest.raises(SchemaError):
            parse_rowspec(bad)


def test_schema_json_round_trip(model1):
    _wb, schema = model1
    again = ModelSchema.from_json(schema.to_json())
    assert again.to_json() == schema.to_json()
    assert again.n_periods == schema.n_periods


def test_schema_version_enforced():
    with pytest.raises(SchemaError):
        ModelSchema.from_json(json.dumps({"version": 2}))
    with pytest.raises(SchemaError):
        ModelSchema.from_json("not json")


def test_validate_schema_missing_row(model1):
    wb, schema = model1
    data = json.loads(schema.to_json())
    data["balance_sheet_rows"].append("BS!999")
    bad = ModelSchema.from_json(json.dumps(data))
    with pytest.raises(SchemaError):
        validate_schema(wb, bad)


def test_generated_specs_cover_expected_categories(model1):
    wb, schema = model1
    specs = generate_checks(wb, schema)
    cats = {s.category for s in specs}
    assert cats == {1, 2, 3, 4, 5, 6, 7, 10, 11, 12, 13, 14, 15}
    # category 14 is the only optimisation kind
    for s in specs:
        assert (s.kind == "optimisation") == (s.category == 14)


def test_balancing_item_refuses_balance_check(model1):
    wb, schema = model1
    data = json.loads(schema.to_json())
    data["balance"]["computed_by_balancing"] = True
    balancing = ModelSchema.from_json(json.dumps(data))
    with pytest.warns(UserWarning):
        specs = generate_checks(wb, balancing)
    assert not any(s.category == 1 for s in specs)


def test_each_test_contributes_four_unique_formulas(model1):
    wb, schema = model1
    specs = generate_checks(wb, schema)
    injected = inject_audit_sheet(wb, specs)
    audit_uniques = count_unique_formulae(injected, sheets=[AUDIT_SHEET])
    # shared restatement rows and the root/flag plumbing cancel exactly
    assert audit_uniques == 4 * len(specs)


def test_inject_audit_sheet_structure(model1):
    wb, schema = model1
    specs = generate_checks(wb, schema)
    injected = inject_audit_sheet(wb, specs)
    root = injected.cell(audit_root_ref())
    flag = injected.cell(audit_flag_ref())
    assert root.formula.startswith("=AND(")
    assert flag.formula == "=NOT(B1)"
    for spec in specs:
        assert injected.cell(spec.and_cell).formula == spec.and_formula
        assert injected.cell(spec.label_cell).value  # label text present
    # injecting twice is refused
    with pytest.raises(SheetExistsError):
        inject_audit_sheet(injected, specs)


def test_injected_formulas_agree_with_numeric_executor(fixture1, eval1):
    wb, schema = fixture1
    ev = eval1
    assert ev.value(audit_root_ref()) is True
    assert ev.value(audit_flag_ref()) is False
    results = run_checks(wb, schema, eval_result=ev)
    by_id = {r.id: r for r in results}
    specs = generate_checks(wb, schema)
    for spec in specs:
        cell_val = ev.value(spec.and_cell)
        assert cell_val == by_id[spec.id].passed, spec.id


def test_all_checks_pass_on_clean_fixture(fixture1, eval1):
    wb, schema = fixture1
    results = run_checks(wb, schema, eval_result=eval1)
    assert results and all(r.passed for r in results)
    for r in results:
        assert r.failing_periods == []
        assert r.residual == 0.0


def test_tolerance_is_respected(fixture1):
    wb, schema = fixture1
    broken = wb.copy()
    # nudge one balance sheet line by less than, then more than, tolerance
    target = parse_a1("BS!D5")
    base = broken.cell(target).formula
    broken.set_cell(target, formula=f"=({base[1:]})+0.004", allow_overwrite=True)
    fine = [r for r in run_checks(broken, schema) if r.category == 1]
    assert fine and all(r.passed for r in fine)
    broken.set_cell(target, formula=f"=({base[1:]})+0.02", allow_overwrite=True)
    coarse = [r for r in run_checks(broken, schema) if r.category == 1]
    assert any(not r.passed for r in coarse)
    # failing periods reported by timeline label; cash accumulates, so the
    # perturbation in period 2 ripples through every later period
    bad = next(r for r in coarse if not r.passed)
    assert bad.failing_periods == schema.timeline_labels[1:]
    # a looser explicit tolerance restores the pass
    loose = [r for r in run_checks(broken, schema, tolerance=0.1) if r.category == 1]
    assert all(r.passed for r in loose)


def test_loan_yield_check_uses_irr(fixture1):
    wb, schema = fixture1
    results = run_checks(wb, schema)
    ylds = [r for r in results if r.category == 10]
    assert ylds and all(r.passed for r in ylds)
    # overcharge interest in one period: implied yield no longer reconciles
    broken = wb.copy()
    base = broken.cell(parse_a1("Fund!E6")).formula
    broken.set_cell(parse_a1("Fund!E6"), formula=f"=1.1*({base[1:]})", allow_overwrite=True)
    ylds = [r for r in run_checks(broken, schema) if r.category == 10]
    assert any(not r.passed for r in ylds)


def test_convergence_check_fails_without_iteration(fixture1):
    from audit_kit.evaluate import IterationPolicy

    wb, schema = fixture1
    results = run_checks(wb, schema, policy=IterationPolicy(max_iterations=1))
    conv = [r for r in results if r.category == 12]
    assert conv and all(not r.passed for r in conv)


def test_life_total_identity(fixture1, eval1):
    wb, schema = fixture1
    results = run_checks(wb, schema, eval_result=eval1)
    life = [r for r in results if r.id == "c05-ident-equity-returned"]
    assert len(life) == 1 and life[0].passed


def test_external_checks_category_8_and_9(fixture1, eval1):
    wb, schema = fixture1
    data = json.loads(schema.to_json())
    data["external_checks"] = [
        {"id": "tax-incl", "category": 8, "formulas": ["=1+1=2"], "label": "Inclusion: tax"},
        {"id": "docs-tie", "category": 9, "formulas": ["=PL!C4=0"], "label": "Agreed to docs"},
        {"id": "doomed", "category": 8, "formulas": ["=1=2"], "label": "Inclusion: fails"},
    ]
    ext_schema = ModelSchema.from_json(json.dumps(data))
    results = {r.id: r for r in run_checks(wb, ext_schema, eval_result=eval1)}
    assert results["c08-ext-tax-incl"].passed
    assert results["c09-ext-docs-tie"].passed
    assert not results["c08-ext-doomed"].passed


def test_other_check_tolerance_and_errors():
    wb = loads_workbook("sheet S\nS!B2 = 10\nS!C2 = =B2*2\n")
    data = {
        "version": 1,
        "timeline": {"labels": ["p1"], "start_col": "C"},
        "other_checks": [
            {"id": "pin", "cell": "S!C2", "expected": 20.0, "tolerance": 0.5, "label": "pin"},
            {"id": "off", "cell": "S!C2", "expected": 25.0, "tolerance": 0.5, "label": "off"},
        ],
    }
    schema = ModelSchema.from_json(json.dumps(data))
    results = {r.id: r for r in run_checks(wb, schema)}
    assert results["c15-other-pin"].passed
    assert not results["c15-other-off"].passed
    assert results["c15-other-off"].residual == pytest.approx(5.0)


def test_audit_sheet_is_inert(model1):
    """Injecting the audit sheet must not change any model cell's value."""
    wb, schema = model1
    base = evaluate(wb).values
    injected = inject_audit_sheet(wb, generate_checks(wb, schema))
    after = evaluate(injected).values
    for key, value in base.items():
        assert after[key] == value
