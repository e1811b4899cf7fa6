import json

import pytest

from audit_kit.checks import ModelSchema, run_checks
from audit_kit.errors import (
    BaselineDirtyError,
    CannotConstructError,
    NothingToDoError,
    TargetMissingError,
)
from audit_kit.evaluate import evaluate
from audit_kit.mutate import (
    CoverageReport,
    Mutation,
    apply_mutation,
    load_mutations,
    regression_lock,
    run_campaign,
    standard_mutations,
)
from audit_kit.workbook import parse_a1

EXPECTED_IDS = {
    "drop-subtotal-term",
    "sign-flip",
    "over-repay-loan",
    "over-depreciate",
    "stale-report-link",
    "break-identity",
    "break-convergence",
    "final-balance-residue",
}


@pytest.fixture(scope="module")
def campaign(fixture1):
    wb, schema = fixture1
    return run_campaign(wb, schema, seed=0)


def test_standard_suite_has_eight_mutations(fixture1):
    wb, schema = fixture1
    muts = standard_mutations(wb, schema, seed=0)
    assert {m.id for m in muts} == EXPECTED_IDS


def test_standard_suite_is_seed_deterministic(fixture1):
    wb, schema = fixture1
    a = standard_mutations(wb, schema, seed=3)
    b = standard_mutations(wb, schema, seed=3)
    assert [(m.id, m.target, m.new_formula, m.new_value) for m in a] == [
        (m.id, m.target, m.new_formula, m.new_value) for m in b
    ]
    # different seeds land the faults in different periods (columns)
    target_cols = set()
    for seed in range(8):
        muts = standard_mutations(wb, schema, seed=seed)
        sub = next(m for m in muts if m.id == "drop-subtotal-term")
        target_cols.add(sub.target.col)
    assert len(target_cols) > 1


def test_full_kill_rate_and_expected_categories(campaign):
    assert campaign.kill_rate == 1.0
    assert campaign.all_caught
    for outcome in campaign.outcomes:
        assert outcome.caught, outcome.mutation.id
        assert outcome.expected_hit, outcome.mutation.id
        assert outcome.mutation.expected_category in outcome.failing_categories


def test_root_flag_flips_under_mutation(fixture1):
    from audit_kit.checks import audit_flag_ref, audit_root_ref

    wb, schema = fixture1
    mutation = next(
        m for m in standard_mutations(wb, schema, seed=0) if m.id == "break-identity"
    )
    mutated = apply_mutation(wb, mutation)
    ev = evaluate(mutated)
    assert ev.value(audit_root_ref()) is False
    assert ev.value(audit_flag_ref()) is True


def test_apply_mutation_leaves_original_untouched(fixture1):
    wb, schema = fixture1
    mutation = Mutation("edit", "edit", 5, "", target=parse_a1("PL!D4"), new_value=0.0)
    mutated = apply_mutation(wb, mutation)
    assert wb.cell(parse_a1("PL!D4")).formula is not None
    assert mutated.cell(parse_a1("PL!D4")).value == 0.0
    with pytest.raises(TargetMissingError):
        apply_mutation(wb, Mutation("x", "x", 5, "", target=parse_a1("PL!Z99"), new_value=1.0))


def test_empty_suite_is_vacuous_pass(fixture1):
    wb, schema = fixture1
    report = run_campaign(wb, schema, mutations=[])
    assert report.kill_rate is None
    assert report.all_caught  # vacuously
    assert CoverageReport().caught_count == 0


def test_dirty_baseline_rejected(fixture1):
    wb, schema = fixture1
    dirty = wb.copy()
    dirty.set_cell(parse_a1("PL!D4"), value=999.0, allow_overwrite=True)
    with pytest.raises(BaselineDirtyError):
        run_campaign(dirty, schema)


def test_load_mutations_from_json(fixture1, tmp_path):
    wb, schema = fixture1
    suite = [
        {
            "id": "custom-break",
            "expected_category": 5,
            "description": "left side of the interest identity off by one",
            "target": "Casc!D5",
            "new_formula": "=-Fund!D6+1",
        }
    ]
    path = tmp_path / "suite.json"
    path.write_text(json.dumps(suite))
    muts = load_mutations(path)
    assert len(muts) == 1 and muts[0].target == parse_a1("Casc!D5")
    report = run_campaign(wb, schema, mutations=muts)
    assert report.kill_rate == 1.0
    assert report.outcomes[0].expected_hit


def test_regression_lock_covers_an_uncaught_fault(fixture1):
    wb, schema = fixture1
    # a pad filler cell feeds nothing: no standard check can see it change
    target = parse_a1("Pad!C5000")
    assert wb.cell(target) is not None
    sneaky = Mutation("sneaky", "sneaky", 15, "uncovered filler edit",
                      target=target, new_formula="=Inputs!$B$3*999")
    report = run_campaign(wb, schema, mutations=[sneaky])
    assert report.kill_rate == 0.0  # demonstrably uncovered

    locked = regression_lock(wb, schema, sneaky)
    lock_ids = {oc["id"] for oc in locked.other_checks}
    assert "lock-sneaky" in lock_ids
    # under the locked schema the fault is caught, baseline still clean
    report2 = run_campaign(wb, locked, mutations=[sneaky])
    assert report2.kill_rate == 1.0


def test_regression_lock_refuses_covered_mutation(fixture1):
    wb, schema = fixture1
    covered = next(
        m for m in standard_mutations(wb, schema, seed=0) if m.id == "break-identity"
    )
    with pytest.raises(NothingToDoError):
        regression_lock(wb, schema, covered)


def test_regression_lock_cannot_construct_from_no_op(fixture1):
    wb, schema = fixture1
    cell = wb.cell(parse_a1("Inputs!A3"))
    assert isinstance(cell.value, str)  # a text label: numerically invisible
    no_op = Mutation("noop", "noop", 15, "text label edit",
                     target=parse_a1("Inputs!A3"), new_value="Capex!")
    with pytest.raises(CannotConstructError):
        regression_lock(wb, schema, no_op)


def test_break_convergence_is_policy_only(fixture1):
    wb, schema = fixture1
    mut = next(m for m in standard_mutations(wb, schema, seed=0) if m.id == "break-convergence")
    assert mut.target is None
    assert mut.policy_override is not None
    assert apply_mutation(wb, mut) is wb  # no cell edit involved
    results = run_checks(wb, schema, policy=mut.policy_override)
    fails = {r.category for r in results if not r.passed}
    assert 12 in fails
