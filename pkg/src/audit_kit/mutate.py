"""Seeded-fault campaigns: plant known model errors, confirm the checks fire.

A mutation is a single-cell edit (or, for the convergence case, an
evaluation-policy override) paired with the check category expected to
catch it.  ``run_campaign`` verifies the baseline is clean, applies each
mutation in isolation and reports which checks fired.  ``regression_lock``
manufactures a reasonableness check that pins a cell to its baseline
value, for faults the standard catalog misses.
"""

from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass, field

from .checks import ModelSchema, run_checks
from .errors import BaselineDirtyError, CannotConstructError, NothingToDoError, TargetMissingError
from .evaluate import IterationPolicy, evaluate
from .workbook import CellRef, Workbook, col_to_letters


@dataclass
class Mutation:
    id: str
    kind: str
    expected_category: int
    description: str
    target: CellRef | None = None
    new_formula: str | None = None
    new_value: object = None
    policy_override: IterationPolicy | None = None


@dataclass
class MutationOutcome:
    mutation: Mutation
    caught: bool
    failing_categories: list
    expected_hit: bool


@dataclass
class CoverageReport:
    outcomes: list = field(default_factory=list)

    @property
    def caught_count(self) -> int:
        return sum(1 for o in self.outcomes if o.caught)

    @property
    def kill_rate(self):
        """Fraction of mutations caught; None (vacuous pass) for an empty suite."""
        if not self.outcomes:
            return None
        return self.caught_count / len(self.outcomes)

    @property
    def all_caught(self) -> bool:
        return all(o.caught for o in self.outcomes)


def apply_mutation(wb: Workbook, mutation: Mutation) -> Workbook:
    """Copy of the workbook with the mutation's cell edit applied."""
    if mutation.target is None:
        return wb
    if wb.cell(mutation.target) is None:
        raise TargetMissingError(f"mutation {mutation.id}: no cell at {mutation.target.to_a1()}")
    out = wb.copy()
    out.set_cell(
        mutation.target,
        formula=mutation.new_formula,
        value=mutation.new_value,
        allow_overwrite=True,
    )
    return out


def load_mutations(path) -> list:
    """Read a custom suite from a JSON list of mutation records."""
    from .workbook import parse_a1

    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    muts = []
    for entry in data:
        muts.append(Mutation(
            id=entry["id"],
            kind=entry.get("kind", entry["id"]),
            expected_category=int(entry["expected_category"]),
            description=entry.get("description", ""),
            target=parse_a1(entry["target"]) if entry.get("target") else None,
            new_formula=entry.get("new_formula"),
            new_value=entry.get("new_value"),
        ))
    return muts


def _last_col(schema: ModelSchema) -> int:
    return schema.period_col(schema.n_periods - 1)


def _cell_a1(sheet: str, col: int, row: int) -> str:
    return f"{sheet}!{col_to_letters(col)}{row}"


def standard_mutations(wb: Workbook, schema: ModelSchema, seed: int = 0) -> list:
    """The eight standard fault seeds, derived from the schema so they fit
    any model the schema describes.

    ``seed`` picks which operating period each single-cell fault lands in;
    the suite is identical for equal seeds.
    """
    rng = random.Random(seed)
    muts = []
    # operating periods only (not the construction or final period), so the
    # perturbed cells carry nonzero flows
    mid = schema.period_col(rng.randrange(1, max(2, schema.n_periods - 1)))
    last = _last_col(schema)

    subtotal = next((s for s in schema.subtotals if len(s["components"]) >= 2), None)
    if subtotal:
        total = subtotal["total"]
        kept = subtotal["components"][:-1]
        body = "+".join(_cell_a1(c.sheet, mid, c.row) for c in kept)
        muts.append(Mutation(
            id="drop-subtotal-term",
            kind="drop-subtotal-term",
            expected_category=2,
            description=f"subtotal {subtotal['id']} omits its last component in one period",
            target=CellRef(total.sheet, mid, total.row),
            new_formula="=" + body,
        ))

    neg_rule = next((r for r in schema.sign_rules if r["sign"] == "<=0"), None)
    if neg_rule:
        row = neg_rule["row"]
        cell = wb.cell(CellRef(row.sheet, mid, row.row))
        if cell is not None and cell.is_formula:
            muts.append(Mutation(
                id="sign-flip",
                kind="sign-flip",
                expected_category=3,
                description=f"{neg_rule['label'] or row} flips sign in one period",
                target=CellRef(row.sheet, mid, row.row),
                new_formula="=-(" + cell.formula[1:] + ")",
            ))

    if schema.loans:
        loan = schema.loans[0]
        rep = loan["repayment"]
        cell = wb.cell(CellRef(rep.sheet, mid, rep.row))
        if cell is not None and cell.is_formula:
            muts.append(Mutation(
                id="over-repay-loan",
                kind="over-repay-loan",
                expected_category=3,
                description=f"loan {loan['id']} repays 1.5x the scheduled principal once",
                target=CellRef(rep.sheet, mid, rep.row),
                new_formula="=1.5*(" + cell.formula[1:] + ")",
            ))

    dep_row = None
    for st in schema.subtotals:
        for comp in st["components"]:
            label_cell = wb.cell(CellRef(comp.sheet, schema.period_col(0), comp.row))
            if label_cell is not None and label_cell.label and "deprec" in label_cell.label.lower():
                dep_row = comp
    if dep_row is not None:
        cell = wb.cell(CellRef(dep_row.sheet, mid, dep_row.row))
        if cell is not None and cell.is_formula:
            muts.append(Mutation(
                id="over-depreciate",
                kind="over-depreciate",
                expected_category=3,
                description="depreciation runs at 1.5x in one period, driving book value negative",
                target=CellRef(dep_row.sheet, mid, dep_row.row),
                new_formula="=1.5*(" + cell.formula[1:] + ")",
            ))

    if schema.cascade:
        net = schema.cascade["net_cash"]
        ev = evaluate(wb)
        stale = ev.value(CellRef(net.sheet, last - 1, net.row))
        if isinstance(stale, (int, float)) and not isinstance(stale, bool):
            muts.append(Mutation(
                id="stale-report-link",
                kind="stale-report-link",
                expected_category=7,
                description="net cash report cell frozen at the previous period's value",
                target=CellRef(net.sheet, last, net.row),
                new_value=float(stale),
            ))

    ident = next((i for i in schema.identities if i["kind"] == "per-period"), None)
    if ident:
        left = ident["left"][0]
        cell = wb.cell(CellRef(left.sheet, mid, left.row))
        if cell is not None and cell.is_formula:
            muts.append(Mutation(
                id="break-identity",
                kind="break-identity",
                expected_category=5,
                description=f"identity {ident['id']} left side off by one in one period",
                target=CellRef(left.sheet, mid, left.row),
                new_formula="=(" + cell.formula[1:] + ")+1",
            ))

    if schema.convergence_pairs:
        muts.append(Mutation(
            id="break-convergence",
            kind="break-convergence",
            expected_category=12,
            description="iteration cap forced to one pass so the circular cluster cannot settle",
            policy_override=IterationPolicy(max_iterations=1),
        ))

    if schema.finite_life and schema.balance_sheet_rows:
        row = schema.balance_sheet_rows[-1]
        muts.append(Mutation(
            id="final-balance-residue",
            kind="final-balance-residue",
            expected_category=6,
            description="a balance sheet line is hard-coded to a residue in the final period",
            target=CellRef(row.sheet, last, row.row),
            new_value=5.0,
        ))

    return muts


def run_campaign(
    wb: Workbook,
    schema: ModelSchema,
    mutations=None,
    policy: IterationPolicy | None = None,
    seed: int = 0,
) -> CoverageReport:
    """Apply each mutation in isolation and record which categories fire.

    The unmutated workbook must pass every integrity check first;
    otherwise a fault could hide behind pre-existing noise.
    """
    baseline = run_checks(wb, schema, policy=policy)
    dirty = [r.id for r in baseline if r.kind == "integrity" and not r.passed]
    if dirty:
        raise BaselineDirtyError(f"baseline integrity failures: {', '.join(dirty)}")

    if mutations is None:
        mutations = standard_mutations(wb, schema, seed=seed)
    mutations = sorted(mutations, key=lambda m: m.id)

    report = CoverageReport()
    for m in mutations:
        mut_wb = apply_mutation(wb, m)
        use_policy = m.policy_override or policy
        results = run_checks(mut_wb, schema, policy=use_policy)
        failing = sorted({r.category for r in results if r.kind == "integrity" and not r.passed})
        caught = bool(failing)
        report.outcomes.append(MutationOutcome(
            mutation=m,
            caught=caught,
            failing_categories=failing,
            expected_hit=m.expected_category in failing,
        ))
    return report


def regression_lock(
    wb: Workbook,
    schema: ModelSchema,
    mutation: Mutation,
    policy: IterationPolicy | None = None,
) -> ModelSchema:
    """Pin a cell the mutation perturbs to its baseline value with a new
    reasonableness check, for faults the standard catalog misses.

    Returns a new schema whose added check fails on the mutated workbook
    and passes on the baseline.  Raises NothingToDo when the mutation is
    already caught, CannotConstruct when no suitable cell distinguishes
    the two workbooks.
    """
    baseline_results = run_checks(wb, schema, policy=policy)
    dirty = [r.id for r in baseline_results if r.kind == "integrity" and not r.passed]
    if dirty:
        raise BaselineDirtyError(f"baseline integrity failures: {', '.join(dirty)}")

    mut_wb = apply_mutation(wb, mutation)
    use_policy = mutation.policy_override or policy
    mut_results = run_checks(mut_wb, schema, policy=use_policy)
    if any(r.kind == "integrity" and not r.passed for r in mut_results):
        raise NothingToDoError(f"mutation {mutation.id} is already caught")

    ev_base = evaluate(wb, policy)
    ev_mut = evaluate(mut_wb, use_policy)

    best = None  # (node index proxy, key, base value, diff)
    order = []
    for sh in wb.sheets:
        for cell in sh.iter_cells():
            order.append(cell.ref.with_sheet(sh.name))
    for ref in order:
        key = ref.key()
        a = ev_base.values.get(key)
        b = ev_mut.values.get(key)
        if not isinstance(a, (int, float)) or isinstance(a, bool):
            continue
        if not isinstance(b, (int, float)) or isinstance(b, bool):
            diff = math.inf
        else:
            diff = abs(float(a) - float(b))
        if diff > schema.check_tolerance:
            best = (ref, float(a), diff)
            break
    if best is None:
        raise CannotConstructError(
            f"mutation {mutation.id} leaves every numeric cell within tolerance"
        )

    ref, expected, diff = best
    tol = min(schema.check_tolerance, diff / 2.0)
    data = json.loads(schema.to_json())
    data.setdefault("other_checks", []).append({
        "id": f"lock-{mutation.id}",
        "cell": ref.to_a1(),
        "expected": expected,
        "tolerance": tol,
        "label": f"Regression lock: {ref.to_a1()} near expected value",
    })
    locked = ModelSchema.from_json(json.dumps(data))

    # the lock must discriminate: fail mutated, pass baseline
    lock_id = f"c15-other-lock-{mutation.id}"
    mut_locked = {r.id: r for r in run_checks(mut_wb, locked, policy=use_policy)}
    base_locked = {r.id: r for r in run_checks(wb, locked, policy=policy)}
    if mut_locked[lock_id].passed or not base_locked[lock_id].passed:
        raise CannotConstructError(f"regression lock for {mutation.id} does not discriminate")
    return locked
