"""Detection and classification of self-checks in third-party workbooks,
plus the survey metrics derived from the counts.

Terminology used throughout:

  t  total unique formulas in the workbook
  o  unique formulas belonging to integrity tests
  i  unique formulas belonging to optimisation tests
  c  ordinary calculation formulas, c = t - o - i
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field

from .errors import EmptyModelError, FormulaSyntaxError
from .formula import (
    COMPARE_OPS,
    Binary,
    Call,
    NameRef,
    RangeRef,
    Ref,
    Unary,
    normalize_relative,
    parse_formula,
)
from .graph import DependencyGraph, build_graph
from .workbook import CellRef, Workbook

DEFAULT_CHECK_SHEETS = {"audit", "check", "checks", "tests", "integrity"}
SCATTERED_ATTRIBUTION = 3  # formulas credited per scattered (rule b) test

OPTIMISATION_LABEL_RE = re.compile(
    r"covenant|dscr|llcr|icr|threshold|target|repaid by|payback|hurdle", re.I
)


# ---------------------------------------------------------------------------
# Unique formula counting


def normalized_formulas(wb: Workbook) -> dict:
    """Map holder-cell key -> normalized formula text (formula cells only)."""
    out = {}
    for sh in wb.sheets:
        for cell in sh.iter_cells():
            if not cell.is_formula:
                continue
            holder = cell.ref.with_sheet(sh.name)
            try:
                ast = parse_formula(cell.formula)
            except FormulaSyntaxError:
                continue
            out[holder.key()] = normalize_relative(holder, ast)
    return out


def count_unique_formulae(wb: Workbook, sheets=None) -> int:
    """Number of distinct normalized formulas, optionally restricted to sheets."""
    wanted = None if sheets is None else {s.lower() for s in sheets}
    seen = set()
    for key, norm in normalized_formulas(wb).items():
        if wanted is not None and key[0] not in wanted:
            continue
        seen.add(norm)
    return len(seen)


# ---------------------------------------------------------------------------
# Test detection


@dataclass
class TestRecord:
    sheet: str
    normalized: str
    cells: list  # leaf boolean CellRefs sharing the normalized formula
    kind: str  # "integrity" | "optimisation"
    category: int
    label: str
    attributed_formula_count: int
    rule: str  # "dedicated" | "scattered" | "flagged"
    attributed_norms: frozenset = frozenset()  # (sheet_lower, normalized) claimed


def _ast_nodes(node):
    yield node
    if isinstance(node, Unary):
        yield from _ast_nodes(node.child)
    elif isinstance(node, Binary):
        yield from _ast_nodes(node.left)
        yield from _ast_nodes(node.right)
    elif isinstance(node, Call):
        for arg in node.args:
            yield from _ast_nodes(arg)


def _has_comparison(ast) -> bool:
    return any(isinstance(n, Binary) and n.op in COMPARE_OPS for n in _ast_nodes(ast))


def _is_plumbing(ast) -> bool:
    """Pure AND/OR/NOT over references and other plumbing: aggregates booleans
    computed elsewhere, computes no comparison of its own."""
    if isinstance(ast, (Ref, RangeRef, NameRef)):
        return True
    if isinstance(ast, Unary) and ast.op in ("+", "-"):
        return False
    if isinstance(ast, Call) and ast.func.upper() in ("AND", "OR", "NOT"):
        return all(_is_plumbing(a) for a in ast.args)
    return False


def _boolean_valued(value) -> bool:
    return isinstance(value, bool)


@dataclass
class DetectionReport:
    tests: list = field(default_factory=list)  # TestRecord
    plumbing_cells: list = field(default_factory=list)
    check_sheets: list = field(default_factory=list)

    @property
    def integrity_tests(self):
        return [t for t in self.tests if t.kind == "integrity"]

    @property
    def optimisation_tests(self):
        return [t for t in self.tests if t.kind == "optimisation"]


def detect_tests(
    wb: Workbook,
    values: dict | None = None,
    check_sheets=None,
    scattered_attribution: int = SCATTERED_ATTRIBUTION,
) -> DetectionReport:
    """Find self-checks by three rules:

    a. leaf boolean formulas (contain a comparison, evaluate to a boolean)
       on dedicated check sheets, grouped by normalized formula;
    b. scattered boolean cells elsewhere that depend on balance footings or
       carry check-like labels;
    c. anything already found by (a) that lives outside a dedicated sheet
       but aggregates into a NOT/AND flag structure.

    ``values`` maps cell keys to evaluated values; pass EvalResult.values
    for boolean-valuedness tests (cells without a known value fall back to
    a syntactic test: comparison at the top level or wrapped in AND/OR/NOT).
    """
    if check_sheets is None:
        check_sheets = DEFAULT_CHECK_SHEETS
    check_sheets = {s.lower() for s in check_sheets}
    report = DetectionReport()
    report.check_sheets = sorted(
        sh.name for sh in wb.sheets if sh.name.lower() in check_sheets
    )

    norms = normalized_formulas(wb)
    asts = {}
    for sh in wb.sheets:
        for cell in sh.iter_cells():
            if cell.is_formula:
                holder = cell.ref.with_sheet(sh.name)
                try:
                    asts[holder.key()] = parse_formula(cell.formula)
                except FormulaSyntaxError:
                    continue

    graph = build_graph(wb, asts=asts)

    def looks_boolean(key, ast) -> bool:
        if values is not None and key in values:
            return _boolean_valued(values.get(key))
        # syntactic fallback
        if isinstance(ast, Binary) and ast.op in COMPARE_OPS:
            return True
        if isinstance(ast, Call) and ast.func.upper() in ("AND", "OR", "NOT"):
            return True
        return False

    leaf_groups = {}  # (sheet_lower, normalized) -> [CellRef]
    scattered_leaves = {}
    for sh in wb.sheets:
        on_check_sheet = sh.name.lower() in check_sheets
        for cell in sh.iter_cells():
            holder = cell.ref.with_sheet(sh.name)
            key = holder.key()
            if key not in asts:
                continue
            ast = asts[key]
            if _is_plumbing(ast):
                if on_check_sheet or looks_boolean(key, ast):
                    report.plumbing_cells.append(holder)
                continue
            if not _has_comparison(ast) or not looks_boolean(key, ast):
                continue
            bucket = leaf_groups if on_check_sheet else scattered_leaves
            bucket.setdefault((sh.name.lower(), norms[key]), []).append(holder)

    # rule (b): keep scattered leaves that depend on balance footings or look
    # like checks by label; others are ordinary boolean calculations.
    label_re = re.compile(r"check|test|balanc|ok\b|error|integrity|valid", re.I)
    kept_scattered = {}
    for (sheet_low, norm), cells in scattered_leaves.items():
        keep = False
        for ref in cells:
            cell = wb.cell(ref)
            if cell is not None and cell.label and label_re.search(cell.label):
                keep = True
                break
        if not keep:
            keep = _depends_on_footing(wb, graph, cells)
        if not keep:
            # rule (c): the leaf feeds a boolean aggregation cell elsewhere
            plumb = {p.key() for p in report.plumbing_cells}
            keep = any(
                dep in plumb
                for ref in cells
                for dep in graph.dependents.get(ref.key(), ())
            )
        if keep:
            kept_scattered[(sheet_low, norm)] = cells

    plumbing_keys = {p.key() for p in report.plumbing_cells}

    for (sheet_low, norm), cells in sorted(leaf_groups.items()):
        cells = sorted(cells, key=lambda r: (r.row, r.col))
        label = _nearest_label(wb, cells[0], graph)
        support = _support_cells(graph, cells, plumbing_keys)
        group_norms = {(sheet_low, norm)}
        for ref in support:
            n = norms.get(ref.key())
            if n:
                group_norms.add((ref.sheet.lower(), n))
        category, kind = classify_test(wb, cells, label, norm)
        report.tests.append(
            TestRecord(
                sheet=wb.sheet(cells[0].sheet).name,
                normalized=norm,
                cells=cells,
                kind=kind,
                category=category,
                label=label,
                attributed_formula_count=len(group_norms),
                rule="dedicated",
                attributed_norms=frozenset(group_norms),
            )
        )

    for (sheet_low, norm), cells in sorted(kept_scattered.items()):
        cells = sorted(cells, key=lambda r: (r.row, r.col))
        label = _nearest_label(wb, cells[0], graph)
        category, kind = classify_test(wb, cells, label, norm)
        report.tests.append(
            TestRecord(
                sheet=wb.sheet(cells[0].sheet).name,
                normalized=norm,
                cells=cells,
                kind=kind,
                category=category,
                label=label,
                attributed_formula_count=scattered_attribution,
                rule="scattered",
                attributed_norms=frozenset({(sheet_low, norm)}),
            )
        )

    return report


def _depends_on_footing(wb: Workbook, graph: DependencyGraph, cells) -> bool:
    """True when any of the cells reads (directly) a row whose label looks
    like a balance sheet footing."""
    footing_re = re.compile(r"total assets|total liab|net assets|balance", re.I)
    for ref in cells:
        for prec in graph.precedents.get(ref.key(), ()):
            pcell = wb.cell(graph.node_for(prec))
            if pcell is not None and pcell.label and footing_re.search(pcell.label):
                return True
    return False


def _support_cells(graph: DependencyGraph, leaves, plumbing_keys) -> list:
    """Cells feeding the leaves on the same sheet (the restatement block,
    followed transitively) plus the plumbing aggregator consuming the leaves
    (the per-check AND cell)."""
    out = {}
    leaf_keys = {c.key() for c in leaves}
    sheet_low = leaves[0].sheet.lower()
    frontier = list(leaf_keys)
    seen = set(leaf_keys)
    while frontier:
        key = frontier.pop()
        for prec in graph.precedents.get(key, ()):
            if prec in seen:
                continue
            node = graph.node_for(prec)
            if node.sheet.lower() != sheet_low:
                continue
            seen.add(prec)
            out[prec] = node
            frontier.append(prec)
    for leaf in leaves:
        for dep in graph.dependents.get(leaf.key(), ()):
            if dep in plumbing_keys:
                out[dep] = graph.node_for(dep)
    return list(out.values())


def _nearest_label(wb: Workbook, ref: CellRef, graph: DependencyGraph) -> str:
    """Label of the test: the cell's own label, a text literal to its left
    on the same row, or the label on its plumbing dependent."""
    cell = wb.cell(ref)
    if cell is not None and cell.label:
        return cell.label
    sh = wb.sheet(ref.sheet)
    for col in range(ref.col - 1, 0, -1):
        left = sh.cell(ref.row, col)
        if left is not None:
            if isinstance(left.value, str):
                return left.value
            if left.label:
                return left.label
    for dep in graph.dependents.get(ref.key(), ()):
        node = graph.node_for(dep)
        dcell = wb.cell(node)
        if dcell is not None and node.sheet.lower() == ref.sheet.lower():
            dsh = wb.sheet(node.sheet)
            for col in range(node.col - 1, 0, -1):
                left = dsh.cell(node.row, col)
                if left is not None and isinstance(left.value, str):
                    return left.value
    return ""


# ---------------------------------------------------------------------------
# Classification

_CLASSIFIER_RULES = [
    (1, re.compile(r"balance sheet balanc|assets.{0,40}(liabilit|equit)", re.I)),
    (4, re.compile(r"source.{0,20}use", re.I)),
    (7, re.compile(r"cascade|waterfall|residue", re.I)),
    (2, re.compile(r"adds? up|subtotal|addition|cross.?cast", re.I)),
    (6, re.compile(r"clears? out|zero at end|end of life", re.I)),
    (3, re.compile(r"\bsign\b|non.?negative|never negative", re.I)),
    (10, re.compile(r"yield|irr\b|effective rate|rate assumption", re.I)),
    (12, re.compile(r"converg|iterat|circular", re.I)),
    (9, re.compile(r"\btax\b", re.I)),
    (8, re.compile(r"inclusion|ratio defin", re.I)),
    (11, re.compile(r"physical|feedstock|energy|throughput|capacity", re.I)),
    (13, re.compile(r"\binput|within range|timeline|date|sums? to one|shares", re.I)),
    (14, OPTIMISATION_LABEL_RE),
    (5, re.compile(r"identity|reconcil|matches|agrees|ties", re.I)),
    (15, re.compile(r"reasonab|sanity|order of magnitude|expected value", re.I)),
]


def classify_test(wb: Workbook, cells, label: str, normalized: str):
    """(category, kind) for a detected test; label patterns first, then a
    structural look at the comparison itself."""
    for category, pattern in _CLASSIFIER_RULES:
        if label and pattern.search(label):
            kind = "optimisation" if category == 14 else "integrity"
            return category, kind

    # structural fallbacks on the normalized formula text
    text = normalized.upper()
    if re.search(r"(>=|<=|>|<)", text) and not re.search(r"ABS\(", text):
        # inequality without the |x-y|<=tol idiom: sign or threshold test
        if re.search(r"(>=|>)\s*0(?![.\d])", text) or re.search(r"(<=|<)\s*0(?![.\d])", text):
            return 3, "integrity"
        if label and OPTIMISATION_LABEL_RE.search(label):
            return 14, "optimisation"
        return 14, "optimisation"
    if "SUM(" in text:
        return 2, "integrity"
    return 5, "integrity"


# ---------------------------------------------------------------------------
# Survey metrics


@dataclass
class SurveyCounts:
    name: str
    total_unique: float  # t
    integrity_unique: float  # o
    optimisation_unique: float  # i


@dataclass
class MetricsReport:
    name: str
    t: float
    o: float
    i: float
    c: float
    pct_testing: float  # (o + i) / t, fraction
    calcs_per_integrity: float  # c / o, math.inf when o == 0
    per_category: dict = field(default_factory=dict)  # category -> test count


def compute_metrics(counts: SurveyCounts, per_category: dict | None = None) -> MetricsReport:
    t, o, i = counts.total_unique, counts.integrity_unique, counts.optimisation_unique
    if t <= 0:
        raise EmptyModelError(f"{counts.name}: no formulas to survey")
    c = t - o - i
    pct = (o + i) / t
    ratio = math.inf if o == 0 else c / o
    return MetricsReport(counts.name, t, o, i, c, pct, ratio, dict(per_category or {}))


def metrics_from_detection(name: str, wb: Workbook, report: DetectionReport) -> MetricsReport:
    t = count_unique_formulae(wb)
    o = 0.0
    i = 0.0
    for test in report.tests:
        if test.kind == "optimisation":
            i += test.attributed_formula_count
        else:
            o += test.attributed_formula_count
    # root and flag plumbing on dedicated sheets belongs to testing too
    norms = normalized_formulas(wb)
    o += _unattributed_plumbing(wb, report, norms)
    per_category = {}
    for test in report.tests:
        per_category[test.category] = per_category.get(test.category, 0) + 1
    return compute_metrics(SurveyCounts(name, float(t), o, i), per_category)


def _unattributed_plumbing(wb: Workbook, report: DetectionReport, norms) -> int:
    """Root/flag style aggregators on check sheets that no test's support set
    claimed: counted as integrity formulas (they exist only for testing)."""
    check_sheet_lows = {s.lower() for s in report.check_sheets}
    claimed = set()
    for test in report.tests:
        claimed |= test.attributed_norms
    extra = set()
    for ref in report.plumbing_cells:
        if ref.sheet.lower() not in check_sheet_lows:
            continue
        n = norms.get(ref.key())
        if n and (ref.sheet.lower(), n) not in claimed:
            extra.add((ref.sheet.lower(), n))
    return len(extra)


def analyze_workbook(name: str, wb: Workbook, values: dict | None = None,
                     check_sheets=None) -> tuple:
    """Convenience: detect tests and compute metrics in one go."""
    report = detect_tests(wb, values=values, check_sheets=check_sheets)
    metrics = metrics_from_detection(name, wb, report)
    return report, metrics


# ---------------------------------------------------------------------------
# Survey report rendering


def _fmt_count(x: float) -> str:
    if x == int(x):
        return str(int(x))
    return f"{x:g}"


def _fmt_ratio(x: float) -> str:
    if math.isinf(x):
        return "n/a"
    if x >= 100:
        return str(int(x))  # printed surveys truncate large ratios
    return f"{x:.3g}"


def render_survey_report(reports, title="Survey of models") -> str:
    """Columnar report, one column per model, in the shape used by
    published audit-firm surveys: per-category test counts, then the
    distinct-formula block, then the analysis block."""
    from .checks import CATEGORY_NAMES

    rows = [("", [r.name for r in reports])]
    if any(r.per_category for r in reports):
        for cat in sorted(CATEGORY_NAMES):
            counts = [r.per_category.get(cat, 0) for r in reports]
            if any(counts):
                rows.append((
                    f"{cat:>2} {CATEGORY_NAMES[cat]}",
                    [_fmt_count(float(x)) for x in counts],
                ))
    rows += [
        ("Unique formulae (t)", [_fmt_count(r.t) for r in reports]),
        ("Integrity tests (o)", [_fmt_count(r.o) for r in reports]),
        ("Optimisation tests (i)", [_fmt_count(r.i) for r in reports]),
        ("Calculations (c)", [_fmt_count(r.c) for r in reports]),
        ("% testing", [f"{100 * r.pct_testing:.1f}%" for r in reports]),
        ("Calcs per integrity test", [_fmt_ratio(r.calcs_per_integrity) for r in reports]),
    ]
    name_w = max(len(label) for label, _ in rows) + 2
    col_w = max(12, max((len(v) for _, vals in rows for v in vals), default=12) + 2)
    lines = [title, "=" * len(title)]
    for label, vals in rows:
        lines.append(label.ljust(name_w) + "".join(v.rjust(col_w) for v in vals))
    return "\n".join(lines) + "\n"


def published_consistency(t: float, o: float, i: float, printed_pct: float,
                          tolerance: float = 0.005) -> bool:
    """Does a published percentage agree with the published counts?

    printed_pct is a fraction (0.16 for 16%); tolerance allows for the
    one-decimal rounding used in print.
    """
    return abs((o + i) / t - printed_pct) <= tolerance
