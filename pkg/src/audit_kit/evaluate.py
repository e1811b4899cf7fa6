"""Deterministic workbook evaluation, including iterative circular solving.

Acyclic cells are computed in condensation topological order.  Each cyclic
cluster is solved by Jacobi-style fixed-point iteration: all member cells
start at 0, every sweep recomputes every member from the previous sweep's
values, and iteration stops once the largest absolute change falls below
the policy tolerance.  Clusters that fail to settle within the iteration
cap are marked #CYCLE! and the result is flagged non-converged.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal

from . import formula as F
from .errors import FormulaSyntaxError, NoRootError
from .graph import DependencyGraph, build_graph, is_cyclic_component, topo_order
from .workbook import (
    CYCLE_ERR,
    DIV0,
    NAME_ERR,
    REF_ERR,
    VALUE_ERR,
    CellError,
    CellRef,
    Range,
    Workbook,
    format_number,
)

BUILTIN_FUNCTIONS = {
    "SUM", "MIN", "MAX", "ABS", "ROUND", "IF", "AND", "OR", "NOT",
    "COUNT", "AVERAGE", "NPV",
}


@dataclass
class IterationPolicy:
    max_iterations: int = 100
    tolerance: float = 1e-9

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.tolerance <= 0:
            raise ValueError("tolerance must be > 0")


@dataclass
class EvalResult:
    values: dict = field(default_factory=dict)  # key (sheet,row,col) -> CellValue
    converged: bool = True
    iterations_used: int = 0
    max_residual: float = 0.0

    def value(self, ref: CellRef):
        return self.values.get(ref.key())


class _EvalError(Exception):
    def __init__(self, err: CellError):
        self.err = err


def _as_number(v) -> float:
    if isinstance(v, CellError):
        raise _EvalError(v)
    if isinstance(v, bool):
        return 1.0 if v else 0.0
    if isinstance(v, float):
        return v
    if v is None:
        return 0.0
    raise _EvalError(VALUE_ERR)


def _as_bool(v) -> bool:
    if isinstance(v, CellError):
        raise _EvalError(v)
    if isinstance(v, bool):
        return v
    if isinstance(v, float):
        return v != 0.0
    if v is None:
        return False
    raise _EvalError(VALUE_ERR)


def _as_text(v) -> str:
    if isinstance(v, CellError):
        raise _EvalError(v)
    if isinstance(v, bool):
        return "TRUE" if v else "FALSE"
    if isinstance(v, float):
        return format_number(v)
    if v is None:
        return ""
    return v


def _type_rank(v) -> int:
    # Spreadsheet ordering: numbers < text < booleans; blank coerces per peer.
    if isinstance(v, bool):
        return 2
    if isinstance(v, float) or v is None:
        return 0
    return 1


def _compare(op: str, a, b) -> bool:
    if isinstance(a, CellError):
        raise _EvalError(a)
    if isinstance(b, CellError):
        raise _EvalError(b)
    ra, rb = _type_rank(a), _type_rank(b)
    if a is None:
        a = 0.0 if rb == 0 else ("" if rb == 1 else False)
        ra = rb
    if b is None:
        b = 0.0 if ra == 0 else ("" if ra == 1 else False)
        rb = ra
    if ra == rb:
        if ra == 1:
            a, b = a.casefold(), b.casefold()
        eq = a == b
        lt = a < b
    else:
        eq = False
        lt = ra < rb
    if op == "=":
        return eq
    if op == "<>":
        return not eq
    if op == "<":
        return lt and not eq
    if op == "<=":
        return lt or eq
    if op == ">":
        return not lt and not eq
    return not lt  # >=


def spreadsheet_round(x: float, digits: int) -> float:
    """ROUND with halves away from zero, judged on the shortest decimal
    rendering of the argument (so ROUND(2.675, 2) = 2.68 despite binary
    floats storing 2.675 as slightly less)."""
    q = Decimal(1).scaleb(-int(digits))
    return float(Decimal(repr(x)).quantize(q, rounding=ROUND_HALF_UP))


class Evaluator:
    def __init__(self, wb: Workbook, policy: IterationPolicy | None = None):
        self.wb = wb
        self.policy = policy or IterationPolicy()
        self.asts = {}
        for sh in wb.sheets:
            for cell in sh.iter_cells():
                if cell.is_formula:
                    key = cell.ref.with_sheet(sh.name).key()
                    self.asts[key] = F.parse_formula(cell.formula)
        self.graph = build_graph(wb, self.asts)
        self.values = {}
        self._overlay = None  # previous-sweep values for cells mid-iteration

    # -- value lookup -------------------------------------------------------

    def _cell_value(self, ref: CellRef, holder_sheet: str):
        sheet = ref.sheet or holder_sheet
        if self.wb.sheet(sheet) is None:
            raise _EvalError(REF_ERR)
        key = (sheet.lower(), ref.row, ref.col)
        if self._overlay is not None and key in self._overlay:
            return self._overlay[key]
        if key in self.values:
            return self.values[key]
        cell = self.wb.cell(CellRef(sheet, ref.col, ref.row))
        if cell is None or not cell.is_formula:
            if cell is None:
                return None
            v = cell.value
            if isinstance(v, int) and not isinstance(v, bool):
                return float(v)
            return v
        # Forward reference inside an unevaluated region should not occur in
        # topological order; treat as blank defensively.
        return None

    # -- expression evaluation ---------------------------------------------

    def _eval(self, node, sheet: str):
        if isinstance(node, F.Literal):
            v = node.value
            return float(v) if isinstance(v, (int, float)) and not isinstance(v, bool) else v
        if isinstance(node, F.Ref):
            return self._cell_value(node.ref, sheet)
        if isinstance(node, F.RangeRef):
            raise _EvalError(VALUE_ERR)  # range in scalar context
        if isinstance(node, F.NameRef):
            target = self.wb.resolve_name(node.name)
            if target is None:
                raise _EvalError(NAME_ERR)
            if isinstance(target, Range):
                raise _EvalError(VALUE_ERR)
            return self._cell_value(target, sheet)
        if isinstance(node, F.Unary):
            v = _as_number(self._eval(node.child, sheet))
            return -v if node.op == "-" else v
        if isinstance(node, F.Binary):
            return self._binary(node, sheet)
        if isinstance(node, F.Call):
            return self._call(node, sheet)
        raise TypeError(f"not an AST node: {node!r}")

    def _binary(self, node, sheet):
        op = node.op
        if op in F.COMPARE_OPS:
            return _compare(op, self._eval(node.left, sheet), self._eval(node.right, sheet))
        if op == "&":
            return _as_text(self._eval(node.left, sheet)) + _as_text(self._eval(node.right, sheet))
        a = _as_number(self._eval(node.left, sheet))
        b = _as_number(self._eval(node.right, sheet))
        try:
            if op == "+":
                return a + b
            if op == "-":
                return a - b
            if op == "*":
                return a * b
            if op == "/":
                if b == 0:
                    raise _EvalError(DIV0)
                return a / b
            # "^"
            out = a ** b
            if isinstance(out, complex):
                raise _EvalError(VALUE_ERR)
            return float(out)
        except (OverflowError, ValueError):
            raise _EvalError(VALUE_ERR)

    # -- functions ----------------------------------------------------------

    def _elements(self, args, sheet, skip_scalar_blanks=False):
        """Flatten args for aggregators: range cells yield only their numbers,
        scalar args are coerced (text scalars are a type error)."""
        out = []
        for arg in args:
            if isinstance(arg, F.RangeRef):
                rng = arg.range
                s = rng.start.sheet or sheet
                if self.wb.sheet(s) is None:
                    raise _EvalError(REF_ERR)
                for c in Range(rng.start.with_sheet(s), rng.end.with_sheet(s)).cells():
                    v = self._cell_value(c, sheet)
                    if isinstance(v, CellError):
                        raise _EvalError(v)
                    if isinstance(v, float) and not isinstance(v, bool):
                        out.append(v)
            else:
                v = self._eval(arg, sheet)
                if v is None:
                    continue
                out.append(_as_number(v))
        return out

    def _bool_elements(self, args, sheet):
        out = []
        for arg in args:
            if isinstance(arg, F.RangeRef):
                rng = arg.range
                s = rng.start.sheet or sheet
                if self.wb.sheet(s) is None:
                    raise _EvalError(REF_ERR)
                for c in Range(rng.start.with_sheet(s), rng.end.with_sheet(s)).cells():
                    v = self._cell_value(c, sheet)
                    if isinstance(v, CellError):
                        raise _EvalError(v)
                    if isinstance(v, bool):
                        out.append(v)
                    elif isinstance(v, float):
                        out.append(v != 0.0)
            else:
                out.append(_as_bool(self._eval(arg, sheet)))
        return out

    def _call(self, node, sheet):
        name = node.func
        args = node.args
        if name not in BUILTIN_FUNCTIONS:
            raise _EvalError(NAME_ERR)
        if name == "IF":
            if len(args) not in (2, 3):
                raise _EvalError(VALUE_ERR)
            cond = _as_bool(self._eval(args[0], sheet))
            if cond:
                return self._eval(args[1], sheet)
            return self._eval(args[2], sheet) if len(args) == 3 else False
        if name == "NOT":
            if len(args) != 1:
                raise _EvalError(VALUE_ERR)
            return not _as_bool(self._eval(args[0], sheet))
        if name in ("AND", "OR"):
            values = self._bool_elements(args, sheet)
            if not values:
                raise _EvalError(VALUE_ERR)
            return all(values) if name == "AND" else any(values)
        if name == "ABS":
            if len(args) != 1:
                raise _EvalError(VALUE_ERR)
            return abs(_as_number(self._eval(args[0], sheet)))
        if name == "ROUND":
            if len(args) != 2:
                raise _EvalError(VALUE_ERR)
            x = _as_number(self._eval(args[0], sheet))
            d = _as_number(self._eval(args[1], sheet))
            return spreadsheet_round(x, int(d))
        if name == "NPV":
            if not args:
                raise _EvalError(VALUE_ERR)
            rate = _as_number(self._eval(args[0], sheet))
            flows = self._elements(args[1:], sheet)
            if rate <= -1.0:
                raise _EvalError(DIV0)
            return sum(f / (1.0 + rate) ** (i + 1) for i, f in enumerate(flows))
        values = self._elements(args, sheet)
        if name == "SUM":
            return math.fsum(values)
        if name == "COUNT":
            return float(len(values))
        if name == "AVERAGE":
            if not values:
                raise _EvalError(DIV0)
            return math.fsum(values) / len(values)
        if name == "MIN":
            return min(values) if values else 0.0
        return max(values) if values else 0.0  # MAX

    # -- driver --------------------------------------------------------------

    def _compute(self, key):
        sheet, row, col = key
        cell = self.wb.cell(CellRef(sheet, col, row))
        if cell is None:
            return None
        if not cell.is_formula:
            v = cell.value
            return float(v) if isinstance(v, (int, float)) and not isinstance(v, bool) else v
        try:
            return self._eval(self.asts[key], cell.ref.sheet)
        except _EvalError as exc:
            return exc.err
        except RecursionError:
            return VALUE_ERR

    def run(self) -> EvalResult:
        result = EvalResult()
        policy = self.policy
        for comp in topo_order(self.graph):
            if not is_cyclic_component(self.graph, comp):
                key = comp[0]
                self.values[key] = self._compute(key)
                continue
            prev = {key: 0.0 for key in comp}
            converged = False
            residual = math.inf
            used = 0
            for _ in range(policy.max_iterations):
                used += 1
                self._overlay = prev
                nxt = {key: self._compute(key) for key in comp}
                self._overlay = None
                residual = 0.0
                for key in comp:
                    a, b = prev[key], nxt[key]
                    if isinstance(a, float) and isinstance(b, float):
                        residual = max(residual, abs(a - b))
                    elif a != b:
                        residual = math.inf
                prev = nxt
                if residual <= policy.tolerance:
                    converged = True
                    break
            result.iterations_used = max(result.iterations_used, used)
            result.max_residual = max(result.max_residual, 0.0 if converged else residual)
            if converged:
                self.values.update(prev)
            else:
                result.converged = False
                for key in comp:
                    self.values[key] = CYCLE_ERR
        result.values = self.values
        return result


def evaluate(wb: Workbook, policy: IterationPolicy | None = None) -> EvalResult:
    """Evaluate every cell of the workbook; failures become error values."""
    return Evaluator(wb, policy).run()


def evaluate_expression(wb: Workbook, ev: EvalResult, src: str, sheet: str):
    """Evaluate a standalone formula against an already-evaluated workbook."""
    evaluator = Evaluator.__new__(Evaluator)
    evaluator.wb = wb
    evaluator.policy = IterationPolicy()
    evaluator.asts = {}
    evaluator.values = ev.values
    evaluator._overlay = None
    try:
        ast = F.parse_formula(src)
        return evaluator._eval(ast, sheet)
    except _EvalError as exc:
        return exc.err
    except FormulaSyntaxError:
        return VALUE_ERR


def builtin_call(name: str, args):
    """Invoke a whitelisted builtin directly on already-evaluated values.

    Blanks (None) are skipped by aggregators just as blank cells are; errors
    come back as error CellValues rather than exceptions.
    """
    evaluator = Evaluator.__new__(Evaluator)
    evaluator.wb = Workbook()
    evaluator.policy = IterationPolicy()
    evaluator.asts = {}
    evaluator.values = {}
    evaluator._overlay = None
    node = F.Call(name.upper(), tuple(F.Literal(a) for a in args))
    try:
        return evaluator._call(node, "Sheet1")
    except _EvalError as exc:
        return exc.err


# ---------------------------------------------------------------------------
# IRR solver


def npv(rate: float, cashflows) -> float:
    """Net present value with the first flow at period 0 (undiscounted)."""
    return math.fsum(f / (1.0 + rate) ** t for t, f in enumerate(cashflows))


_SCAN_STEP = 1e-3
_RATE_LO = -0.99
_RATE_HI = 10.0


def solve_irr(cashflows) -> float:
    """Periodic rate in (-0.99, 10] with NPV = 0, root nearest zero.

    Scans 1e-3-wide brackets outward from 0 for a sign change, then
    bisects.  Raises NoRootError when no sign change exists in range or the
    flows do not change sign at all.
    """
    flows = [float(f) for f in cashflows]
    if not any(f > 0 for f in flows) or not any(f < 0 for f in flows):
        raise NoRootError("cashflows must contain at least one inflow and one outflow")

    def bracket_candidates():
        k = 0
        while True:
            lo_p = k * _SCAN_STEP
            hi_p = (k + 1) * _SCAN_STEP
            emitted = False
            if lo_p < _RATE_HI:
                yield (lo_p, min(hi_p, _RATE_HI))
                emitted = True
            hi_n = -k * _SCAN_STEP
            lo_n = -(k + 1) * _SCAN_STEP
            if hi_n > _RATE_LO:
                yield (max(lo_n, _RATE_LO), hi_n)
                emitted = True
            if not emitted:
                return
            k += 1

    for lo, hi in bracket_candidates():
        f_lo, f_hi = npv(lo, flows), npv(hi, flows)
        if f_lo == 0.0:
            return lo
        if f_hi == 0.0:
            return hi
        if (f_lo > 0) == (f_hi > 0):
            continue
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            f_mid = npv(mid, flows)
            if f_mid == 0.0 or hi - lo < 1e-13:
                return mid
            if (f_mid > 0) == (f_lo > 0):
                lo, f_lo = mid, f_mid
            else:
                hi, f_hi = mid, f_mid
        return 0.5 * (lo + hi)
    raise NoRootError("no sign change of NPV in (-0.99, 10]")
