"""Spreadsheet formula parsing, printing and relative normalization.

The grammar (EBNF, lowest precedence first):

    formula    = "=" compare
    compare    = concat { ("=" | "<>" | "<" | "<=" | ">" | ">=") concat }
    concat     = addsub { "&" addsub }
    addsub     = muldiv { ("+" | "-") muldiv }
    muldiv     = power { ("*" | "/") power }
    power      = unary { "^" unary }
    unary      = ("-" | "+") unary | primary
    primary    = NUMBER | STRING | "TRUE" | "FALSE"
               | ref [":" ref] | NAME | NAME "(" [args] ")" | "(" compare ")"
    args       = compare { "," compare }

All binary operators are left-associative.  ``print_formula`` emits a
canonical form (no whitespace, upper-cased function names, minimal
parentheses) and ``parse(print(ast)) == ast`` holds.

``normalize_relative`` rewrites every reference as an offset from the cell
holding the formula (R1C1 style, absolute parts kept as literal row/column
numbers).  Two cells holding "the same formula filled across or down"
normalize to the same string, which is the unit of unique-formula counting.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from .errors import FormulaSyntaxError, UnknownNameError
from .workbook import CellRef, Range, col_to_letters, format_number

# ---------------------------------------------------------------------------
# AST nodes


@dataclass(frozen=True)
class Literal:
    value: object  # float | bool | str


@dataclass(frozen=True)
class Ref:
    ref: CellRef


@dataclass(frozen=True)
class RangeRef:
    range: Range


@dataclass(frozen=True)
class NameRef:
    name: str


@dataclass(frozen=True)
class Unary:
    op: str  # "-" or "+"
    child: object


@dataclass(frozen=True)
class Binary:
    op: str
    left: object
    right: object


@dataclass(frozen=True)
class Call:
    func: str
    args: tuple


COMPARE_OPS = ("=", "<>", "<=", ">=", "<", ">")
_PREC = {}
for _op in COMPARE_OPS:
    _PREC[_op] = 1
_PREC["&"] = 2
_PREC["+"] = 3
_PREC["-"] = 3
_PREC["*"] = 4
_PREC["/"] = 4
_PREC["^"] = 5
_UNARY_PREC = 6
_ATOM_PREC = 7


# ---------------------------------------------------------------------------
# Lexer

_TOKEN_REF = re.compile(
    r"(?:(?P<sheet>[A-Za-z_][A-Za-z0-9_]*)!)?"
    r"(?P<cabs>\$?)(?P<col>[A-Za-z]{1,3})(?P<rabs>\$?)(?P<row>[1-9][0-9]*)"
    r"(?![A-Za-z0-9_(])"
)
_TOKEN_NUMBER = re.compile(r"(\d+\.?\d*|\.\d+)([eE][+-]?\d+)?")
_TOKEN_STRING = re.compile(r'"(?:[^"]|"")*"')
_TOKEN_IDENT = re.compile(r"[A-Za-z_][A-Za-z0-9_.]*")
_TOKEN_OPS = ("<>", "<=", ">=", "=", "<", ">", "+", "-", "*", "/", "^", "&", "(", ")", ":", ",")


def _tokenize(src: str):
    """Yield (kind, value, position) tokens; kinds: num, str, ref, ident, op."""
    tokens = []
    i = 0
    n = len(src)
    while i < n:
        ch = src[i]
        if ch.isspace():
            i += 1
            continue
        m = _TOKEN_REF.match(src, i)
        if m:
            ref = CellRef(
                sheet=m.group("sheet"),
                col=_col(m.group("col")),
                row=int(m.group("row")),
                col_absolute=bool(m.group("cabs")),
                row_absolute=bool(m.group("rabs")),
            )
            tokens.append(("ref", ref, i))
            i = m.end()
            continue
        m = _TOKEN_NUMBER.match(src, i)
        if m:
            tokens.append(("num", float(m.group(0)), i))
            i = m.end()
            continue
        m = _TOKEN_STRING.match(src, i)
        if m:
            tokens.append(("str", m.group(0)[1:-1].replace('""', '"'), i))
            i = m.end()
            continue
        m = _TOKEN_IDENT.match(src, i)
        if m:
            tokens.append(("ident", m.group(0), i))
            i = m.end()
            continue
        for op in _TOKEN_OPS:
            if src.startswith(op, i):
                tokens.append(("op", op, i))
                i += len(op)
                break
        else:
            raise FormulaSyntaxError(i, "a valid token", src)
    tokens.append(("end", None, n))
    return tokens


def _col(letters: str) -> int:
    col = 0
    for ch in letters.upper():
        col = col * 26 + (ord(ch) - ord("A") + 1)
    return col


# ---------------------------------------------------------------------------
# Parser


class _Parser:
    def __init__(self, src: str):
        self.src = src
        self.tokens = _tokenize(src)
        self.pos = 0

    def peek(self):
        return self.tokens[self.pos]

    def next(self):
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def expect_op(self, op):
        kind, value, at = self.peek()
        if kind != "op" or value != op:
            raise FormulaSyntaxError(at, repr(op), self.src)
        return self.next()

    def at_op(self, *ops):
        kind, value, _ = self.peek()
        return kind == "op" and value in ops

    def parse(self):
        node = self.compare()
        kind, _, at = self.peek()
        if kind != "end":
            raise FormulaSyntaxError(at, "end of formula", self.src)
        return node

    def _binary_level(self, ops, next_level):
        node = next_level()
        while self.at_op(*ops):
            _, op, _ = self.next()
            node = Binary(op, node, next_level())
        return node

    def compare(self):
        return self._binary_level(COMPARE_OPS, self.concat)

    def concat(self):
        return self._binary_level(("&",), self.addsub)

    def addsub(self):
        return self._binary_level(("+", "-"), self.muldiv)

    def muldiv(self):
        return self._binary_level(("*", "/"), self.power)

    def power(self):
        return self._binary_level(("^",), self.unary)

    def unary(self):
        if self.at_op("-", "+"):
            _, op, _ = self.next()
            return Unary(op, self.unary())
        return self.primary()

    def primary(self):
        kind, value, at = self.peek()
        if kind == "num":
            self.next()
            return Literal(value)
        if kind == "str":
            self.next()
            return Literal(value)
        if kind == "ref":
            self.next()
            if self.at_op(":"):
                self.next()
                k2, v2, at2 = self.peek()
                if k2 != "ref":
                    raise FormulaSyntaxError(at2, "a cell reference after ':'", self.src)
                self.next()
                end = v2
                if end.sheet and value.sheet and end.sheet.lower() != value.sheet.lower():
                    raise FormulaSyntaxError(at2, "range endpoints on the same sheet", self.src)
                if end.sheet is None and value.sheet is not None:
                    end = CellRef(value.sheet, end.col, end.row, end.col_absolute, end.row_absolute)
                return RangeRef(Range(value, end))
            return Ref(value)
        if kind == "ident":
            upper = value.upper()
            self.next()
            if upper in ("TRUE", "FALSE"):
                return Literal(upper == "TRUE")
            if self.at_op("("):
                self.next()
                args = []
                if not self.at_op(")"):
                    args.append(self.compare())
                    while self.at_op(","):
                        self.next()
                        args.append(self.compare())
                self.expect_op(")")
                return Call(upper, tuple(args))
            return NameRef(value)
        if kind == "op" and value == "(":
            self.next()
            node = self.compare()
            self.expect_op(")")
            return node
        raise FormulaSyntaxError(at, "a value, reference or '('", self.src)


def parse_formula(src: str):
    """Parse formula text (must begin with '=') into an AST."""
    if not src.startswith("="):
        raise FormulaSyntaxError(0, "'='", src)
    return _Parser(src[1:]).parse()


# ---------------------------------------------------------------------------
# Printer


def _prec(node) -> int:
    if isinstance(node, Binary):
        return _PREC[node.op]
    if isinstance(node, Unary):
        return _UNARY_PREC
    return _ATOM_PREC


def _print_node(node, render_ref) -> str:
    if isinstance(node, Literal):
        v = node.value
        if isinstance(v, bool):
            return "TRUE" if v else "FALSE"
        if isinstance(v, float):
            return format_number(v)
        return '"' + str(v).replace('"', '""') + '"'
    if isinstance(node, Ref):
        return render_ref(node.ref)
    if isinstance(node, RangeRef):
        rng = node.range
        start = render_ref(rng.start)
        end_ref = rng.end
        if end_ref.sheet and rng.start.sheet and end_ref.sheet.lower() == rng.start.sheet.lower():
            end_ref = CellRef(None, end_ref.col, end_ref.row, end_ref.col_absolute, end_ref.row_absolute)
        return start + ":" + render_ref(end_ref)
    if isinstance(node, NameRef):
        return node.name
    if isinstance(node, Unary):
        child = _print_node(node.child, render_ref)
        if _prec(node.child) < _UNARY_PREC:
            child = "(" + child + ")"
        return node.op + child
    if isinstance(node, Binary):
        prec = _PREC[node.op]
        left = _print_node(node.left, render_ref)
        if _prec(node.left) < prec:
            left = "(" + left + ")"
        right = _print_node(node.right, render_ref)
        if _prec(node.right) <= prec:
            right = "(" + right + ")"
        return left + node.op + right
    if isinstance(node, Call):
        args = ",".join(_print_node(a, render_ref) for a in node.args)
        return node.func.upper() + "(" + args + ")"
    raise TypeError(f"not an AST node: {node!r}")


def _render_a1(ref: CellRef) -> str:
    return ref.to_a1()


def print_formula(ast) -> str:
    """Render an AST back to canonical '=' formula text."""
    return "=" + _print_node(ast, _render_a1)


def canonicalize(src: str) -> str:
    return print_formula(parse_formula(src))


# ---------------------------------------------------------------------------
# Relative normalization


def _render_r1c1(ref: CellRef, holder: CellRef) -> str:
    parts = []
    if ref.sheet:
        parts.append(ref.sheet.upper() + "!")
    if ref.row_absolute:
        parts.append(f"R{ref.row}")
    else:
        dr = ref.row - holder.row
        parts.append(f"R[{dr}]" if dr else "R")
    if ref.col_absolute:
        parts.append(f"C{ref.col}")
    else:
        dc = ref.col - holder.col
        parts.append(f"C[{dc}]" if dc else "C")
    return "".join(parts)


def normalize_relative(cell: CellRef, ast) -> str:
    """Canonical relative-offset form of the formula held at ``cell``.

    Relative references become offsets from the holder, absolute references
    keep literal coordinates, so fill-across/fill-down copies collapse to a
    single string.
    """

    def render(ref):
        return _render_r1c1(ref, cell)

    return "=" + _print_node_norm(ast, render)


def _print_node_norm(node, render_ref) -> str:
    # Same as _print_node but upper-cases name references for canonical form.
    if isinstance(node, NameRef):
        return node.name.upper()
    if isinstance(node, Unary):
        child = _print_node_norm(node.child, render_ref)
        if _prec(node.child) < _UNARY_PREC:
            child = "(" + child + ")"
        return node.op + child
    if isinstance(node, Binary):
        prec = _PREC[node.op]
        left = _print_node_norm(node.left, render_ref)
        if _prec(node.left) < prec:
            left = "(" + left + ")"
        right = _print_node_norm(node.right, render_ref)
        if _prec(node.right) <= prec:
            right = "(" + right + ")"
        return left + node.op + right
    if isinstance(node, Call):
        args = ",".join(_print_node_norm(a, render_ref) for a in node.args)
        return node.func.upper() + "(" + args + ")"
    if isinstance(node, RangeRef):
        rng = node.range
        return render_ref(rng.start) + ":" + render_ref(rng.end)
    return _print_node(node, render_ref)


def translate(ast, dr: int, dc: int):
    """Shift every relative reference by (dr, dc); absolute parts unchanged."""

    def shift(ref: CellRef) -> CellRef:
        row = ref.row if ref.row_absolute else ref.row + dr
        col = ref.col if ref.col_absolute else ref.col + dc
        if row < 1 or col < 1:
            raise ValueError("translation moves reference off the grid")
        return CellRef(ref.sheet, col, row, ref.col_absolute, ref.row_absolute)

    if isinstance(ast, Ref):
        return Ref(shift(ast.ref))
    if isinstance(ast, RangeRef):
        return RangeRef(Range(shift(ast.range.start), shift(ast.range.end)))
    if isinstance(ast, Unary):
        return Unary(ast.op, translate(ast.child, dr, dc))
    if isinstance(ast, Binary):
        return Binary(ast.op, translate(ast.left, dr, dc), translate(ast.right, dr, dc))
    if isinstance(ast, Call):
        return Call(ast.func, tuple(translate(a, dr, dc) for a in ast.args))
    return ast


def references_of(ast, holder: CellRef, names: dict | None = None) -> set:
    """Every cell the formula reads, ranges expanded and names resolved.

    Returned refs are plain (no absoluteness) and sheet-qualified with the
    holder's sheet where the formula leaves the sheet implicit.
    """
    names = names or {}
    out = set()

    def lookup(name):
        low = name.lower()
        for key, target in names.items():
            if key.lower() == low:
                return target
        raise UnknownNameError(f"unknown name {name!r}")

    def walk(node):
        if isinstance(node, Ref):
            r = node.ref.with_sheet(holder.sheet)
            out.add(CellRef(r.sheet, r.col, r.row))
        elif isinstance(node, RangeRef):
            rng = node.range
            sheet = rng.start.sheet or holder.sheet
            for c in Range(rng.start.with_sheet(sheet), rng.end.with_sheet(sheet)).cells():
                out.add(CellRef(sheet, c.col, c.row))
        elif isinstance(node, NameRef):
            target = lookup(node.name)
            if isinstance(target, Range):
                for c in target.cells():
                    out.add(CellRef(c.sheet, c.col, c.row))
            else:
                out.add(CellRef(target.sheet, target.col, target.row))
        elif isinstance(node, Unary):
            walk(node.child)
        elif isinstance(node, Binary):
            walk(node.left)
            walk(node.right)
        elif isinstance(node, Call):
            for a in node.args:
                walk(a)

    walk(ast)
    return out


# ---------------------------------------------------------------------------
# Structural workbook equality (formulas compared after canonicalization)


def structurally_equal(a, b) -> bool:
    """Workbook equality over sheets, cells and named ranges.

    Formula text is compared after parse -> print normalization, so cosmetic
    spacing and casing differences do not matter.
    """
    if len(a.sheets) != len(b.sheets):
        return False
    for sa, sb in zip(a.sheets, b.sheets):
        if sa.name.lower() != sb.name.lower():
            return False
        if set(sa.cells) != set(sb.cells):
            return False
        for key, ca in sa.cells.items():
            cb = sb.cells[key]
            if ca.label != cb.label:
                return False
            if ca.is_formula != cb.is_formula:
                return False
            if ca.is_formula:
                if canonicalize(ca.formula) != canonicalize(cb.formula):
                    return False
            elif ca.value != cb.value:
                return False
    names_a = {k.lower(): v for k, v in a.named_ranges.items()}
    names_b = {k.lower(): v for k, v in b.named_ranges.items()}
    return names_a == names_b
