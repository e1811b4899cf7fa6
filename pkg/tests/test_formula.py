import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from audit_kit.detect import count_unique_formulae
from audit_kit.errors import FormulaSyntaxError
from audit_kit.formula import (
    Binary,
    Call,
    Literal,
    NameRef,
    RangeRef,
    Ref,
    Unary,
    canonicalize,
    normalize_relative,
    parse_formula,
    print_formula,
    references_of,
    structurally_equal,
    translate,
)
from audit_kit.workbook import CellRef, Range, Workbook, loads_workbook, parse_a1

# ---------------------------------------------------------------------------
# Hand-written parser cases


def test_precedence_and_associativity():
    assert canonicalize("=1+2*3") == "=1+2*3"
    assert canonicalize("=(1+2)*3") == "=(1+2)*3"
    assert canonicalize("=1-2-3") == "=1-2-3"  # left associative
    assert canonicalize("=1-(2-3)") == "=1-(2-3)"
    assert canonicalize("=2^3^2") == "=2^3^2"
    assert canonicalize("=A1>=B1") == "=A1>=B1"
    assert canonicalize('="a"&"b"&"c"') == '="a"&"b"&"c"'


def test_whitespace_and_case_are_cosmetic():
    assert canonicalize("= sum( a1 , b2 ) ") == "=SUM(a1,b2)".replace("a1", "A1").replace("b2", "B2")
    assert canonicalize("=TRUE") == "=TRUE"
    assert canonicalize("=true") == "=TRUE"


def test_refs_ranges_and_names():
    ast = parse_formula("=SUM(Data!$A$1:$A$9)+rate")
    assert print_formula(ast) == "=SUM(Data!$A$1:$A$9)+rate"
    ast = parse_formula("=S!B2:C3")
    assert isinstance(ast, RangeRef)
    assert ast.range.end.sheet == "S"  # sheet propagates to the bare endpoint


def test_syntax_errors():
    for bad in ("no equals", "=1+", "=SUM(1,", "=)", "=1 2", "=A1:5"):
        with pytest.raises(FormulaSyntaxError):
            parse_formula(bad)


def test_string_escapes_round_trip():
    src = '="he said ""hi"""'
    assert canonicalize(src) == src


def test_references_of_expands_ranges_and_names():
    holder = CellRef("S", 1, 1)
    ast = parse_formula("=SUM(B1:B3)+Other!C1+cap")
    names = {"cap": parse_a1("S!D9")}
    refs = {r.to_a1() for r in references_of(ast, holder, names)}
    assert refs == {"S!B1", "S!B2", "S!B3", "Other!C1", "S!D9"}


def test_translate_shifts_relative_only():
    ast = parse_formula("=A1+$B$2+C$3")
    moved = print_formula(translate(ast, 1, 2))
    assert moved == "=C2+$B$2+E$3"
    with pytest.raises(ValueError):
        translate(parse_formula("=A1"), -1, 0)


def test_normalize_relative_collapses_fill_copies():
    # =B2*$F$1 at C2 filled right to D2 becomes =C2*$F$1: same normal form.
    a = normalize_relative(parse_a1("S!C2"), parse_formula("=B2*$F$1"))
    b = normalize_relative(parse_a1("S!D2"), parse_formula("=C2*$F$1"))
    assert a == b == "=RC[-1]*R1C6"
    c = normalize_relative(parse_a1("S!D2"), parse_formula("=B2*$F$1"))
    assert c != a


# ---------------------------------------------------------------------------
# Random formula generation (seeded, deterministic)

_FUNCS = ["SUM", "MIN", "MAX", "ABS", "IF", "AND", "OR", "NOT", "ROUND"]
_BINOPS = ["+", "-", "*", "/", "^", "&", "=", "<>", "<", "<=", ">", ">="]


def _rand_ref(rng, sheet_pool=("Alpha", "Beta", None)):
    return CellRef(
        sheet=rng.choice(sheet_pool),
        col=rng.randint(1, 30),
        row=rng.randint(1, 50),
        col_absolute=rng.random() < 0.3,
        row_absolute=rng.random() < 0.3,
    )


def _rand_ast(rng, depth):
    roll = rng.random()
    if depth <= 0 or roll < 0.35:
        kind = rng.randrange(5)
        if kind == 0:
            return Literal(float(rng.randint(0, 10000)) / rng.choice([1.0, 4.0, 100.0]))
        if kind == 1:
            return Literal(rng.choice([True, False]))
        if kind == 2:
            return Literal(rng.choice(["x", 'quo"te', "two words", ""]))
        if kind == 3:
            return NameRef(rng.choice(["rate_x", "cap_ex", "my_total"]))
        return Ref(_rand_ref(rng))
    if roll < 0.45:
        return Unary(rng.choice(["-", "+"]), _rand_ast(rng, depth - 1))
    if roll < 0.75:
        return Binary(rng.choice(_BINOPS), _rand_ast(rng, depth - 1), _rand_ast(rng, depth - 1))
    if roll < 0.85:
        sheet = rng.choice(["Alpha", None])
        a, b = _rand_ref(rng, (sheet,)), _rand_ref(rng, (sheet,))
        return Call("SUM", (RangeRef(Range(a, b)),))
    func = rng.choice(_FUNCS)
    n_args = {"ABS": 1, "NOT": 1, "ROUND": 2, "IF": 3}.get(func, rng.randint(1, 3))
    return Call(func, tuple(_rand_ast(rng, depth - 1) for _ in range(n_args)))


def test_parse_print_identity_1000_random_formulas():
    rng = random.Random(20240817)
    for _ in range(1000):
        ast = _rand_ast(rng, depth=4)
        text = print_formula(ast)
        reparsed = parse_formula(text)
        # parse∘print structural identity and print∘parse textual idempotence
        assert reparsed == ast, text
        assert print_formula(reparsed) == text


@settings(max_examples=200, deadline=None)
@given(st.integers(min_value=0, max_value=2**63))
def test_parse_print_identity_hypothesis(seed):
    rng = random.Random(seed)
    ast = _rand_ast(rng, depth=3)
    text = print_formula(ast)
    assert parse_formula(text) == ast
    assert print_formula(parse_formula(text)) == text


# ---------------------------------------------------------------------------
# Unique-formula counting vs pairwise-translation brute force


def _upper_sheets(node):
    """Case-canonicalize the parts the normal form upper-cases."""
    if isinstance(node, Ref):
        r = node.ref
        return Ref(CellRef(r.sheet.upper() if r.sheet else None, r.col, r.row,
                           r.col_absolute, r.row_absolute))
    if isinstance(node, RangeRef):
        a = _upper_sheets(Ref(node.range.start)).ref
        b = _upper_sheets(Ref(node.range.end)).ref
        return RangeRef(Range(a, b))
    if isinstance(node, NameRef):
        return NameRef(node.name.upper())
    if isinstance(node, Unary):
        return Unary(node.op, _upper_sheets(node.child))
    if isinstance(node, Binary):
        return Binary(node.op, _upper_sheets(node.left), _upper_sheets(node.right))
    if isinstance(node, Call):
        return Call(node.func, tuple(_upper_sheets(a) for a in node.args))
    return node


def _oracle_unique_count(cells):
    """cells: list of (holder CellRef, ast). Group by pairwise translation."""
    reps = []  # (holder, canonical ast)
    for holder, ast in cells:
        ast = _upper_sheets(ast)
        for rep_holder, rep_ast in reps:
            dr = rep_holder.row - holder.row
            dc = rep_holder.col - holder.col
            try:
                if translate(ast, dr, dc) == rep_ast:
                    break
            except ValueError:
                continue
        else:
            reps.append((holder, ast))
    return len(reps)


def _random_workbook(rng):
    wb = Workbook()
    sheets = ["One", "Two"]
    for s in sheets:
        wb.add_sheet(s)
    used = set()
    n_cells = rng.randint(1, 100)
    placed = []
    while len(placed) < n_cells:
        sheet = rng.choice(sheets)
        row, col = rng.randint(2, 40), rng.randint(2, 12)
        if (sheet, row, col) in used:
            continue
        used.add((sheet, row, col))
        holder = CellRef(sheet, col, row)
        if placed and rng.random() < 0.5:
            # fill-copy of an earlier formula, translated to this position
            src_holder, src_ast = placed[rng.randrange(len(placed))]
            try:
                ast = translate(src_ast, row - src_holder.row, col - src_holder.col)
            except ValueError:
                continue
        else:
            ast = _rand_ast(rng, depth=rng.randint(0, 3))
        wb.set_cell(holder, formula=print_formula(ast))
        placed.append((holder, ast))
    return wb, placed


def test_unique_count_matches_brute_force_oracle_on_50_workbooks():
    rng = random.Random(99)
    for _ in range(50):
        wb, placed = _random_workbook(rng)
        assert count_unique_formulae(wb) == _oracle_unique_count(placed)


def test_structurally_equal_ignores_cosmetics():
    a = loads_workbook("sheet S\nS!A1 = =sum( b1 , b2 )\n")
    b = loads_workbook("sheet S\nS!A1 = =SUM(B1,B2)\n")
    c = loads_workbook("sheet S\nS!A1 = =SUM(B1,B3)\n")
    assert structurally_equal(a, b)
    assert not structurally_equal(a, c)
