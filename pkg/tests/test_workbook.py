import pytest

from audit_kit.errors import DuplicateCellError, UnknownSheetError, WorkbookParseError
from audit_kit.workbook import (
    CellError,
    CellRef,
    Range,
    col_to_letters,
    dumps_workbook,
    format_number,
    letters_to_col,
    loads_workbook,
    parse_a1,
    parse_a1_range,
)

SAMPLE = """\
# a small model
sheet Inputs
Inputs!B3 = 1000 label="Capex"
Inputs!B4 = 0.3
sheet Calc
Calc!C2 = =Inputs!$B$3*2
Calc!D2 = =C2+1 label="Next"
Calc!E2 = "hello ""world"" here"
Calc!F2 = TRUE
Calc!G2 = #DIV/0!
name capex = Inputs!B3
name spends = Calc!C2:D2
"""


def test_column_letters_round_trip():
    for col in list(range(1, 200)) + [702, 703, 18278]:
        assert letters_to_col(col_to_letters(col)) == col
    assert col_to_letters(1) == "A"
    assert col_to_letters(26) == "Z"
    assert col_to_letters(27) == "AA"
    assert col_to_letters(702) == "ZZ"
    assert col_to_letters(703) == "AAA"
    with pytest.raises(ValueError):
        col_to_letters(0)


def test_parse_a1_forms():
    ref = parse_a1("Calc!$B$3")
    assert ref == CellRef("Calc", 2, 3, col_absolute=True, row_absolute=True)
    assert ref.to_a1() == "Calc!$B$3"
    assert parse_a1("AA10").col == 27
    assert parse_a1("b2", default_sheet="S").sheet == "S"
    with pytest.raises(ValueError):
        parse_a1("not a ref")
    with pytest.raises(ValueError):
        parse_a1("A0")


def test_parse_a1_range():
    rng = parse_a1_range("S!B2:D4")
    assert isinstance(rng, Range)
    assert rng.start.sheet == "S" and rng.end.sheet == "S"
    assert len(list(rng.cells())) == 9
    # reversed corners normalize
    rev = Range(parse_a1("S!D4"), parse_a1("S!B2"))
    assert {c.key() for c in rev.cells()} == {c.key() for c in rng.cells()}


def test_loads_sample_workbook():
    wb = loads_workbook(SAMPLE)
    assert [s.name for s in wb.sheets] == ["Inputs", "Calc"]
    assert wb.cell(parse_a1("Inputs!B3")).value == 1000.0
    assert wb.cell(parse_a1("Inputs!B3")).label == "Capex"
    assert wb.cell(parse_a1("Calc!C2")).formula == "=Inputs!$B$3*2"
    assert wb.cell(parse_a1("Calc!E2")).value == 'hello "world" here'
    assert wb.cell(parse_a1("Calc!F2")).value is True
    assert wb.cell(parse_a1("Calc!G2")).value == CellError("#DIV/0!")
    assert wb.resolve_name("CAPEX") == parse_a1("Inputs!B3")
    assert isinstance(wb.resolve_name("spends"), Range)


def test_sheet_lookup_is_case_insensitive():
    wb = loads_workbook(SAMPLE)
    assert wb.sheet("calc") is wb.sheet("Calc")
    assert wb.cell(parse_a1("CALC!C2")) is not None


def test_dump_load_round_trip():
    wb = loads_workbook(SAMPLE)
    text = dumps_workbook(wb)
    wb2 = loads_workbook(text)
    assert dumps_workbook(wb2) == text


def test_duplicate_cell_rejected():
    wb = loads_workbook(SAMPLE)
    with pytest.raises(DuplicateCellError):
        wb.set_cell(parse_a1("Calc!C2"), value=1.0)
    wb.set_cell(parse_a1("Calc!C2"), value=1.0, allow_overwrite=True)
    assert wb.cell(parse_a1("Calc!C2")).value == 1.0


def test_parse_errors_carry_line_numbers():
    with pytest.raises(WorkbookParseError) as exc:
        loads_workbook("sheet S\nS!A1 = @bad@\n")
    assert exc.value.line_no == 2
    with pytest.raises(WorkbookParseError):
        loads_workbook("garbage line\n")
    with pytest.raises(UnknownSheetError):
        loads_workbook("sheet S\nname x = Other!A1\n")


def test_copy_is_independent():
    wb = loads_workbook(SAMPLE)
    clone = wb.copy()
    clone.set_cell(parse_a1("Calc!C2"), value=9.0, allow_overwrite=True)
    assert wb.cell(parse_a1("Calc!C2")).formula == "=Inputs!$B$3*2"


def test_format_number():
    assert format_number(2.0) == "2"
    assert format_number(-3.0) == "-3"
    assert format_number(0.5) == "0.5"
    assert float(format_number(0.1 + 0.2)) == 0.1 + 0.2
