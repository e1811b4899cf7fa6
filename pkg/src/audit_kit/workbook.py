"""Workbook data model and the line-oriented ``.wbk`` interchange format.

A workbook is a list of named sheets, each a sparse grid of cells holding
either a literal value or formula source text, plus a map of named ranges.
Everything is treated as immutable after load; transformations build new
workbooks.

Interchange format, one record per line:

    sheet <name>
    <Sheet>!<A1ref> = <formula-or-literal> [label="<text>"]
    name <identifier> = <Sheet>!<A1ref-or-range>
    # comment
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field, replace

from .errors import (
    DuplicateCellError,
    UnknownSheetError,
    WorkbookParseError,
)

ERROR_CODES = {"#DIV/0!", "#VALUE!", "#REF!", "#NAME?", "#CYCLE!"}


@dataclass(frozen=True)
class CellError:
    code: str

    def __repr__(self):
        return self.code


DIV0 = CellError("#DIV/0!")
VALUE_ERR = CellError("#VALUE!")
REF_ERR = CellError("#REF!")
NAME_ERR = CellError("#NAME?")
CYCLE_ERR = CellError("#CYCLE!")

# CellValue = float | bool | str | None (blank) | CellError


def col_to_letters(col: int) -> str:
    if col < 1:
        raise ValueError(f"column index must be >= 1, got {col}")
    out = ""
    while col:
        col, rem = divmod(col - 1, 26)
        out = chr(ord("A") + rem) + out
    return out


def letters_to_col(letters: str) -> int:
    col = 0
    for ch in letters.upper():
        col = col * 26 + (ord(ch) - ord("A") + 1)
    return col


@dataclass(frozen=True)
class CellRef:
    sheet: str | None
    col: int
    row: int
    col_absolute: bool = False
    row_absolute: bool = False

    def __post_init__(self):
        if self.col < 1 or self.row < 1:
            raise ValueError(f"cell coordinates must be >= 1: {self}")

    def key(self):
        """Location key ignoring absoluteness; sheet compared case-insensitively."""
        return (self.sheet.lower() if self.sheet else None, self.row, self.col)

    def with_sheet(self, sheet: str) -> "CellRef":
        return self if self.sheet else replace(self, sheet=sheet)

    def to_a1(self, with_sheet: bool = True) -> str:
        s = ""
        if with_sheet and self.sheet:
            s = self.sheet + "!"
        return "{}{}{}{}{}".format(
            s,
            "$" if self.col_absolute else "",
            col_to_letters(self.col),
            "$" if self.row_absolute else "",
            self.row,
        )

    def __repr__(self):
        return self.to_a1()


_A1_RE = re.compile(r"^(?:(?P<sheet>[^!]+)!)?(?P<cabs>\$?)(?P<col>[A-Za-z]{1,3})(?P<rabs>\$?)(?P<row>[1-9][0-9]*)$")


def parse_a1(text: str, default_sheet: str | None = None) -> CellRef:
    m = _A1_RE.match(text.strip())
    if not m:
        raise ValueError(f"not an A1 cell reference: {text!r}")
    return CellRef(
        sheet=m.group("sheet") or default_sheet,
        col=letters_to_col(m.group("col")),
        row=int(m.group("row")),
        col_absolute=bool(m.group("cabs")),
        row_absolute=bool(m.group("rabs")),
    )


@dataclass(frozen=True)
class Range:
    start: CellRef
    end: CellRef

    def normalized(self) -> "Range":
        r1, r2 = sorted((self.start.row, self.end.row))
        c1, c2 = sorted((self.start.col, self.end.col))
        return Range(replace(self.start, row=r1, col=c1), replace(self.end, row=r2, col=c2))

    def cells(self):
        r = self.normalized()
        for row in range(r.start.row, r.end.row + 1):
            for col in range(r.start.col, r.end.col + 1):
                yield CellRef(self.start.sheet, col, row)

    def to_a1(self) -> str:
        return self.start.to_a1() + ":" + self.end.to_a1(with_sheet=False)

    def __repr__(self):
        return self.to_a1()


def parse_a1_range(text: str, default_sheet: str | None = None):
    """Parse ``Sheet!A1`` or ``Sheet!A1:B9`` into a CellRef or Range."""
    if ":" in text:
        left, right = text.split(":", 1)
        start = parse_a1(left, default_sheet)
        end = parse_a1(right, start.sheet)
        return Range(start, end)
    return parse_a1(text, default_sheet)


@dataclass(frozen=True)
class Cell:
    ref: CellRef
    formula: str | None = None
    value: object = None
    label: str | None = None

    @property
    def is_formula(self) -> bool:
        return self.formula is not None


@dataclass
class Sheet:
    name: str
    cells: dict = field(default_factory=dict)  # (row, col) -> Cell

    def cell(self, row: int, col: int) -> Cell | None:
        return self.cells.get((row, col))

    def iter_cells(self):
        for key in sorted(self.cells):
            yield self.cells[key]


@dataclass
class Workbook:
    sheets: list = field(default_factory=list)
    named_ranges: dict = field(default_factory=dict)  # name -> CellRef | Range

    def sheet(self, name: str) -> Sheet | None:
        low = name.lower()
        for sh in self.sheets:
            if sh.name.lower() == low:
                return sh
        return None

    def add_sheet(self, name: str) -> Sheet:
        existing = self.sheet(name)
        if existing is not None:
            return existing
        sh = Sheet(name)
        self.sheets.append(sh)
        return sh

    def set_cell(self, ref: CellRef, formula=None, value=None, label=None, allow_overwrite=False):
        sh = self.add_sheet(ref.sheet)
        key = (ref.row, ref.col)
        if key in sh.cells and not allow_overwrite:
            raise DuplicateCellError(f"duplicate cell {ref.to_a1()}")
        sh.cells[key] = Cell(ref=ref, formula=formula, value=value, label=label)

    def cell(self, ref: CellRef) -> Cell | None:
        sh = self.sheet(ref.sheet)
        if sh is None:
            return None
        return sh.cell(ref.row, ref.col)

    def resolve_name(self, name: str):
        low = name.lower()
        for key, target in self.named_ranges.items():
            if key.lower() == low:
                return target
        return None

    def formula_cells(self):
        for sh in self.sheets:
            for cell in sh.iter_cells():
                if cell.is_formula:
                    yield cell

    def copy(self) -> "Workbook":
        wb = Workbook(named_ranges=dict(self.named_ranges))
        for sh in self.sheets:
            wb.sheets.append(Sheet(sh.name, dict(sh.cells)))
        return wb


_SHEET_LINE = re.compile(r"^sheet\s+(?P<name>\S.*?)\s*$")
_NAME_LINE = re.compile(r"^name\s+(?P<name>[A-Za-z_][A-Za-z0-9_.]*)\s*=\s*(?P<target>\S+)\s*$")
_CELL_LINE = re.compile(
    r"^(?P<sheet>[^!=\s]+)!(?P<ref>\$?[A-Za-z]{1,3}\$?[1-9][0-9]*)\s*=\s*(?P<content>.*?)"
    r'(?:\s+label="(?P<label>[^"]*)")?\s*$'
)
_NUMBER_RE = re.compile(r"^[+-]?(\d+\.?\d*|\.\d+)([eE][+-]?\d+)?$")


def _parse_literal(text: str, line_no: int):
    if _NUMBER_RE.match(text):
        return float(text)
    if text.upper() == "TRUE":
        return True
    if text.upper() == "FALSE":
        return False
    if len(text) >= 2 and text.startswith('"') and text.endswith('"'):
        return text[1:-1].replace('""', '"')
    if text in ERROR_CODES:
        return CellError(text)
    raise WorkbookParseError(line_no, f"unrecognised literal {text!r}")


def loads_workbook(text: str) -> Workbook:
    wb = Workbook()
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        m = _SHEET_LINE.match(line)
        if m and "!" not in m.group("name") and "=" not in m.group("name"):
            wb.add_sheet(m.group("name"))
            continue
        m = _NAME_LINE.match(line)
        if m and "!" in m.group("target"):
            try:
                target = parse_a1_range(m.group("target"))
            except ValueError as exc:
                raise WorkbookParseError(line_no, str(exc))
            wb.named_ranges[m.group("name")] = target
            continue
        m = _CELL_LINE.match(line)
        if m:
            try:
                ref = parse_a1(m.group("ref"), default_sheet=m.group("sheet"))
            except ValueError as exc:
                raise WorkbookParseError(line_no, str(exc))
            content = m.group("content").strip()
            if not content:
                raise WorkbookParseError(line_no, "empty cell content")
            if content.startswith("="):
                wb.set_cell(ref, formula=content, label=m.group("label"))
            else:
                wb.set_cell(ref, value=_parse_literal(content, line_no), label=m.group("label"))
            continue
        raise WorkbookParseError(line_no, f"unrecognised record {line!r}")

    for name, target in wb.named_ranges.items():
        sheet = target.sheet if isinstance(target, CellRef) else target.start.sheet
        if wb.sheet(sheet) is None:
            raise UnknownSheetError(f"named range {name} targets unknown sheet {sheet!r}")
    return wb


def load_workbook(path) -> Workbook:
    with open(path, encoding="utf-8") as fh:
        return loads_workbook(fh.read())


def _format_literal(value) -> str:
    if isinstance(value, bool):
        return "TRUE" if value else "FALSE"
    if isinstance(value, (int, float)):
        return format_number(float(value))
    if isinstance(value, CellError):
        return value.code
    return '"' + str(value).replace('"', '""') + '"'


def format_number(x: float) -> str:
    """Shortest round-trip decimal rendering; integral values print without a point."""
    if x == int(x) and abs(x) < 1e16:
        return str(int(x))
    return repr(x)


def dumps_workbook(wb: Workbook) -> str:
    lines = []
    for sh in wb.sheets:
        lines.append(f"sheet {sh.name}")
        for cell in sh.iter_cells():
            content = cell.formula if cell.is_formula else _format_literal(cell.value)
            line = f"{sh.name}!{cell.ref.to_a1(with_sheet=False)} = {content}"
            if cell.label is not None:
                line += f' label="{cell.label}"'
            lines.append(line)
    for name in sorted(wb.named_ranges):
        lines.append(f"name {name} = {wb.named_ranges[name].to_a1()}")
    return "\n".join(lines) + ("\n" if lines else "")


def save_workbook(wb: Workbook, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps_workbook(wb))
