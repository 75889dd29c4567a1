"""Schema and cell-content extraction from SQLite database files.

The catalog is the read-only ground truth that the inspection tools check
action sequences against: table and column structure with type affinities
and foreign keys, plus an in-memory index of distinct TEXT cells per column.
Both are immutable after construction and safe for concurrent reads.
"""

from __future__ import annotations

import re
import sqlite3
from dataclasses import dataclass
from pathlib import Path

AFFINITIES = ("TEXT", "INTEGER", "REAL", "NUMERIC", "BOOLEAN", "DATE", "OTHER")

DEFAULT_CELL_CAP = 50_000

_PUNCT_RE = re.compile(r"[^\w\s]+", re.UNICODE)
_SPACE_RE = re.compile(r"\s+")


class CorruptDatabase(Exception):
    """The file exists but cannot be read as a SQLite database."""


def affinity_of(declared_type: str) -> str:
    """Map a declared column type to one of the seven affinities."""
    t = (declared_type or "").upper()
    if "INT" in t:
        return "INTEGER"
    if "CHAR" in t or "CLOB" in t or "TEXT" in t:
        return "TEXT"
    if "BOOL" in t:
        return "BOOLEAN"
    if "DATE" in t or "TIME" in t:
        return "DATE"
    if "REAL" in t or "FLOA" in t or "DOUB" in t:
        return "REAL"
    if "NUM" in t or "DEC" in t:
        return "NUMERIC"
    return "OTHER"


def normalize_cell(text: str) -> str:
    """Normalize a cell value: strip one quote pair, case-fold, collapse
    punctuation and whitespace runs to single spaces.

    Idempotent: the output contains only word characters and single spaces,
    so normalizing it again is a no-op.
    """
    s = text.strip()
    if len(s) >= 2 and s[0] == s[-1] and s[0] in "'\"`":
        s = s[1:-1]
    s = s.casefold()
    s = _PUNCT_RE.sub(" ", s)
    s = _SPACE_RE.sub(" ", s)
    return s.strip()


@dataclass(frozen=True)
class ColumnInfo:
    name: str
    affinity: str
    is_primary_key: bool = False


@dataclass(frozen=True)
class TableInfo:
    name: str
    columns: tuple[ColumnInfo, ...]

    def column(self, name: str) -> ColumnInfo | None:
        lowered = name.lower()
        for col in self.columns:
            if col.name.lower() == lowered:
                return col
        return None

    def has_column(self, name: str) -> bool:
        return self.column(name) is not None


@dataclass(frozen=True)
class ForeignKeyLink:
    table: str
    column: str
    ref_table: str
    ref_column: str


@dataclass(frozen=True)
class SchemaCatalog:
    tables: tuple[TableInfo, ...]
    foreign_keys: tuple[ForeignKeyLink, ...]
    source_path: str

    def table(self, name: str) -> TableInfo | None:
        lowered = name.lower()
        for tab in self.tables:
            if tab.name.lower() == lowered:
                return tab
        return None

    def tables_with_column(self, column: str) -> list[TableInfo]:
        return [t for t in self.tables if t.has_column(column)]

    def resolve_column(self, table: str | None, column: str) -> tuple[TableInfo, ColumnInfo] | None:
        """Resolve (table?, column) to a unique (TableInfo, ColumnInfo) pair.

        Qualified lookups must hit; unqualified lookups must be unique
        across the catalog. Returns None otherwise.
        """
        if table is not None:
            tab = self.table(table)
            if tab is None:
                return None
            col = tab.column(column)
            return (tab, col) if col is not None else None
        owners = self.tables_with_column(column)
        if len(owners) != 1:
            return None
        col = owners[0].column(column)
        assert col is not None
        return owners[0], col

    def is_foreign_key_pair(self, left_table: str, left_column: str,
                            right_table: str, right_column: str) -> bool:
        """True if the column pair is a declared foreign key in either direction."""
        a = (left_table.lower(), left_column.lower())
        b = (right_table.lower(), right_column.lower())
        for fk in self.foreign_keys:
            src = (fk.table.lower(), fk.column.lower())
            dst = (fk.ref_table.lower(), fk.ref_column.lower())
            if (a, b) in ((src, dst), (dst, src)):
                return True
        return False

    def to_json_dict(self) -> dict:
        return {
            "source": self.source_path,
            "tables": [
                {
                    "name": t.name,
                    "columns": [
                        {"name": c.name, "affinity": c.affinity, "primary_key": c.is_primary_key}
                        for c in t.columns
                    ],
                }
                for t in self.tables
            ],
            "foreign_keys": [
                {
                    "table": fk.table,
                    "column": fk.column,
                    "references_table": fk.ref_table,
                    "references_column": fk.ref_column,
                }
                for fk in self.foreign_keys
            ],
        }


@dataclass(frozen=True)
class CellValue:
    raw: str
    normalized: str


@dataclass(frozen=True)
class ColumnCells:
    table: str
    column: str
    cells: tuple[CellValue, ...]

    def raw_values(self) -> tuple[str, ...]:
        return tuple(c.raw for c in self.cells)

    def contains_raw(self, value: str) -> bool:
        return any(c.raw == value for c in self.cells)


class CellIndex:
    """Distinct TEXT-affinity cells per (table, column), raw plus normalized."""

    def __init__(self, columns: dict[tuple[str, str], ColumnCells]):
        self._columns = dict(columns)

    def column_cells(self, table: str, column: str) -> ColumnCells | None:
        return self._columns.get((table.lower(), column.lower()))

    def columns(self) -> list[tuple[str, str]]:
        """Indexed (table, column) pairs in original case, sorted."""
        return sorted((c.table, c.column) for c in self._columns.values())

    def __len__(self) -> int:
        return len(self._columns)


def _connect_readonly(db_path: str | Path) -> sqlite3.Connection:
    path = Path(db_path)
    if not path.exists():
        raise FileNotFoundError(str(path))
    return sqlite3.connect(f"file:{path}?mode=ro", uri=True)


def _quote_ident(name: str) -> str:
    return '"' + name.replace('"', '""') + '"'


def load_catalog(db_path: str | Path) -> SchemaCatalog:
    """Introspect a SQLite file into a SchemaCatalog.

    User tables only; internal sqlite_* tables are excluded. Raises
    FileNotFoundError for a missing path and CorruptDatabase for a file
    that is not a readable database.
    """
    conn = _connect_readonly(db_path)
    try:
        try:
            rows = conn.execute(
                "SELECT name FROM sqlite_master WHERE type = 'table' ORDER BY name"
            ).fetchall()
        except sqlite3.DatabaseError as exc:
            raise CorruptDatabase(f"{db_path}: {exc}") from exc

        tables: list[TableInfo] = []
        links: list[ForeignKeyLink] = []
        names = [r[0] for r in rows if not r[0].startswith("sqlite_")]
        infos: dict[str, list[tuple]] = {}
        for name in names:
            infos[name] = conn.execute(f"PRAGMA table_info({_quote_ident(name)})").fetchall()
        for name in names:
            cols = tuple(
                ColumnInfo(name=row[1], affinity=affinity_of(row[2]), is_primary_key=row[5] > 0)
                for row in infos[name]
            )
            if not cols:
                continue
            tables.append(TableInfo(name=name, columns=cols))
        by_name = {t.name.lower(): t for t in tables}
        for name in names:
            if name.lower() not in by_name:
                continue
            for row in conn.execute(f"PRAGMA foreign_key_list({_quote_ident(name)})"):
                ref_table, src_col, dst_col = row[2], row[3], row[4]
                target = by_name.get(ref_table.lower())
                if target is None:
                    continue
                if dst_col is None:
                    pks = [c.name for c in target.columns if c.is_primary_key]
                    if not pks:
                        continue
                    dst_col = pks[0]
                if not target.has_column(dst_col) or not by_name[name.lower()].has_column(src_col):
                    continue
                links.append(ForeignKeyLink(table=name, column=src_col,
                                            ref_table=target.name, ref_column=dst_col))
        links.sort(key=lambda fk: (fk.table.lower(), fk.column.lower(),
                                   fk.ref_table.lower(), fk.ref_column.lower()))
        return SchemaCatalog(tables=tuple(tables), foreign_keys=tuple(links),
                             source_path=str(db_path))
    finally:
        conn.close()


def build_cell_index(catalog: SchemaCatalog, db_path: str | Path,
                     cap: int = DEFAULT_CELL_CAP) -> CellIndex:
    """Index distinct non-NULL cells of every TEXT-affinity column.

    Columns with more than `cap` distinct values keep the most frequent
    `cap` of them.
    """
    conn = _connect_readonly(db_path)
    try:
        columns: dict[tuple[str, str], ColumnCells] = {}
        for table in catalog.tables:
            for col in table.columns:
                if col.affinity != "TEXT":
                    continue
                sql = (
                    f"SELECT {_quote_ident(col.name)}, COUNT(*) AS n "
                    f"FROM {_quote_ident(table.name)} "
                    f"WHERE {_quote_ident(col.name)} IS NOT NULL "
                    f"GROUP BY {_quote_ident(col.name)} "
                    f"ORDER BY n DESC, {_quote_ident(col.name)} ASC "
                    f"LIMIT {int(cap)}"
                )
                try:
                    rows = conn.execute(sql).fetchall()
                except sqlite3.DatabaseError as exc:
                    raise CorruptDatabase(f"{db_path}: {exc}") from exc
                raws = sorted(v for v, _count in rows if isinstance(v, str))
                cells = tuple(CellValue(raw=v, normalized=normalize_cell(v)) for v in raws)
                columns[(table.name.lower(), col.name.lower())] = ColumnCells(
                    table=table.name, column=col.name, cells=cells
                )
        return CellIndex(columns)
    finally:
        conn.close()
