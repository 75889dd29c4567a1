"""Static analysis of action sequences against a schema catalog.

Every check reads only the in-memory catalog; nothing here executes SQL,
so findings cover mistakes an engine would accept silently: joins that
ignore declared foreign keys, redundant or missing tables, type-confused
comparisons, aggregate misuse, and user-configured constraints. An
alternate DBMS-feedback path (detect_via_dbms) exists for comparison runs
and is the only function in this module that touches the database file.
"""

from __future__ import annotations

import json
import re
import sqlite3
import time
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

from .actions import (
    ActionSequence,
    AddFrom,
    AddGroupBy,
    AddHaving,
    AddMerge,
    AddOrderBy,
    AddSelect,
    AddWhere,
    ColumnRef,
    Literal,
    LiteralList,
    QA,
    SelectItem,
)
from .schema_catalog import SchemaCatalog

UNKNOWN_TABLE = "UnknownTable"
UNKNOWN_COLUMN = "UnknownColumn"
AMBIGUOUS_COLUMN = "AmbiguousColumn"
FOREIGN_KEY_MISMATCH = "ForeignKeyMismatch"
JOIN_ABSENCE = "JoinAbsence"
JOIN_REDUNDANCY = "JoinRedundancy"
TYPE_MISMATCH = "TypeMismatch"
GROUP_BY_ABSENCE = "GroupByAbsence"
GROUP_BY_IMPROPER = "GroupByImproper"
HAVING_WITHOUT_GROUP_BY = "HavingWithoutGroupBy"
CUSTOM_RULE_VIOLATION = "CustomRuleViolation"
EXECUTION_ERROR = "ExecutionError"
UNRESOLVED_SUB_QUESTION = "UnresolvedSubQuestion"

SCHEMA_FINDING_KINDS = (
    UNKNOWN_TABLE, UNKNOWN_COLUMN, AMBIGUOUS_COLUMN, FOREIGN_KEY_MISMATCH,
    JOIN_ABSENCE, JOIN_REDUNDANCY, TYPE_MISMATCH, GROUP_BY_ABSENCE,
    GROUP_BY_IMPROPER, HAVING_WITHOUT_GROUP_BY, CUSTOM_RULE_VIOLATION,
)

NUMERIC_AFFINITIES = ("INTEGER", "REAL", "NUMERIC")

_NUMERIC_TEXT_RE = re.compile(r"[+-]?(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?$")


class InvalidRuleConfig(Exception):
    """A constraint rule file or entry is malformed."""


@dataclass
class DetectorFinding:
    kind: str
    action_path: tuple
    detail: str
    machine_data: dict = field(default_factory=dict)

    def to_json_dict(self) -> dict:
        return {
            "kind": self.kind,
            "action_path": list(self.action_path),
            "detail": self.detail,
            "data": dict(sorted(self.machine_data.items())),
        }


@dataclass(frozen=True)
class ConstraintRule:
    rule_id: str
    kind: str  # "require_null_filter" | "value_format"
    column: ColumnRef
    pattern: str | None = None


def _parse_rule_column(text: str) -> ColumnRef:
    if not re.match(r"[A-Za-z_]\w*(\.[A-Za-z_]\w*)?$", text or ""):
        raise InvalidRuleConfig(f"bad column reference {text!r}")
    if "." in text:
        table, column = text.split(".", 1)
        return ColumnRef(column=column, table=table)
    return ColumnRef(column=text)


def load_rules(source) -> list[ConstraintRule]:
    """Load constraint rules from a JSON file path or a parsed list.

    Entries look like {"rule_id": ..., "kind": ..., "params": {...}}.
    All validation happens here; evaluation never raises.
    """
    if isinstance(source, (str, Path)):
        with open(source, "r", encoding="utf-8") as handle:
            data = json.load(handle)
    else:
        data = source
    if not isinstance(data, list):
        raise InvalidRuleConfig("rule file must contain a JSON array")
    rules: list[ConstraintRule] = []
    seen: set[str] = set()
    for entry in data:
        if not isinstance(entry, dict):
            raise InvalidRuleConfig(f"rule entry is not an object: {entry!r}")
        rule_id = entry.get("rule_id")
        kind = entry.get("kind")
        params = entry.get("params", {})
        if not rule_id or not isinstance(rule_id, str):
            raise InvalidRuleConfig(f"rule entry missing rule_id: {entry!r}")
        if rule_id in seen:
            raise InvalidRuleConfig(f"duplicate rule_id {rule_id!r}")
        seen.add(rule_id)
        column = _parse_rule_column(params.get("column", ""))
        if kind == "require_null_filter":
            rules.append(ConstraintRule(rule_id=rule_id, kind=kind, column=column))
        elif kind == "value_format":
            pattern = params.get("pattern")
            if not isinstance(pattern, str):
                raise InvalidRuleConfig(f"rule {rule_id!r} needs a string pattern")
            try:
                re.compile(pattern)
            except re.error as exc:
                raise InvalidRuleConfig(f"rule {rule_id!r} pattern: {exc}") from exc
            rules.append(ConstraintRule(rule_id=rule_id, kind=kind, column=column, pattern=pattern))
        else:
            raise InvalidRuleConfig(f"unknown rule kind {kind!r}")
    return rules


# ---------------------------------------------------------------------------
# Column reference collection and resolution
# ---------------------------------------------------------------------------


@dataclass
class _ColumnUse:
    ref: ColumnRef
    path: tuple
    context: str  # "select" | "where" | "group_by" | "having" | "order_by"
    aggregate: str | None = None


def _item_column(item: SelectItem) -> ColumnRef | None:
    if item.expression == "*":
        return None
    if "." in item.expression:
        table, column = item.expression.split(".", 1)
        return ColumnRef(column=column, table=table)
    return ColumnRef(column=item.expression)


def _collect_uses(level: ActionSequence, prefix: tuple) -> list[_ColumnUse]:
    uses: list[_ColumnUse] = []
    for i, action in enumerate(level.actions):
        path = prefix + (i,)
        if isinstance(action, AddSelect):
            for item in action.items:
                ref = _item_column(item)
                if ref is not None:
                    uses.append(_ColumnUse(ref=ref, path=path, context="select",
                                           aggregate=item.aggregate))
        elif isinstance(action, AddWhere):
            uses.append(_ColumnUse(ref=action.column, path=path, context="where"))
        elif isinstance(action, AddGroupBy):
            for ref in action.columns:
                uses.append(_ColumnUse(ref=ref, path=path, context="group_by"))
        elif isinstance(action, AddHaving):
            ref = _item_column(action.lhs)
            if ref is not None:
                uses.append(_ColumnUse(ref=ref, path=path, context="having",
                                       aggregate=action.lhs.aggregate))
        elif isinstance(action, AddOrderBy):
            ref = _item_column(action.expression)
            if ref is not None:
                uses.append(_ColumnUse(ref=ref, path=path, context="order_by",
                                       aggregate=action.expression.aggregate))
    return uses


class _Resolver:
    """Resolves column references against the level's FROM scope, falling
    back to the whole catalog so out-of-scope tables surface as
    JoinAbsence rather than UnknownColumn.
    """

    def __init__(self, catalog: SchemaCatalog, scope_tables: list[str]):
        self.catalog = catalog
        self.scope = [t for t in scope_tables if catalog.table(t) is not None]

    def resolve(self, ref: ColumnRef):
        """Returns ("ok", table, column) | ("unknown",) | ("ambiguous",) |
        ("unknown_table",)."""
        if ref.table is not None:
            table = self.catalog.table(ref.table)
            if table is None:
                return ("unknown_table",)
            column = table.column(ref.column)
            if column is None:
                return ("unknown",)
            return ("ok", table, column)
        in_scope = [self.catalog.table(t) for t in self.scope
                    if self.catalog.table(t).has_column(ref.column)]
        if len(in_scope) == 1:
            return ("ok", in_scope[0], in_scope[0].column(ref.column))
        if len(in_scope) > 1:
            return ("ambiguous",)
        owners = self.catalog.tables_with_column(ref.column)
        if len(owners) == 1:
            return ("ok", owners[0], owners[0].column(ref.column))
        return ("unknown",)


def _fk_graph(catalog: SchemaCatalog) -> dict[str, set[str]]:
    graph: dict[str, set[str]] = {t.name.lower(): set() for t in catalog.tables}
    for fk in catalog.foreign_keys:
        graph[fk.table.lower()].add(fk.ref_table.lower())
        graph[fk.ref_table.lower()].add(fk.table.lower())
    return graph


def _bfs_distances(graph: dict[str, set[str]], source: str) -> dict[str, int]:
    distances = {source: 0}
    queue = deque([source])
    while queue:
        node = queue.popleft()
        for neighbor in graph.get(node, ()):
            if neighbor not in distances:
                distances[neighbor] = distances[node] + 1
                queue.append(neighbor)
    return distances


def _on_shortest_path(graph: dict[str, set[str]], table: str,
                      endpoints: list[str]) -> bool:
    if table in endpoints:
        return True
    dist_from_table = _bfs_distances(graph, table)
    for i, a in enumerate(endpoints):
        dist_from_a = _bfs_distances(graph, a)
        for b in endpoints[i + 1:]:
            if b not in dist_from_a or table not in dist_from_a or table not in dist_from_table:
                continue
            if dist_from_a[table] + dist_from_table.get(b, 1 << 30) == dist_from_a[b]:
                return True
    return False


def _literal_is_numeric(literal: Literal) -> bool:
    if literal.kind == "number":
        return True
    if literal.kind == "text":
        return bool(_NUMERIC_TEXT_RE.match(literal.value.strip()))
    return False


def _scalar_literals(value) -> list[Literal]:
    if isinstance(value, Literal):
        return [value]
    if isinstance(value, LiteralList):
        return list(value.items)
    return []


# ---------------------------------------------------------------------------
# The detector proper
# ---------------------------------------------------------------------------


def detect(seq: ActionSequence, catalog: SchemaCatalog,
           rules: list[ConstraintRule] | tuple = (), *,
           allow_name_equijoin: bool = False) -> list[DetectorFinding]:
    """All findings for the sequence, document order, no early exit.

    Pure over immutable inputs; the database file behind the catalog is
    never opened.
    """
    findings: list[DetectorFinding] = []
    _detect_level(seq, (), catalog, list(rules), allow_name_equijoin, findings)
    return findings


def _detect_level(level: ActionSequence, prefix: tuple, catalog: SchemaCatalog,
                  rules: list[ConstraintRule], allow_name_equijoin: bool,
                  findings: list[DetectorFinding]) -> None:
    emitted: set[tuple] = set()

    def emit(kind: str, path: tuple, detail: str, **data) -> None:
        key = (kind, path, repr(sorted(data.items())))
        if key in emitted:
            return
        emitted.add(key)
        findings.append(DetectorFinding(kind=kind, action_path=path, detail=detail,
                                        machine_data=data))

    from_action = level.first(AddFrom)
    from_index = next((i for i, a in enumerate(level.actions) if isinstance(a, AddFrom)), None)
    from_path = prefix + (from_index,) if from_index is not None else None
    from_tables = list(from_action.tables) if from_action else []
    joins = list(from_action.joins) if from_action else []

    # (a) table existence
    for t in from_tables:
        if catalog.table(t) is None:
            emit(UNKNOWN_TABLE, from_path, f"table {t!r} does not exist", table=t)
    uses = _collect_uses(level, prefix)
    for use in uses:
        if use.ref.table is not None and catalog.table(use.ref.table) is None:
            emit(UNKNOWN_TABLE, use.path, f"table {use.ref.table!r} does not exist",
                 table=use.ref.table)
    join_refs: list[tuple[ColumnRef, tuple]] = []
    for join in joins:
        for ref in (join.left, join.right):
            join_refs.append((ref, from_path))
            if catalog.table(ref.table) is None:
                emit(UNKNOWN_TABLE, from_path, f"table {ref.table!r} does not exist",
                     table=ref.table)

    resolver = _Resolver(catalog, from_tables)

    # (b) column resolution
    resolved_uses: list[tuple[_ColumnUse, object, object]] = []
    resolution_failed = False
    for use in uses:
        outcome = resolver.resolve(use.ref)
        if outcome[0] == "ok":
            resolved_uses.append((use, outcome[1], outcome[2]))
            continue
        resolution_failed = True
        if outcome[0] == "unknown":
            emit(UNKNOWN_COLUMN, use.path, f"column {use.ref.text()!r} does not resolve",
                 column=use.ref.text())
        elif outcome[0] == "ambiguous":
            emit(AMBIGUOUS_COLUMN, use.path,
                 f"column {use.ref.text()!r} matches more than one table in scope",
                 column=use.ref.text())
        # unknown_table already reported in (a)
    join_endpoint_tables: set[str] = set()
    for ref, path in join_refs:
        table = catalog.table(ref.table)
        if table is None:
            continue
        join_endpoint_tables.add(table.name.lower())
        if table.column(ref.column) is None:
            emit(UNKNOWN_COLUMN, path, f"column {ref.text()!r} does not resolve",
                 column=ref.text())

    # (c) foreign-key consistency of joins
    for join in joins:
        left_ok = catalog.resolve_column(join.left.table, join.left.column)
        right_ok = catalog.resolve_column(join.right.table, join.right.column)
        if left_ok is None or right_ok is None:
            continue
        if catalog.is_foreign_key_pair(join.left.table, join.left.column,
                                       join.right.table, join.right.column):
            continue
        if allow_name_equijoin and join.left.column.lower() == join.right.column.lower():
            continue
        emit(FOREIGN_KEY_MISMATCH, from_path,
             f"join {join.left.text()} = {join.right.text()} is not a declared foreign key",
             left=join.left.text(), right=join.right.text())

    # (d) join absence / redundancy
    payload_tables: dict[str, tuple] = {}
    for use, table, _column in resolved_uses:
        payload_tables.setdefault(table.name.lower(), use.path)
    scope_lower = {catalog.table(t).name.lower() for t in from_tables if catalog.table(t)}
    referenced_lower = set(payload_tables) | join_endpoint_tables
    for table_lower in sorted(referenced_lower - scope_lower):
        path = from_path if from_path is not None else payload_tables.get(table_lower, prefix + (0,))
        emit(JOIN_ABSENCE, path,
             f"table {table_lower!r} is referenced but missing from add_from",
             table=table_lower)
    # a level that selects * implicitly uses every FROM table, and one with
    # unresolved columns gives no sound basis for a redundancy claim
    star_used = any(item.expression == "*"
                    for action in level.actions if isinstance(action, AddSelect)
                    for item in action.items)
    if not star_used and not resolution_failed:
        graph = _fk_graph(catalog)
        payload_list = sorted(payload_tables)
        for t in from_tables:
            table = catalog.table(t)
            if table is None:
                continue
            lower = table.name.lower()
            if lower in payload_tables:
                continue
            if _on_shortest_path(graph, lower, payload_list):
                continue
            emit(JOIN_REDUNDANCY, from_path,
                 f"table {t!r} contributes no columns and bridges no referenced tables",
                 table=t)

    # (e) type consistency
    for i, action in enumerate(level.actions):
        path = prefix + (i,)
        if isinstance(action, (AddWhere, AddHaving)):
            if isinstance(action, AddWhere):
                ref, aggregate = action.column, None
            else:
                ref, aggregate = _item_column(action.lhs), action.lhs.aggregate
            if ref is None or aggregate is not None:
                continue
            outcome = resolver.resolve(ref)
            if outcome[0] != "ok":
                continue
            _table, column = outcome[1], outcome[2]
            for literal in _scalar_literals(action.value):
                if column.affinity == "TEXT" and literal.kind == "number":
                    emit(TYPE_MISMATCH, path,
                         f"text column {ref.text()!r} compared to numeric literal {literal.value!r}",
                         column=ref.text(), literal=str(literal.value))
                elif column.affinity in NUMERIC_AFFINITIES and literal.kind == "text" \
                        and not _literal_is_numeric(literal):
                    emit(TYPE_MISMATCH, path,
                         f"numeric column {ref.text()!r} compared to non-numeric text {literal.value!r}",
                         column=ref.text(), literal=literal.value)
    for use, _table, column in resolved_uses:
        if use.aggregate in ("SUM", "AVG") and column.affinity == "TEXT":
            emit(TYPE_MISMATCH, use.path,
                 f"{use.aggregate} over text column {use.ref.text()!r}",
                 column=use.ref.text(), aggregate=use.aggregate)

    # (f) group-by usage
    select = level.first(AddSelect)
    group_by = level.first(AddGroupBy)
    select_index = next((i for i, a in enumerate(level.actions) if isinstance(a, AddSelect)), None)
    if select is not None:
        bare = [item for item in select.items if item.aggregate is None]
        aggregated = [item for item in select.items if item.aggregate is not None]
        if bare and aggregated and group_by is None:
            emit(GROUP_BY_ABSENCE, prefix + (select_index,),
                 "select mixes aggregated and bare columns without add_group_by",
                 bare=[i.expression for i in bare])
        if group_by is not None:
            grouped = {_group_key(resolver, c) for c in group_by.columns}
            group_index = next(i for i, a in enumerate(level.actions) if isinstance(a, AddGroupBy))
            for item in bare:
                ref = _item_column(item)
                key = _group_key(resolver, ref) if ref is not None else item.expression
                if key not in grouped:
                    emit(GROUP_BY_IMPROPER, prefix + (group_index,),
                         f"selected column {item.expression!r} is missing from add_group_by",
                         column=item.expression)
    for i, action in enumerate(level.actions):
        if isinstance(action, AddHaving) and group_by is None:
            emit(HAVING_WITHOUT_GROUP_BY, prefix + (i,),
                 "add_having without add_group_by", lhs=_having_text(action))

    # (g) user-defined constraint rules
    for rule in rules:
        for finding in _evaluate_rule_level(rule, level, prefix, resolver):
            emit(finding.kind, finding.action_path, finding.detail, **finding.machine_data)

    # recurse into children, document order
    for i, action in enumerate(level.actions):
        path = prefix + (i,)
        if isinstance(action, AddMerge):
            _detect_level(action.left, path + ("left",), catalog, rules,
                          allow_name_equijoin, findings)
            _detect_level(action.right, path + ("right",), catalog, rules,
                          allow_name_equijoin, findings)
        elif isinstance(action, QA) and action.resolved is not None:
            _detect_level(action.resolved, path + ("qa",), catalog, rules,
                          allow_name_equijoin, findings)


def _having_text(action: AddHaving) -> str:
    if action.lhs.aggregate:
        return f"{action.lhs.aggregate}({action.lhs.expression})"
    return action.lhs.expression


def _group_key(resolver: _Resolver, ref: ColumnRef):
    outcome = resolver.resolve(ref)
    if outcome[0] == "ok":
        return (outcome[1].name.lower(), outcome[2].name.lower())
    return ref.text().lower()


# ---------------------------------------------------------------------------
# Rule evaluation
# ---------------------------------------------------------------------------


def _rule_matches(rule: ConstraintRule, resolver: _Resolver, ref: ColumnRef | None) -> bool:
    if ref is None:
        return False
    if ref.column.lower() != rule.column.column.lower():
        return False
    if rule.column.table is None:
        return True
    outcome = resolver.resolve(ref)
    if outcome[0] != "ok":
        return ref.table is not None and ref.table.lower() == rule.column.table.lower()
    return outcome[1].name.lower() == rule.column.table.lower()


def _evaluate_rule_level(rule: ConstraintRule, level: ActionSequence, prefix: tuple,
                         resolver: _Resolver) -> list[DetectorFinding]:
    findings: list[DetectorFinding] = []
    if rule.kind == "require_null_filter":
        references: list[tuple] = []
        guarded = False
        for i, action in enumerate(level.actions):
            path = prefix + (i,)
            if isinstance(action, AddSelect):
                for item in action.items:
                    if _rule_matches(rule, resolver, _item_column(item)):
                        references.append(path)
            elif isinstance(action, AddWhere) and _rule_matches(rule, resolver, action.column):
                value = action.value
                if action.op == "!=" and isinstance(value, Literal) and value.kind == "null":
                    guarded = True
                else:
                    references.append(path)
        if references and not guarded:
            findings.append(DetectorFinding(
                kind=CUSTOM_RULE_VIOLATION, action_path=references[0],
                detail=f"rule {rule.rule_id!r}: column {rule.column.text()!r} used without a NULL guard",
                machine_data={"rule_id": rule.rule_id, "column": rule.column.text()}))
    elif rule.kind == "value_format":
        pattern = re.compile(rule.pattern)
        for i, action in enumerate(level.actions):
            path = prefix + (i,)
            if not isinstance(action, (AddWhere, AddHaving)):
                continue
            ref = action.column if isinstance(action, AddWhere) else _item_column(action.lhs)
            if not _rule_matches(rule, resolver, ref):
                continue
            for literal in _scalar_literals(action.value):
                if literal.kind == "text" and not pattern.fullmatch(literal.value):
                    findings.append(DetectorFinding(
                        kind=CUSTOM_RULE_VIOLATION, action_path=path,
                        detail=(f"rule {rule.rule_id!r}: literal {literal.value!r} does not match "
                                f"format {rule.pattern!r}"),
                        machine_data={"rule_id": rule.rule_id, "literal": literal.value,
                                      "pattern": rule.pattern}))
    return findings


def evaluate_rule(rule: ConstraintRule, seq: ActionSequence,
                  catalog: SchemaCatalog) -> list[DetectorFinding]:
    """Evaluate one rule over the whole sequence tree."""
    findings: list[DetectorFinding] = []

    def visit(level: ActionSequence, prefix: tuple) -> None:
        from_action = level.first(AddFrom)
        resolver = _Resolver(catalog, list(from_action.tables) if from_action else [])
        findings.extend(_evaluate_rule_level(rule, level, prefix, resolver))
        for i, action in enumerate(level.actions):
            if isinstance(action, AddMerge):
                visit(action.left, prefix + (i, "left"))
                visit(action.right, prefix + (i, "right"))
            elif isinstance(action, QA) and action.resolved is not None:
                visit(action.resolved, prefix + (i, "qa"))

    visit(seq, ())
    return findings


# ---------------------------------------------------------------------------
# DBMS-feedback mode
# ---------------------------------------------------------------------------


def detect_via_dbms(seq: ActionSequence, db_path: str | Path, *,
                    row_cap: int = 5, timeout_s: float = 5.0) -> list[DetectorFinding]:
    """Alternate inspection path: execute the assembled SQL and convert
    engine exceptions into findings. Weaker than the static detector by
    construction; kept for side-by-side comparison runs.
    """
    from .assembler import AssemblyError, assemble

    try:
        sql = assemble(seq)
    except AssemblyError as exc:
        return [DetectorFinding(kind=EXECUTION_ERROR, action_path=(),
                                detail=f"assembly failed: {exc}",
                                machine_data={"error": str(exc)})]
    try:
        conn = sqlite3.connect(f"file:{Path(db_path)}?mode=ro", uri=True)
    except sqlite3.Error as exc:
        return [DetectorFinding(kind=EXECUTION_ERROR, action_path=(),
                                detail=str(exc), machine_data={"error": str(exc)})]
    deadline = time.monotonic() + timeout_s
    conn.set_progress_handler(lambda: 1 if time.monotonic() > deadline else 0, 1000)
    try:
        conn.execute(sql).fetchmany(row_cap)
    except sqlite3.Error as exc:
        return [_engine_error_finding(str(exc), sql)]
    finally:
        conn.close()
    return []


def _engine_error_finding(message: str, sql: str) -> DetectorFinding:
    lowered = message.lower()
    data = {"error": message, "sql": sql}
    if "no such table" in lowered:
        return DetectorFinding(kind=UNKNOWN_TABLE, action_path=(), detail=message,
                               machine_data=data)
    if "no such column" in lowered:
        return DetectorFinding(kind=UNKNOWN_COLUMN, action_path=(), detail=message,
                               machine_data=data)
    if "ambiguous column" in lowered:
        return DetectorFinding(kind=AMBIGUOUS_COLUMN, action_path=(), detail=message,
                               machine_data=data)
    return DetectorFinding(kind=EXECUTION_ERROR, action_path=(), detail=message,
                           machine_data=data)
