"""Database cell retrieval: match checks for conditional actions and
ranked similar-cell feedback when a literal matches nothing.

The match test is byte equality against raw cell values, so a Matched
verdict predicts that the assembled equality condition can select rows.
Ranking uses a pluggable similarity backend; the default scores cosine
similarity over character-trigram profiles of normalized text and needs
no model or network.
"""

from __future__ import annotations

import json
import math
import urllib.request
from collections import Counter
from dataclasses import dataclass
from typing import Sequence, Union

from .actions import (
    Action,
    ActionSequence,
    AddFrom,
    AddHaving,
    AddMerge,
    AddWhere,
    ColumnRef,
    Literal,
    LiteralList,
    QA,
)
from .schema_catalog import CellIndex, SchemaCatalog, normalize_cell

EQUALITY_OPS = ("=", "!=", "IN", "NOT IN")

DEFAULT_CANDIDATES = 5


@dataclass(frozen=True)
class CellCandidate:
    table: str
    column: str
    raw_value: str
    score: float


@dataclass(frozen=True)
class Matched:
    raw_value: str


@dataclass(frozen=True)
class Mismatch:
    candidates: tuple[CellCandidate, ...]


@dataclass(frozen=True)
class NotApplicable:
    reason: str


ConditionVerdict = Union[Matched, Mismatch, NotApplicable]


def _trigram_profile(text: str) -> Counter:
    normalized = normalize_cell(text)
    if not normalized:
        return Counter()
    padded = f"  {normalized}  "
    return Counter(padded[i:i + 3] for i in range(len(padded) - 2))


def _cosine(a: Counter, b: Counter) -> float:
    if not a or not b:
        return 0.0
    dot = sum(weight * b.get(gram, 0) for gram, weight in a.items())
    norm_a = math.sqrt(sum(w * w for w in a.values()))
    norm_b = math.sqrt(sum(w * w for w in b.values()))
    if norm_a == 0.0 or norm_b == 0.0:
        return 0.0
    return min(1.0, dot / (norm_a * norm_b))


class TrigramBackend:
    """Deterministic default: trigram-profile cosine over normalized text."""

    def score(self, query: str, texts: Sequence[str]) -> list[float]:
        query_norm = normalize_cell(query)
        query_profile = _trigram_profile(query)
        scores = []
        for text in texts:
            if normalize_cell(text) == query_norm:
                scores.append(1.0)
            else:
                scores.append(_cosine(query_profile, _trigram_profile(text)))
        return scores


class HttpEmbeddingBackend:
    """Scores via an external embedding service.

    POSTs {"texts": [...]} and expects {"vectors": [[...], ...]} back.
    """

    def __init__(self, endpoint: str, api_key: str | None = None, timeout: float = 10.0):
        self.endpoint = endpoint
        self.api_key = api_key
        self.timeout = timeout

    def _embed(self, texts: Sequence[str]) -> list[list[float]]:
        body = json.dumps({"texts": list(texts)}).encode("utf-8")
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        request = urllib.request.Request(self.endpoint, data=body, headers=headers)
        with urllib.request.urlopen(request, timeout=self.timeout) as response:
            payload = json.loads(response.read().decode("utf-8"))
        return payload["vectors"]

    def score(self, query: str, texts: Sequence[str]) -> list[float]:
        if not texts:
            return []
        vectors = self._embed([query] + list(texts))
        query_vec = vectors[0]
        qnorm = math.sqrt(sum(x * x for x in query_vec))
        scores = []
        for vec in vectors[1:]:
            vnorm = math.sqrt(sum(x * x for x in vec))
            if qnorm == 0.0 or vnorm == 0.0:
                scores.append(0.0)
                continue
            dot = sum(x * y for x, y in zip(query_vec, vec))
            scores.append(max(0.0, min(1.0, dot / (qnorm * vnorm))))
        return scores


_DEFAULT_BACKEND = TrigramBackend()


def similarity(a: str, b: str) -> float:
    """Similarity in [0, 1]; 1.0 whenever the normalized forms are equal."""
    return _DEFAULT_BACKEND.score(a, [b])[0]


def _extract_condition_column(action: Action) -> ColumnRef | None:
    if isinstance(action, AddWhere):
        return action.column
    if isinstance(action, AddHaving):
        if action.lhs.aggregate is not None or action.lhs.expression == "*":
            return None
        if "." in action.lhs.expression:
            table, column = action.lhs.expression.split(".", 1)
            return ColumnRef(column=column, table=table)
        return ColumnRef(column=action.lhs.expression)
    return None


def _text_probes(action: Action) -> list[str] | None:
    """Text literals whose membership the retriever should verify."""
    value = action.value
    if isinstance(value, Literal):
        if value.kind != "text":
            return None
        return [value.value]
    if isinstance(value, LiteralList):
        texts = []
        for item in value.items:
            if item.kind != "text":
                return None
            texts.append(item.value)
        return texts
    return None


def rank_candidates(literal: str, cells, k: int, backend=None) -> tuple[CellCandidate, ...]:
    """Top-k cells of one column by similarity to the literal; strict
    (score desc, raw asc) ordering for determinism.
    """
    backend = backend or _DEFAULT_BACKEND
    raws = cells.raw_values()
    scores = backend.score(literal, raws)
    ranked = sorted(zip(raws, scores), key=lambda pair: (-pair[1], pair[0]))
    return tuple(
        CellCandidate(table=cells.table, column=cells.column, raw_value=raw, score=score)
        for raw, score in ranked[:k]
    )


def check_condition(action: Action, catalog: SchemaCatalog, index: CellIndex, *,
                    k: int = DEFAULT_CANDIDATES, backend=None,
                    scope_tables: Sequence[str] | None = None) -> ConditionVerdict:
    """Verdict for one conditional action.

    Matched iff the text literal byte-equals a raw cell of the resolved
    column; otherwise Mismatch with top-k similar cells from that same
    column. Numeric comparisons, wildcard LIKE patterns, non-text values
    and non-TEXT columns are NotApplicable.
    """
    column = _extract_condition_column(action)
    if column is None:
        return NotApplicable(reason="aggregate expression")

    if column.table is not None:
        resolved = catalog.resolve_column(column.table, column.column)
    else:
        scope = list(scope_tables) if scope_tables else [t.name for t in catalog.tables]
        owners = [t for t in scope
                  if catalog.table(t) is not None and catalog.table(t).has_column(column.column)]
        if len(owners) != 1:
            return NotApplicable(reason=f"column {column.text()!r} does not resolve uniquely")
        resolved = catalog.resolve_column(owners[0], column.column)
    if resolved is None:
        return NotApplicable(reason=f"column {column.text()!r} does not resolve uniquely")
    table_info, column_info = resolved
    if column_info.affinity != "TEXT":
        return NotApplicable(reason=f"non-text column ({column_info.affinity})")

    op = action.op
    probes = _text_probes(action)
    if probes is None:
        return NotApplicable(reason="non-text value")
    if op == "LIKE":
        if any("%" in p or "_" in p for p in probes):
            return NotApplicable(reason="pattern match")
    elif op not in EQUALITY_OPS:
        return NotApplicable(reason="numeric comparison")

    cells = index.column_cells(table_info.name, column_info.name)
    if cells is None:
        return Mismatch(candidates=())
    for literal in probes:
        if not cells.contains_raw(literal):
            return Mismatch(candidates=rank_candidates(literal, cells, k, backend))
    return Matched(raw_value=probes[0])


def inspect_sequence(seq: ActionSequence, catalog: SchemaCatalog, index: CellIndex, *,
                     k: int = DEFAULT_CANDIDATES, backend=None) -> list[tuple[tuple, ConditionVerdict]]:
    """One verdict per conditional action, document order, recursing into
    merge and resolved-QA children. Paths index into the sequence tree.
    """
    out: list[tuple[tuple, ConditionVerdict]] = []

    def visit(level: ActionSequence, prefix: tuple) -> None:
        from_action = level.first(AddFrom)
        scope = list(from_action.tables) if from_action is not None else None
        for i, action in enumerate(level.actions):
            path = prefix + (i,)
            if isinstance(action, (AddWhere, AddHaving)):
                out.append((path, check_condition(action, catalog, index, k=k,
                                                  backend=backend, scope_tables=scope)))
            elif isinstance(action, AddMerge):
                visit(action.left, path + ("left",))
                visit(action.right, path + ("right",))
            elif isinstance(action, QA) and action.resolved is not None:
                visit(action.resolved, path + ("qa",))

    visit(seq, ())
    return out
