"""Iterative inspect-and-refine loop.

One run: an agent drafts an action sequence for the question, both
inspection tools examine it, and the accumulated feedback drives further
agent calls until every tool approves or the iteration budget runs out.
Columns whose conditions mismatched are removed from the schema view
shown to the agent on later iterations, and an exhausted run falls back
to the first iteration's conditional actions.
"""

from __future__ import annotations

import json
import os
import urllib.error
import urllib.request
from dataclasses import dataclass, field, replace

from .actions import (
    ActionSequence,
    AddHaving,
    AddMerge,
    AddWhere,
    CONDITIONAL_KINDS,
    Literal,
    ParseError,
    QA,
    assign_sequence_ids,
    parse_actions,
    sequence_to_json,
    serialize_actions,
)
from .detector import (
    ConstraintRule,
    DetectorFinding,
    UNRESOLVED_SUB_QUESTION,
    detect,
    detect_via_dbms,
)
from .retriever import (
    CellIndex,
    ConditionVerdict,
    Matched,
    Mismatch,
    inspect_sequence,
)
from .schema_catalog import SchemaCatalog

DEFAULT_INSTRUCTION = (
    "Write the query as a sequence of clause calls, one per line: "
    "add_select, add_from, add_where, add_group_by, add_having, "
    "add_order_by, add_limit, add_merge, qa. Use only tables and columns "
    "from the schema. String values must be quoted."
)


class AgentFailure(Exception):
    """The agent could not produce output (transport or protocol failure)."""


@dataclass(frozen=True)
class Demonstration:
    schema: str
    question: str
    actions: str


@dataclass(frozen=True)
class AgentContext:
    instruction: str
    demonstrations: tuple[Demonstration, ...]
    question: str
    schema_view: str
    excluded_columns: frozenset = frozenset()
    catalog: SchemaCatalog | None = field(default=None, repr=False, compare=False)


def render_schema(catalog: SchemaCatalog, excluded: frozenset = frozenset()) -> str:
    """Text rendering of the catalog for the agent's context.

    `excluded` holds lowercase (table, column) pairs to omit; tables stay
    listed even when all their columns are excluded.
    """
    lines = []
    for table in catalog.tables:
        cols = []
        for col in table.columns:
            if (table.name.lower(), col.name.lower()) in excluded:
                continue
            marker = ", primary key" if col.is_primary_key else ""
            cols.append(f"{col.name} ({col.affinity}{marker})")
        lines.append(f"table {table.name}: " + ", ".join(cols))
    fk_lines = []
    for fk in catalog.foreign_keys:
        if (fk.table.lower(), fk.column.lower()) in excluded:
            continue
        if (fk.ref_table.lower(), fk.ref_column.lower()) in excluded:
            continue
        fk_lines.append(f"{fk.table}.{fk.column} -> {fk.ref_table}.{fk.ref_column}")
    if fk_lines:
        lines.append("foreign keys: " + "; ".join(fk_lines))
    return "\n".join(lines)


def build_context(catalog: SchemaCatalog, question: str, *,
                  instruction: str = DEFAULT_INSTRUCTION,
                  demonstrations: tuple[Demonstration, ...] = ()) -> AgentContext:
    return AgentContext(instruction=instruction, demonstrations=demonstrations,
                        question=question, schema_view=render_schema(catalog),
                        catalog=catalog)


def reduce_schema(ctx: AgentContext, attempted_condition_columns) -> AgentContext:
    """Remove previously attempted conditional columns from the schema view
    so the agent does not repeat the same wrong guess.
    """
    excluded = frozenset(ctx.excluded_columns) | {
        (t.lower(), c.lower()) for t, c in attempted_condition_columns}
    if ctx.catalog is None:
        return replace(ctx, excluded_columns=excluded)
    return replace(ctx, excluded_columns=excluded,
                   schema_view=render_schema(ctx.catalog, excluded))


# ---------------------------------------------------------------------------
# Feedback
# ---------------------------------------------------------------------------


def _path_text(path: tuple) -> str:
    return ".".join(str(step) for step in path)


def verdict_to_json(verdict: ConditionVerdict) -> dict:
    if isinstance(verdict, Matched):
        return {"status": "matched", "raw_value": verdict.raw_value}
    if isinstance(verdict, Mismatch):
        return {"status": "mismatch", "candidates": [
            {"table": c.table, "column": c.column, "value": c.raw_value,
             "score": round(c.score, 6)}
            for c in verdict.candidates]}
    return {"status": "not_applicable", "reason": verdict.reason}


@dataclass
class Feedback:
    iteration: int
    verdicts: list[tuple[tuple, ConditionVerdict]] = field(default_factory=list)
    findings: list[DetectorFinding] = field(default_factory=list)
    parse_errors: list[ParseError] = field(default_factory=list)

    @property
    def mismatches(self) -> list[tuple[tuple, Mismatch]]:
        return [(path, v) for path, v in self.verdicts if isinstance(v, Mismatch)]

    @property
    def approved(self) -> bool:
        return not self.mismatches and not self.findings and not self.parse_errors

    @property
    def has_condition_mismatch(self) -> bool:
        return bool(self.mismatches)

    def render(self) -> str:
        """Compact text block shown to the agent on refinement."""
        lines = []
        for error in self.parse_errors:
            lines.append(f"parse error line {error.line}: {error.reason}")
        for path, verdict in self.verdicts:
            if not isinstance(verdict, Mismatch):
                continue
            cells = ", ".join(f"{c.raw_value!r} ({c.score:.2f})" for c in verdict.candidates)
            lines.append(f"condition at {_path_text(path)} matches no database entry; "
                         f"similar cells: {cells or 'none'}")
        for finding in self.findings:
            lines.append(f"{finding.kind} at {_path_text(finding.action_path)}: {finding.detail}")
        if not lines:
            lines.append("approved")
        return "\n".join(lines)

    def to_json_dict(self) -> dict:
        return {
            "iteration": self.iteration,
            "approved": self.approved,
            "parse_errors": [{"line": e.line, "reason": e.reason} for e in self.parse_errors],
            "verdicts": [{"path": list(path), **verdict_to_json(v)}
                         for path, v in self.verdicts],
            "findings": [f.to_json_dict() for f in self.findings],
        }


@dataclass
class RefinementTrace:
    iterations: list[tuple[ActionSequence, Feedback]]
    final: ActionSequence
    exhausted: bool
    fallback_applied: bool
    exclusion_history: list[str]

    def to_json_dict(self) -> dict:
        return {
            "iterations": [
                {"actions": serialize_actions(seq), "structure": sequence_to_json(seq),
                 "feedback": fb.to_json_dict()}
                for seq, fb in self.iterations
            ],
            "final_actions": serialize_actions(self.final),
            "exhausted": self.exhausted,
            "fallback_applied": self.fallback_applied,
            "exclusions": list(self.exclusion_history),
        }


# ---------------------------------------------------------------------------
# Agents
# ---------------------------------------------------------------------------


class AgentInterface:
    """Anything that can draft and refine action sequences."""

    def generate(self, ctx: AgentContext) -> str:
        raise NotImplementedError

    def refine(self, ctx: AgentContext, prior: ActionSequence, feedback: Feedback) -> str:
        raise NotImplementedError


class ScriptedAgent(AgentInterface):
    """Replays canned outputs from a question -> [text per call] mapping.

    The n-th call for a question returns the n-th entry; calls past the
    end repeat the last entry, which makes never-converging agents easy
    to script.
    """

    def __init__(self, script: dict):
        self.script = dict(script)
        self._calls: dict[str, int] = {}

    @classmethod
    def from_file(cls, path) -> "ScriptedAgent":
        with open(path, "r", encoding="utf-8") as handle:
            return cls(json.load(handle))

    def _next(self, question: str) -> str:
        outputs = self.script.get(question)
        if outputs is None:
            raise AgentFailure(f"question not scripted: {question!r}")
        if isinstance(outputs, str):
            outputs = [outputs]
        n = self._calls.get(question, 0)
        self._calls[question] = n + 1
        return outputs[min(n, len(outputs) - 1)]

    def generate(self, ctx: AgentContext) -> str:
        return self._next(ctx.question)

    def refine(self, ctx: AgentContext, prior: ActionSequence, feedback: Feedback) -> str:
        return self._next(ctx.question)


ENDPOINT_ENV = "SQLMEND_LLM_ENDPOINT"
API_KEY_ENV = "SQLMEND_LLM_API_KEY"
MODEL_ENV = "SQLMEND_LLM_MODEL"


class HttpAgent(AgentInterface):
    """Chat-completion-style HTTP backend.

    Requests are pinned to temperature 0 and a 300-token cap for stable,
    bounded replies. Transport failures are retried; persistent failure
    raises AgentFailure.
    """

    def __init__(self, endpoint: str, api_key: str | None = None,
                 model: str = "default", timeout: float = 60.0, retries: int = 2):
        self.endpoint = endpoint
        self.api_key = api_key
        self.model = model
        self.timeout = timeout
        self.retries = retries

    @classmethod
    def from_env(cls, retries: int = 2) -> "HttpAgent":
        endpoint = os.environ.get(ENDPOINT_ENV)
        if not endpoint:
            raise AgentFailure(f"{ENDPOINT_ENV} is not set")
        return cls(endpoint=endpoint, api_key=os.environ.get(API_KEY_ENV),
                   model=os.environ.get(MODEL_ENV, "default"), retries=retries)

    def _chat(self, messages: list[dict]) -> str:
        payload = json.dumps({
            "model": self.model,
            "messages": messages,
            "temperature": 0,
            "max_tokens": 300,
        }).encode("utf-8")
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        last_error: Exception | None = None
        for _attempt in range(self.retries + 1):
            request = urllib.request.Request(self.endpoint, data=payload, headers=headers)
            try:
                with urllib.request.urlopen(request, timeout=self.timeout) as response:
                    body = json.loads(response.read().decode("utf-8"))
                return body["choices"][0]["message"]["content"]
            except (urllib.error.URLError, OSError, KeyError, IndexError,
                    json.JSONDecodeError) as exc:
                last_error = exc
        raise AgentFailure(f"agent endpoint failed after retries: {last_error}")

    def _context_message(self, ctx: AgentContext) -> str:
        parts = []
        for demo in ctx.demonstrations:
            parts.append(f"schema:\n{demo.schema}\nquestion: {demo.question}\n"
                         f"actions:\n{demo.actions}")
        parts.append(f"schema:\n{ctx.schema_view}\nquestion: {ctx.question}\nactions:")
        return "\n\n".join(parts)

    def generate(self, ctx: AgentContext) -> str:
        return self._chat([
            {"role": "system", "content": ctx.instruction},
            {"role": "user", "content": self._context_message(ctx)},
        ])

    def refine(self, ctx: AgentContext, prior: ActionSequence, feedback: Feedback) -> str:
        return self._chat([
            {"role": "system", "content": ctx.instruction},
            {"role": "user", "content": self._context_message(ctx)},
            {"role": "assistant", "content": serialize_actions(prior)},
            {"role": "user", "content": "The tools reported:\n" + feedback.render()
             + "\nEmit the corrected action sequence."},
        ])


# ---------------------------------------------------------------------------
# Sub-question resolution
# ---------------------------------------------------------------------------


def resolve_qa(seq: ActionSequence, agent: AgentInterface, ctx: AgentContext,
               max_depth: int = 2) -> tuple[ActionSequence, list[DetectorFinding]]:
    """Resolve qa() actions by recursive agent calls on the sub-question.

    Recursion past `max_depth` leaves the action unresolved and reports a
    finding instead.
    """
    findings: list[DetectorFinding] = []

    def visit(level: ActionSequence, depth: int, prefix: tuple) -> None:
        for i, action in enumerate(level.actions):
            path = prefix + (i,)
            if isinstance(action, QA):
                if action.resolved is None:
                    if depth >= max_depth:
                        findings.append(DetectorFinding(
                            kind=UNRESOLVED_SUB_QUESTION, action_path=path,
                            detail=f"sub-question depth limit ({max_depth}) reached",
                            machine_data={"question": action.sub_question}))
                        continue
                    child_ctx = replace(ctx, question=action.sub_question)
                    try:
                        text = agent.generate(child_ctx)
                    except AgentFailure as exc:
                        findings.append(DetectorFinding(
                            kind=UNRESOLVED_SUB_QUESTION, action_path=path,
                            detail=f"agent failed on sub-question: {exc}",
                            machine_data={"question": action.sub_question}))
                        continue
                    action.resolved = parse_actions(text).sequence
                if action.resolved is not None:
                    visit(action.resolved, depth + 1, path + ("qa",))
            elif isinstance(action, AddMerge):
                visit(action.left, depth, path + ("left",))
                visit(action.right, depth, path + ("right",))

    visit(seq, 0, ())
    assign_sequence_ids(seq)
    return seq, findings


# ---------------------------------------------------------------------------
# The loop
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RefinementConfig:
    max_iterations: int = 3
    candidate_k: int = 5
    use_retriever: bool = True
    use_detector: bool = True
    dbms_feedback: bool = False
    qa_depth: int = 2
    allow_name_equijoin: bool = False
    instruction: str = DEFAULT_INSTRUCTION

    def __post_init__(self):
        if not 0 <= self.max_iterations <= 10:
            raise ValueError("max_iterations must be between 0 and 10")


def _mismatch_columns(feedback: Feedback) -> set[tuple[str, str]]:
    columns = set()
    for _path, verdict in feedback.mismatches:
        for candidate in verdict.candidates[:1]:
            columns.add((candidate.table, candidate.column))
    return columns


def _action_at(seq: ActionSequence, path: tuple):
    level = seq
    node = None
    for step in path:
        if step == "left":
            level = node.left
        elif step == "right":
            level = node.right
        elif step == "qa":
            level = node.resolved
        else:
            node = level.actions[step]
    return node


def _apply_matched_values(seq: ActionSequence, feedback: Feedback) -> None:
    """Pin each matched condition to the ground-truth raw cell value."""
    for path, verdict in feedback.verdicts:
        if not isinstance(verdict, Matched):
            continue
        action = _action_at(seq, path)
        if isinstance(action, (AddWhere, AddHaving)) and isinstance(action.value, Literal) \
                and action.value.kind == "text":
            level, index = _level_of(seq, path)
            level.actions[index] = replace(action, value=Literal(kind="text",
                                                                 value=verdict.raw_value))


def _level_of(seq: ActionSequence, path: tuple) -> tuple[ActionSequence, int]:
    level = seq
    node = None
    for step in path[:-1]:
        if step == "left":
            level = node.left
        elif step == "right":
            level = node.right
        elif step == "qa":
            level = node.resolved
        else:
            node = level.actions[step]
    return level, path[-1]


def _fallback_conditionals(final: ActionSequence, initial: ActionSequence) -> ActionSequence:
    """Replace the final sequence's top-level conditional actions with the
    initial iteration's, keeping everything else.
    """
    initial_conditionals = [a for a in initial.actions if isinstance(a, CONDITIONAL_KINDS)]
    insert_at = next((i for i, a in enumerate(final.actions)
                      if isinstance(a, CONDITIONAL_KINDS)), len(final.actions))
    kept = [a for a in final.actions if not isinstance(a, CONDITIONAL_KINDS)]
    kept_before = sum(1 for a in final.actions[:insert_at]
                      if not isinstance(a, CONDITIONAL_KINDS))
    actions = kept[:kept_before] + initial_conditionals + kept[kept_before:]
    return assign_sequence_ids(ActionSequence(actions=actions))


def run(question: str, catalog: SchemaCatalog, index: CellIndex,
        rules: list[ConstraintRule] | tuple, agent: AgentInterface,
        config: RefinementConfig = RefinementConfig(), *,
        demonstrations: tuple[Demonstration, ...] = (),
        backend=None) -> RefinementTrace:
    """Run the full inspect-and-refine loop for one question.

    The trace records every (sequence, feedback) pair, whether the budget
    was exhausted, and whether the conditional-clause fallback fired.
    """
    ctx = build_context(catalog, question, instruction=config.instruction,
                        demonstrations=demonstrations)
    iterations: list[tuple[ActionSequence, Feedback]] = []
    exclusions: set[tuple[str, str]] = set()
    exclusion_history: list[str] = []
    prev_seq: ActionSequence | None = None
    prev_feedback: Feedback | None = None
    agent_failed = False

    for iteration in range(config.max_iterations + 1):
        try:
            if iteration == 0:
                text = agent.generate(ctx)
            else:
                text = agent.refine(ctx, prev_seq, prev_feedback)
        except AgentFailure:
            agent_failed = True
            break
        result = parse_actions(text)
        seq = result.sequence
        seq, qa_findings = resolve_qa(seq, agent, ctx, max_depth=config.qa_depth)

        verdicts = []
        if config.use_retriever:
            verdicts = inspect_sequence(seq, catalog, index, k=config.candidate_k,
                                        backend=backend)
        findings = list(qa_findings)
        if config.dbms_feedback:
            findings.extend(detect_via_dbms(seq, catalog.source_path))
        elif config.use_detector:
            findings.extend(detect(seq, catalog, rules,
                                   allow_name_equijoin=config.allow_name_equijoin))
        feedback = Feedback(iteration=iteration, verdicts=verdicts,
                            findings=findings, parse_errors=result.errors)
        iterations.append((seq, feedback))
        if feedback.approved:
            break
        new_columns = _mismatch_columns(feedback) - exclusions
        exclusions |= new_columns
        exclusion_history.extend(sorted(f"{t}.{c}" for t, c in new_columns))
        ctx = reduce_schema(ctx, exclusions)
        prev_seq, prev_feedback = seq, feedback

    if not iterations:
        return RefinementTrace(iterations=[], final=ActionSequence(), exhausted=True,
                               fallback_applied=False, exclusion_history=[])

    final_seq, final_feedback = iterations[-1]
    exhausted = agent_failed or not final_feedback.approved
    fallback_applied = False
    if final_feedback.approved:
        _apply_matched_values(final_seq, final_feedback)
    elif exhausted and final_feedback.has_condition_mismatch and len(iterations) > 1:
        final_seq = _fallback_conditionals(final_seq, iterations[0][0])
        fallback_applied = True
    return RefinementTrace(iterations=iterations, final=final_seq, exhausted=exhausted,
                           fallback_applied=fallback_applied,
                           exclusion_history=exclusion_history)
