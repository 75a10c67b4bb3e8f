"""ReAct agent loop: Thought / Action text protocol, tool registry, transcripts."""

from __future__ import annotations

import ast
import hashlib
import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Mapping, Sequence

from .embedding import EmbedderConfig, embed_batch
from .errors import (
    AgentAborted,
    AgentRunError,
    MalformedAction,
    MaxStepsExceeded,
    NoActionBlock,
    ParseError,
    RagTopicsError,
    UnknownTool,
)
from .llm import ChatClient, ChatMessage, CompletionParams
from .vectorstore import VectorStore

FINAL_ANSWER = "final_answer"
OBSERVATION_CHUNK_CHARS = 500

STEP_KINDS = ("thought", "tool_call", "observation", "final_answer", "parse_error")


@dataclass(frozen=True)
class ParsedStep:
    thought: str
    tool_name: str
    arguments: dict[str, Any]


@dataclass
class Tool:
    name: str
    description: str
    arg_schema: dict[str, str]
    invoke: Callable[[dict[str, Any]], str]
    reset: Callable[[], None] | None = None


@dataclass(frozen=True)
class AgentLimits:
    max_steps: int = 8
    max_parse_retries: int = 2

    def __post_init__(self):
        if self.max_steps < 1 or self.max_parse_retries < 0:
            raise ValueError("max_steps must be >= 1 and max_parse_retries >= 0")


@dataclass
class AgentStep:
    ordinal: int
    kind: str
    payload: dict[str, Any]

    def to_dict(self) -> dict:
        return {"ordinal": self.ordinal, "kind": self.kind, "payload": self.payload}


@dataclass
class Transcript:
    run_id: str
    config: dict[str, Any]
    steps: list[AgentStep] = field(default_factory=list)
    completions: list[dict[str, Any]] = field(default_factory=list)
    outcome: str = "aborted"
    envelope: dict[str, Any] = field(default_factory=dict)

    def add(self, kind: str, **payload) -> AgentStep:
        step = AgentStep(len(self.steps), kind, payload)
        self.steps.append(step)
        return step

    @property
    def kinds(self) -> list[str]:
        return [s.kind for s in self.steps]

    def final_answer(self):
        for step in reversed(self.steps):
            if step.kind == "final_answer":
                return step.payload["answer"]
        return None

    def body(self) -> dict:
        """Everything except run identity and timestamps."""
        return {
            "config": self.config,
            "outcome": self.outcome,
            "steps": [s.to_dict() for s in self.steps],
            "completions": self.completions,
        }

    def to_dict(self) -> dict:
        envelope = {"run_id": self.run_id, "config_hash": config_hash(self.config), **self.envelope}
        return {"envelope": envelope, "transcript": self.body()}

    def dump(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, ensure_ascii=False, sort_keys=True) + "\n",
                              encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "Transcript":
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        env = dict(data["envelope"])
        body = data["transcript"]
        run_id = env.pop("run_id")
        env.pop("config_hash", None)
        steps = [AgentStep(s["ordinal"], s["kind"], s["payload"]) for s in body["steps"]]
        return cls(run_id, body["config"], steps, body["completions"], body["outcome"], env)


def config_hash(config: Mapping[str, Any]) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"), ensure_ascii=False)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


# --- parsing -----------------------------------------------------------------

_THOUGHT = re.compile(r"Thought\s*:", re.IGNORECASE)
_ACTION = re.compile(r"\bAction\s*:")
_CALLING = re.compile(r"(?:>>>\s*)?Calling tool:\s*['\"]([^'\"]+)['\"]\s*with arguments:", re.IGNORECASE)


def _balanced_object(text: str, start: int) -> tuple[int, int] | None:
    """Span of the first balanced ``{...}`` at or after ``start``, quote-aware."""
    begin = text.find("{", start)
    if begin < 0:
        return None
    depth = 0
    quote: str | None = None
    escaped = False
    for i in range(begin, len(text)):
        ch = text[i]
        if quote:
            if escaped:
                escaped = False
            elif ch == "\\":
                escaped = True
            elif ch == quote:
                quote = None
        elif ch in "\"'":
            quote = ch
        elif ch == "{":
            depth += 1
        elif ch == "}":
            depth -= 1
            if depth == 0:
                return begin, i + 1
    return None


def _load_object(block: str) -> Any:
    # wrapped lines inside string literals become single spaces
    flat = block.replace("\r\n", " ").replace("\n", " ")
    try:
        return json.loads(flat)
    except ValueError:
        pass
    try:
        return ast.literal_eval(flat)
    except (ValueError, SyntaxError) as exc:
        raise MalformedAction(f"action block is neither JSON nor a literal mapping: {exc}") from None


def _as_arguments(action_input: Any) -> dict[str, Any]:
    if isinstance(action_input, dict):
        return dict(action_input)
    return {"input": action_input}


def _clean_thought(text: str) -> str:
    return " ".join(text.replace(">>>", " ").split())


def parse_step(raw: str) -> ParsedStep:
    """Split one model output into its thought and the first action block.

    Accepted action forms, tried in order:

    * ``Action:`` followed by ``{"action": ..., "action_input": ...}``
    * ``Calling tool: 'name' with arguments: {...}``
    * a bare ``{"action": ..., "action_input": ...}`` object anywhere after the thought

    Text after the action block is ignored.
    """
    m_thought = _THOUGHT.search(raw)
    body_start = m_thought.end() if m_thought else 0

    m_action = _ACTION.search(raw, body_start)
    m_calling = _CALLING.search(raw, body_start)

    if m_action and (not m_calling or m_action.start() < m_calling.start()):
        thought = _clean_thought(raw[body_start : m_action.start()])
        span = _balanced_object(raw, m_action.end())
        if span is None:
            raise MalformedAction("'Action:' is not followed by a complete {...} block")
        obj = _load_object(raw[span[0] : span[1]])
        if not isinstance(obj, dict) or "action" not in obj or "action_input" not in obj:
            raise MalformedAction("action block must contain keys 'action' and 'action_input'")
        if not isinstance(obj["action"], str) or not obj["action"]:
            raise MalformedAction("'action' must be a non-empty tool name")
        return ParsedStep(thought, obj["action"], _as_arguments(obj["action_input"]))

    if m_calling:
        thought = _clean_thought(raw[body_start : m_calling.start()])
        span = _balanced_object(raw, m_calling.end())
        if span is None:
            raise MalformedAction(f"call to {m_calling.group(1)!r} has no argument mapping")
        obj = _load_object(raw[span[0] : span[1]])
        if not isinstance(obj, dict):
            raise MalformedAction("tool arguments must be a mapping")
        return ParsedStep(thought, m_calling.group(1), obj)

    pos = body_start
    saw_candidate = False
    while (span := _balanced_object(raw, pos)) is not None:
        block = raw[span[0] : span[1]]
        try:
            obj = _load_object(block)
        except MalformedAction:
            obj = None
        if isinstance(obj, dict) and "action" in obj and "action_input" in obj and isinstance(obj["action"], str):
            thought = _clean_thought(raw[body_start : span[0]])
            return ParsedStep(thought, obj["action"], _as_arguments(obj["action_input"]))
        saw_candidate = saw_candidate or '"action"' in block or "'action'" in block
        pos = span[0] + 1
    if saw_candidate:
        raise MalformedAction("found an action-like block without both 'action' and 'action_input'")
    raise NoActionBlock("no action block found in model output")


# --- tools -------------------------------------------------------------------


def final_answer_tool() -> Tool:
    return Tool(
        FINAL_ANSWER,
        "Submit the final answer. Argument 'answer' is a list of strings.",
        {"answer": "list of strings"},
        lambda args: "final answer recorded",
    )


def retriever_tool(store: VectorStore, embedder: EmbedderConfig, texts: Mapping[str, str], k: int = 15) -> Tool:
    """Semantic search over ``store``; chunks already shown in the run are suppressed."""
    if len(store) == 0:
        raise ValueError("retriever needs a non-empty store")
    if k < 1:
        raise ValueError("k must be positive")
    seen: set[str] = set()

    def invoke(args: dict[str, Any]) -> str:
        query = args.get("query", args.get("input"))
        if not isinstance(query, str) or not query.strip():
            return "Error: the retriever needs a non-empty 'query' string."
        try:
            qvec = embed_batch([query], embedder)[0]
            hits = store.search(qvec, k)
        except RagTopicsError as exc:
            return f"Error: retrieval failed ({type(exc).__name__}: {exc}). Try rephrasing the query."
        fresh = [h for h in hits if h.chunk_id not in seen]
        suppressed = len(hits) - len(fresh)
        seen.update(h.chunk_id for h in fresh)
        lines = ["Retrieved documents:"]
        for i, hit in enumerate(fresh, start=1):
            text = texts[hit.chunk_id]
            if len(text) > OBSERVATION_CHUNK_CHARS:
                text = text[:OBSERVATION_CHUNK_CHARS] + " [...]"
            lines.append(f"Document {i} (score {hit.score:.4f}): {text}")
        if not fresh:
            lines.append("No new documents for this query.")
        if suppressed:
            noun = "document" if suppressed == 1 else "documents"
            lines.append(f"{suppressed} previously retrieved {noun} suppressed.")
        return "\n".join(lines)

    return Tool(
        "retriever",
        "Semantic search over the indexed corpus. Argument 'query' should be phrased "
        "like the documents you are looking for, not as a question.",
        {"query": "search text"},
        invoke,
        reset=seen.clear,
    )


def registry(tools: Sequence[Tool]) -> dict[str, Tool]:
    out: dict[str, Tool] = {}
    for tool in tools:
        if tool.name in out:
            raise ValueError(f"duplicate tool name {tool.name!r}")
        out[tool.name] = tool
    if FINAL_ANSWER not in out:
        out[FINAL_ANSWER] = final_answer_tool()
    return out


# --- loop --------------------------------------------------------------------

REFORMULATION_CHECKLIST = (
    "the retrieved documents do not fully answer the original task",
    "the retrieved information is not factually consistent",
    "the retrieved information is ambiguous or contradicts itself",
)


def system_prompt(tools: Mapping[str, Tool]) -> str:
    tool_lines = "\n".join(
        f"- {t.name}: {t.description} Arguments: {json.dumps(t.arg_schema)}" for t in tools.values()
    )
    checklist = "\n".join(f"  * {item}" for item in REFORMULATION_CHECKLIST)
    return (
        "You are a research assistant that solves tasks by reasoning step by step and calling tools.\n"
        "You can use these tools:\n"
        f"{tool_lines}\n\n"
        "Every reply must have exactly this form:\n"
        "Thought: <your reasoning about what to do next>\n"
        "Action:\n"
        '{"action": "<tool name>", "action_input": {<arguments>}}\n\n'
        "Call one tool per reply and wait for its observation. After each retrieval, check the results. "
        "Reformulate the query and retrieve again if any of the following holds:\n"
        f"{checklist}\n"
        f"When you are done, call '{FINAL_ANSWER}' with the complete answer."
    )


def _validate_final(arguments: dict[str, Any]) -> list[str]:
    answer = arguments.get("answer", arguments.get("input"))
    if not isinstance(answer, list) or not answer or not all(isinstance(a, str) for a in answer):
        raise MalformedAction("final_answer requires 'answer': a non-empty list of strings")
    return answer


def run(
    task_prompt: str,
    tools: Sequence[Tool] | Mapping[str, Tool],
    llm: ChatClient,
    params: CompletionParams = CompletionParams(),
    limits: AgentLimits = AgentLimits(),
    run_id: str = "run",
    config: Mapping[str, Any] | None = None,
) -> tuple[list[str], Transcript]:
    """Drive the Thought/Action loop until ``final_answer`` or the step budget runs out.

    Raises MaxStepsExceeded after ``limits.max_steps`` tool invocations and
    AgentAborted once more than ``limits.max_parse_retries`` outputs failed to
    parse. Backend errors propagate; every raised error carries the partial
    transcript as ``exc.transcript``.
    """
    reg = dict(tools) if isinstance(tools, Mapping) else registry(tools)
    if FINAL_ANSWER not in reg:
        raise ValueError("tool registry must contain final_answer")
    for tool in reg.values():
        if tool.reset:
            tool.reset()

    transcript = Transcript(run_id, dict(config or {}))
    transcript.config.setdefault("limits", {"max_steps": limits.max_steps, "max_parse_retries": limits.max_parse_retries})
    messages = [ChatMessage("system", system_prompt(reg)), ChatMessage("user", task_prompt)]
    tool_calls = 0
    parse_failures = 0

    while True:
        if tool_calls >= limits.max_steps:
            transcript.outcome = "max_steps_exceeded"
            raise MaxStepsExceeded(f"no final answer after {tool_calls} tool calls", transcript)

        request = [m.to_dict() for m in messages]
        try:
            raw = llm.complete(messages, params)
        except Exception as exc:
            transcript.completions.append({"request": request, "error": f"{type(exc).__name__}: {exc}"})
            transcript.outcome = "aborted"
            exc.transcript = transcript
            raise
        transcript.completions.append({"request": request, "response": raw})
        messages.append(ChatMessage("assistant", raw))

        try:
            step = parse_step(raw)
            if step.tool_name not in reg:
                raise UnknownTool(f"unknown tool {step.tool_name!r}; available: {sorted(reg)}")
            answer = _validate_final(step.arguments) if step.tool_name == FINAL_ANSWER else None
        except ParseError as exc:
            parse_failures += 1
            transcript.add("parse_error", error=f"{type(exc).__name__}: {exc}", raw=raw)
            if parse_failures > limits.max_parse_retries:
                transcript.outcome = "aborted"
                raise AgentAborted(f"gave up after {parse_failures} unparseable outputs", transcript) from exc
            messages.append(ChatMessage(
                "user",
                f"Error: {exc}. Reply with 'Thought:' followed by 'Action:' and a JSON object "
                'of the form {"action": "<tool name>", "action_input": {...}}.',
            ))
            continue

        transcript.add("thought", text=step.thought)
        if answer is not None:
            transcript.add("final_answer", answer=answer)
            transcript.outcome = "success"
            return answer, transcript

        transcript.add("tool_call", tool=step.tool_name, arguments=step.arguments)
        tool_calls += 1
        try:
            observation = reg[step.tool_name].invoke(step.arguments)
        except Exception as exc:  # tool failures are shown to the model, not raised
            observation = f"Error: tool {step.tool_name!r} failed: {type(exc).__name__}: {exc}"
        transcript.add("observation", text=observation)
        messages.append(ChatMessage("user", f"Observation: {observation}"))


__all__ = [
    "AgentLimits", "AgentStep", "ParsedStep", "Tool", "Transcript", "AgentRunError",
    "parse_step", "retriever_tool", "final_answer_tool", "registry", "run", "system_prompt",
]
