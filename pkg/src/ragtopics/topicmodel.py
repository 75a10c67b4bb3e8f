"""Topic-modeling rounds: task prompt, agent run, topic list validation."""

from __future__ import annotations

import json
import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Callable, Mapping, Sequence

from . import agent
from .agent import AgentLimits, Transcript, config_hash
from .embedding import EmbedderConfig
from .errors import AgentRunError, DuplicateLabel, EmptyLabel, RagTopicsError, WrongTopicCount
from .llm import ChatClient, CompletionParams
from .vectorstore import VectorStore

logger = logging.getLogger(__name__)

DEFAULT_SUBJECT = "COVID-19 vaccine hesitancy"

_NUMBER_WORDS = ["zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten",
                 "eleven", "twelve"]
_PREFIX = re.compile(r"^\s*topic\s*\d+\s*[:.)\-–]\s*", re.IGNORECASE)


@dataclass(frozen=True)
class Topic:
    index: int
    label: str
    word_count: int
    violates_word_limit: bool = False

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class TopicParams:
    k: int = 10
    word_limit: int = 3
    subject: str = DEFAULT_SUBJECT

    def __post_init__(self):
        if self.k < 1 or self.word_limit < 1:
            raise ValueError("k and word_limit must be positive")


@dataclass
class RoundResult:
    round_number: int
    topics: list[Topic]
    transcript_ref: str
    config_snapshot: dict[str, Any]

    @property
    def labels(self) -> list[str]:
        return [t.label for t in self.topics]

    def to_dict(self) -> dict:
        return {
            "round_number": self.round_number,
            "topics": [t.to_dict() for t in self.topics],
            "transcript_ref": self.transcript_ref,
            "config_hash": config_hash(self.config_snapshot),
            "config_snapshot": self.config_snapshot,
        }

    def dump(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, ensure_ascii=False, sort_keys=True) + "\n",
                              encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "RoundResult":
        d = json.loads(Path(path).read_text(encoding="utf-8"))
        topics = [Topic(**t) for t in d["topics"]]
        return cls(d["round_number"], topics, d["transcript_ref"], d["config_snapshot"])


@dataclass
class RoundOutcome:
    round_number: int
    result: RoundResult | None = None
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.result is not None


def _words(n: int) -> str:
    word = _NUMBER_WORDS[n] if n < len(_NUMBER_WORDS) else str(n)
    return f"{word} word" if n == 1 else f"{word} words"


def build_task_prompt(subject: str = DEFAULT_SUBJECT, k: int = 10, word_limit: int = 3) -> str:
    if k < 1:
        raise ValueError("k must be >= 1")
    if word_limit < 1:
        raise ValueError("word_limit must be >= 1")
    what = "the single most relevant topic" if k == 1 else f"the {k} most relevant topics"
    example = ", ".join(f'"Topic {i}: <label>"' for i in range(1, min(k, 3) + 1))
    if k > 3:
        example += ", ..."
    return (
        f"Identify {what} related to {subject} in the indexed data. "
        f"Each topic label must be no more than {_words(word_limit)} ({word_limit} max).\n"
        "Use the 'retriever' tool several times with diverse phrasings of your query so that the "
        "search covers the data comprehensively before you decide. Base the topics only on the "
        "retrieved documents.\n"
        f"Finish by calling 'final_answer' with {{\"answer\": [{example}]}}, "
        f"a list of exactly {k} entries of the form \"Topic i: <label>\"."
    )


def parse_topics(answer: Sequence[str], k: int, word_limit: int) -> list[Topic]:
    """Strip ``Topic N:`` prefixes and check count, emptiness and duplicates.

    Labels longer than ``word_limit`` words are kept and flagged.
    """
    if len(answer) != k:
        raise WrongTopicCount(f"expected {k} topics, got {len(answer)}")
    topics: list[Topic] = []
    seen: set[str] = set()
    for i, entry in enumerate(answer, start=1):
        label = " ".join(_PREFIX.sub("", str(entry), count=1).split())
        if not label:
            raise EmptyLabel(f"entry {i} has an empty label: {entry!r}")
        key = label.casefold()
        if key in seen:
            raise DuplicateLabel(f"label {label!r} appears twice")
        seen.add(key)
        n_words = len(label.split())
        topics.append(Topic(i, label, n_words, n_words > word_limit))
    return topics


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


@dataclass
class RoundContext:
    """Everything a round needs besides its LLM client."""

    store: VectorStore
    embedder: EmbedderConfig
    texts: Mapping[str, str]
    topic_params: TopicParams = field(default_factory=TopicParams)
    limits: AgentLimits = field(default_factory=AgentLimits)
    completion: CompletionParams = field(default_factory=CompletionParams)
    retriever_k: int = 15
    snapshot_extra: dict[str, Any] = field(default_factory=dict)

    def snapshot(self) -> dict[str, Any]:
        snap = {
            "embedder": self.embedder.identity(),
            "agent": {"max_steps": self.limits.max_steps, "max_parse_retries": self.limits.max_parse_retries,
                      "retriever_k": self.retriever_k},
            "completion": self.completion.to_dict(),
            "prompt": asdict(self.topic_params),
        }
        snap.update(self.snapshot_extra)
        return snap


def run_round(ctx: RoundContext, llm: ChatClient, round_number: int = 1, run_id: str | None = None,
              out_dir: str | Path | None = None) -> RoundResult:
    """One round: prompt, agent run, topic parsing.

    A WrongTopicCount answer triggers one full re-run with the same client.
    When ``out_dir`` is given the transcript goes to ``transcripts/`` and the
    result to ``rounds/``.
    """
    snapshot = ctx.snapshot()
    run_id = run_id or f"{config_hash(snapshot)[:12]}-round{round_number:02d}"
    tp = ctx.topic_params
    prompt = build_task_prompt(tp.subject, tp.k, tp.word_limit)
    tools = [agent.retriever_tool(ctx.store, ctx.embedder, ctx.texts, ctx.retriever_k)]

    failed_attempts: list[dict] = []
    for attempt in (1, 2):
        started = _now()
        transcript: Transcript | None = None
        try:
            answer, transcript = agent.run(prompt, tools, llm, ctx.completion, ctx.limits, run_id, snapshot)
            topics = parse_topics(answer, tp.k, tp.word_limit)
        except WrongTopicCount as exc:
            failed_attempts.append({"attempt": attempt, "error": str(exc), "transcript": transcript.body()})
            _write_transcript(out_dir, transcript, started, attempt, failed_attempts[:-1])
            if attempt == 2:
                raise
            logger.info("round %d: %s; re-running once", round_number, exc)
            continue
        except AgentRunError as exc:
            _write_transcript(out_dir, exc.transcript, started, attempt, failed_attempts)
            raise
        except RagTopicsError as exc:
            _write_transcript(out_dir, transcript or getattr(exc, "transcript", None), started, attempt,
                              failed_attempts)
            raise
        _write_transcript(out_dir, transcript, started, attempt, failed_attempts)
        result = RoundResult(round_number, topics, run_id, snapshot)
        if out_dir is not None:
            rounds = Path(out_dir) / "rounds"
            rounds.mkdir(parents=True, exist_ok=True)
            result.dump(rounds / f"round_{round_number:02d}.json")
        return result
    raise AssertionError("unreachable")


def _write_transcript(out_dir, transcript: Transcript | None, started: str, attempt: int,
                      failed_attempts: list[dict]) -> None:
    if out_dir is None or transcript is None:
        return
    transcript.envelope.update({
        "attempt": attempt,
        "retried_after": [f["error"] for f in failed_attempts],
        "failed_attempts": failed_attempts,
        "timestamps": {"started": started, "finished": _now()},
    })
    tdir = Path(out_dir) / "transcripts"
    tdir.mkdir(parents=True, exist_ok=True)
    transcript.dump(tdir / f"{transcript.run_id}.json")


def run_rounds(n: int, ctx: RoundContext, make_llm: Callable[[int], ChatClient],
               out_dir: str | Path | None = None, concurrency: int = 1) -> list[RoundOutcome]:
    """Run ``n`` independent rounds, each with its own client from ``make_llm(round_number)``.

    Failures are collected per round rather than raised.
    """
    if n < 1:
        raise ValueError("n must be >= 1")

    def one(round_number: int) -> RoundOutcome:
        try:
            result = run_round(ctx, make_llm(round_number), round_number, out_dir=out_dir)
            return RoundOutcome(round_number, result)
        except RagTopicsError as exc:
            logger.error("round %d failed: %s: %s", round_number, type(exc).__name__, exc)
            return RoundOutcome(round_number, error=f"{type(exc).__name__}: {exc}")

    numbers = range(1, n + 1)
    if concurrency > 1:
        with ThreadPoolExecutor(max_workers=concurrency) as pool:
            return list(pool.map(one, numbers))
    return [one(i) for i in numbers]
