"""Run configuration: one structured file plus command-line overrides."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, is_dataclass, replace
from pathlib import Path
from typing import Any

import yaml

from .agent import AgentLimits, config_hash
from .corpus import ChunkPolicy
from .embedding import EmbedderConfig
from .evaluation import RetrievalParams
from .llm import CompletionParams, LlmConfig
from .topicmodel import TopicParams


@dataclass(frozen=True)
class CorpusConfig:
    csv_path: str | None = None
    text_column: str = "text"
    dedup: bool = False
    skip_malformed: bool = False


@dataclass(frozen=True)
class AgentConfig:
    max_steps: int = 8
    max_parse_retries: int = 2
    retriever_k: int = 15

    def limits(self) -> AgentLimits:
        return AgentLimits(self.max_steps, self.max_parse_retries)


@dataclass(frozen=True)
class TopicsConfig:
    k: int = 10
    word_limit: int = 3
    subject: str = "COVID-19 vaccine hesitancy"
    rounds: int = 5
    concurrency: int = 1

    def params(self) -> TopicParams:
        return TopicParams(self.k, self.word_limit, self.subject)


@dataclass(frozen=True)
class LdaConfig:
    k: int = 10
    iterations: int = 500
    alpha: float | None = None
    beta: float = 0.01
    label_words: int = 2
    min_doc_freq: int = 2
    stemmer: bool = True


def _default_eval_embedder() -> EmbedderConfig:
    return EmbedderConfig()


@dataclass
class RunConfig:
    corpus: CorpusConfig = field(default_factory=CorpusConfig)
    chunking: ChunkPolicy = field(default_factory=ChunkPolicy)
    index_embedder: EmbedderConfig = field(default_factory=EmbedderConfig)
    eval_embedder: EmbedderConfig = field(default_factory=_default_eval_embedder)
    llm: LlmConfig = field(default_factory=LlmConfig)
    agent: AgentConfig = field(default_factory=AgentConfig)
    topics: TopicsConfig = field(default_factory=TopicsConfig)
    eval: RetrievalParams = field(default_factory=RetrievalParams)
    lda: LdaConfig = field(default_factory=LdaConfig)
    seed: int = 0
    artifact_dir: str = "artifacts"

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    def hash(self) -> str:
        d = self.to_dict()
        # where artifacts go does not change what they contain
        d.pop("artifact_dir")
        return config_hash(d)

    def dump(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "RunConfig":
        return _build(cls, data or {})


_NESTED = {
    "corpus": CorpusConfig,
    "chunking": ChunkPolicy,
    "index_embedder": EmbedderConfig,
    "eval_embedder": EmbedderConfig,
    "llm": LlmConfig,
    "agent": AgentConfig,
    "topics": TopicsConfig,
    "eval": RetrievalParams,
    "lda": LdaConfig,
    "params": CompletionParams,
}


def _build(cls, data: dict[str, Any]):
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ValueError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    kwargs = {}
    for name, value in data.items():
        sub = _NESTED.get(name)
        if sub is not None and isinstance(value, dict):
            value = _build(sub, value)
        kwargs[name] = value
    return cls(**kwargs)


def load_config(path: str | Path | None) -> RunConfig:
    if path is None:
        return RunConfig()
    text = Path(path).read_text(encoding="utf-8")
    data = yaml.safe_load(text) if Path(path).suffix in (".yaml", ".yml") else json.loads(text)
    return RunConfig.from_dict(data or {})


def override(obj, **changes):
    """``dataclasses.replace`` that ignores ``None`` values (flags not given)."""
    changes = {k: v for k, v in changes.items() if v is not None}
    if not changes:
        return obj
    assert is_dataclass(obj)
    return replace(obj, **changes)
