"""Exception hierarchy shared across the pipeline stages."""

from __future__ import annotations


class RagTopicsError(Exception):
    """Base class for every error raised by this package."""


# corpus
class MissingColumn(RagTopicsError):
    pass


class EmptyCorpus(RagTopicsError):
    pass


class MalformedRow(RagTopicsError):
    pass


# embedding / vector math
class BackendUnavailable(RagTopicsError):
    pass


class DimensionMismatch(RagTopicsError):
    pass


class ZeroVector(RagTopicsError):
    pass


class EmptyText(RagTopicsError):
    pass


# vector store
class DuplicateChunkId(RagTopicsError):
    pass


class CorruptIndex(RagTopicsError):
    pass


class EmbedderMismatch(RagTopicsError):
    """An index was built with a different embedding model than requested."""


# llm client
class ScriptExhausted(RagTopicsError):
    pass


class ResponseTooLong(RagTopicsError):
    pass


class EmptyResponse(RagTopicsError):
    pass


# agent
class ParseError(RagTopicsError):
    """Model output could not be turned into a tool call."""


class NoActionBlock(ParseError):
    pass


class MalformedAction(ParseError):
    pass


class UnknownTool(ParseError):
    pass


class AgentRunError(RagTopicsError):
    """Agent run ended without a final answer; carries the partial transcript."""

    def __init__(self, message: str, transcript=None):
        super().__init__(message)
        self.transcript = transcript


class MaxStepsExceeded(AgentRunError):
    pass


class AgentAborted(AgentRunError):
    pass


# topic model
class TopicParseError(RagTopicsError):
    pass


class WrongTopicCount(TopicParseError):
    pass


class EmptyLabel(TopicParseError):
    pass


class DuplicateLabel(TopicParseError):
    pass


# evaluation
class AllTopicsEmpty(RagTopicsError):
    pass


# lda
class EmptyVocabulary(RagTopicsError):
    pass
