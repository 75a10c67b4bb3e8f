"""Agentic-RAG topic modeling: chunk, embed, index, run a ReAct agent over the
index to extract topics, and score topic lists for validity and reliability."""

__version__ = "0.1.0"
