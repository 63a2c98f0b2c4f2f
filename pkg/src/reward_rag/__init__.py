"""Reward-driven alignment of dense retrievers with LLM critic feedback."""

__version__ = "0.1.0"
