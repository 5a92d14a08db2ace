"""Semantic-relevance seq2seq models for summarization and simplification."""

__version__ = "0.1.0"
