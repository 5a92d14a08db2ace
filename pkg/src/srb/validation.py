"""Input checks for the estimator interface."""

from __future__ import annotations

from typing import Sequence

import numpy as np


def check_texts(X, name: str = "X") -> list[str]:
    """Return ``X`` as a list of strings, rejecting scalars and non-text items."""
    if isinstance(X, (str, bytes)):
        raise ValueError(f"{name} must be a sequence of strings, not a single string")
    if isinstance(X, np.ndarray):
        if X.ndim != 1:
            raise ValueError(f"{name} must be one-dimensional, got shape {X.shape}")
        X = X.tolist()
    try:
        items = list(X)
    except TypeError:
        raise ValueError(f"{name} must be an iterable of strings") from None
    for i, item in enumerate(items):
        if not isinstance(item, str):
            raise ValueError(f"{name}[{i}] is {type(item).__name__}, expected str")
    return items


def check_text_pairs(X, y, allow_empty: bool = False) -> tuple[list[str], list[str]]:
    sources, targets = check_texts(X, "X"), check_texts(y, "y")
    if len(sources) != len(targets):
        raise ValueError(f"X has {len(sources)} texts but y has {len(targets)}")
    if not sources and not allow_empty:
        raise ValueError("at least one (source, target) pair is required")
    return sources, targets


def check_positive(name: str, value, allow_zero: bool = False) -> None:
    ok = value >= 0 if allow_zero else value > 0
    if not ok:
        raise ValueError(f"{name} must be {'non-negative' if allow_zero else 'positive'}, got {value}")


def as_token_lists(texts: Sequence[str], tokenizer) -> list[list[str]]:
    return [tokenizer(t) for t in texts]
