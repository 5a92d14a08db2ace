"""Greedy generation and attention-based UNK replacement."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from srb import model as M
from srb.data import BOS_ID, EOS_ID, PAD_ID, UNK_ID, Vocab
from srb.errors import DegenerateVectorError
from srb.tensor import cosine

SUMMARIZATION_MAX_LEN = 30
SIMPLIFICATION_LEN_RATIO = 1.5
TOY_LEN_RATIO = 2.0


@dataclass
class DecodeResult:
    ids: list[int]
    tokens: list[str]
    attention: list[np.ndarray]     # one row over source positions per emitted token
    finished: bool
    cosine: float | None = None
    extra: dict = field(default_factory=dict)


def default_max_len(profile: str, source_len: int) -> int:
    if profile == "summarization":
        return SUMMARIZATION_MAX_LEN
    if profile == "simplification":
        return max(1, math.ceil(SIMPLIFICATION_LEN_RATIO * source_len))
    return max(1, math.ceil(TOY_LEN_RATIO * source_len))


def greedy_decode(source_ids: Sequence[int], params: M.ModelParams, max_len: int,
                  vocab: Vocab | None = None) -> DecodeResult:
    """Emit the most probable token at each step until EOS or ``max_len`` tokens.

    PAD and BOS are never emitted; ties go to the lowest id. The result's
    ``cosine`` is the semantic relevance between the source vector and the
    final combined decoder state.
    """
    if max_len < 1:
        raise ValueError("max_len must be at least 1")
    if len(source_ids) == 0:
        raise ValueError("cannot decode an empty source")
    enc = M.encode(params, list(source_ids))
    state = M.initial_decoder_state(params, enc)
    banned = [PAD_ID, BOS_ID]
    prev = BOS_ID
    ids: list[int] = []
    rows: list[np.ndarray] = []
    finished = False
    for _ in range(max_len):
        dist, state, alpha = M.decode_step(params, [prev], state, enc)
        p = dist.values[0].astype(np.float64, copy=True)
        p[banned] = -1.0
        best = int(np.argmax(p))
        if best == EOS_ID:
            finished = True
            break
        ids.append(best)
        rows.append(alpha.values[0].copy())
        prev = best
    source_vec, summary_vec = M.semantic_vectors(enc, state.combined)
    try:
        relevance = float(cosine(source_vec, summary_vec).values[0])
    except DegenerateVectorError:
        relevance = None
    tokens = vocab.decode(ids) if vocab is not None else [str(i) for i in ids]
    return DecodeResult(ids, tokens, rows, finished, relevance)


def replace_unk(result: DecodeResult, source_tokens: Sequence[str],
                recovery_map: dict[str, str] | None = None) -> list[str]:
    """Swap each emitted UNK for the source token with the highest attention
    weight at that step, then map entity placeholders back to their surfaces."""
    recovery_map = recovery_map or {}
    out = []
    for t, (tok_id, tok) in enumerate(zip(result.ids, result.tokens)):
        if tok_id == UNK_ID:
            if t >= len(result.attention):
                raise ValueError(f"no attention row for UNK at step {t}")
            tok = source_tokens[int(np.argmax(result.attention[t]))]
        out.append(recovery_map.get(tok, tok))
    return out


def format_attention(rows: Sequence[np.ndarray]) -> str:
    """Plain-text attention block: one line per decode step, then a blank line."""
    return "".join(" ".join(f"{x:.6f}" for x in row) + "\n" for row in rows) + "\n"
