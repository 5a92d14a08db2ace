"""Finite-difference check of the full model loss on a miniature setup."""

from __future__ import annotations

import numpy as np

from srb import data as D
from srb import model as M
from srb.tensor import gradient_check

MINI = dict(vocab_size=20, embed_dim=8, hidden_dim=12, gate_hidden_dim=16)
TOLERANCE = 1e-4


def mini_batch(seed: int = 0, batch_size: int = 2, source_len: int = 5, target_len: int = 4,
               vocab_size: int = MINI["vocab_size"]) -> D.Batch:
    rng = np.random.default_rng(seed)
    low = len(D.SPECIALS)
    examples = [
        D.Example(
            rng.integers(low, vocab_size, size=source_len).tolist(),
            [D.BOS_ID] + rng.integers(low, vocab_size, size=target_len).tolist() + [D.EOS_ID],
        )
        for _ in range(batch_size)
    ]
    return D.collate(examples)


def mini_params(lam: float, seed: int = 0, dropout_rate: float = 0.0) -> M.ModelParams:
    """Float64 parameters at a scale large enough to exercise every nonlinearity."""
    cfg = M.ModelConfig(lambda_sr=lam, dropout_rate=dropout_rate, **MINI)
    params = M.init_params(cfg, seed=seed, dtype=np.float64)
    rng = np.random.default_rng(seed + 1)
    for t in params.values():
        t.values = rng.normal(0.0, 0.5, size=t.shape)
    return params


def check_model_gradients(lam: float, seed: int = 0, dropout_rate: float = 0.0):
    """Max relative gradient error of the combined loss, plus per-parameter errors."""
    if dropout_rate > 0:
        raise ValueError("gradient checking needs dropout disabled")
    params = mini_params(lam, seed)
    batch = mini_batch(seed)

    def loss():
        return M.forward_loss(params, batch, lam).loss

    return gradient_check(loss, params.tensors, return_details=True)
