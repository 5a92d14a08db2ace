"""Self-gated LSTM encoder, attention decoder and the semantic-relevance loss.

All functions work on batches: hidden states are ``[B, H]`` tensors and token
ids are ``[B]`` or ``[B, N]`` integer arrays. Passing a flat list of ids to
:func:`encode` treats it as a batch of one.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from srb import tensor as T
from srb.errors import ConfigError, ShapeError
from srb.tensor import Tensor

INIT_SCALE = 0.08
FORGET_BIAS = 1.0


@dataclass
class ModelConfig:
    vocab_size: int
    embed_dim: int
    hidden_dim: int
    encoder_layers: int = 2
    decoder_layers: int = 2
    gate_hidden_dim: int = 32
    dropout_rate: float = 0.0
    lambda_sr: float = 0.0001

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        for name in ("vocab_size", "embed_dim", "hidden_dim", "encoder_layers",
                     "decoder_layers", "gate_hidden_dim"):
            value = getattr(self, name)
            if not isinstance(value, (int, np.integer)) or value <= 0:
                raise ConfigError(f"{name} must be a positive integer, got {value!r}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError(f"dropout_rate must lie in [0, 1), got {self.dropout_rate}")
        if self.lambda_sr < 0:
            raise ConfigError(f"lambda_sr must be non-negative, got {self.lambda_sr}")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class ModelParams:
    """Named trainable tensors plus the configuration they were built for."""

    config: ModelConfig
    tensors: dict[str, Tensor]

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def __iter__(self):
        return iter(self.tensors)

    def __len__(self) -> int:
        return len(self.tensors)

    def values(self):
        return self.tensors.values()

    def items(self):
        return self.tensors.items()

    def grads(self) -> dict[str, np.ndarray]:
        return {k: t.grad for k, t in self.tensors.items() if t.grad is not None}

    def zero_grad(self) -> None:
        for t in self.tensors.values():
            t.grad = None

    def astype(self, dtype) -> "ModelParams":
        return ModelParams(
            self.config,
            {k: T.param(t.values.astype(dtype), name=k) for k, t in self.tensors.items()},
        )

    def copy(self) -> "ModelParams":
        return ModelParams(self.config, {k: T.param(t.values.copy(), name=k) for k, t in self.tensors.items()})


class EncoderOutput(NamedTuple):
    states: list[Tensor]          # gated states, one [B, H] per source position
    gates: list[Tensor]           # gate values, one [B, 1] per position
    stacked: Tensor               # states as [B, N, H]
    mask: np.ndarray              # [B, N] bool, True on real tokens
    lengths: np.ndarray           # [B]
    source_vector: Tensor         # gated state at each sequence's last real token
    final: list[tuple[Tensor, Tensor]]  # per-layer (h, c) after the last real token


@dataclass
class DecoderState:
    layers: list[tuple[Tensor, Tensor]]
    combined: Tensor | None = None
    step: int = 0


class LossTerms(NamedTuple):
    loss: Tensor
    nll: float
    cosine: float | None
    tokens: int


# ---------------------------------------------------------------------------
# parameters


def lstm_names(prefix: str, layer: int) -> tuple[str, str, str]:
    return f"{prefix}.{layer}.w_x", f"{prefix}.{layer}.w_h", f"{prefix}.{layer}.b"


def param_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    H, E, V = config.hidden_dim, config.embed_dim, config.vocab_size
    shapes: dict[str, tuple[int, ...]] = {"embedding": (V, E)}
    for prefix, n_layers in (("encoder", config.encoder_layers), ("decoder", config.decoder_layers)):
        for layer in range(n_layers):
            wx, wh, b = lstm_names(prefix, layer)
            shapes[wx] = (E if layer == 0 else H, 4 * H)
            shapes[wh] = (H, 4 * H)
            shapes[b] = (4 * H,)
    shapes["gate.w1"] = (H, config.gate_hidden_dim)
    shapes["gate.b1"] = (config.gate_hidden_dim,)
    shapes["gate.w2"] = (config.gate_hidden_dim, 1)
    shapes["gate.b2"] = (1,)
    shapes["combine.w"] = (2 * H, H)
    shapes["output.w"] = (H, V)
    return shapes


def init_params(config: ModelConfig, seed: int = 0, dtype=np.float32) -> ModelParams:
    """Uniform(-0.08, 0.08) weights, zero biases, LSTM forget-gate bias 1."""
    rng = np.random.default_rng(seed)
    H = config.hidden_dim
    tensors: dict[str, Tensor] = {}
    for name, shape in param_shapes(config).items():
        if len(shape) == 1:
            values = np.zeros(shape)
            if name.startswith(("encoder.", "decoder.")):
                values[H:2 * H] = FORGET_BIAS
        else:
            values = rng.uniform(-INIT_SCALE, INIT_SCALE, size=shape)
        tensors[name] = T.param(values.astype(dtype), name=name)
    return ModelParams(config, tensors)


# ---------------------------------------------------------------------------
# building blocks


def lstm_step(x: Tensor, h_prev: Tensor, c_prev: Tensor, w_x: Tensor, w_h: Tensor, b: Tensor):
    """One LSTM cell update; gate blocks in ``w_x``/``w_h``/``b`` are ordered i, f, g, o."""
    H = h_prev.shape[-1]
    if w_h.shape != (H, 4 * H) or w_x.shape != (x.shape[-1], 4 * H) or b.shape != (4 * H,):
        raise ShapeError(
            f"lstm_step: input {x.shape}, state {h_prev.shape} do not fit weights "
            f"{w_x.shape}, {w_h.shape}, {b.shape}"
        )
    z = T.add_bias(T.matmul(x, w_x) + T.matmul(h_prev, w_h), b)
    hc = T.lstm_cell(z, c_prev)
    return T.slice_last(hc, 0, H), T.slice_last(hc, H, 2 * H)


def _layer(params: ModelParams, prefix: str, layer: int):
    return tuple(params[n] for n in lstm_names(prefix, layer))


def gate_value(h: Tensor, params: ModelParams) -> Tensor:
    """sigmoid(g(h)) with g a one-hidden-layer tanh network; returns [B, 1]."""
    hidden = T.tanh(T.add_bias(T.matmul(h, params["gate.w1"]), params["gate.b1"]))
    return T.sigmoid(T.add_bias(T.matmul(hidden, params["gate.w2"]), params["gate.b2"]))


def self_gate(h: Tensor, e_next: Tensor | None, params: ModelParams):
    """Gate a hidden state and the next input embedding by the same scalar.

    Returns ``(beta, gated_h, gated_e_next)``; ``gated_e_next`` is None when
    there is no next token.
    """
    beta = gate_value(h, params)
    gated_h = T.scale_rows(h, beta)
    gated_e = T.scale_rows(e_next, beta) if e_next is not None else None
    return beta, gated_h, gated_e


def _blend(new: Tensor, old: Tensor, keep_new: np.ndarray) -> Tensor:
    # rows with keep_new == 0 carry ``old`` forward unchanged
    m = T.tensor(keep_new.astype(new.dtype)[:, None])
    return T.scale_rows(new, m) + T.scale_rows(old, T.tensor(1 - m.values))


def _as_batch(ids, mask=None) -> tuple[np.ndarray, np.ndarray]:
    arr = np.asarray(ids, dtype=np.int64)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2 or arr.shape[1] == 0:
        raise ShapeError("source must be a non-empty sequence of token ids")
    if mask is None:
        m = np.ones(arr.shape, dtype=bool)
    else:
        m = np.asarray(mask, dtype=bool)
        if m.ndim == 1:
            m = m[None, :]
    if m.shape != arr.shape:
        raise ShapeError(f"mask shape {m.shape} does not match ids {arr.shape}")
    if not m[:, 0].all():
        raise ShapeError("every source sequence needs at least one token")
    return arr, m


def encode(params: ModelParams, source_ids, source_mask=None, rng=None) -> EncoderOutput:
    """Run the self-gated encoder over a (padded) batch of source ids.

    Layer-1 input at step t+1 is the embedding scaled by the gate value from
    step t; the gate reads the top layer's output.
    """
    cfg = params.config
    ids, mask = _as_batch(source_ids, source_mask)
    if ids.max() >= cfg.vocab_size or ids.min() < 0:
        raise IndexError("source id out of vocabulary range")
    B, N = ids.shape
    H = cfg.hidden_dim
    dtype = params["embedding"].dtype
    rate = cfg.dropout_rate if rng is not None else 0.0
    emb = [T.embedding(params["embedding"], ids[:, t]) for t in range(N)]
    zeros = T.tensor(np.zeros((B, H), dtype=dtype))
    layers = [(zeros, zeros) for _ in range(cfg.encoder_layers)]
    states, gates = [], []
    inp = emb[0]
    for t in range(N):
        keep = mask[:, t]
        for layer in range(cfg.encoder_layers):
            h_prev, c_prev = layers[layer]
            h, c = lstm_step(inp, h_prev, c_prev, *_layer(params, "encoder", layer))
            if not keep.all():
                h, c = _blend(h, h_prev, keep), _blend(c, c_prev, keep)
            layers[layer] = (h, c)
            inp = T.dropout(h, rate, rng)
        e_next = emb[t + 1] if t + 1 < N else None
        beta, gated, inp = self_gate(inp, e_next, params)
        states.append(gated)
        gates.append(beta)
    stacked = T.stack(states, axis=1)
    lengths = mask.sum(axis=1)
    source_vector = T.gather_time(stacked, lengths - 1)
    return EncoderOutput(states, gates, stacked, mask, lengths, source_vector, layers)


def attend(s: Tensor, enc: EncoderOutput) -> tuple[Tensor, Tensor]:
    """Dot-product attention of decoder state ``s`` ([B, H]) over encoder states."""
    B, N, H = enc.stacked.shape
    if s.shape != (B, H):
        raise ShapeError(f"attend: decoder state {s.shape} does not match encoder {(B, H)}")
    scores = T.reshape(T.bmm(enc.stacked, T.reshape(s, (B, H, 1))), (B, N))
    mask = None if enc.mask.all() else enc.mask
    alpha = T.softmax(scores, mask=mask)
    context = T.reshape(T.bmm(T.reshape(alpha, (B, 1, N)), enc.stacked), (B, H))
    return context, alpha


def initial_decoder_state(params: ModelParams, enc: EncoderOutput) -> DecoderState:
    cfg = params.config
    n_enc = len(enc.final)
    layers = []
    for layer in range(cfg.decoder_layers):
        if layer < n_enc:
            layers.append(enc.final[layer])
        else:
            z = T.tensor(np.zeros_like(enc.final[0][0].values))
            layers.append((z, z))
    return DecoderState(layers)


def decode_step(params: ModelParams, y_prev, state: DecoderState, enc: EncoderOutput,
                rng=None, log_probs: bool = False):
    """Advance the decoder one token.

    Returns ``(distribution, new_state, attention)``; the distribution is
    ``[B, V]`` probabilities, or log-probabilities when ``log_probs``.
    """
    cfg = params.config
    y = np.atleast_1d(np.asarray(y_prev, dtype=np.int64))
    if y.min() < 0 or y.max() >= cfg.vocab_size:
        raise IndexError(f"previous token id out of range 0..{cfg.vocab_size - 1}")
    rate = cfg.dropout_rate if rng is not None else 0.0
    inp = T.embedding(params["embedding"], y)
    new_layers = []
    for layer in range(cfg.decoder_layers):
        h_prev, c_prev = state.layers[layer]
        h, c = lstm_step(inp, h_prev, c_prev, *_layer(params, "decoder", layer))
        new_layers.append((h, c))
        inp = T.dropout(h, rate, rng)
    context, alpha = attend(inp, enc)
    combined = T.tanh(T.matmul(T.concat([inp, context], axis=-1), params["combine.w"]))
    logits = T.matmul(combined, params["output.w"])
    dist = T.log_softmax(logits) if log_probs else T.softmax(logits)
    return dist, DecoderState(new_layers, combined, state.step + 1), alpha


def semantic_vectors(enc: EncoderOutput, last_combined: Tensor | None) -> tuple[Tensor, Tensor]:
    """Source vector and summary vector (last combined state minus source vector).

    The summary vector is formed in float64, where the difference of two
    float32 vectors is exact, so ``source + summary == last_combined`` holds
    bit for bit.
    """
    if last_combined is None:
        raise ValueError("semantic vectors need at least one decoding step")
    source = enc.source_vector
    summary = T.sub(T.cast(last_combined, np.float64), T.cast(source, np.float64))
    return source, summary


# ---------------------------------------------------------------------------
# loss


def sequence_nll(step_dists: Sequence[Tensor], targets, mask=None, log_space: bool = False) -> Tensor:
    """Summed negative log-likelihood per sequence, averaged over the batch.

    ``step_dists[t]`` is ``[B, V]``; ``targets`` is ``[B, M]`` with M equal to
    the number of steps.
    """
    tgt = np.asarray(targets, dtype=np.int64)
    if tgt.ndim == 1:
        tgt = tgt[None, :]
    if tgt.shape[1] != len(step_dists):
        raise ShapeError(f"{len(step_dists)} distributions for {tgt.shape[1]} target tokens")
    B = tgt.shape[0]
    m = np.ones(tgt.shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool).reshape(tgt.shape)
    picked = []
    for t, dist in enumerate(step_dists):
        lp = T.pick(dist, tgt[:, t])
        if not log_space:
            lp = T.log(lp)
        if not m[:, t].all():
            lp = T.mul(lp, T.tensor(m[:, t].astype(lp.dtype)))
        picked.append(lp)
    return T.scale(T.tsum(T.stack(picked, axis=0)), -1.0 / B)


def srb_loss(step_dists: Sequence[Tensor], targets, source_vec: Tensor, summary_vec: Tensor,
             lam: float, mask=None, log_space: bool = False) -> Tensor:
    """NLL of the targets minus ``lam`` times the batch-mean cosine similarity."""
    nll = sequence_nll(step_dists, targets, mask, log_space)
    cos = T.tmean(T.cosine(source_vec, summary_vec))
    return nll - T.scale(cos, lam)


def forward_loss(params: ModelParams, batch, lam: float | None = None, rng=None,
                 semantic: bool = True) -> LossTerms:
    """Teacher-forced loss on a padded batch.

    With ``semantic=False`` the cosine term is never built, which gives the
    plain attention seq2seq objective.
    """
    cfg = params.config
    lam = cfg.lambda_sr if lam is None else lam
    enc = encode(params, batch.source, batch.source_mask, rng=rng)
    tgt = np.asarray(batch.target, dtype=np.int64)
    tmask = np.asarray(batch.target_mask, dtype=bool)
    inputs, outputs, out_mask = tgt[:, :-1], tgt[:, 1:], tmask[:, 1:]
    state = initial_decoder_state(params, enc)
    dists, combined = [], []
    for t in range(inputs.shape[1]):
        dist, state, _ = decode_step(params, inputs[:, t], state, enc, rng=rng, log_probs=True)
        dists.append(dist)
        combined.append(state.combined)
    nll = sequence_nll(dists, outputs, out_mask, log_space=True)
    n_tokens = int(out_mask.sum())
    if not semantic:
        return LossTerms(nll, float(nll.values), None, n_tokens)
    last = out_mask.sum(axis=1) - 1
    last_combined = T.gather_time(T.stack(combined, axis=1), last)
    source_vec, summary_vec = semantic_vectors(enc, last_combined)
    cos = T.tmean(T.cosine(source_vec, summary_vec))
    loss = nll - T.scale(cos, lam)
    return LossTerms(loss, float(nll.values), float(cos.values), n_tokens)

