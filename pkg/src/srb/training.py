"""Corpus preparation and the Adam training loop."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, NamedTuple, Sequence

import numpy as np

from srb import data as D
from srb import model as M
from srb import tensor as T
from srb.checkpoint import save_checkpoint
from srb.config import RunConfig
from srb.decoding import default_max_len, greedy_decode
from srb.errors import DataError, NumericError

log = logging.getLogger(__name__)


class Prepared(NamedTuple):
    """A tokenized pair plus what is needed to undo anonymization."""

    source: list[str]
    target: list[str]
    recovery: dict[str, str]


def make_tagger(cfg: RunConfig):
    if cfg.tagger_labels:
        return D.LabelFileTagger(cfg.tagger_labels)
    return D.CapitalizationTagger()


def prepare_pair(source: str, target: str, cfg: RunConfig, tagger=None) -> Prepared:
    src = D.tokenize(source, cfg.tokenize_mode)
    tgt = D.tokenize(target, cfg.tokenize_mode)
    recovery: dict[str, str] = {}
    if cfg.anonymize and tagger is not None:
        src, recovery = D.anonymize_entities(src, tagger)
        tgt, recovery = D.anonymize_entities(tgt, tagger, known=recovery)
    return Prepared(src, tgt, recovery)


def load_split(cfg: RunConfig, path, split: str = "train", tagger=None) -> list[Prepared]:
    """Read a record file and apply the corpus rules that belong to ``split``."""
    if not path:
        raise DataError(f"no {split} corpus path configured")
    records = D.read_records(path)
    if cfg.corpus == "lcsts":
        records = D.filter_lcsts(records)
    elif cfg.corpus == "ewsew" and split == "train":
        records = D.select_ewsew(records)
    elif cfg.corpus == "pwkp" and split == "train":
        records = D.dedup_pairs(records)
    pairs = [prepare_pair(r.source, r.target, cfg, tagger) for r in records]
    pairs = [p for p in pairs if p.source]
    if split == "train":
        pairs = D.filter_length(pairs, cfg.max_train_len)
    if not pairs:
        raise DataError(f"{path}: no usable {split} pairs")
    return pairs


def to_examples(pairs: Sequence[Prepared], vocab: D.Vocab) -> list[D.Example]:
    return [D.make_example(p.source, p.target, vocab) for p in pairs]


@dataclass
class EpochStats:
    epoch: int
    nll: float
    cosine: float
    loss: float
    token_nll: float
    dev_loss: float | None = None


@dataclass
class TrainResult:
    params: M.ModelParams
    epochs: list[EpochStats]
    batch_log: list[tuple[int, int, float, float, float]]
    best_epoch: int
    stopped_early: bool = False


def _format_row(row) -> str:
    epoch, batch, nll, cos, loss = row
    return f"{epoch}\t{batch}\t{nll!r}\t{cos!r}\t{loss!r}\n"


def evaluate_loss(params: M.ModelParams, examples: Sequence[D.Example], batch_size: int,
                  lam: float | None = None) -> EpochStats:
    """Loss terms over a dataset with dropout off and no parameter updates."""
    tot_nll = tot_cos = tot_loss = 0.0
    tokens = 0
    for batch in D.batch_pad(examples, batch_size):
        terms = M.forward_loss(params, batch, lam)
        b = len(batch)
        tot_nll += terms.nll * b
        tot_cos += terms.cosine * b
        tot_loss += float(terms.loss.values) * b
        tokens += terms.tokens
    n = len(examples)
    return EpochStats(0, tot_nll / n, tot_cos / n, tot_loss / n, tot_nll / max(tokens, 1))


def train(cfg: RunConfig, examples: Sequence[D.Example], dev: Sequence[D.Example] = (),
          vocab: D.Vocab | None = None, out_dir=None, params: M.ModelParams | None = None,
          on_epoch: Callable[[EpochStats], None] | None = None) -> TrainResult:
    """Minibatch Adam on the combined loss, with clipping and early stopping on dev loss.

    When ``out_dir`` is given it receives ``loss.tsv`` (one line per batch),
    ``last.srb`` and ``best.srb`` checkpoints, ``config.txt`` and ``vocab.txt``.
    """
    if not examples:
        raise DataError("no training examples")
    vocab_size = len(vocab) if vocab is not None else cfg.vocab_size
    if params is None:
        params = M.init_params(cfg.model_config(vocab_size), seed=cfg.seed)
    elif params.config.vocab_size != vocab_size:
        raise DataError(f"checkpoint vocabulary has {params.config.vocab_size} entries, data has {vocab_size}")
    lam = params.config.lambda_sr
    adam = T.AdamState(cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.epsilon)
    shuffle_rng = np.random.default_rng(cfg.seed)
    dropout_rng = np.random.default_rng(cfg.seed + 1) if params.config.dropout_rate > 0 else None

    out = Path(out_dir) if out_dir else None
    log_fh = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.txt").write_text(cfg.to_text(), encoding="utf-8")
        if vocab is not None:
            vocab.save(out / "vocab.txt")
        log_fh = open(out / "loss.tsv", "w", encoding="utf-8")

    history: list[EpochStats] = []
    batch_log = []
    best, best_epoch, stale = math.inf, 0, 0
    stopped_early = False
    try:
        for epoch in range(1, cfg.max_epochs + 1):
            order = shuffle_rng.permutation(len(examples))
            tot_nll = tot_cos = tot_loss = 0.0
            tokens = 0
            for bi, batch in enumerate(D.batch_pad(examples, cfg.batch_size, order)):
                params.zero_grad()
                try:
                    with T.Tape() as tape:
                        terms = M.forward_loss(params, batch, lam, rng=dropout_rng)
                    loss = float(terms.loss.values)
                    if not math.isfinite(loss):
                        raise NumericError("loss is not finite")
                    tape.backward(terms.loss, params.values())
                except FloatingPointError as exc:
                    raise NumericError(f"numeric failure at epoch {epoch}, batch {bi}: {exc}") from exc
                grads = T.clip_gradients(params.grads(), cfg.clip_norm)
                T.adam_step(params.tensors, grads, adam)
                row = (epoch, bi, terms.nll, terms.cosine, loss)
                batch_log.append(row)
                if log_fh:
                    log_fh.write(_format_row(row))
                b = len(batch)
                tot_nll += terms.nll * b
                tot_cos += terms.cosine * b
                tot_loss += loss * b
                tokens += terms.tokens
            n = len(examples)
            stats = EpochStats(epoch, tot_nll / n, tot_cos / n, tot_loss / n, tot_nll / max(tokens, 1))
            if dev and epoch % cfg.eval_every == 0:
                stats.dev_loss = evaluate_loss(params, dev, cfg.batch_size, lam).loss
            history.append(stats)
            if on_epoch:
                on_epoch(stats)
            log.info("epoch %d nll %.4f cos %.4f loss %.4f dev %s", epoch, stats.nll,
                     stats.cosine, stats.loss, stats.dev_loss)
            # best-model selection uses dev loss when there is a dev set, else train loss
            metric = stats.dev_loss if dev else stats.loss
            if out is not None:
                save_checkpoint(out / "last.srb", params, {"epoch": epoch})
            if metric is not None and metric < best:
                best, best_epoch, stale = metric, epoch, 0
                if out is not None:
                    save_checkpoint(out / "best.srb", params, {"epoch": epoch})
            elif stats.dev_loss is not None:
                stale += 1
                if cfg.patience > 0 and stale >= cfg.patience:
                    stopped_early = True
                    break
            if cfg.stop_nll > 0 and stats.token_nll < cfg.stop_nll:
                break
    finally:
        if log_fh:
            log_fh.close()
    return TrainResult(params, history, batch_log, best_epoch, stopped_early)


def token_accuracy(params: M.ModelParams, examples: Sequence[D.Example], profile: str = "toy",
                   max_len: int = 0) -> float:
    """Greedy-decode accuracy over target positions, EOS included."""
    correct = total = 0
    for ex in examples:
        gold = ex.target_ids[1:]
        limit = max_len or default_max_len(profile, len(ex.source_ids))
        res = greedy_decode(ex.source_ids, params, limit)
        pred = res.ids + ([D.EOS_ID] if res.finished else [])
        correct += sum(1 for a, b in zip(pred, gold) if a == b)
        total += len(gold)
    return correct / max(total, 1)
