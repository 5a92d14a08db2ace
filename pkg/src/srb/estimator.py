"""scikit-learn style wrapper around vocabulary building, training and decoding."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from srb import data as D
from srb import training
from srb.config import RunConfig
from srb.decoding import DecodeResult, default_max_len, greedy_decode, replace_unk
from srb.metrics import EvalReport, evaluate_corpus
from srb.validation import check_positive, check_text_pairs, check_texts


class SRBSeq2Seq(BaseEstimator):
    """Text-to-text model with a self-gated encoder and a semantic-relevance loss.

    ``fit`` takes parallel lists of source and target strings; ``predict``
    returns one generated string per source. Hyperparameters follow
    :class:`srb.config.RunConfig` and round-trip through ``get_params``.

    >>> est = SRBSeq2Seq(max_epochs=1).fit(["a b c"], ["a b c"])
    >>> len(est.predict(["a b"]))
    1
    """

    def __init__(self, profile="toy", tokenize_mode="word", vocab_size=30, embed_dim=32,
                 hidden_dim=64, encoder_layers=2, decoder_layers=2, gate_hidden_dim=32,
                 dropout_rate=0.0, lambda_sr=0.0001, learning_rate=0.001, clip_norm=5.0,
                 batch_size=16, max_epochs=20, stop_nll=0.0, max_train_len=100,
                 max_decode_len=0, anonymize=False, seed=0):
        self.profile = profile
        self.tokenize_mode = tokenize_mode
        self.vocab_size = vocab_size
        self.embed_dim = embed_dim
        self.hidden_dim = hidden_dim
        self.encoder_layers = encoder_layers
        self.decoder_layers = decoder_layers
        self.gate_hidden_dim = gate_hidden_dim
        self.dropout_rate = dropout_rate
        self.lambda_sr = lambda_sr
        self.learning_rate = learning_rate
        self.clip_norm = clip_norm
        self.batch_size = batch_size
        self.max_epochs = max_epochs
        self.stop_nll = stop_nll
        self.max_train_len = max_train_len
        self.max_decode_len = max_decode_len
        self.anonymize = anonymize
        self.seed = seed

    def _run_config(self) -> RunConfig:
        return RunConfig(**self.get_params())

    def _tagger(self):
        return D.CapitalizationTagger() if self.anonymize else None

    def fit(self, X, y, X_dev=None, y_dev=None):
        sources, targets = check_text_pairs(X, y)
        check_positive("max_epochs", self.max_epochs)
        cfg = self._run_config()
        tagger = self._tagger()
        pairs = [training.prepare_pair(s, t, cfg, tagger) for s, t in zip(sources, targets)]
        pairs = D.filter_length([p for p in pairs if p.source], cfg.max_train_len)
        if not pairs:
            raise ValueError("no usable training pairs after tokenization and length filtering")
        slots = cfg.entity_slots if cfg.anonymize else 0
        self.vocab_ = D.build_vocab([p.source for p in pairs] + [p.target for p in pairs],
                                    cfg.vocab_size, cfg.tokenize_mode, entity_slots=slots)
        dev = []
        if X_dev is not None:
            ds, dt = check_text_pairs(X_dev, y_dev)
            dev_pairs = [training.prepare_pair(s, t, cfg, tagger) for s, t in zip(ds, dt)]
            dev = training.to_examples([p for p in dev_pairs if p.source], self.vocab_)
        result = training.train(cfg, training.to_examples(pairs, self.vocab_), dev, vocab=self.vocab_)
        self.params_ = result.params
        self.history_ = result.epochs
        self.n_train_pairs_ = len(pairs)
        return self

    def decode(self, X) -> list[DecodeResult | None]:
        check_is_fitted(self, "params_")
        cfg = self._run_config()
        tagger = self._tagger()
        out = []
        for text in check_texts(X):
            prep = training.prepare_pair(text, "", cfg, tagger)
            if not prep.source:
                out.append(None)
                continue
            ids = self.vocab_.encode(prep.source)
            limit = cfg.max_decode_len or default_max_len(cfg.profile, len(ids))
            res = greedy_decode(ids, self.params_, limit, self.vocab_)
            res.tokens = [piece for w in replace_unk(res, prep.source, prep.recovery) for piece in w.split(" ")]
            out.append(res)
        return out

    def predict(self, X) -> np.ndarray:
        results = self.decode(X)
        texts = [D.detokenize(r.tokens, self.tokenize_mode) if r else "" for r in results]
        return np.array(texts, dtype=object)

    def evaluate(self, X, y) -> EvalReport:
        sources, targets = check_text_pairs(X, y)
        cands = [D.tokenize(t, self.tokenize_mode) for t in self.predict(sources)]
        refs = [[D.tokenize(t, self.tokenize_mode)] for t in targets]
        return evaluate_corpus(cands, refs)

    def score(self, X, y) -> float:
        """Corpus BLEU of the predictions against ``y``."""
        return self.evaluate(X, y).bleu
