"""Tokenization, vocabularies, corpus filters and padded batches."""

from __future__ import annotations

import math
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Iterator, Protocol, Sequence

import numpy as np

from srb.errors import DataError

PAD, UNK, BOS, EOS = "<pad>", "<unk>", "<s>", "</s>"
SPECIALS = (PAD, UNK, BOS, EOS)
PAD_ID, UNK_ID, BOS_ID, EOS_ID = range(4)
ENTITY_TYPES = ("PER", "LOC", "ORG", "MISC")

LCSTS_MIN_SCORE = 3
MAX_TRAIN_WORDS = 100
EWSEW_PARTIAL_THRESHOLD = 0.45
PWKP_DEV_SIZE = 205
PWKP_TEST_SIZE = 100

_ENTITY_RE = r"(?:PER|LOC|ORG|MISC)@\d+"
_SPECIAL_RE = "|".join(re.escape(s) for s in SPECIALS)
_WORD_RE = re.compile(rf"{_SPECIAL_RE}|{_ENTITY_RE}|\w+|[^\w\s]")
_CHAR_RE = re.compile(rf"{_SPECIAL_RE}|{_ENTITY_RE}|[A-Za-z0-9]+|\S")


def tokenize(text: str, mode: str = "word") -> list[str]:
    """Split text into tokens.

    ``word`` mode splits punctuation off words; ``char`` mode yields one token
    per non-space character but keeps ASCII alphanumeric runs (Latin names,
    numbers) whole.
    """
    if mode == "word":
        return _WORD_RE.findall(text)
    if mode == "char":
        return _CHAR_RE.findall(text)
    raise ValueError(f"unknown tokenization mode {mode!r}")


def detokenize(tokens: Sequence[str], mode: str = "word") -> str:
    return ("" if mode == "char" else " ").join(tokens)


def entity_symbols(slots: int) -> list[str]:
    return [f"{kind}@{n}" for kind in ENTITY_TYPES for n in range(1, slots + 1)]


class Vocab:
    """Bidirectional token/id map; ids 0-3 are PAD, UNK, BOS, EOS."""

    def __init__(self, tokens: Iterable[str] = ()):
        self.itos: list[str] = list(SPECIALS)
        self.stoi: dict[str, int] = {s: i for i, s in enumerate(SPECIALS)}
        for tok in tokens:
            self.add(tok)

    def add(self, token: str) -> int:
        if token not in self.stoi:
            self.stoi[token] = len(self.itos)
            self.itos.append(token)
        return self.stoi[token]

    def __len__(self) -> int:
        return len(self.itos)

    def __contains__(self, token: str) -> bool:
        return token in self.stoi

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocab) and self.itos == other.itos

    def lookup(self, token: str) -> int:
        return self.stoi.get(token, UNK_ID)

    def encode(self, tokens: Iterable[str]) -> list[int]:
        return [self.stoi.get(t, UNK_ID) for t in tokens]

    def decode(self, ids: Iterable[int]) -> list[str]:
        return [self.itos[i] for i in ids]

    def save(self, path) -> None:
        Path(path).write_text("".join(t + "\n" for t in self.itos), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Vocab":
        lines = Path(path).read_text(encoding="utf-8").split("\n")
        if lines and lines[-1] == "":
            lines.pop()
        if tuple(lines[:4]) != SPECIALS:
            raise DataError(f"{path}: vocabulary must start with {SPECIALS}")
        vocab = cls()
        for tok in lines[4:]:
            if tok in vocab.stoi:
                raise DataError(f"{path}: duplicate token {tok!r}")
            vocab.add(tok)
        return vocab


def build_vocab(corpus: Iterable[Sequence[str]], max_size: int, mode: str = "word",
                entity_slots: int = 10) -> Vocab:
    """Keep the ``max_size`` most useful entries: specials, then tokens by
    frequency (ties broken by first occurrence).

    Word mode always reserves the PER/LOC/ORG/MISC@N placeholders.
    """
    reserved = list(SPECIALS) + (entity_symbols(entity_slots) if mode == "word" else [])
    if max_size < len(reserved):
        raise DataError(f"max_size {max_size} is below the {len(reserved)} reserved entries")
    counts: Counter[str] = Counter()
    first_seen: dict[str, int] = {}
    n_seen = 0
    for sent in corpus:
        for tok in sent:
            counts[tok] += 1
            if tok not in first_seen:
                first_seen[tok] = n_seen
            n_seen += 1
    if n_seen == 0:
        raise DataError("cannot build a vocabulary from an empty corpus")
    vocab = Vocab(reserved[len(SPECIALS):])
    ranked = sorted((t for t in counts if t not in vocab), key=lambda t: (-counts[t], first_seen[t]))
    for tok in ranked[: max_size - len(vocab)]:
        vocab.add(tok)
    return vocab


# ---------------------------------------------------------------------------
# named entities


class Tagger(Protocol):
    def __call__(self, tokens: Sequence[str]) -> list[str]: ...


class CapitalizationTagger:
    """Labels runs of capitalized words as MISC, ignoring the sentence-initial word.

    A stand-in for a real NER system; any callable returning one label per
    token (``O``, ``PER``, ``B-LOC``, ...) can replace it.
    """

    def __call__(self, tokens: Sequence[str]) -> list[str]:
        labels = []
        for i, tok in enumerate(tokens):
            is_cap = i > 0 and tok[:1].isupper() and tok.isalpha()
            labels.append("MISC" if is_cap else "O")
        return labels


class LabelFileTagger:
    """Replays labels produced by an external tagger, one sentence per line."""

    def __init__(self, path):
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        self._labels = [line.split() for line in lines]
        self._next = 0

    def __call__(self, tokens: Sequence[str]) -> list[str]:
        if self._next >= len(self._labels):
            raise DataError("label file has fewer lines than sentences")
        labels = self._labels[self._next]
        self._next += 1
        if len(labels) != len(tokens):
            raise DataError(f"label line {self._next} has {len(labels)} labels for {len(tokens)} tokens")
        return labels


def _split_label(label: str) -> tuple[str, str]:
    if label in ("O", ""):
        return "O", ""
    if len(label) > 2 and label[1] == "-" and label[0] in "BI":
        return label[0], label[2:]
    return "", label


def anonymize_entities(tokens: Sequence[str], tagger: Callable[[Sequence[str]], list[str]],
                       known: dict[str, str] | None = None):
    """Replace each entity span with ``TYPE@N``.

    N counts distinct surfaces per type within the sentence, so a repeated
    entity reuses its symbol. Returns ``(tokens, recovery_map)`` where the map
    sends each symbol to its space-joined surface. Passing the map of a paired
    sentence as ``known`` keeps symbols consistent across the pair.
    """
    labels = tagger(tokens)
    if len(labels) != len(tokens):
        raise DataError("tagger returned a label count different from the token count")
    spans: list[tuple[int, int, str]] = []
    i = 0
    while i < len(tokens):
        prefix, kind = _split_label(labels[i])
        if prefix == "O":
            i += 1
            continue
        if kind not in ENTITY_TYPES:
            raise DataError(f"unknown entity type {kind!r}")
        j = i + 1
        while j < len(tokens):
            p2, k2 = _split_label(labels[j])
            if p2 in ("O", "B") or k2 != kind:
                break
            j += 1
        spans.append((i, j, kind))
        i = j
    out: list[str] = []
    recovery: dict[str, str] = dict(known or {})
    by_surface: dict[tuple[str, str], str] = {}
    counters: Counter[str] = Counter()
    for sym, surface in recovery.items():
        kind, num = sym.split("@")
        by_surface[(kind, surface)] = sym
        counters[kind] = max(counters[kind], int(num))
    pos = 0
    for start, stop, kind in spans:
        out.extend(tokens[pos:start])
        surface = " ".join(tokens[start:stop])
        sym = by_surface.get((kind, surface))
        if sym is None:
            counters[kind] += 1
            sym = f"{kind}@{counters[kind]}"
            by_surface[(kind, surface)] = sym
            recovery[sym] = surface
        out.append(sym)
        pos = stop
    out.extend(tokens[pos:])
    return out, recovery


def restore_entities(tokens: Sequence[str], recovery: dict[str, str]) -> list[str]:
    """Expand entity symbols back into their original tokens."""
    out: list[str] = []
    for tok in tokens:
        if tok in recovery:
            out.extend(recovery[tok].split(" "))
        else:
            out.append(tok)
    return out


# ---------------------------------------------------------------------------
# records and corpus rules


@dataclass
class Record:
    source: str
    target: str
    score: float | None = None
    label: str | None = None


def parse_record(line: str, lineno: int = 0) -> Record:
    fields = line.rstrip("\n").rstrip("\r").split("\t")
    if len(fields) < 2:
        raise DataError(f"line {lineno}: expected at least source and target fields")
    rec = Record(fields[0], fields[1])
    for extra in fields[2:]:
        if extra == "":
            continue
        try:
            rec.score = float(extra)
        except ValueError:
            rec.label = extra
    return rec


def format_record(rec: Record) -> str:
    fields = [rec.source, rec.target]
    if rec.label is not None:
        fields.append(rec.label)
    if rec.score is not None:
        fields.append(repr(rec.score) if not float(rec.score).is_integer() else str(int(rec.score)))
    return "\t".join(fields)


def read_records(path) -> list[Record]:
    p = Path(path)
    if not p.is_file():
        raise DataError(f"record file not found: {p}")
    with p.open(encoding="utf-8") as fh:
        return [parse_record(line, i + 1) for i, line in enumerate(fh) if line.strip()]


def write_records(path, records: Iterable[Record]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(format_record(rec) + "\n")


def filter_lcsts(records: Iterable[Record]) -> list[Record]:
    """Keep unscored records and scored records with a relevance score of at least 3."""
    kept = []
    for rec in records:
        if rec.score is None:
            kept.append(rec)
            continue
        if not 1 <= rec.score <= 5:
            raise DataError(f"LCSTS relevance score must be in 1..5, got {rec.score}")
        if rec.score >= LCSTS_MIN_SCORE:
            kept.append(rec)
    return kept


def filter_length(pairs, max_words: int = MAX_TRAIN_WORDS):
    """Drop pairs where either side is longer than ``max_words`` tokens."""
    return [p for p in pairs if len(p[0]) <= max_words and len(p[1]) <= max_words]


_GOOD = {"good"}
_PARTIAL = {"good-partial", "good_partial", "partial"}
_DROP = {"bad", "unclassified"}


def select_ewsew(matches: Iterable[Record]) -> list[Record]:
    """Keep good matches, and partial matches whose scaled score exceeds 0.45."""
    kept = []
    for rec in matches:
        label = (rec.label or "").strip().lower()
        if not label:
            raise DataError(f"EW-SEW record without a match label: {rec.source[:40]!r}")
        if label in _GOOD:
            kept.append(rec)
        elif label in _PARTIAL:
            if rec.score is not None and rec.score > EWSEW_PARTIAL_THRESHOLD:
                kept.append(rec)
        elif label not in _DROP:
            raise DataError(f"unknown EW-SEW match label {rec.label!r}")
    return kept


def _normalize_ws(text: str) -> str:
    return " ".join(text.split())


def dedup_pairs(records: Iterable[Record]) -> list[Record]:
    seen = set()
    out = []
    for rec in records:
        key = (_normalize_ws(rec.source), _normalize_ws(rec.target))
        if key not in seen:
            seen.add(key)
            out.append(rec)
    return out


def split_pwkp(records: Sequence[Record], seed: int = 0):
    """Deduplicate, shuffle with ``seed`` and split into (train, dev[205], test[100])."""
    unique = dedup_pairs(records)
    need = PWKP_DEV_SIZE + PWKP_TEST_SIZE + 1
    if len(unique) < need:
        raise DataError(f"PWKP split needs at least {need} distinct pairs, got {len(unique)}")
    order = np.random.default_rng(seed).permutation(len(unique))
    shuffled = [unique[i] for i in order]
    dev = shuffled[:PWKP_DEV_SIZE]
    test = shuffled[PWKP_DEV_SIZE:PWKP_DEV_SIZE + PWKP_TEST_SIZE]
    train = shuffled[PWKP_DEV_SIZE + PWKP_TEST_SIZE:]
    return train, dev, test


def read_pwkp(path, join_simple: bool = True) -> list[Record]:
    """Read PWKP's native layout: blank-line separated blocks of one complex
    sentence followed by one or more simple sentences.

    With ``join_simple`` the simple sentences of a block become a single target;
    otherwise each yields its own pair.
    """
    text = Path(path).read_text(encoding="utf-8")
    records = []
    for block in re.split(r"\n\s*\n", text):
        lines = [ln.strip() for ln in block.splitlines() if ln.strip()]
        if len(lines) < 2:
            continue
        complex_, simple = lines[0], lines[1:]
        if join_simple:
            records.append(Record(complex_, " ".join(simple)))
        else:
            records.extend(Record(complex_, s) for s in simple)
    return records


# ---------------------------------------------------------------------------
# toy corpora


TOY_TASKS = ("copy", "truncate", "synonym-map")


def toy_symbols(n_symbols: int) -> list[str]:
    return [f"w{i}" for i in range(n_symbols)]


def make_toy_corpus(task: str, n: int, seed: int = 0, n_symbols: int = 26,
                    min_len: int = 3, max_len: int = 8) -> list[tuple[list[str], list[str]]]:
    """Random token sequences with targets derived by ``task``.

    copy: target equals source. truncate: first ceil(len/2) tokens.
    synonym-map: every token passed through a fixed permutation of the symbols.
    """
    if task not in TOY_TASKS:
        raise ValueError(f"unknown toy task {task!r}; choose from {TOY_TASKS}")
    if n < 1:
        raise ValueError("toy corpus needs n >= 1")
    rng = np.random.default_rng(seed)
    symbols = toy_symbols(n_symbols)
    mapping = dict(zip(symbols, [symbols[i] for i in np.random.default_rng(12345).permutation(n_symbols)]))
    pairs = []
    for _ in range(n):
        length = int(rng.integers(min_len, max_len + 1))
        src = [symbols[i] for i in rng.integers(0, n_symbols, size=length)]
        if task == "copy":
            tgt = list(src)
        elif task == "truncate":
            tgt = src[: math.ceil(len(src) / 2)]
        else:
            tgt = [mapping[t] for t in src]
        pairs.append((src, tgt))
    return pairs


# ---------------------------------------------------------------------------
# examples and batches


@dataclass
class Example:
    source_ids: list[int]
    target_ids: list[int]
    source_tokens: list[str] = field(default_factory=list)
    target_tokens: list[str] = field(default_factory=list)
    metadata: dict = field(default_factory=dict)


def make_example(source_tokens: Sequence[str], target_tokens: Sequence[str], vocab: Vocab,
                 **metadata) -> Example:
    if not source_tokens:
        raise DataError("empty source sequence")
    return Example(
        vocab.encode(source_tokens),
        [BOS_ID] + vocab.encode(target_tokens) + [EOS_ID],
        list(source_tokens),
        list(target_tokens),
        dict(metadata),
    )


@dataclass
class Batch:
    source: np.ndarray        # [B, N] ids, PAD beyond each length
    target: np.ndarray        # [B, M] ids including BOS/EOS
    source_mask: np.ndarray   # [B, N] bool
    target_mask: np.ndarray   # [B, M] bool
    source_lengths: np.ndarray
    target_lengths: np.ndarray
    examples: list[Example] = field(default_factory=list, repr=False)

    def __len__(self) -> int:
        return self.source.shape[0]


def _pad(seqs: Sequence[Sequence[int]]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    lengths = np.array([len(s) for s in seqs], dtype=np.int64)
    out = np.full((len(seqs), int(lengths.max())), PAD_ID, dtype=np.int64)
    for i, s in enumerate(seqs):
        out[i, : len(s)] = s
    mask = np.arange(out.shape[1])[None, :] < lengths[:, None]
    return out, mask, lengths


def collate(examples: Sequence[Example]) -> Batch:
    src, smask, slen = _pad([e.source_ids for e in examples])
    tgt, tmask, tlen = _pad([e.target_ids for e in examples])
    return Batch(src, tgt, smask, tmask, slen, tlen, list(examples))


def batch_pad(examples: Sequence[Example], batch_size: int, order: Sequence[int] | None = None) -> list[Batch]:
    """Group examples (in ``order`` if given) into padded batches; the last may be short."""
    if batch_size < 1:
        raise ValueError("batch_size must be positive")
    idx = list(range(len(examples))) if order is None else list(order)
    return [collate([examples[i] for i in idx[k:k + batch_size]]) for k in range(0, len(idx), batch_size)]


def iter_lines(path) -> Iterator[str]:
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            yield line.rstrip("\n").rstrip("\r")
