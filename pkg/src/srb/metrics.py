"""ROUGE-1/2/L F-scores and corpus BLEU.

Scores are always derived from integer counts, so an :class:`EvalReport` can
be recomputed bit-for-bit from the counts it stores.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

from srb.data import tokenize
from srb.errors import DataError

BLEU_MAX_N = 4


def ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def f_score(match: int, cand_total: int, ref_total: int) -> float:
    """Balanced F from an overlap count; 0 when either side is empty."""
    if cand_total == 0 or ref_total == 0 or match == 0:
        return 0.0
    p = match / cand_total
    r = match / ref_total
    return 2 * p * r / (p + r)


def rouge_n_counts(candidate: Sequence[str], reference: Sequence[str], n: int) -> tuple[int, int, int]:
    if n < 1:
        raise ValueError("n must be at least 1")
    cand, ref = ngrams(candidate, n), ngrams(reference, n)
    match = sum(min(c, ref[g]) for g, c in cand.items())
    return match, sum(cand.values()), sum(ref.values())


def rouge_n(candidate: Sequence[str], reference: Sequence[str], n: int) -> float:
    return f_score(*rouge_n_counts(candidate, reference, n))


def lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b):
            cur.append(prev[j] + 1 if x == y else max(prev[j + 1], cur[j]))
        prev = cur
    return prev[-1]


def rouge_l_counts(candidate: Sequence[str], reference: Sequence[str]) -> tuple[int, int, int]:
    return lcs_length(candidate, reference), len(candidate), len(reference)


def rouge_l(candidate: Sequence[str], reference: Sequence[str]) -> float:
    return f_score(*rouge_l_counts(candidate, reference))


@dataclass
class BleuStats:
    matches: list[int]
    totals: list[int]
    cand_len: int
    ref_len: int


def bleu_stats(candidate: Sequence[str], references: Sequence[Sequence[str]], max_n: int = BLEU_MAX_N) -> BleuStats:
    """Clipped n-gram matches against the max count over references, plus the
    closest reference length (ties go to the shorter one)."""
    if not references:
        raise ValueError("at least one reference is required")
    matches, totals = [], []
    for n in range(1, max_n + 1):
        cand = ngrams(candidate, n)
        max_ref: Counter = Counter()
        for ref in references:
            for g, c in ngrams(ref, n).items():
                if c > max_ref[g]:
                    max_ref[g] = c
        matches.append(sum(min(c, max_ref[g]) for g, c in cand.items()))
        totals.append(max(len(candidate) - n + 1, 0))
    c = len(candidate)
    ref_len = min((abs(len(r) - c), len(r)) for r in references)[1]
    return BleuStats(matches, totals, c, ref_len)


def bleu_from_stats(stats: Sequence[BleuStats], max_n: int = BLEU_MAX_N) -> float:
    """Corpus BLEU with brevity penalty.

    A zero n-gram precision for n >= 2 is smoothed to 1 / (total + 1); a zero
    unigram precision makes the score 0.
    """
    matches = [sum(s.matches[n] for s in stats) for n in range(max_n)]
    totals = [sum(s.totals[n] for s in stats) for n in range(max_n)]
    c = sum(s.cand_len for s in stats)
    r = sum(s.ref_len for s in stats)
    if c == 0 or matches[0] == 0:
        return 0.0
    precisions = [m / t if m else 1 / (t + 1) for m, t in zip(matches, totals)]
    bp = 1.0 if c > r else math.exp(1 - r / c)
    return bp * math.exp(sum(math.log(p) for p in precisions) / max_n)


def bleu(candidates: Sequence[Sequence[str]], reference_sets: Sequence[Sequence[Sequence[str]]],
         max_n: int = BLEU_MAX_N) -> float:
    if len(candidates) != len(reference_sets):
        raise ValueError(f"{len(candidates)} candidates but {len(reference_sets)} reference sets")
    return bleu_from_stats([bleu_stats(c, refs, max_n) for c, refs in zip(candidates, reference_sets)], max_n)


# ---------------------------------------------------------------------------
# corpus evaluation


@dataclass
class ExampleCounts:
    rouge1: tuple[int, int, int]
    rouge2: tuple[int, int, int]
    rougeL: tuple[int, int, int]
    bleu: BleuStats


@dataclass
class EvalReport:
    rouge1_f: float
    rouge2_f: float
    rougeL_f: float
    bleu: float
    examples: list[ExampleCounts] = field(default_factory=list)

    @classmethod
    def from_counts(cls, examples: list[ExampleCounts]) -> "EvalReport":
        n = len(examples)

        def mean_f(key):
            if n == 0:
                return 0.0
            return sum(f_score(*getattr(e, key)) for e in examples) / n

        return cls(
            mean_f("rouge1"),
            mean_f("rouge2"),
            mean_f("rougeL"),
            bleu_from_stats([e.bleu for e in examples]) if examples else 0.0,
            examples,
        )

    def recompute(self) -> "EvalReport":
        return EvalReport.from_counts(self.examples)

    def summary(self) -> dict[str, float]:
        return {"rouge1_f": self.rouge1_f, "rouge2_f": self.rouge2_f,
                "rougeL_f": self.rougeL_f, "bleu": self.bleu, "n": len(self.examples)}

    def write(self, path) -> None:
        """One JSON object per line: the summary first, then each example's counts."""
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(json.dumps(self.summary(), sort_keys=True) + "\n")
            for i, e in enumerate(self.examples):
                row = {"index": i, **asdict(e)}
                fh.write(json.dumps(row, sort_keys=True) + "\n")

    @classmethod
    def read(cls, path) -> "EvalReport":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        head = json.loads(lines[0])
        examples = []
        for line in lines[1:]:
            row = json.loads(line)
            examples.append(ExampleCounts(
                tuple(row["rouge1"]), tuple(row["rouge2"]), tuple(row["rougeL"]),
                BleuStats(**row["bleu"]),
            ))
        return cls(head["rouge1_f"], head["rouge2_f"], head["rougeL_f"], head["bleu"], examples)

    def table(self) -> str:
        rows = [("ROUGE-1 F", self.rouge1_f), ("ROUGE-2 F", self.rouge2_f),
                ("ROUGE-L F", self.rougeL_f), ("BLEU", self.bleu)]
        lines = [f"{'metric':<10} {'score':>7}", "-" * 18]
        lines += [f"{name:<10} {100 * value:7.2f}" for name, value in rows]
        lines.append(f"{'examples':<10} {len(self.examples):>7d}")
        return "\n".join(lines)


def score_example(candidate: Sequence[str], references: Sequence[Sequence[str]]) -> ExampleCounts:
    """Counts for one example; ROUGE uses whichever reference gives the best F."""
    def best(fn):
        return max((fn(r) for r in references), key=lambda cnt: f_score(*cnt))

    return ExampleCounts(
        best(lambda r: rouge_n_counts(candidate, r, 1)),
        best(lambda r: rouge_n_counts(candidate, r, 2)),
        best(lambda r: rouge_l_counts(candidate, r)),
        bleu_stats(candidate, references),
    )


def evaluate_corpus(candidates: Sequence[Sequence[str]],
                    references: Sequence[Sequence[Sequence[str]]]) -> EvalReport:
    """Macro-averaged ROUGE F-scores and corpus BLEU over tokenized sentences.

    ``references[i]`` holds every reference for candidate ``i``.
    """
    if len(candidates) != len(references):
        raise DataError(f"{len(candidates)} candidates but {len(references)} reference sets")
    return EvalReport.from_counts([score_example(c, refs) for c, refs in zip(candidates, references)])


def evaluate_files(decoded_path, reference_paths: Sequence, mode: str = "word") -> EvalReport:
    """Score a decoded file against one or more line-aligned reference files."""
    def lines(path):
        return Path(path).read_text(encoding="utf-8").splitlines()

    cands = [tokenize(line, mode) for line in lines(decoded_path)]
    ref_cols = [[tokenize(line, mode) for line in lines(p)] for p in reference_paths]
    for p, col in zip(reference_paths, ref_cols):
        if len(col) != len(cands):
            raise DataError(f"{p} has {len(col)} lines but {decoded_path} has {len(cands)}")
    refs = [list(group) for group in zip(*ref_cols)] if ref_cols else []
    return evaluate_corpus(cands, refs)
