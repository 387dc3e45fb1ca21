"""Character and word error rates via edit-distance dynamic programming.

CER = 100 * (S + I + D) / N where S, I, D count the character
substitutions, insertions and deletions that transform the reference into
the hypothesis, and N is the reference length.  WER is the same
computation over whitespace-separated tokens.  Aggregates are
micro-averaged: summed edit counts over summed reference lengths.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

from .errors import EmptyReference


@dataclass(frozen=True)
class EditCounts:
    """Substitution/insertion/deletion counts against a reference of length N."""

    S: int
    I: int
    D: int
    N: int

    @property
    def total(self) -> int:
        return self.S + self.I + self.D


def edit_counts(reference: Sequence, hypothesis: Sequence) -> EditCounts:
    """Levenshtein alignment counts, transforming reference into hypothesis.

    Insertions are hypothesis symbols with no reference counterpart,
    deletions are reference symbols missing from the hypothesis.  When the
    backtrace has several optimal moves the preference order is
    substitution, then deletion, then insertion.
    """
    if len(reference) == 0:
        raise EmptyReference("reference must be non-empty")
    n, m = len(reference), len(hypothesis)
    # d[i][j] = distance between reference[:i] and hypothesis[:j]
    d = [[0] * (m + 1) for _ in range(n + 1)]
    for i in range(1, n + 1):
        d[i][0] = i
    for j in range(1, m + 1):
        d[0][j] = j
    for i in range(1, n + 1):
        ri = reference[i - 1]
        for j in range(1, m + 1):
            cost = 0 if ri == hypothesis[j - 1] else 1
            d[i][j] = min(d[i - 1][j - 1] + cost, d[i - 1][j] + 1, d[i][j - 1] + 1)

    subs = ins = dels = 0
    i, j = n, m
    while i > 0 or j > 0:
        if i > 0 and j > 0 and reference[i - 1] == hypothesis[j - 1] and d[i][j] == d[i - 1][j - 1]:
            i, j = i - 1, j - 1
        elif i > 0 and j > 0 and d[i][j] == d[i - 1][j - 1] + 1:
            subs += 1
            i, j = i - 1, j - 1
        elif i > 0 and d[i][j] == d[i - 1][j] + 1:
            dels += 1
            i -= 1
        else:
            ins += 1
            j -= 1
    return EditCounts(S=subs, I=ins, D=dels, N=n)


def levenshtein(a: Sequence, b: Sequence) -> int:
    """Plain edit distance without backtrace (single rolling row)."""
    n, m = len(a), len(b)
    if n == 0:
        return m
    if m == 0:
        return n
    prev = list(range(m + 1))
    for i in range(1, n + 1):
        cur = [i] + [0] * m
        ai = a[i - 1]
        for j in range(1, m + 1):
            cost = 0 if ai == b[j - 1] else 1
            cur[j] = min(prev[j - 1] + cost, prev[j] + 1, cur[j - 1] + 1)
        prev = cur
    return prev[m]


def cer(reference: str, hypothesis: str) -> float:
    """Character error rate in [0, inf), scaled to percent."""
    counts = edit_counts(reference, hypothesis)
    return 100.0 * counts.total / counts.N


def wer(reference: str, hypothesis: str) -> float:
    """Word error rate over whitespace-separated tokens, scaled to percent."""
    ref_tokens = reference.split()
    hyp_tokens = hypothesis.split()
    if not ref_tokens:
        raise EmptyReference("reference must contain at least one token")
    counts = edit_counts(ref_tokens, hyp_tokens)
    return 100.0 * counts.total / counts.N


@dataclass
class SampleMetrics:
    sample_id: str
    cer: float
    wer: float
    char_counts: EditCounts
    word_counts: EditCounts

    def to_dict(self) -> dict:
        return {
            "id": self.sample_id,
            "cer": self.cer,
            "wer": self.wer,
            "char_edits": {"S": self.char_counts.S, "I": self.char_counts.I,
                           "D": self.char_counts.D, "N": self.char_counts.N},
            "word_edits": {"S": self.word_counts.S, "I": self.word_counts.I,
                           "D": self.word_counts.D, "N": self.word_counts.N},
        }


@dataclass
class MetricsReport:
    """Per-sample error rates plus micro-averaged aggregates in [0, 100+]."""

    per_sample: List[SampleMetrics]
    aggregate_cer: float
    aggregate_wer: float

    def to_dict(self) -> dict:
        return {
            "aggregate_cer": self.aggregate_cer,
            "aggregate_wer": self.aggregate_wer,
            "per_sample": [s.to_dict() for s in self.per_sample],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, ensure_ascii=False, indent=2)


def build_report(pairs: Sequence[Tuple[str, str, str]]) -> MetricsReport:
    """Score (id, reference, hypothesis) triples.

    Aggregates are computed from summed edit counts, not averaged rates.
    """
    rows = []
    char_edits = char_total = 0
    word_edits = word_total = 0
    for sample_id, reference, hypothesis in pairs:
        cc = edit_counts(reference, hypothesis)
        wc = edit_counts(reference.split(), hypothesis.split())
        rows.append(SampleMetrics(
            sample_id=sample_id,
            cer=100.0 * cc.total / cc.N,
            wer=100.0 * wc.total / wc.N,
            char_counts=cc,
            word_counts=wc,
        ))
        char_edits += cc.total
        char_total += cc.N
        word_edits += wc.total
        word_total += wc.N
    return MetricsReport(
        per_sample=rows,
        aggregate_cer=100.0 * char_edits / max(char_total, 1),
        aggregate_wer=100.0 * word_edits / max(word_total, 1),
    )
