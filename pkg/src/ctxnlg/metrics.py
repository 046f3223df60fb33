"""Corpus BLEU and NIST (mteval-v13a definitions), slot error rate and
paired bootstrap resampling."""
from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from typing import Callable, NamedTuple, Sequence

import numpy as np

from .data import DialogueAct, is_placeholder


@dataclass
class EvalPair:
    hyp: list[str]
    refs: list[list[str]]
    da: DialogueAct | None = None

    def __post_init__(self):
        if not self.refs:
            raise ValueError("an evaluation pair needs at least one reference")


def _ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def _check(pairs):
    if not pairs:
        raise ValueError("cannot score an empty corpus")


# ---------------------------------------------------------------------- BLEU


def bleu_stats(pair: EvalPair, max_n: int = 4) -> np.ndarray:
    """[matches_1..n, totals_1..n, hyp_len, closest_ref_len] for one segment."""
    hyp = pair.hyp
    out = np.zeros(2 * max_n + 2)
    for n in range(1, max_n + 1):
        h = _ngrams(hyp, n)
        ref_max: Counter = Counter()
        for ref in pair.refs:
            for g, c in _ngrams(ref, n).items():
                ref_max[g] = max(ref_max[g], c)
        out[n - 1] = sum(min(c, ref_max[g]) for g, c in h.items())
        out[max_n + n - 1] = max(len(hyp) - n + 1, 0)
    out[2 * max_n] = len(hyp)
    # closest reference length, shorter one on ties
    out[2 * max_n + 1] = min((abs(len(r) - len(hyp)), len(r)) for r in pair.refs)[1]
    return out


def bleu_from_stats(stats: np.ndarray, max_n: int = 4, smooth: bool = False) -> float:
    matches, totals = stats[:max_n], stats[max_n : 2 * max_n]
    hyp_len, ref_len = stats[2 * max_n], stats[2 * max_n + 1]
    if hyp_len == 0:
        return 0.0
    log_p = 0.0
    smooth_div = 1.0
    for m, t in zip(matches, totals):
        if t == 0:
            return 0.0
        if m == 0:
            if not smooth:
                return 0.0
            smooth_div *= 2.0
            log_p += math.log(1.0 / (smooth_div * t))
        else:
            log_p += math.log(m / t)
    bp = 1.0 if hyp_len >= ref_len else math.exp(1.0 - ref_len / hyp_len)
    return 100.0 * bp * math.exp(log_p / max_n)


def bleu(pairs: Sequence[EvalPair], max_n: int = 4, smooth: bool = False) -> float:
    """Corpus BLEU in [0, 100]; unsmoothed unless ``smooth`` (mteval-style
    halving for zero-match orders)."""
    _check(pairs)
    total = np.sum([bleu_stats(p, max_n) for p in pairs], axis=0)
    return bleu_from_stats(total, max_n, smooth)


# ---------------------------------------------------------------------- NIST

_NIST_BETA = -math.log(0.5) / math.log(1.5) ** 2


def nist_info_weights(pairs: Sequence[EvalPair], max_n: int = 5) -> dict[tuple, float]:
    """Information weight of every reference n-gram, in bits."""
    counts: Counter = Counter()
    words = 0
    for p in pairs:
        for ref in p.refs:
            words += len(ref)
            for n in range(1, max_n + 1):
                counts.update(_ngrams(ref, n))
    info = {}
    for g, c in counts.items():
        prefix = counts[g[:-1]] if len(g) > 1 else words
        info[g] = math.log2(prefix / c)
    return info


def nist_stats(pair: EvalPair, info: dict, max_n: int = 5) -> np.ndarray:
    """[info_1..n, hyp_ngrams_1..n, hyp_len, mean_ref_len] for one segment."""
    out = np.zeros(2 * max_n + 2)
    for n in range(1, max_n + 1):
        ref_max: Counter = Counter()
        for ref in pair.refs:
            for g, c in _ngrams(ref, n).items():
                ref_max[g] = max(ref_max[g], c)
        for g, c in _ngrams(pair.hyp, n).items():
            if g in ref_max:
                out[n - 1] += info[g] * min(c, ref_max[g])
        out[max_n + n - 1] = max(len(pair.hyp) - n + 1, 0)
    out[2 * max_n] = len(pair.hyp)
    out[2 * max_n + 1] = np.mean([len(r) for r in pair.refs])
    return out


def nist_length_penalty(ratio: float) -> float:
    if ratio >= 1.0:
        return 1.0
    if ratio <= 0.0:
        return 0.0
    return math.exp(-_NIST_BETA * math.log(ratio) ** 2)


def nist_from_stats(stats: np.ndarray, max_n: int = 5) -> float:
    score = 0.0
    for n in range(max_n):
        score += stats[n] / max(stats[max_n + n], 1.0)
    return score * nist_length_penalty(stats[2 * max_n] / stats[2 * max_n + 1])


def nist(pairs: Sequence[EvalPair], max_n: int = 5) -> float:
    _check(pairs)
    info = nist_info_weights(pairs, max_n)
    total = np.sum([nist_stats(p, info, max_n) for p in pairs], axis=0)
    return nist_from_stats(total, max_n)


# ------------------------------------------------------------ slot error rate


def slot_errors(output: Sequence[str], da: DialogueAct) -> tuple[int, int]:
    """(missing + superfluous placeholder occurrences, placeholders required)."""
    required = Counter(v for v in da.values() if is_placeholder(v))
    produced = Counter(t for t in output if is_placeholder(t))
    missing = sum((required - produced).values())
    extra = sum((produced - required).values())
    return missing + extra, sum(required.values())


def slot_error_rate(outputs: Sequence[Sequence[str]], das: Sequence[DialogueAct]) -> float:
    errors = required = 0
    for out, da in zip(outputs, das, strict=True):
        e, r = slot_errors(out, da)
        errors += e
        required += r
    if required == 0:
        raise ValueError("no slot placeholders are required anywhere in the corpus")
    return errors / required


# ----------------------------------------------------------------- bootstrap


class BootstrapResult(NamedTuple):
    winner: str | None
    significant: bool
    win_fraction: float


def _stat_scorer(metric, pairs_a, pairs_b):
    """Per-segment statistics plus a reducer, for the built-in metrics."""
    if metric == "bleu":
        sa = np.array([bleu_stats(p) for p in pairs_a])
        sb = np.array([bleu_stats(p) for p in pairs_b])
        return sa, sb, bleu_from_stats
    if metric == "nist":
        info = nist_info_weights(pairs_a)
        sa = np.array([nist_stats(p, info) for p in pairs_a])
        sb = np.array([nist_stats(p, info) for p in pairs_b])
        return sa, sb, nist_from_stats
    return None


def bootstrap_significance(pairs_a: Sequence[EvalPair], pairs_b: Sequence[EvalPair],
                           metric: str | Callable = "bleu", resamples: int = 1000,
                           level: float = 0.99, seed: int = 0) -> BootstrapResult:
    """Paired bootstrap resampling over evaluation instances.

    Returns the system winning most resamples and whether it wins at least
    ``level`` of them.
    """
    if len(pairs_a) != len(pairs_b):
        raise ValueError("systems were scored on different numbers of instances")
    for a, b in zip(pairs_a, pairs_b):
        if a.refs != b.refs:
            raise ValueError("systems were scored on different instances")
    _check(pairs_a)
    rng = np.random.default_rng(seed)
    n = len(pairs_a)
    fast = _stat_scorer(metric, pairs_a, pairs_b) if isinstance(metric, str) else None
    if isinstance(metric, str) and fast is None:
        raise ValueError(f"unknown metric {metric!r}")
    wins_a = wins_b = 0
    for _ in range(resamples):
        idx = rng.integers(0, n, size=n)
        if fast:
            sa, sb, reduce = fast
            score_a, score_b = reduce(sa[idx].sum(axis=0)), reduce(sb[idx].sum(axis=0))
        else:
            score_a = metric([pairs_a[i] for i in idx])
            score_b = metric([pairs_b[i] for i in idx])
        wins_a += score_a > score_b
        wins_b += score_b > score_a
    if wins_a == wins_b:
        return BootstrapResult(None, False, wins_a / resamples)
    winner, wins = ("a", wins_a) if wins_a > wins_b else ("b", wins_b)
    frac = wins / resamples
    return BootstrapResult(winner, frac >= level, frac)
