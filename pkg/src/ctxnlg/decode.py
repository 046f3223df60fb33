"""Greedy and beam-search decoding into k-best lists."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Protocol, Sequence

import numpy as np

from .data import EOS_ID, GO_ID, PAD_ID
from .model import DecoderState, Generator
from .tensor import Tensor


@dataclass
class Hypothesis:
    ids: tuple[int, ...]
    logp: float
    tokens: list[str] | None = None
    adjustments: dict[str, float] = field(default_factory=dict)

    @property
    def score(self) -> float:
        return self.logp + float(np.sum(list(self.adjustments.values()))) if self.adjustments else self.logp

    @property
    def finished(self) -> bool:
        return bool(self.ids) and self.ids[-1] == EOS_ID

    def sort_key(self):
        # best score first; ties go to the earlier EOS, then lexicographic ids
        return (-self.score, len(self.ids), self.ids)


class KBestList(list):
    """Hypotheses for one input, kept sorted by final score."""

    def resort(self) -> "KBestList":
        self.sort(key=Hypothesis.sort_key)
        return self

    @property
    def top(self) -> Hypothesis:
        return self[0]


class StepScorer(Protocol):
    """What beam search needs from a model.

    ``state`` is a tuple of arrays whose first axis indexes live hypotheses.
    """

    vocab_size: int

    def start(self) -> tuple: ...

    def step(self, state: tuple, prefixes: Sequence[tuple[int, ...]]) -> tuple[tuple, np.ndarray]: ...


def _reindex(state: tuple, rows: np.ndarray) -> tuple:
    return tuple(None if s is None else s[rows] for s in state)


def beam_search(scorer: StepScorer, k: int, max_len: int, eos_id: int = EOS_ID, banned: Iterable[int] = ()) -> KBestList:
    """Expand every live prefix and keep the ``k`` best extensions per step.

    Extensions that emit ``eos_id`` or reach ``max_len`` tokens are retired
    to a pool of at most ``k`` hypotheses; they take up their beam slot for
    that step, so ``k=1`` reproduces greedy decoding.  The search stops once
    no live prefix can beat the worst retired hypothesis.
    """
    if k < 1:
        raise ValueError("beam size must be at least 1")
    banned = np.fromiter(banned, dtype=np.int64)
    live: list[Hypothesis] = [Hypothesis((), 0.0)]
    state = scorer.start()
    pool: list[Hypothesis] = []

    for step in range(max_len):
        state, logp = scorer.step(state, [h.ids for h in live])
        logp = np.array(logp, dtype=np.float64)
        if banned.size:
            logp[:, banned] = -np.inf
        base = np.array([h.logp for h in live])
        flat = (base[:, None] + logp).ravel()
        V = logp.shape[1]
        n_take = min(k, flat.size)
        # everything scoring at least the k-th best, so ties are resolved by the key below
        thresh = np.partition(flat, flat.size - n_take)[flat.size - n_take]
        idx = np.flatnonzero(flat >= thresh)
        idx = idx[np.isfinite(flat[idx])]
        order = sorted(idx, key=lambda i: (-flat[i], live[i // V].ids + (i % V,)))[:k]
        at_cap = step == max_len - 1
        new_live, rows = [], []
        for i in order:
            parent, tok = divmod(int(i), V)
            hyp = Hypothesis(live[parent].ids + (tok,), float(flat[i]))
            if tok == eos_id or at_cap:
                pool.append(hyp)
            else:
                new_live.append(hyp)
                rows.append(parent)
        pool.sort(key=Hypothesis.sort_key)
        del pool[k:]
        if not new_live:
            break
        live = new_live
        state = _reindex(state, np.asarray(rows))
        if len(pool) == k and live[0].logp <= pool[-1].score:
            break
    return KBestList(pool).resort()


class GeneratorScorer:
    """Adapts a :class:`Generator` and one input to the :class:`StepScorer` protocol."""

    def __init__(self, gen: Generator, context: Sequence[str], da_tokens: Sequence[str]):
        self.gen = gen
        self.P = gen.frozen()
        self.enc = gen.encode(self.P, [list(context)], [list(da_tokens)])
        self.vocab_size = len(gen.vocabs.output)

    def start(self):
        return (self.enc.h0.value, self.enc.c0.value)

    def step(self, state, prefixes):
        h, c = state
        prev = np.array([p[-1] if p else GO_ID for p in prefixes], dtype=np.int64)
        nxt, logp = self.gen.decode_step(self.P, DecoderState(Tensor(h), Tensor(c), prev), self.enc)
        return (nxt.h.value, nxt.c.value), logp.value


def _finish(gen: Generator, kbest: KBestList) -> KBestList:
    for h in kbest:
        h.tokens = gen.vocabs.output.decode(h.ids)
    return kbest


def beam_decode(gen: Generator, context, da_tokens, k: int = 20, max_len: int | None = None) -> KBestList:
    scorer = GeneratorScorer(gen, context, da_tokens)
    kbest = beam_search(scorer, k, max_len or gen.config.max_output_len, banned=(PAD_ID, GO_ID))
    return _finish(gen, kbest)


def greedy_search(scorer: StepScorer, max_len: int, eos_id: int = EOS_ID, banned: Iterable[int] = ()) -> Hypothesis:
    banned = list(banned)
    state = scorer.start()
    ids: tuple[int, ...] = ()
    total = 0.0
    for _ in range(max_len):
        state, logp = scorer.step(state, [ids])
        row = np.array(logp[0], dtype=np.float64)
        row[banned] = -np.inf
        tok = int(np.argmax(row))
        total += float(row[tok])
        ids += (tok,)
        if tok == eos_id:
            break
    return Hypothesis(ids, total)


def greedy_decode(gen: Generator, context, da_tokens, max_len: int | None = None) -> Hypothesis:
    hyp = greedy_search(GeneratorScorer(gen, context, da_tokens), max_len or gen.config.max_output_len, banned=(PAD_ID, GO_ID))
    hyp.tokens = gen.vocabs.output.decode(hyp.ids)
    return hyp


def greedy_decode_batch(gen: Generator, contexts, das, max_len: int | None = None, batch_size: int = 64) -> list[list[str]]:
    """Batched greedy decoding (used for per-pass dev evaluation)."""
    max_len = max_len or gen.config.max_output_len
    P = gen.frozen()
    out: list[list[str]] = []
    for start in range(0, len(das), batch_size):
        ctx = contexts[start : start + batch_size]
        da = das[start : start + batch_size]
        enc = gen.encode(P, ctx, da)
        state = gen.init_state(enc)
        B = len(da)
        ids = np.zeros((B, max_len), dtype=np.int64)
        done = np.zeros(B, dtype=bool)
        for t in range(max_len):
            state, logp = gen.decode_step(P, state, enc)
            scores = logp.value.copy()
            scores[:, [PAD_ID, GO_ID]] = -np.inf
            tok = scores.argmax(axis=1)
            ids[:, t] = tok
            state.prev_token = tok
            done |= tok == EOS_ID
            if done.all():
                break
        out.extend(gen.vocabs.output.decode(row) for row in ids)
    return out


# ------------------------------------------------------------------ k-best I/O


def kbest_records(input_id, kbest: KBestList) -> list[dict]:
    return [
        {
            "input_id": input_id,
            "rank": rank,
            "tokens": h.tokens if h.tokens is not None else list(h.ids),
            "ids": list(h.ids),
            "model_logp": h.logp,
            "adjustments": dict(h.adjustments),
            "final_score": h.score,
        }
        for rank, h in enumerate(kbest)
    ]


def write_kbest(path, lists: Iterable[tuple[object, KBestList]]):
    with open(path, "w", encoding="utf-8") as fh:
        for input_id, kbest in lists:
            for rec in kbest_records(input_id, kbest):
                fh.write(json.dumps(rec) + "\n")


def read_kbest(path) -> dict[object, KBestList]:
    out: dict[object, KBestList] = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            hyp = Hypothesis(tuple(rec.get("ids", ())), rec["model_logp"], rec["tokens"], dict(rec.get("adjustments", {})))
            out.setdefault(rec["input_id"], KBestList()).append(hyp)
    for kb in out.values():
        kb.resort()
    return out
