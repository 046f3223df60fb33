"""k-best rerankers: content classification and n-gram match against context."""
from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import replace
from typing import Iterable, Sequence

import numpy as np

from . import tensor as T
from .data import DialogueAct, Vocabulary
from .decode import Hypothesis, KBestList
from .model import _left_pad, run_lstm
from .tensor import Tensor, lstm_shapes


class DaElementInventory:
    """Stable index over DA types, typed slots and typed slot-value pairs."""

    def __init__(self, elements: Sequence[str]):
        self.elements = list(elements)
        self.index = {e: i for i, e in enumerate(self.elements)}

    @staticmethod
    def elements_of(da: DialogueAct) -> list[str]:
        out = []
        for it in da.items:
            out.append(it.da_type)
            if it.slot is not None:
                out.append(f"{it.da_type}:{it.slot}")
                if it.value is not None:
                    out.append(f"{it.da_type}:{it.slot}={it.value}")
        return list(dict.fromkeys(out))

    @classmethod
    def build(cls, das: Iterable[DialogueAct]) -> "DaElementInventory":
        seen = {}
        for da in das:
            for e in cls.elements_of(da):
                seen.setdefault(e, None)
        return cls(sorted(seen))

    def __len__(self):
        return len(self.elements)

    def vector(self, da: DialogueAct) -> np.ndarray:
        v = np.zeros(len(self.elements))
        for e in self.elements_of(da):
            if e in self.index:
                v[self.index[e]] = 1.0
        return v


class ContentClassifier:
    """LSTM encoder over output tokens feeding a sigmoid layer, one unit per
    inventory element."""

    def __init__(self, inventory: DaElementInventory, vocab: Vocabulary, embedding=50, hidden=128,
                 params: dict | None = None, seed: int = 0, init_scale: float = 0.1):
        self.inventory = inventory
        self.vocab = vocab
        self.embedding, self.hidden = embedding, hidden
        shapes = self.param_shapes()
        if params is None:
            params = T.init_uniform(shapes, np.random.default_rng(seed), init_scale)
        for name, shape in shapes.items():
            if params[name].shape != shape:
                raise ValueError(f"{name}: expected shape {shape}, got {params[name].shape}")
        self.params = params

    def param_shapes(self):
        shapes = {
            "emb": (len(self.vocab), self.embedding),
            "out.W": (self.hidden, len(self.inventory)),
            "out.b": (len(self.inventory),),
        }
        shapes.update(lstm_shapes("enc", self.embedding, self.hidden))
        return shapes

    def logits(self, P, token_lists: Sequence[Sequence[str]]) -> Tensor:
        ids, mask = _left_pad([self.vocab.encode(t, eos=True) for t in token_lists])
        _, h, _ = run_lstm(P, "enc", P["emb"], ids, mask)
        return T.add(T.matmul(h, P["out.W"]), P["out.b"])

    def loss(self, P, token_lists, targets: np.ndarray) -> Tensor:
        bce = T.sigmoid_bce(self.logits(P, token_lists), targets)
        return T.mul(T.sum(bce), 1.0 / len(token_lists))

    def loss_and_grads(self, token_lists, targets):
        tape = T.Tape()
        P = tape.bind(self.params)
        loss = self.loss(P, token_lists, targets)
        return float(loss.value), T.backward(tape, loss)

    def activations(self, token_lists: Sequence[Sequence[str]]) -> np.ndarray:
        P = {k: Tensor(v) for k, v in self.params.items()}
        return T.sigmoid(self.logits(P, token_lists)).value

    def classify_batch(self, token_lists) -> np.ndarray:
        # strictly above 0.5 counts as present
        return (self.activations(token_lists) > 0.5).astype(np.float64)

    def classify(self, tokens: Sequence[str]) -> np.ndarray:
        return self.classify_batch([tokens])[0]

    def to_json(self) -> dict:
        return {
            "inventory": self.inventory.elements,
            "vocab": self.vocab.itos,
            "embedding": self.embedding,
            "hidden": self.hidden,
            "params": {k: {"shape": list(v.shape), "values": v.ravel().tolist()} for k, v in self.params.items()},
        }

    @classmethod
    def from_json(cls, d: dict) -> "ContentClassifier":
        params = {k: np.asarray(v["values"], dtype=np.float64).reshape(v["shape"]) for k, v in d["params"].items()}
        return cls(DaElementInventory(d["inventory"]), Vocabulary(d["vocab"]), d["embedding"], d["hidden"], params)

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json(), fh)

    @classmethod
    def load(cls, path) -> "ContentClassifier":
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(json.load(fh))


def content_penalty(predicted: np.ndarray, da: DialogueAct | np.ndarray, inventory: DaElementInventory | None = None) -> int:
    """Missing plus irrelevant elements: Hamming distance to the DA's vector."""
    truth = da if isinstance(da, np.ndarray) else inventory.vector(da)
    return int(np.sum(np.asarray(predicted) != truth))


# ------------------------------------------------------------- n-gram match


def _ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def clipped_precision(hyp: Sequence[str], ref: Sequence[str], n: int) -> tuple[int, int]:
    """(clipped matches, hypothesis n-gram count) against a single reference."""
    h = _ngrams(hyp, n)
    r = _ngrams(ref, n)
    return sum(min(c, r[g]) for g, c in h.items()), max(len(hyp) - n + 1, 0)


def ngram_match_delta(tokens: Sequence[str], context: Sequence[str], w: float) -> float:
    """``w * sqrt(p1 * p2)``; zero whenever either precision is zero or undefined."""
    m1, t1 = clipped_precision(tokens, context, 1)
    m2, t2 = clipped_precision(tokens, context, 2)
    if m1 == 0 or m2 == 0:
        return 0.0
    return w * math.sqrt((m1 / t1) * (m2 / t2))


def ngram_match_rescore(hyp: Hypothesis, context: Sequence[str], w: float) -> Hypothesis:
    tokens = hyp.tokens if hyp.tokens is not None else [str(i) for i in hyp.ids]
    delta = ngram_match_delta(tokens, context, w)
    return replace(hyp, adjustments={**hyp.adjustments, "ngram": delta})


def rerank_kbest(kbest: Sequence[Hypothesis], da: DialogueAct, context: Sequence[str],
                 classifier: ContentClassifier | None = None, content_weight: float = 0.0,
                 ngram_weight: float = 0.0) -> KBestList:
    """Apply the enabled rerankers and re-sort.

    final score = model logp - content_weight * penalty + ngram delta
    """
    out = [replace(h, adjustments=dict(h.adjustments)) for h in kbest]
    if content_weight and out:
        if classifier is None:
            raise ValueError("content reranking needs a trained classifier")
        truth = classifier.inventory.vector(da)
        predicted = classifier.classify_batch([h.tokens for h in out])
        for h, pred in zip(out, predicted):
            h.adjustments["content"] = -content_weight * content_penalty(pred, truth)
    if ngram_weight:
        out = [ngram_match_rescore(h, context, ngram_weight) for h in out]
    return KBestList(out).resort()
