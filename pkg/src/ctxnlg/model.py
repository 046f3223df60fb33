"""Attention seq2seq generator with DA-only, prepended-context and
dual-encoder input configurations."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from . import tensor as T
from .data import GO_ID, PAD_ID, Vocabulary
from .tensor import LstmCellParams, Tensor, lstm_shapes

MODES = ("baseline", "prepend", "dual")
_MASKED = -1e30


@dataclass
class ModelConfig:
    mode: str = "baseline"
    embedding: int = 50
    hidden: int = 128
    attention: int = 128
    # width of (y_{t-1} ∘ c_t) W_S; defaults to the embedding width
    decoder_input: int | None = None
    # "pad": per-position concatenation with left zero-padding; "concat": sequence concatenation
    dual_align: str = "pad"
    max_output_len: int = 60
    init_scale: float = 0.1

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        if self.dual_align not in ("pad", "concat"):
            raise ValueError(f"unknown dual_align {self.dual_align!r}")

    @property
    def state_width(self) -> int:
        return 2 * self.hidden if self.mode == "dual" else self.hidden

    @property
    def input_width(self) -> int:
        return self.decoder_input or self.embedding


@dataclass
class EncoderStates:
    """Encoder output for a batch: ``states`` (B, L, D), validity ``mask``
    (B, L) and the decoder's initial hidden/cell state."""

    states: Tensor
    mask: np.ndarray
    h0: Tensor
    c0: Tensor
    keys: Tensor | None = None

    def __len__(self):
        return self.states.shape[1]


@dataclass
class DecoderState:
    h: Tensor
    c: Tensor
    prev_token: np.ndarray
    step: int = 0


@dataclass
class Vocabs:
    da: Vocabulary
    output: Vocabulary
    context: Vocabulary | None = None

    def to_json(self) -> dict:
        out = {"da": self.da.itos, "output": self.output.itos}
        if self.context is not None:
            out["context"] = self.context.itos
        return out

    @classmethod
    def from_json(cls, d: dict) -> "Vocabs":
        ctx = Vocabulary(d["context"]) if "context" in d else None
        return cls(Vocabulary(d["da"]), Vocabulary(d["output"]), ctx)


def _left_pad(seqs: Sequence[Sequence[int]], length: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    length = max([len(s) for s in seqs] + [length or 0])
    ids = np.full((len(seqs), length), PAD_ID, dtype=np.int64)
    mask = np.zeros((len(seqs), length))
    for b, s in enumerate(seqs):
        if s:
            ids[b, length - len(s) :] = s
            mask[b, length - len(s) :] = 1.0
    return ids, mask


def _right_pad(seqs: Sequence[Sequence[int]]) -> tuple[np.ndarray, np.ndarray]:
    length = max(len(s) for s in seqs)
    ids = np.full((len(seqs), length), PAD_ID, dtype=np.int64)
    mask = np.zeros((len(seqs), length))
    for b, s in enumerate(seqs):
        ids[b, : len(s)] = s
        mask[b, : len(s)] = 1.0
    return ids, mask


def run_lstm(P, prefix: str, table: Tensor, ids: np.ndarray, mask: np.ndarray):
    """Run one LSTM over left-padded ``ids``; padded steps carry the state through.

    Returns the stacked hidden states (B, L, H) and the final (h, c).
    """
    cell = LstmCellParams.from_params(P, prefix)
    B, L = ids.shape
    h = Tensor(np.zeros((B, cell.hidden)))
    c = Tensor(np.zeros((B, cell.hidden)))
    states = []
    for t in range(L):
        x = T.embed(table, ids[:, t])
        h_new, c_new = T.lstm_step(x, h, c, cell)
        m = mask[:, t : t + 1]
        if m.all():
            h, c = h_new, c_new
        else:
            h = T.add(T.mul(h_new, m), T.mul(h, 1.0 - m))
            c = T.add(T.mul(c_new, m), T.mul(c, 1.0 - m))
        states.append(h)
    return T.stack(states, axis=1), h, c


class Generator:
    """Trainable parameters plus the forward computations of the generator.

    Forward methods take ``P``, a name -> :class:`Tensor` mapping, so the same
    code serves training (tensors bound to a tape) and inference
    (:meth:`frozen`).
    """

    def __init__(self, config: ModelConfig, vocabs: Vocabs, params: dict | None = None, seed: int = 0):
        self.config = config
        self.vocabs = vocabs
        if config.mode != "baseline" and vocabs.context is None:
            raise ValueError(f"mode {config.mode!r} needs a context vocabulary")
        shapes = self.param_shapes()
        if params is None:
            params = T.init_uniform(shapes, np.random.default_rng(seed), config.init_scale)
        missing = set(shapes) ^ set(params)
        if missing:
            raise ValueError(f"parameter set mismatch: {sorted(missing)}")
        for name, shape in shapes.items():
            if params[name].shape != shape:
                raise ValueError(f"{name}: expected shape {shape}, got {params[name].shape}")
        self.params = params

    def param_shapes(self) -> dict[str, tuple[int, ...]]:
        cfg = self.config
        E, H, A, D, I = cfg.embedding, cfg.hidden, cfg.attention, cfg.state_width, cfg.input_width
        V = len(self.vocabs.output)
        shapes = {
            "emb.da": (len(self.vocabs.da), E),
            "emb.out": (V, E),
            "att.Wq": (D, A),
            "att.Wk": (D, A),
            "att.v": (A,),
            "W_S": (E + D, I),
            "W_Y": (2 * D, V),
        }
        shapes.update(lstm_shapes("enc", E, H))
        shapes.update(lstm_shapes("dec", I, D))
        if cfg.mode != "baseline":
            shapes["emb.ctx"] = (len(self.vocabs.context), E)
        if cfg.mode == "dual":
            shapes.update(lstm_shapes("ctx_enc", E, H))
        return shapes

    @property
    def n_params(self) -> int:
        return int(sum(v.size for v in self.params.values()))

    def frozen(self) -> dict[str, Tensor]:
        return {k: Tensor(v) for k, v in self.params.items()}

    # ------------------------------------------------------------- inputs

    def da_ids(self, da_tokens: Sequence[str]) -> list[int]:
        return self.vocabs.da.encode(da_tokens)

    def context_ids(self, context: Sequence[str]) -> list[int]:
        if self.vocabs.context is None:
            return []
        return self.vocabs.context.encode(context)

    # ----------------------------------------------------------- encoders

    def encode(self, P, contexts: Sequence[Sequence[str]], das: Sequence[Sequence[str]]) -> EncoderStates:
        """Batch encoder according to the configured mode."""
        mode = self.config.mode
        da = [self.da_ids(d) for d in das]
        if any(not d for d in da) and mode != "prepend":
            raise ValueError("empty DA input")
        if mode == "baseline":
            ids, mask = _left_pad(da)
            states, h, c = run_lstm(P, "enc", P["emb.da"], ids, mask)
            return EncoderStates(states, mask, h, c)
        ctx = [self.context_ids(c) for c in contexts]
        if mode == "prepend":
            # one joint table: context rows first, DA rows shifted after them
            offset = len(self.vocabs.context)
            seqs = [c + [offset + i for i in d] for c, d in zip(ctx, da)]
            if any(not s for s in seqs):
                raise ValueError("empty encoder input")
            ids, mask = _left_pad(seqs)
            table = T.concat([P["emb.ctx"], P["emb.da"]], axis=0)
            states, h, c = run_lstm(P, "enc", table, ids, mask)
            return EncoderStates(states, mask, h, c)
        ctx = [c or [PAD_ID] for c in ctx]
        if self.config.dual_align == "concat":
            return self._encode_dual_concat(P, ctx, da)
        length = max(len(s) for s in ctx + da)
        c_ids, c_mask = _left_pad(ctx, length)
        d_ids, d_mask = _left_pad(da, length)
        c_states, c_h, c_c = run_lstm(P, "ctx_enc", P["emb.ctx"], c_ids, c_mask)
        d_states, d_h, d_c = run_lstm(P, "enc", P["emb.da"], d_ids, d_mask)
        # left padding already leaves zero states on the shorter side
        states = T.concat([d_states, c_states], axis=-1)
        mask = np.maximum(c_mask, d_mask)
        return EncoderStates(states, mask, T.concat([d_h, c_h]), T.concat([d_c, c_c]))

    def _encode_dual_concat(self, P, ctx, da) -> EncoderStates:
        c_ids, c_mask = _left_pad(ctx)
        d_ids, d_mask = _left_pad(da)
        c_states, c_h, c_c = run_lstm(P, "ctx_enc", P["emb.ctx"], c_ids, c_mask)
        d_states, d_h, d_c = run_lstm(P, "enc", P["emb.da"], d_ids, d_mask)
        zc = np.zeros(c_states.shape)
        zd = np.zeros(d_states.shape)
        states = T.concat([T.concat([zc, c_states], axis=-1), T.concat([d_states, zd], axis=-1)], axis=1)
        mask = np.concatenate([c_mask, d_mask], axis=1)
        return EncoderStates(states, mask, T.concat([d_h, c_h]), T.concat([d_c, c_c]))

    # single-instance views of the encoders

    def _single(self, P, context, da_tokens) -> EncoderStates:
        return self.encode(P or self.frozen(), [list(context)], [list(da_tokens)])

    def encode_baseline(self, da_tokens: Sequence[str], P=None) -> EncoderStates:
        if self.config.mode != "baseline":
            raise ValueError("encode_baseline needs a baseline-mode model")
        return self._single(P, [], da_tokens)

    def encode_prepended(self, context: Sequence[str], da_tokens: Sequence[str], P=None) -> EncoderStates:
        if self.config.mode != "prepend":
            raise ValueError("encode_prepended needs a prepend-mode model")
        return self._single(P, context, da_tokens)

    def encode_dual(self, context: Sequence[str], da_tokens: Sequence[str], P=None) -> EncoderStates:
        if self.config.mode != "dual":
            raise ValueError("encode_dual needs a dual-mode model")
        return self._single(P, context, da_tokens)

    # ------------------------------------------------------------ decoder

    def init_state(self, enc: EncoderStates) -> DecoderState:
        B = enc.states.shape[0]
        return DecoderState(enc.h0, enc.c0, np.full(B, GO_ID, dtype=np.int64), 0)

    def attend(self, P, s_prev: Tensor, enc: EncoderStates) -> tuple[Tensor, Tensor]:
        """Additive attention; returns the context vector and the weights."""
        if enc.keys is None:
            enc.keys = T.matmul(enc.states, P["att.Wk"])
        q = T.matmul(s_prev, P["att.Wq"])
        q = T.reshape(q, (q.shape[0], 1, q.shape[1]))
        hidden = T.tanh(T.add(enc.keys, q))
        scores = T.sum(T.mul(hidden, P["att.v"]), axis=-1)
        if not enc.mask.all():
            scores = T.add(scores, np.where(enc.mask > 0, 0.0, _MASKED))
        alpha = T.softmax_t(scores, axis=-1)
        weighted = T.mul(T.reshape(alpha, alpha.shape + (1,)), enc.states)
        return T.sum(weighted, axis=1), alpha

    def decode_step(self, P, state: DecoderState, enc: EncoderStates, with_attention=False):
        """One decoder step; returns the next state and output log-probabilities."""
        ctx, alpha = self.attend(P, state.h, enc)
        y = T.embed(P["emb.out"], state.prev_token)
        x = T.matmul(T.concat([y, ctx]), P["W_S"])
        h, c = T.lstm_step(x, state.h, state.c, LstmCellParams.from_params(P, "dec"))
        logits = T.matmul(T.concat([h, ctx]), P["W_Y"])
        logp = T.log_softmax(logits)
        nxt = DecoderState(h, c, state.prev_token, state.step + 1)
        if with_attention:
            return nxt, logp, alpha
        return nxt, logp

    def step_distribution(self, state: DecoderState, enc: EncoderStates, P=None):
        """Inference helper: next state and the output probability vector(s)."""
        nxt, logp = self.decode_step(P or self.frozen(), state, enc)
        return nxt, np.exp(logp.value)

    # --------------------------------------------------------------- loss

    def target_ids(self, reference: Sequence[str], unk: bool = True) -> list[int]:
        return self.vocabs.output.encode(reference, eos=True, unk=unk)

    def token_logprobs(self, P, contexts, das, targets: np.ndarray, tmask: np.ndarray):
        """Teacher-forced per-token log-probabilities (B, T) as a Tensor."""
        enc = self.encode(P, contexts, das)
        state = self.init_state(enc)
        steps = []
        for t in range(targets.shape[1]):
            state, logp = self.decode_step(P, state, enc)
            steps.append(T.pick(logp, targets[:, t]))
            state.prev_token = targets[:, t]
        return T.stack(steps, axis=1)

    def loss(self, P, contexts, das, references, unk: bool = True) -> Tensor:
        """Mean per-token negative log-likelihood under teacher forcing."""
        targets, tmask = _right_pad([self.target_ids(r, unk) for r in references])
        lp = self.token_logprobs(P, contexts, das, targets, tmask)
        return T.mul(T.sum(T.mul(lp, tmask)), -1.0 / tmask.sum())

    def loss_and_grads(self, contexts, das, references) -> tuple[float, dict]:
        tape = T.Tape()
        P = tape.bind(self.params)
        loss = self.loss(P, contexts, das, references)
        return float(loss.value), T.backward(tape, loss)

    def sequence_logprob(self, context, da_tokens, ids: Sequence[int]) -> float:
        """Total log-probability of an output id sequence (as decoded)."""
        targets = np.asarray([list(ids)], dtype=np.int64)
        lp = self.token_logprobs(self.frozen(), [context], [da_tokens], targets, np.ones(targets.shape))
        total = 0.0
        for v in lp.value[0]:
            total += float(v)
        return total

    # ------------------------------------------------------ serialization

    def to_json(self) -> dict:
        return {
            "config": asdict(self.config),
            "vocabs": self.vocabs.to_json(),
            "params": {k: {"shape": list(v.shape), "values": v.ravel().tolist()} for k, v in self.params.items()},
        }

    @classmethod
    def from_json(cls, d: dict) -> "Generator":
        params = {
            k: np.asarray(v["values"], dtype=np.float64).reshape(v["shape"]) for k, v in d["params"].items()
        }
        return cls(ModelConfig(**d["config"]), Vocabs.from_json(d["vocabs"]), params)

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json(), fh)

    @classmethod
    def load(cls, path) -> "Generator":
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(json.load(fh))
