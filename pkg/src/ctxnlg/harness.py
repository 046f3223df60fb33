"""Training, checkpoint selection and multi-seed experiments."""
from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from typing import Sequence

import numpy as np

from . import tensor as T
from .data import (
    DialogueAct,
    Instance,
    build_vocab,
    da_to_triples,
    delexicalize,
    detokenize,
    parse_da,
    tokenize,
    training_examples,
)
from .decode import KBestList, beam_decode, greedy_decode_batch
from .metrics import EvalPair, bleu, bootstrap_significance, nist, slot_error_rate
from .model import Generator, ModelConfig, Vocabs
from .rerank import ContentClassifier, DaElementInventory, rerank_kbest

log = logging.getLogger(__name__)

DEFAULT_SEEDS = (1, 2, 3, 4, 5)
# n-gram reranker weight per generator mode
NGRAM_WEIGHTS = {"baseline": 5.0, "prepend": 10.0, "dual": 5.0}


class TrainingDiverged(RuntimeError):
    def __init__(self, pass_no: int, what: str = "loss"):
        super().__init__(f"training diverged (non-finite {what}) in pass {pass_no}")
        self.pass_no = pass_no


@dataclass
class TrainConfig:
    mode: str = "baseline"
    embedding: int = 50
    hidden: int = 128
    attention: int = 128
    learning_rate: float = 0.0005
    batch_size: int = 20
    min_passes: int = 50
    max_passes: int = 1000
    patience: int = 100
    top_n: int = 10
    seed: int = 1
    clip_norm: float | None = None
    max_output_len: int = 60
    dual_align: str = "pad"
    min_count: int = 1
    beam_size: int = 20
    content_weight: float = 100.0
    ngram_weight: float | None = None  # None -> NGRAM_WEIGHTS[mode]
    clf_min_passes: int = 20
    clf_max_passes: int = 100
    clf_patience: int = 20
    clf_dev_weight: float = 10.0

    def model_config(self) -> ModelConfig:
        return ModelConfig(
            mode=self.mode,
            embedding=self.embedding,
            hidden=self.hidden,
            attention=self.attention,
            dual_align=self.dual_align,
            max_output_len=self.max_output_len,
        )

    def resolved_ngram_weight(self) -> float:
        return NGRAM_WEIGHTS[self.mode] if self.ngram_weight is None else self.ngram_weight

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    def replace(self, **kw) -> "TrainConfig":
        return TrainConfig(**{**asdict(self), **kw})


class EarlyStopper:
    """Stop once the top-``top_n`` multiset of scores has been unchanged for
    ``patience`` passes, counting from no earlier than ``min_passes``."""

    def __init__(self, min_passes: int, max_passes: int, patience: int, top_n: int = 10):
        self.min_passes, self.max_passes = min_passes, max_passes
        self.patience, self.top_n = patience, top_n
        self.passes = 0
        self.top: list[float] = []
        self.last_change = 0

    def update(self, score: float) -> bool:
        """Record one pass; True when training should stop after it."""
        self.passes += 1
        top = sorted(self.top + [score], reverse=True)[: self.top_n]
        if top != self.top:
            self.top = top
            self.last_change = self.passes
        if self.passes >= self.max_passes:
            return True
        return self.passes - max(self.last_change, self.min_passes) >= self.patience


def _no_test_data(*sections):
    for sec in sections:
        if getattr(sec, "name", None) == "test":
            raise ValueError("the test section cannot be used for training or model selection")


def _batches(order: np.ndarray, size: int):
    for start in range(0, len(order), size):
        yield order[start : start + size]


def build_vocabs(train: Sequence[Instance], mode: str, min_count: int = 1) -> Vocabs:
    ctx = build_vocab(train, "context", min_count) if mode != "baseline" else None
    return Vocabs(build_vocab(train, "da", min_count), build_vocab(train, "output", min_count), ctx)


def dev_bleu(gen: Generator, dev: Sequence[Instance]) -> float:
    """Greedy, delexicalized BLEU against the full paraphrase sets."""
    outputs = greedy_decode_batch(gen, [i.context for i in dev], [i.da_tokens for i in dev])
    return bleu([EvalPair(o, i.references) for o, i in zip(outputs, dev)])


def train_generator(config: TrainConfig, train: Sequence[Instance], dev: Sequence[Instance],
                    vocabs: Vocabs | None = None, log_path=None):
    """Adam on token cross-entropy; keeps the parameters with the best dev BLEU.

    Returns ``(generator, training_log)``.
    """
    _no_test_data(train, dev)
    vocabs = vocabs or build_vocabs(train, config.mode, config.min_count)
    gen = Generator(config.model_config(), vocabs, seed=config.seed)
    rng = np.random.default_rng(config.seed)
    examples = training_examples(train)
    adam = T.new_adam_state(gen.params)
    stopper = EarlyStopper(config.min_passes, config.max_passes, config.patience, config.top_n)
    best_score, best_params = -math.inf, None
    history = []
    log_fh = open(log_path, "w", encoding="utf-8") if log_path else None
    try:
        for pass_no in range(1, config.max_passes + 1):
            order = rng.permutation(len(examples))
            total, count = 0.0, 0
            for idx in _batches(order, config.batch_size):
                batch = [examples[i] for i in idx]
                loss, grads = gen.loss_and_grads(
                    [inst.context for inst, _ in batch], [inst.da_tokens for inst, _ in batch], [ref for _, ref in batch]
                )
                if not math.isfinite(loss):
                    raise TrainingDiverged(pass_no)
                if config.clip_norm:
                    grads = T.clip_gradients(grads, config.clip_norm)
                try:
                    T.adam_update(gen.params, grads, adam, lr=config.learning_rate)
                except FloatingPointError as exc:
                    raise TrainingDiverged(pass_no, "gradient") from exc
                total += loss * len(batch)
                count += len(batch)
            score = dev_bleu(gen, dev)
            checkpointed = score > best_score
            if checkpointed:
                best_score = score
                best_params = {k: v.copy() for k, v in gen.params.items()}
            entry = {"pass": pass_no, "train_loss": total / max(count, 1), "dev_bleu": score, "checkpointed": checkpointed}
            history.append(entry)
            if log_fh:
                log_fh.write(json.dumps(entry) + "\n")
                log_fh.flush()
            log.info("pass %d loss %.4f dev BLEU %.2f%s", pass_no, entry["train_loss"], score, " *" if checkpointed else "")
            if stopper.update(score):
                break
    finally:
        if log_fh:
            log_fh.close()
    gen.params = best_params
    return gen, history


# ---------------------------------------------------------------- classifier


def misclassification(clf: ContentClassifier, token_lists, targets: np.ndarray, batch_size: int = 256) -> float:
    """Mean Hamming distance between predicted and true element vectors."""
    if not token_lists:
        return 0.0
    wrong = 0.0
    for start in range(0, len(token_lists), batch_size):
        pred = clf.classify_batch(token_lists[start : start + batch_size])
        wrong += float(np.sum(pred != targets[start : start + batch_size]))
    return wrong / len(token_lists)


def classifier_selection_score(train_err: float, dev_err: float, dev_weight: float = 10.0) -> float:
    return train_err + dev_weight * dev_err


def train_classifier(config: TrainConfig, train: Sequence[Instance], dev: Sequence[Instance], vocab=None):
    """Fit the content classifier on reference outputs; the checkpoint with the
    lowest ``train_err + dev_weight * dev_err`` wins.  Returns ``(clf, log)``."""
    _no_test_data(train, dev)
    vocab = vocab or build_vocab(train, "output", config.min_count)
    inventory = DaElementInventory.build(i.da for i in train)
    clf = ContentClassifier(inventory, vocab, config.embedding, config.hidden, seed=config.seed)
    tr_tokens = [ref for inst in train for ref in inst.references]
    tr_targets = np.array([inventory.vector(inst.da) for inst in train for _ in inst.references])
    dv_tokens = [ref for inst in dev for ref in inst.references]
    dv_targets = np.array([inventory.vector(inst.da) for inst in dev for _ in inst.references]).reshape(-1, len(inventory))
    rng = np.random.default_rng(config.seed)
    adam = T.new_adam_state(clf.params)
    stopper = EarlyStopper(config.clf_min_passes, config.clf_max_passes, config.clf_patience, top_n=1)
    best, best_params, history = math.inf, None, []
    for pass_no in range(1, config.clf_max_passes + 1):
        total = 0.0
        for idx in _batches(rng.permutation(len(tr_tokens)), config.batch_size):
            loss, grads = clf.loss_and_grads([tr_tokens[i] for i in idx], tr_targets[idx])
            if not math.isfinite(loss):
                raise TrainingDiverged(pass_no)
            try:
                T.adam_update(clf.params, grads, adam, lr=config.learning_rate)
            except FloatingPointError as exc:
                raise TrainingDiverged(pass_no, "gradient") from exc
            total += loss * len(idx)
        tr_err = misclassification(clf, tr_tokens, tr_targets)
        dv_err = misclassification(clf, dv_tokens, dv_targets)
        combined = classifier_selection_score(tr_err, dv_err, config.clf_dev_weight)
        checkpointed = combined < best
        if checkpointed:
            best, best_params = combined, {k: v.copy() for k, v in clf.params.items()}
        history.append({"pass": pass_no, "train_loss": total / len(tr_tokens), "train_err": tr_err,
                        "dev_err": dv_err, "checkpointed": checkpointed})
        if stopper.update(-combined):
            break
    clf.params = best_params
    return clf, history


# ------------------------------------------------------------ generate/eval


def generate(gen: Generator, instances: Sequence[Instance], beam_size: int = 20) -> list[KBestList]:
    return [beam_decode(gen, inst.context, inst.da_tokens, k=beam_size) for inst in instances]


def surface_tokens(tokens: Sequence[str], inst: Instance) -> list[str]:
    """Lexicalize a delexicalized output and re-tokenize it for scoring."""
    # placeholders the map cannot fill (hallucinated indices) are scored as-is
    return tokenize(detokenize([inst.delex_map.get(t, t) for t in tokens]))


def eval_pairs(outputs: Sequence[Sequence[str]], instances: Sequence[Instance]) -> list[EvalPair]:
    return [
        EvalPair(surface_tokens(o, inst), [tokenize(r) for r in inst.raw_refs] or inst.references, inst.da)
        for o, inst in zip(outputs, instances, strict=True)
    ]


def evaluate_outputs(outputs: Sequence[Sequence[str]], instances: Sequence[Instance]) -> dict:
    """BLEU/NIST on lexicalized outputs, ERR on the delexicalized ones.

    ERR is ``None`` when no instance requires a slot placeholder.
    """
    pairs = eval_pairs(outputs, instances)
    try:
        err = slot_error_rate(outputs, [i.da for i in instances])
    except ValueError:
        err = None
    return {"bleu": bleu(pairs), "nist": nist(pairs), "err": err, "n_instances": len(instances)}


# --------------------------------------------------------------- experiments


@dataclass(frozen=True)
class Setup:
    name: str
    label: str
    mode: str
    ngram: bool


DEFAULT_SETUPS = (
    Setup("baseline", "Baseline (context not used)", "baseline", False),
    Setup("ngram", "n-gram match reranker", "baseline", True),
    Setup("prepend", "Prepending context", "prepend", False),
    Setup("prepend+ngram", "  + n-gram match reranker", "prepend", True),
    Setup("dual", "Context encoder", "dual", False),
    Setup("dual+ngram", "  + n-gram match reranker", "dual", True),
)


@dataclass
class ExperimentReport:
    seeds: list[int]
    per_seed: dict[str, list[dict]] = field(default_factory=dict)
    averages: dict[str, dict] = field(default_factory=dict)
    significance: dict[str, dict] = field(default_factory=dict)
    failures: dict[int, str] = field(default_factory=dict)
    labels: dict[str, str] = field(default_factory=dict)
    # setup -> one list of lexicalized probe outputs per successful seed
    probes: dict[str, list[list[str]]] = field(default_factory=dict)

    def to_json(self) -> dict:
        return asdict(self)

    def table(self) -> str:
        lines = [f"{'Setup':<32}{'BLEU':>8}{'NIST':>8}{'ERR':>8}  sig", "-" * 62]
        for name, avg in self.averages.items():
            sig = self.significance.get(name)
            mark = "" if sig is None else ("**" if sig["significant"] else "")
            lines.append(f"{self.labels.get(name, name):<32}{_fmt(avg['bleu'], 8, 2)}{_fmt(avg['nist'], 8, 3)}"
                         f"{_fmt(avg['err'], 8, 3)}  {mark}")
        if self.failures:
            lines.append(f"failed seeds: {sorted(self.failures)}")
        return "\n".join(lines)


def _mean(values):
    values = [v for v in values if v is not None]
    return float(np.mean(values)) if values else None


def _fmt(value, width, digits):
    return f"{'n/a':>{width}}" if value is None else f"{value:>{width}.{digits}f}"


def probe_input(context: str, da_text: str) -> tuple[list[str], DialogueAct, dict[str, str]]:
    """Delexicalized (context, DA, placeholder map) for a raw input with no references."""
    d = delexicalize(tokenize(context), parse_da(da_text))
    return d.tokens, d.da, d.delex_map


def run_seed(config: TrainConfig, train, dev, test, seed: int, setups=DEFAULT_SETUPS, probes=()) -> dict:
    """Train everything one seed needs and decode ``test`` for every setup.

    ``probes`` are extra raw ``(context, da)`` inputs decoded the same way.
    Returns ``{setup: {"outputs": [...], "metrics": {...}, "probes": [...]}}``.
    """
    probes = [probe_input(c, d) for c, d in probes]
    cfg = config.replace(seed=seed)
    clf = None
    if cfg.content_weight:
        clf, _ = train_classifier(cfg, train, dev)
    results = {}
    for mode in dict.fromkeys(s.mode for s in setups):
        gen, _ = train_generator(cfg.replace(mode=mode), train, dev)
        kbests = generate(gen, test, cfg.beam_size)
        probe_kbests = [beam_decode(gen, ctx, da_to_triples(da), k=cfg.beam_size) for ctx, da, _ in probes]
        for setup in (s for s in setups if s.mode == mode):
            w = cfg.replace(mode=mode).resolved_ngram_weight() if setup.ngram else 0.0
            outputs = [
                rerank_kbest(kb, inst.da, inst.context, clf, cfg.content_weight, w).top.tokens
                for kb, inst in zip(kbests, test)
            ]
            probe_out = [
                detokenize([dmap.get(t, t) for t in rerank_kbest(kb, da, ctx, clf, cfg.content_weight, w).top.tokens])
                for kb, (ctx, da, dmap) in zip(probe_kbests, probes)
            ]
            results[setup.name] = {"outputs": outputs, "metrics": evaluate_outputs(outputs, test), "probes": probe_out}
    return results


def run_experiment(config: TrainConfig, train, dev, test, seeds=DEFAULT_SEEDS, setups=DEFAULT_SETUPS,
                   workers: int = 1, significance_resamples: int = 1000, probes=()) -> ExperimentReport:
    """Per-seed runs, averages and paired bootstrap of each setup vs. the first."""
    seeds = list(seeds)
    report = ExperimentReport(seeds, labels={s.name: s.label for s in setups})
    runs: dict[int, dict] = {}
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            futures = {s: pool.submit(run_seed, config, train, dev, test, s, setups, probes) for s in seeds}
            for s, fut in futures.items():
                try:
                    runs[s] = fut.result()
                except Exception as exc:  # noqa: BLE001 - recorded in the report
                    report.failures[s] = repr(exc)
    else:
        for s in seeds:
            try:
                runs[s] = run_seed(config, train, dev, test, s, setups, probes)
            except Exception as exc:  # noqa: BLE001
                log.exception("seed %d failed", s)
                report.failures[s] = repr(exc)
    ok = [s for s in seeds if s in runs]
    for setup in setups:
        rows = [{"seed": s, **runs[s][setup.name]["metrics"]} for s in ok]
        report.per_seed[setup.name] = rows
        if probes:
            report.probes[setup.name] = [runs[s][setup.name]["probes"] for s in ok]
        if rows:
            report.averages[setup.name] = {k: _mean([r[k] for r in rows]) for k in ("bleu", "nist", "err")}
    if ok and len(setups) > 1:
        ref = setups[0].name
        pooled_ref = [p for s in ok for p in eval_pairs(runs[s][ref]["outputs"], test)]
        for setup in setups[1:]:
            pooled = [p for s in ok for p in eval_pairs(runs[s][setup.name]["outputs"], test)]
            res = bootstrap_significance(pooled, pooled_ref, "bleu", significance_resamples, 0.99, seed=0)
            report.significance[setup.name] = {
                "vs": ref,
                "better": res.winner == "a",
                "significant": res.winner == "a" and res.significant,
                "win_fraction": res.win_fraction,
            }
    return report
