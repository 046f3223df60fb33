"""Acceptance criteria, one test each.

Every test records a PASS/FAIL line; ``conftest.py`` prints them at the end
of the run.  Criteria 6 to 8 need the published corpus: point
``CTXNLG_DATASET`` at the canonical ``dataset.jsonl`` (or at the release
directory, which is converted on the fly) or place it at
``data/dataset.jsonl``.  ``CTXNLG_MANIFEST`` optionally fixes the split and
``CTXNLG_WORKERS`` sets the number of seed processes.
"""
import json
import math
import os
from pathlib import Path

import numpy as np
import pytest

from ctxnlg.data import load_corpus, prepare_published, apply_manifest, split_corpus
from ctxnlg.decode import beam_search
from ctxnlg.harness import DEFAULT_SEEDS, DEFAULT_SETUPS, TrainConfig, dev_bleu, run_experiment, train_generator
from ctxnlg.metrics import EvalPair, bleu, nist
from ctxnlg.rerank import ngram_match_delta

from .oracles import clipped_precision_oracle
from .toys import TableScorer, enumerate_all, loss_gradient_errors, toy_generator, twenty_instances

ROOT = Path(__file__).resolve().parents[1]
GOLDEN = json.loads((Path(__file__).parent / "golden" / "metrics_golden.json").read_text())
RESULTS: list[str] = []

# the user says "later option" where the usual reply says "next connection"
PROBE = ("is there a later option", "iconfirm(alternative=next)")
REPORTED_BLEU = {"baseline": 66.41, "ngram": 68.68, "prepend+ngram": 69.26, "dual+ngram": 69.17}


def record(number: int, ok: bool, detail: str):
    RESULTS.append(f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}")
    print(RESULTS[-1])
    assert ok, detail


# ------------------------------------------------------------ fast criteria


def test_criterion_1_gradients_match_finite_differences():
    worst = {}
    for mode, extra in [("baseline", {}), ("prepend", {}), ("dual", {}), ("dual", {"dual_align": "concat"})]:
        for seed in (1, 2, 3):
            errors = loss_gradient_errors(toy_generator(mode, seed=seed, **extra))
            for name, err in errors.items():
                key = f"{mode}{'/concat' if extra else ''}:{name}"
                worst[key] = max(worst.get(key, 0.0), err)
    name, err = max(worst.items(), key=lambda kv: kv[1])
    record(1, err <= 1e-5, f"{len(worst)} parameter groups, worst relative error {err:.2e} ({name}), tolerance 1e-5")


def test_criterion_2_wide_beam_equals_exhaustive_enumeration():
    bad = []
    for seed in range(20):
        scorer = TableScorer(vocab_size=4, seed=seed, max_len=3)
        got = [(h.ids, h.logp) for h in beam_search(scorer, k=64, max_len=3)]
        want = [(h.ids, h.logp) for h in enumerate_all(scorer, 3)]
        if got != want:
            bad.append(seed)
    record(2, not bad, f"beam k=64 vs enumeration on 20 rigged vocab-4 models, mismatching seeds: {bad or 'none'}")


def _oracle_delta(hyp, ctx, w):
    p1 = clipped_precision_oracle(hyp, ctx, 1)
    p2 = clipped_precision_oracle(hyp, ctx, 2)
    return 0.0 if p1 * p2 == 0 else w * math.sqrt(p1 * p2)


def test_criterion_3_ngram_reranker_matches_oracle():
    rng = np.random.default_rng(7)
    words = ["is", "there", "a", "later", "option", "you", "want", "connection", "next", "."]
    worst = 0.0
    for _ in range(1000):
        hyp = list(rng.choice(words, size=rng.integers(0, 12)))
        ctx = list(rng.choice(words, size=rng.integers(0, 12)))
        w = float(rng.uniform(0, 20))
        worst = max(worst, abs(ngram_match_delta(hyp, ctx, w) - _oracle_delta(hyp, ctx, w)))
    hand = ngram_match_delta("you want a later connection".split(), "is there a later option".split(), 5.0)
    ok = worst <= 1e-12 and abs(hand - 5 * math.sqrt(0.1)) <= 1e-12 and round(hand, 4) == 1.5811
    record(3, ok, f"1000 random pairs, max |delta - oracle| = {worst:.1e}; hand case {hand:.4f} (expected 1.5811)")


def test_criterion_4_metrics_match_external_implementations():
    gaps = []
    for name, entry in GOLDEN.items():
        if not isinstance(entry, dict) or "pairs" not in entry:
            continue
        pairs = [EvalPair(p["hyp"], p["refs"]) for p in entry["pairs"]]
        if "bleu" in entry:
            gaps.append((f"{name} BLEU", abs(bleu(pairs) - entry["bleu"]), 0.01))
        if "nist" in entry:
            gaps.append((f"{name} NIST", abs(nist(pairs) - entry["nist"]), 0.005))
    ok = bool(gaps) and all(g <= tol for _, g, tol in gaps)
    detail = ", ".join(f"{n} off by {g:.4f}" for n, g, _ in gaps)
    record(4, ok, f"golden corpora: {detail}")


def test_criterion_5_twenty_instances_are_memorized(tmp_path):
    insts = twenty_instances(tmp_path)
    cfg = TrainConfig(max_passes=500)
    gen, history = train_generator(cfg, insts, insts)
    best = dev_bleu(gen, insts)
    first = next((h["pass"] for h in history if h["dev_bleu"] >= 90), None)
    record(5, best >= 90 and len(history) <= 500,
           f"20 instances, default config: dev BLEU {best:.2f} (first >= 90 at pass {first}, {len(history)} passes run)")


# ------------------------------------------------------ published-data criteria


def _locate_dataset(tmp_dir: Path) -> Path | None:
    env = os.environ.get("CTXNLG_DATASET")
    path = Path(env) if env else ROOT / "data" / "dataset.jsonl"
    if not path.exists():
        return None
    if path.is_dir() or path.suffix != ".jsonl":
        out = tmp_dir / "dataset.jsonl"
        prepare_published(path, out)
        return out
    return path


@pytest.fixture(scope="module")
def experiment(tmp_path_factory):
    path = _locate_dataset(tmp_path_factory.mktemp("published"))
    if path is None:
        return None
    instances = load_corpus(path)
    manifest = os.environ.get("CTXNLG_MANIFEST")
    if manifest:
        train, dev, test = apply_manifest(instances, json.loads(Path(manifest).read_text()))
    else:
        train, dev, test = split_corpus(instances, seed=0)
    workers = int(os.environ.get("CTXNLG_WORKERS", os.cpu_count() or 1))
    return run_experiment(TrainConfig(), train, dev, test, seeds=DEFAULT_SEEDS, workers=workers, probes=[PROBE])


MISSING = "published dataset not found (set CTXNLG_DATASET or add data/dataset.jsonl)"


def test_criterion_6_context_setups_beat_the_baseline(experiment):
    if experiment is None:
        record(6, False, MISSING)
    avg = {k: v["bleu"] for k, v in experiment.averages.items()}
    base, rer = avg["baseline"], avg["ngram"]
    checks = {
        "(a) baseline within 5 of 66.41 [informative]": abs(base - REPORTED_BLEU["baseline"]) <= 5,
        "(b) reranker >= baseline + 1.0": rer - base >= 1.0,
        "(c) prepend+ngram >= baseline + 1.5 and >= reranker": avg["prepend+ngram"] - base >= 1.5 and avg["prepend+ngram"] >= rer,
        "(c) dual+ngram >= baseline + 1.5 and >= reranker": avg["dual+ngram"] - base >= 1.5 and avg["dual+ngram"] >= rer,
        "(d) both significant at 99%": all(experiment.significance[s]["significant"] for s in ("prepend+ngram", "dual+ngram")),
    }
    binding = [ok for name, ok in checks.items() if "[informative]" not in name]
    scores = ", ".join(f"{k} {v:.2f}" for k, v in avg.items())
    verdicts = "; ".join(f"{name}: {'yes' if ok else 'no'}" for name, ok in checks.items())
    record(6, all(binding) and not experiment.failures, f"{scores}. {verdicts}")


def test_criterion_7_slot_error_rate(experiment):
    if experiment is None:
        record(7, False, MISSING)
    errs = {k: v["err"] for k, v in experiment.averages.items()}
    ok = all(e is not None and e <= 0.05 for e in errs.values())
    record(7, ok, "test ERR " + ", ".join(f"{k} {'n/a' if e is None else f'{e:.3f}'}" for k, e in errs.items()))


def test_criterion_8_context_words_are_echoed(experiment):
    if experiment is None:
        record(8, False, MISSING)
    aware = [s.name for s in DEFAULT_SETUPS if s.mode != "baseline" or s.ngram]
    hits = {}
    for name in aware:
        outs = [seed_outputs[0] for seed_outputs in experiment.probes[name]]
        hits[name] = sum(bool({"later", "option"} & set(o.split())) for o in outs), len(outs)
    ok = all(2 * h > n for h, n in hits.values())
    detail = ", ".join(f"{k} {h}/{n} seeds" for k, (h, n) in hits.items())
    record(8, ok, f"outputs echoing 'later'/'option' for the entrainment probe: {detail}")
