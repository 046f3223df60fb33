import json
import math
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ctxnlg.data import DaItem, DialogueAct
from ctxnlg.metrics import (
    EvalPair,
    bleu,
    bootstrap_significance,
    nist,
    nist_length_penalty,
    slot_error_rate,
    slot_errors,
)

from .oracles import mteval_nist

GOLDEN = json.loads((Path(__file__).parent / "golden" / "metrics_golden.json").read_text())


def _pairs(name):
    return [EvalPair(p["hyp"], p["refs"]) for p in GOLDEN[name]["pairs"]]


# ------------------------------------------------------------ golden values


@pytest.mark.parametrize("name", ["multi_ref", "single_ref", "sparse"])
def test_bleu_matches_reference_implementation(name):
    assert abs(bleu(_pairs(name)) - GOLDEN[name]["bleu"]) <= 0.01


@pytest.mark.parametrize("name", ["multi_ref", "sparse"])
def test_smoothed_bleu_matches_reference_implementation(name):
    assert abs(bleu(_pairs(name), smooth=True) - GOLDEN[name]["bleu_exp_smoothed"]) <= 0.01


def test_nist_matches_reference_implementation():
    assert abs(nist(_pairs("single_ref")) - GOLDEN["single_ref"]["nist"]) <= 0.005


def test_multi_reference_nist_matches_mteval_transcription():
    pairs = _pairs("multi_ref")
    expected = mteval_nist([(p.hyp, p.refs) for p in pairs])
    assert nist(pairs) == pytest.approx(expected, abs=1e-9)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000))
def test_random_corpora_nist_matches_mteval_transcription(seed):
    rng = np.random.default_rng(seed)
    words = list("abcdef")
    pairs = []
    for _ in range(rng.integers(1, 6)):
        refs = [list(rng.choice(words, size=rng.integers(1, 8))) for _ in range(rng.integers(1, 4))]
        pairs.append(EvalPair(list(rng.choice(words, size=rng.integers(1, 9))), refs))
    expected = mteval_nist([(p.hyp, p.refs) for p in pairs])
    assert nist(pairs) == pytest.approx(expected, abs=1e-9)


# ---------------------------------------------------------------- BLEU cases


def test_bleu_of_references_is_exactly_100():
    pairs = [EvalPair(p.refs[1], p.refs) for p in _pairs("multi_ref")]
    assert bleu(pairs) == 100.0


def test_bleu_without_shared_unigrams_is_zero():
    assert bleu([EvalPair(["x", "y", "z"], [["a", "b", "c"]])]) == 0.0


def test_bleu_brevity_penalty_uses_closest_reference():
    hyp = ["a", "b", "c", "d"]
    refs = [["a", "b", "c", "d", "e", "f", "g", "h"], ["a", "b", "c", "d"]]
    assert bleu([EvalPair(hyp, refs)]) == 100.0
    short = bleu([EvalPair(hyp, [refs[0]])])
    assert short == pytest.approx(100 * math.exp(1 - 8 / 4), abs=1e-9)


def test_bleu_rejects_empty_input():
    with pytest.raises(ValueError):
        bleu([])


@pytest.mark.parametrize("metric", [bleu, nist])
def test_all_empty_hypotheses_score_zero(metric):
    assert metric([EvalPair([], [["a", "b"]]), EvalPair([], [["c"]])]) == 0.0


def test_pairs_need_references():
    with pytest.raises(ValueError):
        EvalPair(["a"], [])


@pytest.mark.parametrize("metric", [bleu, nist])
def test_corpus_scores_ignore_pair_order(metric):
    pairs = _pairs("multi_ref")
    shuffled = [pairs[i] for i in np.random.default_rng(0).permutation(len(pairs))]
    assert metric(shuffled) == pytest.approx(metric(pairs), abs=1e-12)


def test_nist_without_overlap_is_zero():
    assert nist([EvalPair(["x", "y"], [["a", "b"]]), EvalPair(["z"], [["c", "d"]])]) == 0.0


def test_nist_of_single_reference_echo_is_the_information_bound():
    pairs = _pairs("single_ref")
    echo = [EvalPair(p.refs[0], p.refs) for p in pairs]
    # with hypotheses equal to the references every n-gram is matched,
    # so the score is the average information per n-gram, summed over n
    assert nist(echo) == pytest.approx(mteval_nist([(p.hyp, p.refs) for p in echo]), abs=1e-9)
    assert nist(echo) > nist(pairs)


def test_nist_length_penalty_shape():
    assert nist_length_penalty(1.0) == 1.0
    assert nist_length_penalty(1.7) == 1.0
    assert nist_length_penalty(2 / 3) == pytest.approx(0.5, abs=1e-12)
    assert nist_length_penalty(0.0) == 0.0


# ---------------------------------------------------------- slot error rate


def _da(*values):
    return DialogueAct(tuple(DaItem("inform", f"s{i}", v) for i, v in enumerate(values)))


def test_err_perfect_realization_is_zero():
    da = _da("*STOP1*", "*TIME*", "bus")
    assert slot_error_rate([["from", "*STOP1*", "at", "*TIME*"]], [da]) == 0.0


def test_err_counts_missing_and_duplicated_placeholders():
    da = _da("*STOP1*", "*STOP2*", "*TIME*", "*LINE*", "*AMPM*")
    out = ["*STOP1*", "*STOP1*", "*TIME*", "*LINE*", "*AMPM*"]
    assert slot_errors(out, da) == (2, 5)
    assert slot_error_rate([out], [da]) == pytest.approx(2 / 5)


def test_err_aggregates_over_the_corpus():
    das = [_da("*STOP*"), _da("*STOP*", "*TIME*", "*LINE*")]
    outs = [[], ["*STOP*", "*TIME*", "*LINE*", "*LINE*"]]
    assert slot_error_rate(outs, das) == pytest.approx(2 / 4)


@given(st.lists(st.sampled_from(["the", "bus", "at", ".", "later"]), max_size=8))
def test_err_ignores_lexical_tokens(words):
    da = _da("*STOP*", "*TIME*")
    base = ["*STOP*", "*TIME*"]
    assert slot_error_rate([base + words], [da]) == slot_error_rate([base], [da])


def test_err_needs_some_required_slots():
    with pytest.raises(ValueError):
        slot_error_rate([["hello"]], [_da("bus")])


# ----------------------------------------------------------------- bootstrap


def test_identical_systems_are_not_significant():
    pairs = _pairs("multi_ref")
    res = bootstrap_significance(pairs, pairs, resamples=200)
    assert res.winner is None and not res.significant


def test_dominant_system_is_significant():
    base = _pairs("multi_ref")
    perfect = [EvalPair(p.refs[0], p.refs) for p in base]
    for metric in ("bleu", "nist"):
        res = bootstrap_significance(perfect, base, metric=metric, resamples=300)
        assert res.winner == "a" and res.significant


def test_bootstrap_is_deterministic_for_a_seed():
    a, b = _pairs("multi_ref"), [EvalPair(p.refs[2], p.refs) for p in _pairs("multi_ref")]
    assert bootstrap_significance(a, b, seed=3, resamples=200) == bootstrap_significance(a, b, seed=3, resamples=200)


def test_bootstrap_accepts_a_metric_callable():
    base = _pairs("sparse")
    perfect = [EvalPair(p.refs[0], p.refs) for p in base]
    res = bootstrap_significance(perfect, base, metric=lambda ps: bleu(ps, smooth=True), resamples=100)
    assert res.winner == "a"


def test_bootstrap_rejects_mismatched_instances():
    a = _pairs("multi_ref")
    with pytest.raises(ValueError):
        bootstrap_significance(a, a[:-1])
    b = [EvalPair(p.hyp, p.refs[:1]) for p in a]
    with pytest.raises(ValueError):
        bootstrap_significance(a, b)


def _noisy(rng, ref, rate, words):
    return [rng.choice(words) if rng.random() < rate else w for w in ref]


def test_gap_near_three_points_at_test_set_scale_is_significant():
    # two systems that agree on half of 360 test instances and differ, with
    # independent errors, on the rest; A makes fewer word errors where they differ
    rng = np.random.default_rng(0)
    words = [f"w{i}" for i in range(40)]
    refs = [[list(rng.choice(words, size=rng.integers(6, 14))) for _ in range(3)] for _ in range(360)]
    shared = [_noisy(rng, r[0], 0.2, words) for r in refs]
    differs = rng.random(360) < 0.5
    a = [EvalPair(_noisy(rng, s, 0.13, words) if d else s, r) for s, d, r in zip(shared, differs, refs)]
    b = [EvalPair(_noisy(rng, s, 0.2, words) if d else s, r) for s, d, r in zip(shared, differs, refs)]
    gap = bleu(a) - bleu(b)
    assert 2.5 <= gap <= 3.1
    res = bootstrap_significance(a, b, resamples=1000, level=0.99)
    assert res.winner == "a" and res.significant
