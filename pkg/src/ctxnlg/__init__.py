"""Context-aware seq2seq generation for task-oriented dialogue."""
from .data import DialogueAct, DaItem, Instance, load_corpus, parse_da, split_corpus
from .decode import Hypothesis, KBestList, beam_decode, beam_search, greedy_decode
from .harness import TrainConfig, run_experiment, train_classifier, train_generator
from .metrics import EvalPair, bleu, bootstrap_significance, nist, slot_error_rate
from .model import Generator, ModelConfig
from .rerank import ContentClassifier, DaElementInventory, ngram_match_rescore, rerank_kbest

__all__ = [
    "ContentClassifier", "DaElementInventory", "DaItem", "DialogueAct", "EvalPair", "Generator", "Hypothesis",
    "Instance", "KBestList", "ModelConfig", "TrainConfig", "beam_decode", "beam_search", "bleu",
    "bootstrap_significance", "greedy_decode", "load_corpus", "ngram_match_rescore", "nist", "parse_da",
    "rerank_kbest", "run_experiment", "slot_error_rate", "split_corpus", "train_classifier", "train_generator",
]

__version__ = "0.1.0"
