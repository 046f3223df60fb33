"""Command-line entry point: ``ctxnlg <subcommand> ...``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import fields
from pathlib import Path

from .data import (
    apply_manifest,
    delexicalize,
    load_corpus,
    parse_da,
    prepare_published,
    split_corpus,
    split_manifest,
    tokenize,
    write_corpus,
)
from .decode import kbest_records, read_kbest, write_kbest
from .harness import (
    DEFAULT_SEEDS,
    TrainConfig,
    evaluate_outputs,
    generate,
    run_experiment,
    train_classifier,
    train_generator,
)
from .model import Generator
from .rerank import ContentClassifier, rerank_kbest

log = logging.getLogger("ctxnlg")


# ------------------------------------------------------------------ helpers


def _add_config_flags(p: argparse.ArgumentParser):
    g = p.add_argument_group("training configuration (defaults < --config file < flags)")
    g.add_argument("--config", type=Path, help="JSON file with TrainConfig fields")
    for f in fields(TrainConfig):
        kind = type(f.default) if f.default is not None else float
        g.add_argument("--" + f.name.replace("_", "-"), dest=f.name, type=kind, default=argparse.SUPPRESS)


def _config(args) -> TrainConfig:
    values = json.loads(args.config.read_text()) if getattr(args, "config", None) else {}
    names = {f.name for f in fields(TrainConfig)}
    values.update({k: v for k, v in vars(args).items() if k in names})
    return TrainConfig.from_dict(values)


def _add_data_flags(p: argparse.ArgumentParser, split: bool = False):
    p.add_argument("--data", type=Path, required=True, help="canonical dataset.jsonl")
    p.add_argument("--manifest", type=Path, help="split manifest written by 'prepare'")
    p.add_argument("--split-seed", type=int, default=0, help="used only without --manifest")
    if split:
        p.add_argument("--split", choices=("train", "dev", "test"), default="test")


def _sections(args):
    instances = load_corpus(args.data)
    if args.manifest:
        return apply_manifest(instances, json.loads(args.manifest.read_text()))
    return split_corpus(instances, seed=args.split_seed)


def _section(args):
    return dict(zip(("train", "dev", "test"), _sections(args)))[args.split]


def _write_hyps(path: Path, outputs):
    path.write_text("".join(" ".join(toks) + "\n" for toks in outputs), encoding="utf-8")


def _read_hyps(path: Path) -> list[list[str]]:
    return [line.split() for line in path.read_text(encoding="utf-8").splitlines()]


def _dump(obj):
    print(json.dumps(obj, indent=2))


# -------------------------------------------------------------- subcommands


def cmd_prepare(args):
    if args.synthetic:
        from .synthetic import make_corpus

        n = write_corpus(make_corpus(args.synthetic, seed=args.split_seed), args.output)
    else:
        n = prepare_published(args.input, args.output)
    log.info("wrote %d groups to %s", n, args.output)
    if args.manifest:
        train, dev, test = split_corpus(load_corpus(args.output), seed=args.split_seed)
        args.manifest.write_text(json.dumps(split_manifest(train, dev, test, seed=args.split_seed)) + "\n")
        log.info("split %d/%d/%d groups -> %s", len(train), len(dev), len(test), args.manifest)


def cmd_train(args):
    cfg = _config(args)
    train, dev, _ = _sections(args)
    gen, history = train_generator(cfg, train, dev, log_path=args.log)
    gen.save(args.output)
    best = max(history, key=lambda h: h["dev_bleu"])
    _dump({"passes": len(history), "best_pass": best["pass"], "dev_bleu": best["dev_bleu"]})


def cmd_train_classifier(args):
    cfg = _config(args)
    train, dev, _ = _sections(args)
    clf, history = train_classifier(cfg, train, dev)
    clf.save(args.output)
    if args.log:
        args.log.write_text("".join(json.dumps(h) + "\n" for h in history))
    best = [h for h in history if h["checkpointed"]][-1]
    _dump({"passes": len(history), "best_pass": best["pass"], "train_err": best["train_err"], "dev_err": best["dev_err"]})


def cmd_generate(args):
    gen = Generator.load(args.model)
    if args.max_output_len:
        gen.config.max_output_len = args.max_output_len
    instances = _section(args)
    kbests = generate(gen, instances, args.beam_size)
    write_kbest(args.kbest, [(inst.group_id, kb) for inst, kb in zip(instances, kbests)])
    if args.hyps:
        _write_hyps(args.hyps, [kb.top.tokens for kb in kbests])


def cmd_rerank(args):
    lists = read_kbest(args.kbest)
    clf = ContentClassifier.load(args.classifier) if args.classifier else None
    if args.da is not None:
        raw = parse_da(args.da)
        d = delexicalize(tokenize(args.context or ""), raw)
        inputs = {key: (d.da, d.tokens) for key in lists}
    elif args.data is not None:
        by_id = {inst.group_id: inst for inst in load_corpus(args.data)}
        inputs = {key: (by_id[key].da, by_id[key].context) for key in lists}
    else:
        raise ValueError("rerank needs either --da (and --context) or --data")
    out = [(key, rerank_kbest(kb, *inputs[key], clf, args.content_weight, args.ngram_weight)) for key, kb in lists.items()]
    if args.output:
        write_kbest(args.output, out)
    else:
        for key, kb in out:
            for rec in kbest_records(key, kb):
                print(json.dumps(rec))
    if args.hyps:
        _write_hyps(args.hyps, [kb.top.tokens for _, kb in out])


def cmd_evaluate(args):
    args.data = args.refs
    instances = _section(args)
    outputs = _read_hyps(args.hyps)
    if len(outputs) != len(instances):
        raise ValueError(f"{args.hyps} has {len(outputs)} lines but the {args.split} section has {len(instances)} instances")
    _dump(evaluate_outputs(outputs, instances))


def cmd_experiment(args):
    cfg = _config(args)
    train, dev, test = _sections(args)
    report = run_experiment(cfg, train, dev, test, seeds=args.seeds, workers=args.workers,
                            significance_resamples=args.resamples)
    if args.report:
        args.report.write_text(json.dumps(report.to_json(), indent=2) + "\n")
    print(report.table())
    return 1 if report.failures else 0


# ------------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ctxnlg", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", help="convert a published release into dataset.jsonl")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--input", type=Path, help="published dataset directory or file")
    src.add_argument("--synthetic", type=int, metavar="N", help="write N synthetic demo groups instead")
    p.add_argument("--output", type=Path, required=True)
    p.add_argument("--manifest", type=Path, help="also write a 3:1:1 split manifest here")
    p.add_argument("--split-seed", type=int, default=0)
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("train", help="train a generator")
    _add_data_flags(p)
    _add_config_flags(p)
    p.add_argument("--output", type=Path, required=True, help="model JSON")
    p.add_argument("--log", type=Path, help="per-pass JSON-lines training log")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("train-classifier", help="train the content classifier")
    _add_data_flags(p)
    _add_config_flags(p)
    p.add_argument("--output", type=Path, required=True, help="classifier JSON")
    p.add_argument("--log", type=Path)
    p.set_defaults(func=cmd_train_classifier)

    p = sub.add_parser("generate", help="beam-decode a section into k-best lists")
    _add_data_flags(p, split=True)
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--beam-size", type=int, default=20)
    p.add_argument("--max-output-len", type=int)
    p.add_argument("--kbest", type=Path, required=True, help="k-best JSON lines to write")
    p.add_argument("--hyps", type=Path, help="top outputs, one per line")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("rerank", help="rerank k-best lists")
    p.add_argument("--kbest", type=Path, required=True)
    p.add_argument("--da", help="input DA applied to every list in the file")
    p.add_argument("--context", help="preceding user utterance (with --da)")
    p.add_argument("--data", type=Path, help="dataset.jsonl; lists are matched by group id")
    p.add_argument("--classifier", type=Path)
    p.add_argument("--content-weight", type=float, default=0.0)
    p.add_argument("--ngram-weight", type=float, default=0.0)
    p.add_argument("--output", type=Path, help="defaults to stdout")
    p.add_argument("--hyps", type=Path)
    p.set_defaults(func=cmd_rerank)

    p = sub.add_parser("evaluate", help="BLEU, NIST and ERR of one output per instance")
    p.add_argument("--hyps", type=Path, required=True, help="delexicalized outputs, one per line")
    p.add_argument("--refs", type=Path, required=True, help="canonical dataset.jsonl")
    p.add_argument("--manifest", type=Path)
    p.add_argument("--split-seed", type=int, default=0)
    p.add_argument("--split", choices=("train", "dev", "test"), default="test")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("experiment", help="multi-seed comparison of all setups")
    _add_data_flags(p)
    _add_config_flags(p)
    p.add_argument("--seeds", type=int, nargs="+", default=list(DEFAULT_SEEDS))
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--resamples", type=int, default=1000, help="bootstrap resamples")
    p.add_argument("--report", type=Path, help="JSON report")
    p.set_defaults(func=cmd_experiment)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args) or 0
    except (OSError, ValueError, KeyError, RuntimeError) as exc:
        print(f"ctxnlg {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
