"""Walk through the pipeline on the bundled synthetic transit corpus.

Trains a DA-only generator and a context-prepending one, then looks at
what each produces for a user who asked "is there a later option", before
and after n-gram match reranking.  Takes a minute or two on a laptop CPU.

    python demos/entrainment_demo.py
"""
from __future__ import annotations

import time

from ctxnlg.data import da_to_triples, load_corpus, split_corpus, write_corpus
from ctxnlg.decode import beam_decode
from ctxnlg.harness import (
    TrainConfig,
    evaluate_outputs,
    generate,
    probe_input,
    train_generator,
)
from ctxnlg.rerank import rerank_kbest
from ctxnlg.synthetic import make_corpus

CONTEXT, DA = "is there a later option", "iconfirm(alternative=next)"

# smaller and faster than the defaults; enough for this toy domain
DEMO = dict(embedding=32, hidden=64, attention=64, learning_rate=0.005, min_passes=15, max_passes=40, patience=10)


def show(title, kbest, n=4):
    print(f"  {title}")
    for h in kbest[:n]:
        extra = "".join(f"  {k} {v:+.2f}" for k, v in h.adjustments.items())
        print(f"    {h.score:8.3f}  {' '.join(h.tokens):<36}{extra}")


def main():
    write_corpus(make_corpus(300, seed=0), "/tmp/ctxnlg_demo.jsonl")
    train, dev, test = split_corpus(load_corpus("/tmp/ctxnlg_demo.jsonl"), seed=0)
    print(f"synthetic corpus: {len(train)} train / {len(dev)} dev / {len(test)} test groups\n")

    ctx, da, _ = probe_input(CONTEXT, DA)
    for mode in ("baseline", "prepend"):
        start = time.time()
        gen, history = train_generator(TrainConfig(mode=mode, **DEMO), train, dev)
        best = max(history, key=lambda h: h["dev_bleu"])
        print(f"[{mode}] {len(history)} passes in {time.time() - start:.0f}s, "
              f"best dev BLEU {best['dev_bleu']:.1f} at pass {best['pass']}")

        test_out = [kb.top.tokens for kb in generate(gen, test, beam_size=10)]
        m = evaluate_outputs(test_out, test)
        print(f"  test BLEU {m['bleu']:.2f}  NIST {m['nist']:.3f}  ERR {m['err']:.3f}")

        print(f'  user said: "{CONTEXT}"; system DA: {DA}')
        kbest = beam_decode(gen, ctx, da_to_triples(da), k=10)
        show("beam output", kbest)
        show("after n-gram match reranking (w=5)", rerank_kbest(kbest, da, ctx, ngram_weight=5.0))
        print()


if __name__ == "__main__":
    main()
