#!/usr/bin/env python3
"""End-to-end training demo at toy scale.

Builds a small two-dialect corpus, trains instruction embeddings per dialect,
generates labeled block pairs, trains the two-tower encoder, and prints the
validation AUC per epoch. Takes a couple of minutes on one core with the
defaults; shrink --functions for a faster smoke run.
"""
import argparse
import sys
import time
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from xasm.corpus import Arch, build_vocabulary, normalize_corpus
from xasm.encoder import BlockVectorizer, EncoderConfig, init_params, train
from xasm.instr_embed import SgnsConfig, train_sgns
from xasm.pairgen import (
    gen_dissimilar_pairs,
    gen_similar_pairs,
    split_dataset,
)
from xasm.synth import SynthConfig, make_parallel_corpora


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--functions", type=int, default=60)
    ap.add_argument("--cell", choices=["lstm", "gru", "rnn"], default="lstm")
    ap.add_argument("--epochs", type=int, default=10)
    ap.add_argument("--dims-instr", type=int, default=16)
    ap.add_argument("--dims-block", type=int, default=10)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    t0 = time.time()
    cx, cy = make_parallel_corpora(SynthConfig(
        functions=args.functions, min_len=4, max_len=24, seed=args.seed))
    cx, cy = normalize_corpus(cx), normalize_corpus(cy)

    scfg = SgnsConfig(dims=args.dims_instr, epochs=20, seed=args.seed)
    table = {
        Arch.X86_64: (train_sgns(cx, scfg), build_vocabulary(cx)),
        Arch.ARM: (train_sgns(cy, scfg), build_vocabulary(cy)),
    }
    vectorizer = BlockVectorizer(table, (Arch.X86_64, Arch.ARM))
    print(f"embeddings ready after {time.time() - t0:.1f}s")

    similar = gen_similar_pairs(cx, cy)
    dissimilar = gen_dissimilar_pairs(cx, cy, seed=args.seed,
                                      count=len(similar))
    split = split_dataset(similar + dissimilar, seed=args.seed)
    print(f"pairs: {len(split.train)} train / {len(split.val)} val")

    cfg = EncoderConfig(layers=2, input_dim=args.dims_instr,
                        hidden_dim=args.dims_block, cell=args.cell,
                        lr=0.05, final_lr=0.005, clip_norm=1.0,
                        epochs=args.epochs, seed=args.seed)

    def report(epoch, entry):
        loss, auc = entry
        print(f"epoch {epoch + 1:2d}  train loss {loss:.4f}  val AUC {auc:.4f}")

    best, history = train(init_params(cfg), split.train, split.val,
                          vectorizer, epoch_callback=report)
    print(f"best val AUC {max(a for _, a in history):.4f} "
          f"in {time.time() - t0:.1f}s total")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
