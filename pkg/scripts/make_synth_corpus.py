#!/usr/bin/env python3
"""Generate a two-dialect template corpus and write it as corpus JSONL.

The two files share block ids: block i in the x86-flavored file and block i
in the ARM-flavored file render the same template, which is what the pair
generator treats as ground-truth similarity.
"""
import argparse
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from xasm.corpus import normalize_corpus, write_corpus
from xasm.synth import SynthConfig, make_parallel_corpora


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--functions", type=int, default=200)
    ap.add_argument("--blocks-per-function", type=int, default=10)
    ap.add_argument("--min-len", type=int, default=4)
    ap.add_argument("--max-len", type=int, default=24)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--normalize", action="store_true",
                    help="write normalized instead of raw instruction text")
    ap.add_argument("--out-x", default="corpus_x86.jsonl")
    ap.add_argument("--out-y", default="corpus_arm.jsonl")
    args = ap.parse_args()

    cfg = SynthConfig(functions=args.functions,
                      blocks_per_function=args.blocks_per_function,
                      min_len=args.min_len, max_len=args.max_len,
                      seed=args.seed)
    cx, cy = make_parallel_corpora(cfg)
    if args.normalize:
        cx, cy = normalize_corpus(cx), normalize_corpus(cy)
    write_corpus(cx, args.out_x)
    write_corpus(cy, args.out_y)
    print(f"{args.out_x}: {cx.total_instructions()} instructions")
    print(f"{args.out_y}: {cy.total_instructions()} instructions")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
