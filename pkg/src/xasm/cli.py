"""Command line driver for the whole pipeline.

Every artifact-producing subcommand drops a `<out>.manifest.json` next to its
output recording the flags, seeds, input digests, tool version, and wall
time. Timing lives only in the manifest, never in a primary output, so runs
with identical inputs and seeds stay byte-identical in `--jobs 1` mode.

Exit codes: 0 success, 1 usage error, 2 data error. Set XASM_LOG=DEBUG (or
INFO, WARNING, ...) to change log verbosity.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import time
from pathlib import Path

from . import __version__
from .corpus import (
    Arch,
    Corpus,
    build_vocabulary,
    oov_rate,
    parse_cfg,
    parse_corpus,
    vocab_growth,
    write_corpus,
)
from .encoder import (
    BlockEncoder,
    BlockVectorizer,
    EncoderConfig,
    gradient_check,
    init_params,
    load_encoder,
    save_encoder,
    train,
)
from .errors import BadConfig, DataError
from .evalmetrics import roc_auc, write_roc_csv
from .instr_embed import (
    SgnsConfig,
    export_tsv,
    load_embeddings,
    save_embeddings,
    train_sgns,
)
from .matcher import component_score
from .pairgen import (
    gen_dissimilar_pairs,
    gen_similar_pairs,
    read_pairs,
    split_dataset,
    write_pairs,
)
from . import lsh

log = logging.getLogger("xasm")


class _Parser(argparse.ArgumentParser):
    """argparse exits 2 on usage errors; the contract here is 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _setup_logging() -> None:
    level_name = os.environ.get("XASM_LOG", "WARNING").upper()
    level = getattr(logging, level_name, None)
    if not isinstance(level, int):
        level = logging.WARNING
    logging.basicConfig(level=level,
                        format="%(levelname)s %(name)s: %(message)s")


def _sha256(path: str) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _jsonable(value):
    if isinstance(value, (str, int, float, bool)) or value is None:
        return value
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    return str(value)


def write_manifest(out_path: str, args: argparse.Namespace,
                   inputs: list[str], started: float) -> None:
    flags = {k: _jsonable(v) for k, v in sorted(vars(args).items())
             if k not in ("func", "subcommand")}
    doc = {
        "subcommand": args.subcommand,
        "flags": flags,
        "seeds": {"seed": getattr(args, "seed", None)},
        "inputs": {p: _sha256(p) for p in inputs},
        "version": __version__,
        "timings": {"wall_seconds": time.time() - started},
    }
    with open(f"{out_path}.manifest.json", "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_json(path: str, doc) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _arch(value: str) -> Arch:
    try:
        return Arch(value)
    except ValueError:
        raise argparse.ArgumentTypeError(
            f"unknown architecture {value!r}; choose from "
            + ", ".join(a.value for a in Arch))


def _corpus_for_arch(corpus: Corpus, arch: Arch | None) -> Corpus:
    if arch is None:
        return corpus
    return Corpus([fn for fn in corpus.functions if fn.arch == arch])


# --------------------------------------------------------------- commands


def cmd_normalize(args) -> int:
    started = time.time()
    corpus = parse_corpus(args.corpus, normalize=True)
    write_corpus(corpus, args.out)
    write_manifest(args.out, args, [args.corpus], started)
    return 0


def cmd_vocab(args) -> int:
    started = time.time()
    corpus = parse_corpus(args.corpus, normalize=False)
    vocab = build_vocabulary(corpus)
    report = {
        "tokens": len(vocab),
        "instructions": corpus.total_instructions(),
        "growth": [[frac, size] for frac, size in
                   vocab_growth(corpus, args.parts)],
    }
    inputs = [args.corpus]
    if args.heldout:
        heldout = parse_corpus(args.heldout, normalize=False)
        report["oov_rate"] = oov_rate(vocab, heldout)
        inputs.append(args.heldout)
    _write_json(args.out, report)
    write_manifest(args.out, args, inputs, started)
    return 0


def cmd_train_embed(args) -> int:
    started = time.time()
    corpus = _corpus_for_arch(parse_corpus(args.corpus, normalize=False),
                              args.arch)
    cfg = SgnsConfig(dims=args.dims_instr, window=args.window,
                     negatives=args.negatives, epochs=args.epochs,
                     lr=args.lr, seed=args.seed)
    matrix = train_sgns(corpus, cfg, jobs=args.jobs)
    vocab = build_vocabulary(corpus)
    save_embeddings(args.out, matrix, vocab)
    if args.tsv:
        export_tsv(args.tsv, matrix, vocab)
    write_manifest(args.out, args, [args.corpus], started)
    return 0


def cmd_pairs(args) -> int:
    started = time.time()
    cx = parse_corpus(args.corpus_x, normalize=False)
    cy = parse_corpus(args.corpus_y, normalize=False)
    similar = gen_similar_pairs(cx, cy)
    dissimilar = gen_dissimilar_pairs(cx, cy, n=args.ngram,
                                      theta=args.theta_ngram,
                                      seed=args.seed, count=args.count)
    fractions = tuple(float(x) for x in args.split.split(","))
    split = split_dataset(similar + dissimilar, fractions=fractions,
                          seed=args.seed)
    prefix = args.out_prefix
    write_pairs(f"{prefix}.train.jsonl", split.train)
    write_pairs(f"{prefix}.val.jsonl", split.val)
    write_pairs(f"{prefix}.test.jsonl", split.test)
    log.info("pairs: %d similar, %d dissimilar, %d dropped by split",
             len(similar), len(dissimilar), split.dropped)
    write_manifest(prefix, args, [args.corpus_x, args.corpus_y], started)
    return 0


def _load_vectorizer(args) -> BlockVectorizer:
    mx, vx = load_embeddings(args.embed_x)
    my, vy = load_embeddings(args.embed_y)
    if mx.dims != my.dims:
        raise BadConfig(f"embedding dims disagree: {mx.dims} vs {my.dims}")
    table = {args.arch_x: (mx, vx), args.arch_y: (my, vy)}
    return BlockVectorizer(table, (args.arch_x, args.arch_y))


def _load_encoder_stack(args) -> BlockEncoder:
    params, _ = load_encoder(args.model)
    return BlockEncoder(params, _load_vectorizer(args))


def cmd_train_encoder(args) -> int:
    started = time.time()
    vectorizer = _load_vectorizer(args)
    train_pairs = read_pairs(args.train_pairs)
    val_pairs = read_pairs(args.val_pairs)
    dims = vectorizer.embeddings[args.arch_x][0].dims
    cfg = EncoderConfig(layers=args.layers, input_dim=dims,
                        hidden_dim=args.dims_block, cell=args.cell,
                        lr=args.lr, final_lr=args.final_lr,
                        clip_norm=args.clip_norm,
                        epochs=args.epochs, seed=args.seed,
                        forget_on_candidate=args.forget_on_candidate,
                        patience=args.patience)
    best, history = train(init_params(cfg), train_pairs, val_pairs, vectorizer)
    save_encoder(args.out, best, history=history, extra_meta={
        "tower_archs": [args.arch_x.value, args.arch_y.value]})
    if history:
        log.info("best validation AUC %.4f", max(a for _, a in history))
    write_manifest(args.out, args,
                   [args.train_pairs, args.val_pairs, args.embed_x,
                    args.embed_y], started)
    return 0


def cmd_embed(args) -> int:
    started = time.time()
    encoder = _load_encoder_stack(args)
    items = []
    if args.cfg:
        graph = parse_cfg(args.input)
        for i, block in enumerate(graph.nodes):
            items.append([i, [float(x) for x in encoder.embed(block)]])
    else:
        corpus = parse_corpus(args.input, normalize=False)
        for fi, fn in enumerate(corpus.functions):
            for block in fn.blocks:
                key = f"{fi}:{block.id}"
                items.append([key, [float(x) for x in encoder.embed(block)]])
    doc = {
        "kind": "block-embeddings",
        "dims": encoder.params.config.hidden_dim,
        "items": items,
    }
    _write_json(args.out, doc)
    write_manifest(args.out, args,
                   [args.input, args.model, args.embed_x, args.embed_y],
                   started)
    return 0


def _read_block_store(path: str) -> tuple[int, list]:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if not isinstance(doc, dict) or doc.get("kind") != "block-embeddings":
        from .errors import MalformedRecord

        raise MalformedRecord(f"{path} is not a block embedding store")
    return doc["dims"], doc["items"]


def cmd_index(args) -> int:
    started = time.time()
    dims, items = _read_block_store(args.store)
    index = lsh.build_index(((key, vec) for key, vec in items), dims=dims,
                            tables=args.tables, bits=args.bits,
                            seed=args.seed)
    lsh.save_index(index, args.out)
    write_manifest(args.out, args, [args.store], started)
    return 0


def cmd_query_block(args) -> int:
    started = time.time()
    index = lsh.load_index(args.index)
    encoder = _load_encoder_stack(args)
    corpus = parse_corpus(args.query, normalize=False)
    blocks = list(corpus.iter_blocks())
    if args.ordinal < 0 or args.ordinal >= len(blocks):
        raise BadConfig(f"query corpus has {len(blocks)} blocks; "
                        f"ordinal {args.ordinal} is out of range")
    vector = encoder.embed(blocks[args.ordinal])
    hits = lsh.query(index, vector, theta=args.theta_sebb,
                     exact=args.exact_scan)
    doc = {"query_ordinal": args.ordinal,
           "theta": args.theta_sebb,
           "hits": [[key, sim] for key, sim in hits[:args.limit]]}
    if args.out:
        _write_json(args.out, doc)
        write_manifest(args.out, args,
                       [args.index, args.query, args.model], started)
    else:
        json.dump(doc, sys.stdout, indent=2, sort_keys=True)
        sys.stdout.write("\n")
    return 0


def cmd_query_component(args) -> int:
    started = time.time()
    encoder = _load_encoder_stack(args)
    query = parse_cfg(args.query_cfg)
    target = parse_cfg(args.target_cfg)
    report = component_score(query, target, encoder, theta=args.theta_sebb,
                             coverage=args.coverage, exact=args.exact_scan,
                             jobs=args.jobs)
    doc = report.to_dict()
    if args.out:
        _write_json(args.out, doc)
        write_manifest(args.out, args,
                       [args.query_cfg, args.target_cfg, args.model], started)
    else:
        json.dump(doc, sys.stdout, indent=2, sort_keys=True)
        sys.stdout.write("\n")
    return 0


def _read_scored_csv(path: str):
    from .errors import MalformedRecord

    scored = []
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip()
        if header != "score,label":
            raise MalformedRecord(f"{path}: expected header 'score,label'")
        for ln, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            try:
                score_text, label_text = line.split(",")
                scored.append((float(score_text), int(label_text)))
            except ValueError as exc:
                raise MalformedRecord(f"bad row: {line!r}", line=ln) from exc
    return scored


def cmd_eval(args) -> int:
    started = time.time()
    inputs = []
    if args.scored:
        scored = _read_scored_csv(args.scored)
        inputs.append(args.scored)
    else:
        encoder = _load_encoder_stack(args)
        pairs = read_pairs(args.pairs)
        scored = [(encoder.similarity(p.a, p.b), p.label) for p in pairs]
        inputs.extend([args.pairs, args.model])
    auc, curve = roc_auc(scored)
    print(f"auc={auc!r}")
    if args.roc_out:
        write_roc_csv(args.roc_out, curve)
        write_manifest(args.roc_out, args, inputs, started)
    return 0


def cmd_gradcheck(args) -> int:
    import numpy as np

    cfg = EncoderConfig(layers=args.layers, input_dim=args.dims_instr,
                        hidden_dim=args.dims_block, cell=args.cell,
                        seed=args.seed,
                        forget_on_candidate=args.forget_on_candidate)
    params = init_params(cfg)
    rng = np.random.default_rng(args.seed)
    seq1 = rng.normal(size=(args.steps, args.dims_instr))
    seq2 = rng.normal(size=(max(1, args.steps - 1), args.dims_instr))
    err = gradient_check(params, (seq1, 0, seq2, 1, 1), eps=args.eps)
    ok = bool(err < args.tol)
    print(json.dumps({"max_rel_err": err, "tol": args.tol, "ok": ok}))
    return 0 if ok else 2


# ----------------------------------------------------------------- parser


def build_parser() -> _Parser:
    parser = _Parser(prog="xasm",
                     description="cross-architecture binary block similarity")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="subcommand", required=True,
                                metavar="SUBCOMMAND")

    def add(name: str, help_text: str, func):
        p = sub.add_parser(name, help=help_text)
        p.set_defaults(func=func)
        return p

    p = add("normalize", "rewrite a raw corpus into normalized form",
            cmd_normalize)
    p.add_argument("corpus")
    p.add_argument("--out", required=True)

    p = add("vocab", "vocabulary growth and OOV report", cmd_vocab)
    p.add_argument("corpus")
    p.add_argument("--parts", type=int, default=10)
    p.add_argument("--heldout", help="corpus scored for OOV against the vocab")
    p.add_argument("--out", required=True)

    p = add("train-embed", "train instruction embeddings", cmd_train_embed)
    p.add_argument("corpus")
    p.add_argument("--arch", type=_arch, default=None,
                   help="restrict to one architecture before training")
    p.add_argument("--dims-instr", type=int, default=100)
    p.add_argument("--window", type=int, default=2)
    p.add_argument("--negatives", type=int, default=5)
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--lr", type=float, default=0.025)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jobs", type=int, default=1,
                   help="more than 1 trades determinism for speed")
    p.add_argument("--tsv", help="also export vectors as TSV")
    p.add_argument("--out", required=True)

    p = add("pairs", "generate similar/dissimilar pairs and split them",
            cmd_pairs)
    p.add_argument("corpus_x")
    p.add_argument("corpus_y")
    p.add_argument("--ngram", type=int, default=4)
    p.add_argument("--theta-ngram", type=float, default=0.5,
                   help="max n-gram similarity a dissimilar pair may have")
    p.add_argument("--count", type=int, default=None,
                   help="dissimilar pair count (default: match similar)")
    p.add_argument("--split", default="0.8,0.1,0.1")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-prefix", required=True)

    p = add("train-encoder", "train the two-tower block encoder",
            cmd_train_encoder)
    p.add_argument("train_pairs")
    p.add_argument("val_pairs")
    p.add_argument("--embed-x", required=True)
    p.add_argument("--embed-y", required=True)
    p.add_argument("--arch-x", type=_arch, default=Arch.X86_64)
    p.add_argument("--arch-y", type=_arch, default=Arch.ARM)
    p.add_argument("--dims-block", type=int, default=50)
    p.add_argument("--layers", type=int, default=2)
    p.add_argument("--cell", choices=["lstm", "gru", "rnn"], default="lstm")
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--lr", type=float, default=0.05)
    p.add_argument("--final-lr", type=float, default=None,
                   help="decay the learning rate linearly to this value")
    p.add_argument("--clip-norm", type=float, default=None,
                   help="rescale per-pair gradients above this global norm")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--patience", type=int, default=None)
    p.add_argument("--forget-on-candidate", action="store_true",
                   help="apply the forget gate to the candidate cell state")
    p.add_argument("--out", required=True)

    def add_stack_flags(p):
        p.add_argument("--model", required=True)
        p.add_argument("--embed-x", required=True)
        p.add_argument("--embed-y", required=True)
        p.add_argument("--arch-x", type=_arch, default=Arch.X86_64)
        p.add_argument("--arch-y", type=_arch, default=Arch.ARM)

    p = add("embed", "embed corpus or CFG blocks into a vector store",
            cmd_embed)
    p.add_argument("input")
    p.add_argument("--cfg", action="store_true",
                   help="input is a CFG file, not a corpus")
    add_stack_flags(p)
    p.add_argument("--out", required=True)

    p = add("index", "build a similarity index over a vector store",
            cmd_index)
    p.add_argument("store")
    p.add_argument("--tables", type=int, default=8)
    p.add_argument("--bits", type=int, default=12)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = add("query-block", "nearest stored blocks for one query block",
            cmd_query_block)
    p.add_argument("index")
    p.add_argument("query", help="corpus holding the query block")
    p.add_argument("--ordinal", type=int, default=0,
                   help="which block of the query corpus to use")
    add_stack_flags(p)
    p.add_argument("--theta-sebb", type=float, default=0.5)
    p.add_argument("--exact-scan", action="store_true")
    p.add_argument("--limit", type=int, default=20)
    p.add_argument("--out")

    p = add("query-component", "score a query CFG against a target CFG",
            cmd_query_component)
    p.add_argument("query_cfg")
    p.add_argument("target_cfg")
    add_stack_flags(p)
    p.add_argument("--theta-sebb", type=float, default=0.5)
    p.add_argument("--coverage", type=float, default=0.8)
    p.add_argument("--exact-scan", action="store_true")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out")

    p = add("eval", "ROC and AUC for scored pairs", cmd_eval)
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--scored", help="CSV of score,label rows")
    group.add_argument("--pairs", help="pair file scored with --model")
    p.add_argument("--model")
    p.add_argument("--embed-x")
    p.add_argument("--embed-y")
    p.add_argument("--arch-x", type=_arch, default=Arch.X86_64)
    p.add_argument("--arch-y", type=_arch, default=Arch.ARM)
    p.add_argument("--roc-out", help="write the ROC curve as CSV")

    p = add("gradcheck", "finite-difference check of encoder gradients",
            cmd_gradcheck)
    p.add_argument("--cell", choices=["lstm", "gru", "rnn"], default="lstm")
    p.add_argument("--layers", type=int, default=2)
    p.add_argument("--dims-instr", type=int, default=8)
    p.add_argument("--dims-block", type=int, default=6)
    p.add_argument("--steps", type=int, default=3)
    p.add_argument("--eps", type=float, default=1e-5)
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--forget-on-candidate", action="store_true")

    return parser


def main(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "pairs", None) is not None and args.subcommand == "eval":
        for needed in ("model", "embed_x", "embed_y"):
            if getattr(args, needed) is None:
                parser.error(f"--pairs requires --{needed.replace('_', '-')}")
    try:
        return args.func(args)
    except DataError as exc:
        log.error("%s", exc)
        print(f"xasm: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"xasm: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
