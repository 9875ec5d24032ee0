"""Training-pair construction and leakage-safe dataset splits.

Similar pairs match block IDs across two architectures. Dissimilar pairs take
an ID-matched block on one side and a same-architecture witness whose 4-gram
Jaccard similarity to the matched block stays under a threshold; the emitted
pair crosses architectures, the witness comparison never does.

Splits partition distinct blocks first and keep only pairs whose two blocks
fall in the same part, so no block text appears in more than one split.
"""

from __future__ import annotations

import json
import random
from collections import Counter
from dataclasses import dataclass
from pathlib import Path

from .corpus import Arch, BasicBlock, Corpus, Opt
from .errors import ArchMismatch, BadFractions, MalformedRecord, OptMismatch


@dataclass(frozen=True)
class BlockPair:
    a: BasicBlock
    b: BasicBlock
    label: int


@dataclass
class SplitSet:
    train: list[BlockPair]
    val: list[BlockPair]
    test: list[BlockPair]
    fractions: tuple[float, float, float]
    dropped: int


def _grams(block: BasicBlock, n: int) -> Counter:
    # Grams run over mnemonics, not whole instructions: register allocation
    # is unstable across renderings, and operand text would hide structural
    # overlap between blocks that compute the same thing.
    toks = tuple(t.split(None, 1)[0] for t in block.instrs)
    if len(toks) < n:
        return Counter({toks: 1})
    return Counter(toks[i:i + n] for i in range(len(toks) - n + 1))


def ngram_similarity(a: BasicBlock, b: BasicBlock, n: int = 4) -> float:
    """Multiset Jaccard over mnemonic n-grams of two same-arch blocks."""
    if a.arch != b.arch:
        raise ArchMismatch(f"{a.arch.value} vs {b.arch.value}")
    if a.opt != b.opt:
        raise OptMismatch(f"{a.opt.value} vs {b.opt.value}")
    ga, gb = _grams(a, n), _grams(b, n)
    inter = sum((ga & gb).values())
    union = sum((ga | gb).values())
    return inter / union


def _blocks_by_id(corpus: Corpus) -> dict[int, list[BasicBlock]]:
    out: dict[int, list[BasicBlock]] = {}
    for block in corpus.iter_blocks():
        out.setdefault(block.id, []).append(block)
    return out


def _corpus_arch(corpus: Corpus) -> Arch:
    archs = corpus.archs()
    if len(archs) != 1:
        raise ArchMismatch(f"expected a single-arch corpus, got {sorted(a.value for a in archs)}")
    return next(iter(archs))


def gen_similar_pairs(cx: Corpus, cy: Corpus) -> list[BlockPair]:
    """Label-1 pairs for every block ID present in both corpora.

    Duplicate (text, text) combinations are emitted once.
    """
    ax, ay = _corpus_arch(cx), _corpus_arch(cy)
    if ax == ay:
        raise ArchMismatch("similar pairs need two different architectures")
    by_x, by_y = _blocks_by_id(cx), _blocks_by_id(cy)
    pairs = []
    seen = set()
    for bid in sorted(set(by_x) & set(by_y)):
        for bx in by_x[bid]:
            for by in by_y[bid]:
                key = (bx.instrs, by.instrs)
                if key in seen:
                    continue
                seen.add(key)
                pairs.append(BlockPair(a=bx, b=by, label=1))
    return pairs


def gen_dissimilar_pairs(
    cx: Corpus,
    cy: Corpus,
    n: int = 4,
    theta: float = 0.5,
    seed: int = 0,
    count: int | None = None,
) -> list[BlockPair]:
    """Label-0 pairs <equivalent-of-B1 on Y, witness B2 on X>.

    B1 is a block with an ID shared by both corpora; B2 is a same-arch block
    whose n-gram similarity to B1 on the X side is below theta. With
    count=None the output is balanced against gen_similar_pairs (same size
    when enough witnesses exist). Sampling is seeded and reproducible.
    """
    ax, ay = _corpus_arch(cx), _corpus_arch(cy)
    if ax == ay:
        raise ArchMismatch("dissimilar pairs need two different architectures")
    if count is None:
        count = len(gen_similar_pairs(cx, cy))
    by_x, by_y = _blocks_by_id(cx), _blocks_by_id(cy)
    shared = sorted(set(by_x) & set(by_y))
    x_blocks = list(cx.iter_blocks())
    if not shared or not x_blocks or count <= 0:
        return []

    rng = random.Random(seed)
    pairs: list[BlockPair] = []
    emitted = set()

    def try_emit(bid: int, witness: BasicBlock) -> None:
        b1x = by_x[bid][0]
        if witness.opt != b1x.opt or witness.instrs == b1x.instrs:
            return
        if ngram_similarity(b1x, witness, n) >= theta:
            return
        b1y = by_y[bid][0]
        key = (b1y.instrs, witness.instrs)
        if key in emitted:
            return
        emitted.add(key)
        pairs.append(BlockPair(a=b1y, b=witness, label=0))

    space = len(shared) * len(x_blocks)
    if space <= 200_000:
        combos = [(bid, w) for bid in shared for w in x_blocks]
        rng.shuffle(combos)
        for bid, w in combos:
            if len(pairs) >= count:
                break
            try_emit(bid, w)
    else:
        attempts = 0
        limit = 100 * count
        while len(pairs) < count and attempts < limit:
            attempts += 1
            bid = shared[rng.randrange(len(shared))]
            w = x_blocks[rng.randrange(len(x_blocks))]
            try_emit(bid, w)
    return pairs


def _block_key(block: BasicBlock):
    return (block.arch, block.instrs)


def split_dataset(
    pairs: list[BlockPair],
    fractions: tuple[float, float, float] = (0.8, 0.1, 0.1),
    seed: int = 0,
) -> SplitSet:
    """Partition distinct blocks into train/val/test, then assign pairs.

    A pair lands in a split only when both endpoints were assigned to it;
    straddling pairs are dropped and counted.
    """
    if len(fractions) != 3 or any(f < 0 for f in fractions):
        raise BadFractions(f"bad fractions {fractions!r}")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise BadFractions(f"fractions sum to {sum(fractions)!r}, not 1")

    keys = []
    seen = set()
    for p in pairs:
        for blk in (p.a, p.b):
            k = _block_key(blk)
            if k not in seen:
                seen.add(k)
                keys.append(k)
    rng = random.Random(seed)
    rng.shuffle(keys)
    n = len(keys)
    cut1 = round(n * fractions[0])
    cut2 = cut1 + round(n * fractions[1])
    assign: dict = {}
    for i, k in enumerate(keys):
        assign[k] = 0 if i < cut1 else (1 if i < cut2 else 2)

    splits: tuple[list[BlockPair], ...] = ([], [], [])
    dropped = 0
    for p in pairs:
        ga, gb = assign[_block_key(p.a)], assign[_block_key(p.b)]
        if ga == gb:
            splits[ga].append(p)
        else:
            dropped += 1
    return SplitSet(train=splits[0], val=splits[1], test=splits[2],
                    fractions=tuple(fractions), dropped=dropped)


def _block_obj(block: BasicBlock) -> dict:
    return {
        "id": block.id,
        "arch": block.arch.value,
        "opt": block.opt.value,
        "instrs": list(block.instrs),
    }


def _block_from_obj(obj: dict, line: int) -> BasicBlock:
    try:
        return BasicBlock(
            id=int(obj["id"]),
            arch=Arch(obj["arch"]),
            opt=Opt(obj["opt"]),
            instrs=tuple(obj["instrs"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise MalformedRecord(f"bad block object ({exc})", line)


def write_pairs(path: str | Path, pairs: list[BlockPair]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for p in pairs:
            obj = {"a": _block_obj(p.a), "b": _block_obj(p.b), "label": p.label}
            fh.write(json.dumps(obj, separators=(",", ":")) + "\n")


def read_pairs(path: str | Path) -> list[BlockPair]:
    pairs = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            if not raw.strip():
                continue
            try:
                obj = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise MalformedRecord(f"invalid JSON ({exc.msg})", line_no)
            if obj.get("label") not in (0, 1):
                raise MalformedRecord("label must be 0 or 1", line_no)
            pairs.append(BlockPair(
                a=_block_from_obj(obj.get("a", {}), line_no),
                b=_block_from_obj(obj.get("b", {}), line_no),
                label=obj["label"],
            ))
    return pairs
