"""Skip-gram instruction embeddings with negative sampling.

Each basic block is one sentence; each normalized instruction string is one
token. Context windows are clipped at block boundaries, so a corpus of
single-instruction blocks generates no training pairs at all.

Trained from scratch: center vectors start uniform in [-0.5/d, 0.5/d],
context vectors start at zero, negatives come from the unigram distribution
raised to 3/4, and the learning rate decays linearly to min_lr over the whole
run. Single-worker training is deterministic for a fixed seed; jobs > 1 uses
racy lock-free updates on the shared matrices and is not reproducible.
"""

from __future__ import annotations

import logging
import struct
import threading
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .corpus import Arch, Corpus, Vocabulary, build_vocabulary
from .errors import (
    ArchMismatch,
    BadConfig,
    DimMismatch,
    EmptyCorpus,
    MalformedRecord,
    UnknownToken,
    ZeroVocabulary,
)

log = logging.getLogger(__name__)

STORE_MAGIC = b"XASM"
STORE_VERSION = 1


@dataclass
class SgnsConfig:
    dims: int = 100
    window: int = 2
    negatives: int = 5
    subsample: float = 1e-5
    min_count: int = 0
    epochs: int = 100
    lr: float = 0.025
    min_lr: float = 1e-4
    seed: int = 0

    def validate(self) -> None:
        if self.dims < 1 or self.window < 1 or self.epochs < 1:
            raise BadConfig("dims, window and epochs must be positive")
        if self.negatives < 0 or self.min_count < 0:
            raise BadConfig("negatives and min_count must be nonnegative")
        if self.lr <= 0 or self.min_lr <= 0 or self.subsample < 0:
            raise BadConfig("rates must be positive")


@dataclass
class EmbeddingMatrix:
    """d x V matrix; column i embeds the token with vocabulary index i."""

    vectors: np.ndarray
    arch: Arch | None = None

    @property
    def dims(self) -> int:
        return self.vectors.shape[0]

    @property
    def vocab_size(self) -> int:
        return self.vectors.shape[1]


def _sigmoid(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + np.exp(-x))
    e = np.exp(x)
    return e / (1.0 + e)


def _keep_probability(count: int, total: int, rate: float) -> float:
    """Standard word2vec subsampling keep probability."""
    if rate <= 0:
        return 1.0
    freq = count / total
    p = (np.sqrt(freq / rate) + 1.0) * (rate / freq)
    return min(1.0, float(p))


class _SgnsState:
    def __init__(self, corpus: Corpus, cfg: SgnsConfig):
        cfg.validate()
        archs = corpus.archs()
        if not archs:
            raise EmptyCorpus("corpus has no functions")
        if len(archs) > 1:
            raise ArchMismatch(f"corpus mixes architectures: {sorted(a.value for a in archs)}")
        self.arch = next(iter(archs))
        self.vocab = build_vocabulary(corpus)
        if len(self.vocab) == 0:
            raise ZeroVocabulary("no tokens")
        self.cfg = cfg
        self.sentences = [
            np.array([self.vocab.index(t) for t in block.instrs], dtype=np.int64)
            for block in corpus.iter_blocks()
        ]
        counts = np.array(
            [self.vocab.counts[t] for t in self.vocab.index_to_token], dtype=float
        )
        self.total = int(counts.sum())
        self.keep = np.array([
            _keep_probability(int(c), self.total, cfg.subsample) for c in counts
        ])
        self.trainable = counts >= cfg.min_count
        noise = np.power(counts, 0.75)
        noise_sum = noise.sum()
        self.noise_cdf = np.cumsum(noise / noise_sum) if noise_sum > 0 else None

        rng = np.random.default_rng(cfg.seed)
        v = len(self.vocab)
        self.center = (rng.random((cfg.dims, v)) - 0.5) / cfg.dims
        self.context = np.zeros((cfg.dims, v))
        # total center-position count drives the linear lr decay
        self.positions = self.total * cfg.epochs
        self.seen = 0
        self.seen_lock = threading.Lock()


def _train_sentences(state: _SgnsState, sentences, rng, lock_free: bool):
    cfg = state.cfg
    center, context = state.center, state.context
    loss_sum, loss_terms = 0.0, 0
    for sent in sentences:
        # shared progress counter; racy by design when threaded
        state.seen += len(sent)
        alpha = max(cfg.min_lr, cfg.lr * (1.0 - state.seen / max(1, state.positions)))
        if cfg.subsample > 0:
            mask = rng.random(len(sent)) < state.keep[sent]
            kept = sent[mask]
        else:
            kept = sent
        n = len(kept)
        for pos in range(n):
            w = kept[pos]
            if not state.trainable[w]:
                continue
            lo = max(0, pos - cfg.window)
            hi = min(n, pos + cfg.window + 1)
            for cpos in range(lo, hi):
                if cpos == pos:
                    continue
                c = kept[cpos]
                if not state.trainable[c]:
                    continue
                wvec = center[:, w]
                grad_w = np.zeros(cfg.dims)
                # positive example
                cvec = context[:, c]
                score = _sigmoid(float(wvec @ cvec))
                loss_sum -= np.log(max(score, 1e-12))
                g = (1.0 - score) * alpha
                grad_w += g * cvec
                context[:, c] += g * wvec
                # negatives from the unigram^(3/4) table
                if cfg.negatives > 0 and state.noise_cdf is not None:
                    draws = np.searchsorted(state.noise_cdf, rng.random(cfg.negatives))
                    for neg in draws:
                        if neg == w:
                            continue
                        nvec = context[:, neg]
                        nscore = _sigmoid(float(wvec @ nvec))
                        loss_sum -= np.log(max(1.0 - nscore, 1e-12))
                        gn = -nscore * alpha
                        grad_w += gn * nvec
                        context[:, neg] += gn * wvec
                center[:, w] += grad_w
                loss_terms += 1
    return loss_sum, loss_terms


def train_sgns(
    corpus: Corpus,
    cfg: SgnsConfig,
    jobs: int = 1,
    epoch_callback=None,
) -> EmbeddingMatrix:
    """Train skip-gram embeddings over a single-architecture corpus.

    epoch_callback, when given, receives (epoch, mean_pair_loss) after each
    epoch; epochs with no training pairs report a loss of 0.0.
    """
    state = _SgnsState(corpus, cfg)
    if jobs <= 1:
        rng = np.random.default_rng(cfg.seed + 1)
        for epoch in range(cfg.epochs):
            loss, terms = _train_sentences(state, state.sentences, rng, False)
            if epoch_callback is not None:
                epoch_callback(epoch, loss / terms if terms else 0.0)
    else:
        log.info("training with %d workers; updates are racy and nondeterministic", jobs)
        shards = [state.sentences[i::jobs] for i in range(jobs)]
        for epoch in range(cfg.epochs):
            results = [None] * jobs
            threads = []
            for i, shard in enumerate(shards):
                rng = np.random.default_rng(cfg.seed + 1 + i)

                def run(i=i, shard=shard, rng=rng):
                    results[i] = _train_sentences(state, shard, rng, True)

                threads.append(threading.Thread(target=run))
            for t in threads:
                t.start()
            for t in threads:
                t.join()
            if epoch_callback is not None:
                loss = sum(r[0] for r in results)
                terms = sum(r[1] for r in results)
                epoch_callback(epoch, loss / terms if terms else 0.0)
    return EmbeddingMatrix(vectors=state.center, arch=state.arch)


def lookup(matrix: EmbeddingMatrix, vocab: Vocabulary, token: str) -> np.ndarray:
    """Embedding column for a token; unknown tokens map to the zero vector."""
    if token in vocab:
        idx = vocab.index(token)
        if idx < matrix.vocab_size:
            return matrix.vectors[:, idx].copy()
    return np.zeros(matrix.dims)


def _cosine(a: np.ndarray, b: np.ndarray) -> float:
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(a @ b / (na * nb))


def nearest_tokens(
    matrix: EmbeddingMatrix, vocab: Vocabulary, token: str, k: int
) -> list[tuple[str, float]]:
    """k most cosine-similar tokens, excluding the query; ties break on index."""
    if token not in vocab:
        raise UnknownToken(token)
    if not 0 <= k < len(vocab):
        raise BadConfig(f"k must be in [0, {len(vocab) - 1}]")
    q = matrix.vectors[:, vocab.index(token)]
    sims = [
        (-_cosine(q, matrix.vectors[:, i]), i)
        for i in range(matrix.vocab_size)
        if i != vocab.index(token)
    ]
    sims.sort()
    return [(vocab.token(i), -negsim) for negsim, i in sims[:k]]


def save_embeddings(path: str | Path, matrix: EmbeddingMatrix, vocab: Vocabulary) -> None:
    """Write the binary store: magic, version, dims, V, then token/vector records."""
    if len(vocab) != matrix.vocab_size:
        raise DimMismatch(
            f"vocabulary size {len(vocab)} != matrix columns {matrix.vocab_size}"
        )
    with open(path, "wb") as fh:
        fh.write(STORE_MAGIC)
        fh.write(struct.pack("<III", STORE_VERSION, matrix.dims, matrix.vocab_size))
        for i, token in enumerate(vocab.index_to_token):
            raw = token.encode("utf-8")
            fh.write(struct.pack("<H", len(raw)))
            fh.write(raw)
            fh.write(matrix.vectors[:, i].astype("<f4").tobytes())


def load_embeddings(path: str | Path) -> tuple[EmbeddingMatrix, Vocabulary]:
    """Read the binary store back; counts are not stored, arch is untagged."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != STORE_MAGIC:
            raise MalformedRecord(f"bad magic {magic!r}")
        version, dims, v = struct.unpack("<III", fh.read(12))
        if version != STORE_VERSION:
            raise MalformedRecord(f"unsupported store version {version}")
        tokens, cols = [], []
        for _ in range(v):
            (tlen,) = struct.unpack("<H", fh.read(2))
            tokens.append(fh.read(tlen).decode("utf-8"))
            cols.append(np.frombuffer(fh.read(4 * dims), dtype="<f4").astype(float))
    vectors = np.stack(cols, axis=1) if cols else np.zeros((dims, 0))
    return EmbeddingMatrix(vectors=vectors, arch=None), Vocabulary(tokens)


def export_tsv(path: str | Path, matrix: EmbeddingMatrix, vocab: Vocabulary) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for i, token in enumerate(vocab.index_to_token):
            vals = "\t".join("%.8g" % x for x in matrix.vectors[:, i])
            fh.write(f"{token}\t{vals}\n")
