"""Two-tower recurrent encoder over instruction-embedding sequences.

Each tower owns its own parameters; tower 1 reads one architecture, tower 2
the other, and both are trained jointly against the similarity target
sim(h1, h2) = exp(-||h1 - h2||_1) with squared error against 0/1 labels.

Cells are written out by hand (LSTM, GRU, plain tanh RNN) together with their
exact backward passes, so gradients can be checked against central finite
differences. The LSTM default applies the forget gate to the previous cell
state; forget_on_candidate switches to the variant that gates the fresh
candidate instead, kept selectable because the two disagree and only one can
be right for a given reimplementation target.

All math runs in float64. The on-disk format stores float32 tensors.
"""

from __future__ import annotations

import copy
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .corpus import Arch, BasicBlock, Vocabulary
from .errors import (
    BadConfig,
    DimMismatch,
    EmptyBatch,
    EmptyDataset,
    EmptySequence,
    MalformedRecord,
)
from .evalmetrics import roc_auc
from .instr_embed import EmbeddingMatrix, lookup

ENC_MAGIC = b"XENC"
ENC_VERSION = 1

CELL_GATES = {
    "lstm": ("i", "f", "c", "o"),
    "gru": ("z", "r", "h"),
    "rnn": ("h",),
}
_CELL_CODES = {"lstm": 0, "gru": 1, "rnn": 2}
_CELL_NAMES = {v: k for k, v in _CELL_CODES.items()}


@dataclass
class EncoderConfig:
    layers: int = 2
    input_dim: int = 100
    hidden_dim: int = 50
    cell: str = "lstm"
    lr: float = 0.05
    final_lr: float | None = None
    clip_norm: float | None = None
    epochs: int = 100
    seed: int = 0
    forget_on_candidate: bool = False
    patience: int | None = None

    def validate(self) -> None:
        if self.cell not in CELL_GATES:
            raise BadConfig(f"unknown cell {self.cell!r}")
        if self.layers < 1 or self.input_dim < 1 or self.hidden_dim < 1:
            raise BadConfig("layers and dims must be positive")
        if self.epochs < 0:
            raise BadConfig("epochs must be nonnegative")
        if self.lr <= 0:
            raise BadConfig("lr must be positive")
        if self.final_lr is not None and not 0 < self.final_lr <= self.lr:
            raise BadConfig("final_lr must lie in (0, lr]")
        if self.clip_norm is not None and self.clip_norm <= 0:
            raise BadConfig("clip_norm must be positive")


@dataclass
class LayerParams:
    W: dict[str, np.ndarray]
    U: dict[str, np.ndarray]
    b: dict[str, np.ndarray]


@dataclass
class EncoderParams:
    config: EncoderConfig
    towers: list[list[LayerParams]]

    def copy(self) -> "EncoderParams":
        return EncoderParams(
            config=copy.deepcopy(self.config),
            towers=[
                [
                    LayerParams(
                        W={g: a.copy() for g, a in lp.W.items()},
                        U={g: a.copy() for g, a in lp.U.items()},
                        b={g: a.copy() for g, a in lp.b.items()},
                    )
                    for lp in tower
                ]
                for tower in self.towers
            ],
        )


@dataclass(frozen=True)
class BlockEmbedding:
    vector: np.ndarray
    arch: Arch


def iter_arrays(params: EncoderParams):
    """Yield (name, array) in the canonical serialization order."""
    gates = CELL_GATES[params.config.cell]
    for ti, tower in enumerate(params.towers):
        for li, lp in enumerate(tower):
            for g in gates:
                for kind, store in (("W", lp.W), ("U", lp.U), ("b", lp.b)):
                    yield f"t{ti}.l{li}.{kind}_{g}", store[g]


def init_params(cfg: EncoderConfig) -> EncoderParams:
    """Glorot-uniform weights; retention gates biased to carry state."""
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    gates = CELL_GATES[cfg.cell]
    towers = []
    for _ in range(2):
        layers = []
        for layer in range(cfg.layers):
            in_dim = cfg.input_dim if layer == 0 else cfg.hidden_dim
            d = cfg.hidden_dim
            W, U, b = {}, {}, {}
            for g in gates:
                lim_w = np.sqrt(6.0 / (in_dim + d))
                lim_u = np.sqrt(6.0 / (d + d))
                W[g] = rng.uniform(-lim_w, lim_w, size=(d, in_dim))
                U[g] = rng.uniform(-lim_u, lim_u, size=(d, d))
                # Start both gated cells in a keep-state regime: LSTM forget
                # bias +1, GRU update bias -1 (here the kept fraction is 1-z).
                # Waiting for SGD to drift the gates there costs many epochs.
                if cfg.cell == "lstm" and g == "f":
                    b[g] = np.full(d, 1.0)
                elif cfg.cell == "gru" and g == "z":
                    b[g] = np.full(d, -1.0)
                else:
                    b[g] = np.zeros(d)
            layers.append(LayerParams(W=W, U=U, b=b))
        towers.append(layers)
    return EncoderParams(config=cfg, towers=towers)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def _layer_forward(cfg: EncoderConfig, lp: LayerParams, xs: np.ndarray):
    """Run one recurrent layer over xs (T, in_dim); return (hs, caches)."""
    T = xs.shape[0]
    d = cfg.hidden_dim
    h = np.zeros(d)
    c = np.zeros(d)
    hs = np.empty((T, d))
    caches = []
    for t in range(T):
        x = xs[t]
        if cfg.cell == "lstm":
            i = _sigmoid(lp.W["i"] @ x + lp.U["i"] @ h + lp.b["i"])
            f = _sigmoid(lp.W["f"] @ x + lp.U["f"] @ h + lp.b["f"])
            cand = np.tanh(lp.W["c"] @ x + lp.U["c"] @ h + lp.b["c"])
            o = _sigmoid(lp.W["o"] @ x + lp.U["o"] @ h + lp.b["o"])
            c_new = i * cand + f * (cand if cfg.forget_on_candidate else c)
            tc = np.tanh(c_new)
            h_new = o * tc
            caches.append((x, h, c, i, f, cand, o, c_new, tc))
            h, c = h_new, c_new
        elif cfg.cell == "gru":
            z = _sigmoid(lp.W["z"] @ x + lp.U["z"] @ h + lp.b["z"])
            r = _sigmoid(lp.W["r"] @ x + lp.U["r"] @ h + lp.b["r"])
            rh = r * h
            cand = np.tanh(lp.W["h"] @ x + lp.U["h"] @ rh + lp.b["h"])
            h_new = (1.0 - z) * h + z * cand
            caches.append((x, h, z, r, rh, cand))
            h = h_new
        else:
            h_new = np.tanh(lp.W["h"] @ x + lp.U["h"] @ h + lp.b["h"])
            caches.append((x, h))
            h = h_new
        hs[t] = h
    return hs, caches


def _layer_backward(cfg: EncoderConfig, lp: LayerParams, grads: LayerParams,
                    caches, dhs: np.ndarray) -> np.ndarray:
    """BPTT for one layer; dhs holds per-step output grads. Returns dxs."""
    T = len(caches)
    dxs = np.zeros((T, caches[0][0].shape[0]))
    d = cfg.hidden_dim
    dh_next = np.zeros(d)
    dc_next = np.zeros(d)
    for t in range(T - 1, -1, -1):
        dh = dhs[t] + dh_next
        if cfg.cell == "lstm":
            x, h_prev, c_prev, i, f, cand, o, c_new, tc = caches[t]
            do = dh * tc
            dc = dc_next + dh * o * (1.0 - tc * tc)
            di = dc * cand
            if cfg.forget_on_candidate:
                dcand = dc * (i + f)
                df = dc * cand
                dc_next = np.zeros(d)
            else:
                dcand = dc * i
                df = dc * c_prev
                dc_next = dc * f
            da = {
                "i": di * i * (1.0 - i),
                "f": df * f * (1.0 - f),
                "c": dcand * (1.0 - cand * cand),
                "o": do * o * (1.0 - o),
            }
            dh_next = np.zeros(d)
            for g, dag in da.items():
                grads.W[g] += np.outer(dag, x)
                grads.U[g] += np.outer(dag, h_prev)
                grads.b[g] += dag
                dxs[t] += lp.W[g].T @ dag
                dh_next += lp.U[g].T @ dag
        elif cfg.cell == "gru":
            x, h_prev, z, r, rh, cand = caches[t]
            dz = dh * (cand - h_prev)
            dcand = dh * z
            dh_prev = dh * (1.0 - z)
            da_h = dcand * (1.0 - cand * cand)
            grads.W["h"] += np.outer(da_h, x)
            grads.U["h"] += np.outer(da_h, rh)
            grads.b["h"] += da_h
            drh = lp.U["h"].T @ da_h
            dr = drh * h_prev
            dh_prev = dh_prev + drh * r
            da_z = dz * z * (1.0 - z)
            da_r = dr * r * (1.0 - r)
            for g, dag in (("z", da_z), ("r", da_r)):
                grads.W[g] += np.outer(dag, x)
                grads.U[g] += np.outer(dag, h_prev)
                grads.b[g] += dag
                dh_prev = dh_prev + lp.U[g].T @ dag
            dxs[t] = lp.W["z"].T @ da_z + lp.W["r"].T @ da_r + lp.W["h"].T @ da_h
            dh_next = dh_prev
        else:
            x, h_prev = caches[t]
            h_new = np.tanh(lp.W["h"] @ x + lp.U["h"] @ h_prev + lp.b["h"])
            da = dh * (1.0 - h_new * h_new)
            grads.W["h"] += np.outer(da, x)
            grads.U["h"] += np.outer(da, h_prev)
            grads.b["h"] += da
            dxs[t] = lp.W["h"].T @ da
            dh_next = lp.U["h"].T @ da
    return dxs


def _forward_tower(params: EncoderParams, tower: int, seq: np.ndarray,
                   want_cache: bool = False):
    cfg = params.config
    seq = np.asarray(seq, dtype=float)
    if seq.ndim != 2 or seq.shape[0] == 0:
        raise EmptySequence("encoder input must be a nonempty (T, d) sequence")
    if seq.shape[1] != cfg.input_dim:
        raise DimMismatch(f"sequence width {seq.shape[1]} != input_dim {cfg.input_dim}")
    if tower not in (0, 1):
        raise BadConfig(f"tower must be 0 or 1, got {tower}")
    xs = seq
    all_caches = []
    for lp in params.towers[tower]:
        hs, caches = _layer_forward(cfg, lp, xs)
        all_caches.append(caches)
        xs = hs
    final = xs[-1].copy()
    if want_cache:
        return final, all_caches
    return final


def encode_block(params: EncoderParams, tower: int, seq: np.ndarray) -> np.ndarray:
    """Embed one instruction-vector sequence; returns the final hidden state."""
    return _forward_tower(params, tower, seq)


def _backward_tower(params: EncoderParams, tower: int, caches,
                    grads: EncoderParams, d_final: np.ndarray) -> None:
    cfg = params.config
    T = len(caches[-1])
    dhs = np.zeros((T, cfg.hidden_dim))
    dhs[-1] = d_final
    for li in range(cfg.layers - 1, -1, -1):
        dxs = _layer_backward(cfg, params.towers[tower][li],
                              grads.towers[tower][li], caches[li], dhs)
        dhs = dxs


def similarity(e1: np.ndarray, e2: np.ndarray) -> float:
    """exp(-L1 distance); 1.0 exactly when the embeddings coincide."""
    e1 = np.asarray(e1, dtype=float)
    e2 = np.asarray(e2, dtype=float)
    if e1.shape != e2.shape:
        raise DimMismatch(f"{e1.shape} vs {e2.shape}")
    return float(np.exp(-np.abs(e1 - e2).sum()))


def zero_grads(params: EncoderParams) -> EncoderParams:
    g = params.copy()
    for _, arr in iter_arrays(g):
        arr[:] = 0.0
    return g


PairExample = tuple[np.ndarray, int, np.ndarray, int, int]


def pair_loss(params: EncoderParams, batch: list[PairExample]) -> float:
    """Sum of squared errors (label - similarity)^2 over the batch."""
    if not batch:
        raise EmptyBatch("empty batch")
    total = 0.0
    for seq1, t1, seq2, t2, y in batch:
        h1 = _forward_tower(params, t1, seq1)
        h2 = _forward_tower(params, t2, seq2)
        total += (y - similarity(h1, h2)) ** 2
    return total


def _pair_grads(params: EncoderParams, example: PairExample):
    seq1, t1, seq2, t2, y = example
    h1, cache1 = _forward_tower(params, t1, seq1, want_cache=True)
    h2, cache2 = _forward_tower(params, t2, seq2, want_cache=True)
    diff = h1 - h2
    sim = float(np.exp(-np.abs(diff).sum()))
    loss = (y - sim) ** 2
    # dL/dsim = 2(sim - y); dsim/dh1 = -sim * sign(h1 - h2)
    base = 2.0 * (sim - y) * sim
    sign = np.sign(diff)
    grads = zero_grads(params)
    _backward_tower(params, t1, cache1, grads, -base * sign)
    _backward_tower(params, t2, cache2, grads, base * sign)
    return loss, sim, grads


def _sgd_step(params: EncoderParams, grads: EncoderParams, lr: float,
              clip_norm: float | None = None) -> None:
    if clip_norm is not None:
        total = 0.0
        for _, g in iter_arrays(grads):
            total += float((g * g).sum())
        norm = total ** 0.5
        if norm > clip_norm:
            scale = clip_norm / norm
            for _, g in iter_arrays(grads):
                g *= scale
    for (_, p), (_, g) in zip(iter_arrays(params), iter_arrays(grads)):
        p -= lr * g


class BlockVectorizer:
    """Map blocks to instruction-vector sequences and towers.

    embeddings: per-arch (matrix, vocab). tower_archs fixes which architecture
    each tower reads; repeating one arch in both slots gives the degenerate
    same-architecture mode used for self-comparison tests.
    """

    def __init__(self, embeddings: dict[Arch, tuple[EmbeddingMatrix, Vocabulary]],
                 tower_archs: tuple[Arch, Arch]):
        for arch in tower_archs:
            if arch not in embeddings:
                raise BadConfig(f"no embeddings for {arch.value}")
        self.embeddings = embeddings
        self.tower_archs = tower_archs
        self._cache: dict = {}

    def tower_for(self, arch: Arch) -> int:
        if arch == self.tower_archs[0]:
            return 0
        if arch == self.tower_archs[1]:
            return 1
        raise BadConfig(f"architecture {arch.value} not served by either tower")

    def sequence(self, block: BasicBlock) -> np.ndarray:
        key = (block.arch, block.instrs)
        hit = self._cache.get(key)
        if hit is None:
            matrix, vocab = self.embeddings[block.arch]
            hit = np.stack([lookup(matrix, vocab, t) for t in block.instrs])
            self._cache[key] = hit
        return hit

    def example(self, pair, label: int | None = None) -> PairExample:
        y = pair.label if label is None else label
        return (self.sequence(pair.a), self.tower_for(pair.a.arch),
                self.sequence(pair.b), self.tower_for(pair.b.arch), y)


class BlockEncoder:
    """Convenience wrapper: encoder params + vectorizer, with caching."""

    def __init__(self, params: EncoderParams, vectorizer: BlockVectorizer):
        self.params = params
        self.vectorizer = vectorizer
        self._cache: dict = {}

    def embed(self, block: BasicBlock) -> np.ndarray:
        key = (block.arch, block.instrs)
        hit = self._cache.get(key)
        if hit is None:
            tower = self.vectorizer.tower_for(block.arch)
            hit = encode_block(self.params, tower, self.vectorizer.sequence(block))
            self._cache[key] = hit
        return hit

    def similarity(self, a: BasicBlock, b: BasicBlock) -> float:
        return similarity(self.embed(a), self.embed(b))


def score_pairs(params: EncoderParams, examples: list[PairExample]) -> list[tuple[float, int]]:
    out = []
    for seq1, t1, seq2, t2, y in examples:
        h1 = _forward_tower(params, t1, seq1)
        h2 = _forward_tower(params, t2, seq2)
        out.append((similarity(h1, h2), y))
    return out


def train(
    params: EncoderParams,
    train_pairs,
    val_pairs,
    vectorizer: BlockVectorizer,
    epoch_callback=None,
) -> tuple[EncoderParams, list[tuple[float, float]]]:
    """SGD over pairs, one at a time; keeps the best validation-AUC params.

    Returns (best params, history) where history holds one (mean train loss,
    val AUC) entry per epoch actually run.
    """
    cfg = params.config
    cfg.validate()
    if not train_pairs or not val_pairs:
        raise EmptyDataset("train and validation sets must be nonempty")
    train_ex = [vectorizer.example(p) for p in train_pairs]
    val_ex = [vectorizer.example(p) for p in val_pairs]

    work = params.copy()
    best = work.copy()
    best_auc = -1.0
    since_best = 0
    history: list[tuple[float, float]] = []
    rng = np.random.default_rng(cfg.seed)
    for epoch in range(cfg.epochs):
        if cfg.final_lr is None or cfg.epochs == 1:
            lr = cfg.lr
        else:
            # linear decay, same schedule shape as the embedding trainer
            lr = cfg.lr + (cfg.final_lr - cfg.lr) * epoch / (cfg.epochs - 1)
        order = rng.permutation(len(train_ex))
        loss_sum = 0.0
        for idx in order:
            loss, _, grads = _pair_grads(work, train_ex[idx])
            loss_sum += loss
            _sgd_step(work, grads, lr, cfg.clip_norm)
        val_auc, _ = roc_auc(score_pairs(work, val_ex))
        history.append((loss_sum / len(train_ex), val_auc))
        if epoch_callback is not None:
            epoch_callback(epoch, history[-1])
        if val_auc > best_auc:
            best_auc = val_auc
            best = work.copy()
            since_best = 0
        else:
            since_best += 1
            if cfg.patience is not None and since_best >= cfg.patience:
                break
    return best, history


def gradient_check(params: EncoderParams, example: PairExample,
                   eps: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    The denominator is floored at 1e-6 so near-zero components are judged
    on absolute error; otherwise finite-difference roundoff (about 1e-11
    at this eps) dominates the ratio for any gradient that merely happens
    to be tiny.
    """
    _, _, grads = _pair_grads(params, example)
    worst = 0.0
    for (_, p), (_, g) in zip(iter_arrays(params), iter_arrays(grads)):
        flat_p = p.reshape(-1)
        flat_g = g.reshape(-1)
        for k in range(flat_p.size):
            orig = flat_p[k]
            flat_p[k] = orig + eps
            up = pair_loss(params, [example])
            flat_p[k] = orig - eps
            down = pair_loss(params, [example])
            flat_p[k] = orig
            numeric = (up - down) / (2.0 * eps)
            denom = max(abs(flat_g[k]) + abs(numeric), 1e-6)
            worst = max(worst, abs(flat_g[k] - numeric) / denom)
    return float(worst)


def save_encoder(path: str | Path, params: EncoderParams,
                 history=None, extra_meta: dict | None = None) -> None:
    """Binary tensors + JSON sidecar (config, history, anything in extra_meta)."""
    cfg = params.config
    flags = 1 if cfg.forget_on_candidate else 0
    with open(path, "wb") as fh:
        fh.write(ENC_MAGIC)
        fh.write(struct.pack("<IIIIII", ENC_VERSION, cfg.layers, cfg.input_dim,
                             cfg.hidden_dim, _CELL_CODES[cfg.cell], flags))
        for _, arr in iter_arrays(params):
            fh.write(arr.astype("<f4").tobytes())
    meta = {
        "config": {
            "layers": cfg.layers,
            "input_dim": cfg.input_dim,
            "hidden_dim": cfg.hidden_dim,
            "cell": cfg.cell,
            "lr": cfg.lr,
            "final_lr": cfg.final_lr,
            "clip_norm": cfg.clip_norm,
            "epochs": cfg.epochs,
            "seed": cfg.seed,
            "forget_on_candidate": cfg.forget_on_candidate,
            "patience": cfg.patience,
        },
        "history": [[float(a), float(b)] for a, b in (history or [])],
    }
    if extra_meta:
        meta.update(extra_meta)
    with open(str(path) + ".meta.json", "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_encoder(path: str | Path) -> tuple[EncoderParams, dict]:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != ENC_MAGIC:
            raise MalformedRecord(f"bad magic {magic!r}")
        version, layers, input_dim, hidden_dim, cell_code, flags = struct.unpack(
            "<IIIIII", fh.read(24))
        if version != ENC_VERSION:
            raise MalformedRecord(f"unsupported params version {version}")
        if cell_code not in _CELL_NAMES:
            raise MalformedRecord(f"unknown cell code {cell_code}")
        cfg = EncoderConfig(layers=layers, input_dim=input_dim,
                            hidden_dim=hidden_dim, cell=_CELL_NAMES[cell_code],
                            forget_on_candidate=bool(flags & 1))
        meta = {}
        meta_path = Path(str(path) + ".meta.json")
        if meta_path.exists():
            with open(meta_path, "r", encoding="utf-8") as mh:
                meta = json.load(mh)
            for k in ("lr", "final_lr", "clip_norm", "epochs", "seed",
                      "patience"):
                if k in meta.get("config", {}) and meta["config"][k] is not None:
                    setattr(cfg, k, meta["config"][k])
        params = init_params(cfg)
        for _, arr in iter_arrays(params):
            raw = fh.read(4 * arr.size)
            if len(raw) != 4 * arr.size:
                raise MalformedRecord("params file truncated")
            arr[:] = np.frombuffer(raw, dtype="<f4").astype(float).reshape(arr.shape)
        if fh.read(1):
            raise MalformedRecord("trailing bytes in params file")
    return params, meta
