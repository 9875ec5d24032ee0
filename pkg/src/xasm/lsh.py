"""Approximate nearest-neighbor store for block embeddings.

Random-hyperplane sign hashing: each of L tables draws k hyperplanes, a
vector's k-bit signature selects one bucket per table, and query candidates
are the union of the query's buckets. Candidates are re-scored with the same
exp(-L1) similarity the encoder is trained against, so the hash only ever
narrows the candidate set; an exact mode scans every stored item instead and
is the reference the approximate mode is tested against.

Persistence keeps the seed rather than the planes; loading redraws them, so
the JSON stays small and the rebuilt index hashes identically.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import BadConfig, DimMismatch, MalformedRecord

INDEX_VERSION = 1


@dataclass
class LshIndex:
    tables: int
    bits: int
    seed: int
    dims: int
    hyperplanes: np.ndarray  # (tables, bits, dims)
    items: list[tuple[object, np.ndarray]] = field(default_factory=list)
    buckets: list[dict[int, list[int]]] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.items)


def _signatures(index: LshIndex, vector: np.ndarray) -> np.ndarray:
    """One packed integer signature per table."""
    if index.bits == 0:
        return np.zeros(index.tables, dtype=np.int64)
    dots = index.hyperplanes @ vector  # (tables, bits)
    bits = (dots >= 0).astype(np.int64)
    weights = 1 << np.arange(index.bits, dtype=np.int64)
    return bits @ weights


def _check_vector(index: LshIndex, vector: np.ndarray) -> np.ndarray:
    vector = np.asarray(vector, dtype=float)
    if vector.shape != (index.dims,):
        raise DimMismatch(f"vector shape {vector.shape} != ({index.dims},)")
    return vector


def build_index(items, dims: int, tables: int = 8, bits: int = 12,
                seed: int = 0) -> LshIndex:
    """items: iterable of (key, vector); insertion order breaks score ties."""
    if tables < 1 or bits < 0:
        raise BadConfig("need at least one table and a nonnegative bit count")
    if dims < 1:
        raise BadConfig("dims must be positive")
    rng = np.random.default_rng(seed)
    planes = rng.standard_normal((tables, bits, dims))
    index = LshIndex(tables=tables, bits=bits, seed=seed, dims=dims,
                     hyperplanes=planes,
                     buckets=[{} for _ in range(tables)])
    for key, vector in items:
        insert(index, key, vector)
    return index


def insert(index: LshIndex, key, vector) -> int:
    vector = _check_vector(index, vector)
    ordinal = len(index.items)
    index.items.append((key, vector))
    for t, sig in enumerate(_signatures(index, vector)):
        index.buckets[t].setdefault(int(sig), []).append(ordinal)
    return ordinal


def query(index: LshIndex, vector, theta: float = 0.0,
          exact: bool = False) -> list[tuple[object, float]]:
    """Items scoring exp(-L1) >= theta, best first; ties keep insertion order."""
    vector = _check_vector(index, vector)
    if exact:
        candidates = range(len(index.items))
    else:
        seen: set[int] = set()
        for t, sig in enumerate(_signatures(index, vector)):
            seen.update(index.buckets[t].get(int(sig), ()))
        candidates = sorted(seen)
    scored = []
    for ordinal in candidates:
        key, stored = index.items[ordinal]
        sim = float(np.exp(-np.abs(stored - vector).sum()))
        if sim >= theta:
            scored.append((-sim, ordinal, key))
    scored.sort()
    return [(key, -neg) for neg, _, key in scored]


def save_index(index: LshIndex, path: str | Path) -> None:
    doc = {
        "kind": "lsh-index",
        "version": INDEX_VERSION,
        "tables": index.tables,
        "bits": index.bits,
        "seed": index.seed,
        "dims": index.dims,
        "items": [[key, [float(x) for x in vec]] for key, vec in index.items],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, separators=(",", ":"), sort_keys=True)
        fh.write("\n")


def load_index(path: str | Path) -> LshIndex:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise MalformedRecord(f"not a JSON index file: {exc}") from exc
    if not isinstance(doc, dict) or doc.get("kind") != "lsh-index":
        raise MalformedRecord("missing lsh-index marker")
    if doc.get("version") != INDEX_VERSION:
        raise MalformedRecord(f"unsupported index version {doc.get('version')!r}")
    for field_name in ("tables", "bits", "seed", "dims", "items"):
        if field_name not in doc:
            raise MalformedRecord(f"index file lacks {field_name!r}")
    index = build_index([], dims=doc["dims"], tables=doc["tables"],
                        bits=doc["bits"], seed=doc["seed"])
    for entry in doc["items"]:
        if not isinstance(entry, list) or len(entry) != 2:
            raise MalformedRecord("index item must be a [key, vector] pair")
        key, vec = entry
        insert(index, key, np.asarray(vec, dtype=float))
    return index
