import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from xasm.errors import BadConfig, DimMismatch, MalformedRecord
from xasm.lsh import build_index, insert, load_index, query, save_index


def random_items(n, dims, seed):
    rng = np.random.default_rng(seed)
    return [(i, rng.normal(size=dims)) for i in range(n)]


def exact_scan(items, vector, theta):
    scored = []
    for ordinal, (key, stored) in enumerate(items):
        # np.exp, not math.exp: the two can disagree in the last ulp and
        # this oracle checks candidate enumeration and ordering, not libm.
        sim = float(np.exp(-np.abs(stored - vector).sum()))
        if sim >= theta:
            scored.append((-sim, ordinal, key))
    scored.sort()
    return [(key, -neg) for neg, _, key in scored]


def test_exact_matches_brute_force():
    items = random_items(60, 8, seed=0)
    index = build_index(items, dims=8)
    rng = np.random.default_rng(1)
    for _ in range(10):
        q = rng.normal(size=8)
        assert query(index, q, theta=0.0, exact=True) == exact_scan(items, q, 0.0)


def test_approx_is_subset_of_exact():
    items = random_items(200, 8, seed=2)
    index = build_index(items, dims=8, tables=4, bits=10)
    rng = np.random.default_rng(3)
    for _ in range(20):
        q = rng.normal(size=8)
        approx = dict(query(index, q, theta=0.01))
        exact = dict(query(index, q, theta=0.01, exact=True))
        assert set(approx) <= set(exact)
        for key, sim in approx.items():
            assert sim == exact[key]


def test_identical_vector_always_found():
    items = random_items(50, 6, seed=4)
    index = build_index(items, dims=6)
    for key, vec in items[::7]:
        hits = query(index, vec, theta=0.99)
        assert hits and hits[0] == (key, 1.0)


def test_theta_filters():
    index = build_index([("near", np.zeros(4)), ("far", np.full(4, 5.0))], dims=4)
    hits = query(index, np.zeros(4), theta=0.5, exact=True)
    assert [k for k, _ in hits] == ["near"]
    hits = query(index, np.zeros(4), theta=0.0, exact=True)
    assert [k for k, _ in hits] == ["near", "far"]


def test_ties_keep_insertion_order():
    v = np.ones(3)
    mirror = -np.ones(3)
    index = build_index([("b", mirror), ("a", mirror), ("q0", v)], dims=3)
    hits = query(index, v, theta=0.0, exact=True)
    assert [k for k, _ in hits] == ["q0", "b", "a"]


def test_zero_bits_degenerates_to_full_scan():
    items = random_items(30, 5, seed=5)
    index = build_index(items, dims=5, tables=2, bits=0)
    rng = np.random.default_rng(6)
    for _ in range(5):
        q = rng.normal(size=5)
        assert query(index, q, theta=0.0) == query(index, q, theta=0.0, exact=True)


def test_collision_probability_tracks_angle():
    # For a random hyperplane, P(same side) = 1 - angle/pi. Estimate with
    # many single-bit tables and compare against the closed form.
    rng = np.random.default_rng(7)
    a = rng.normal(size=12)
    b = a + 0.4 * rng.normal(size=12)
    angle = math.acos(float(a @ b / (np.linalg.norm(a) * np.linalg.norm(b))))
    expected = 1.0 - angle / math.pi

    index = build_index([], dims=12, tables=4000, bits=1, seed=8)
    sig_a = (index.hyperplanes @ a >= 0)
    sig_b = (index.hyperplanes @ b >= 0)
    observed = float((sig_a == sig_b).mean())
    assert abs(observed - expected) < 0.03


def test_insert_and_len():
    index = build_index([], dims=3)
    assert len(index) == 0
    assert insert(index, "x", np.zeros(3)) == 0
    assert insert(index, "y", np.ones(3)) == 1
    assert len(index) == 2


def test_dim_mismatch_and_bad_config():
    index = build_index([], dims=3)
    with pytest.raises(DimMismatch):
        insert(index, "x", np.zeros(4))
    with pytest.raises(DimMismatch):
        query(index, np.zeros(2))
    with pytest.raises(BadConfig):
        build_index([], dims=0)
    with pytest.raises(BadConfig):
        build_index([], dims=3, tables=0)


def test_persistence_roundtrip(tmp_path):
    items = random_items(40, 6, seed=9)
    index = build_index(items, dims=6, tables=3, bits=8, seed=17)
    path = tmp_path / "index.json"
    save_index(index, path)
    loaded = load_index(path)
    assert loaded.tables == 3 and loaded.bits == 8 and loaded.seed == 17
    rng = np.random.default_rng(10)
    for _ in range(10):
        q = rng.normal(size=6)
        assert query(index, q, theta=0.2) == query(loaded, q, theta=0.2)
        assert query(index, q, exact=True) == query(loaded, q, exact=True)


def test_persistence_is_byte_stable(tmp_path):
    items = random_items(10, 4, seed=11)
    index = build_index(items, dims=4)
    p1, p2 = tmp_path / "a.json", tmp_path / "b.json"
    save_index(index, p1)
    save_index(index, p2)
    assert p1.read_bytes() == p2.read_bytes()


@pytest.mark.parametrize("mangle", [
    lambda d: d.pop("kind"),
    lambda d: d.__setitem__("version", 99),
    lambda d: d.pop("seed"),
    lambda d: d.__setitem__("items", [["k"]]),
])
def test_load_rejects_malformed(tmp_path, mangle):
    index = build_index(random_items(3, 4, seed=12), dims=4)
    path = tmp_path / "index.json"
    save_index(index, path)
    doc = json.loads(path.read_text())
    mangle(doc)
    path.write_text(json.dumps(doc))
    with pytest.raises(MalformedRecord):
        load_index(path)


def test_load_rejects_non_json(tmp_path):
    path = tmp_path / "index.json"
    path.write_text("not json at all {")
    with pytest.raises(MalformedRecord):
        load_index(path)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(1, 30))
def test_approx_subset_property(seed, n):
    rng = np.random.default_rng(seed)
    items = [(i, rng.normal(size=4)) for i in range(n)]
    index = build_index(items, dims=4, tables=2, bits=6, seed=seed)
    q = rng.normal(size=4)
    approx = query(index, q, theta=0.0)
    exact = query(index, q, theta=0.0, exact=True)
    assert set(k for k, _ in approx) <= set(k for k, _ in exact)
    assert query(index, items[0][1], theta=0.999999)[0][0] == 0
