"""Tests for the two-tower recurrent encoder.

Hand-computed single-step values act as oracles for the cell recurrences;
central finite differences check every analytic gradient.
"""

import math

import numpy as np
import pytest

from xasm.corpus import Arch, BasicBlock, Opt, Vocabulary
from xasm.encoder import (
    BlockEncoder,
    BlockVectorizer,
    EncoderConfig,
    EncoderParams,
    encode_block,
    gradient_check,
    init_params,
    iter_arrays,
    load_encoder,
    pair_loss,
    save_encoder,
    similarity,
    train,
)
from xasm.errors import (
    BadConfig,
    DimMismatch,
    EmptyBatch,
    EmptyDataset,
    EmptySequence,
    MalformedRecord,
)
from xasm.instr_embed import EmbeddingMatrix
from xasm.pairgen import BlockPair


def sigmoid(x):
    return 1.0 / (1.0 + math.exp(-x))


def small_params(cell, layers=1, input_dim=3, hidden_dim=4, seed=0, **kw):
    cfg = EncoderConfig(layers=layers, input_dim=input_dim, hidden_dim=hidden_dim,
                        cell=cell, seed=seed, **kw)
    return init_params(cfg)


def set_scalar_params(params, w, u, b):
    for name, arr in iter_arrays(params):
        if name.endswith(tuple(f"W_{g}" for g in "ifcozrh")) or ".W_" in name:
            arr[:] = w
        if ".U_" in name:
            arr[:] = u
        if ".b_" in name:
            arr[:] = b
    return params


def zeroed(params):
    for _, arr in iter_arrays(params):
        arr[:] = 0.0
    return params


@pytest.mark.parametrize("cell", ["lstm", "gru", "rnn"])
def test_zero_params_give_zero_embedding(cell):
    params = zeroed(small_params(cell, layers=2))
    seq = np.random.default_rng(1).normal(size=(5, 3))
    out = encode_block(params, 0, seq)
    np.testing.assert_array_equal(out, np.zeros(4))


def test_rnn_two_step_hand_value():
    params = zeroed(small_params("rnn", input_dim=1, hidden_dim=1))
    set_scalar_params(params, w=2.0, u=0.5, b=0.3)
    out = encode_block(params, 0, np.array([[0.1], [0.2]]))
    h1 = math.tanh(2.0 * 0.1 + 0.3)
    h2 = math.tanh(2.0 * 0.2 + 0.5 * h1 + 0.3)
    assert out.shape == (1,)
    assert abs(out[0] - h2) < 1e-12


def test_lstm_single_step_hand_value():
    params = zeroed(small_params("lstm", input_dim=1, hidden_dim=1))
    set_scalar_params(params, w=1.0, u=0.0, b=0.0)
    out = encode_block(params, 0, np.array([[0.5]]))
    gate = sigmoid(0.5)
    cand = math.tanh(0.5)
    c = gate * cand  # forget term drops out: previous cell state is zero
    expected = gate * math.tanh(c)
    assert abs(out[0] - expected) < 1e-12


def test_lstm_forget_on_candidate_variant_differs():
    params = zeroed(small_params("lstm", input_dim=1, hidden_dim=1,
                                 forget_on_candidate=True))
    set_scalar_params(params, w=1.0, u=0.0, b=0.0)
    out = encode_block(params, 0, np.array([[0.5]]))
    gate = sigmoid(0.5)
    cand = math.tanh(0.5)
    c = (gate + gate) * cand  # input and forget gates both scale the candidate
    expected = gate * math.tanh(c)
    assert abs(out[0] - expected) < 1e-12
    standard = zeroed(small_params("lstm", input_dim=1, hidden_dim=1))
    set_scalar_params(standard, w=1.0, u=0.0, b=0.0)
    two_step = np.array([[0.5], [0.25]])
    assert not np.allclose(encode_block(params, 0, two_step),
                           encode_block(standard, 0, two_step))


def test_gru_two_step_hand_value():
    params = zeroed(small_params("gru", input_dim=1, hidden_dim=1))
    set_scalar_params(params, w=1.0, u=1.0, b=0.0)
    out = encode_block(params, 0, np.array([[0.5], [0.25]]))
    z0 = sigmoid(0.5)
    h0 = z0 * math.tanh(0.5)
    z1 = sigmoid(0.25 + h0)
    r1 = sigmoid(0.25 + h0)
    cand1 = math.tanh(0.25 + r1 * h0)
    h1 = (1.0 - z1) * h0 + z1 * cand1
    assert abs(out[0] - h1) < 1e-12


def test_towers_are_independent():
    params = small_params("lstm", seed=3)
    seq = np.random.default_rng(4).normal(size=(4, 3))
    before = encode_block(params, 0, seq)
    for lp in params.towers[1]:
        for g in lp.W:
            lp.W[g][:] = 9.0
    after = encode_block(params, 0, seq)
    np.testing.assert_array_equal(before, after)
    assert not np.allclose(encode_block(params, 1, seq), after)


@pytest.mark.parametrize("cell", ["lstm", "gru", "rnn"])
def test_order_sensitivity(cell):
    params = small_params(cell, seed=7)
    rng = np.random.default_rng(8)
    a = rng.normal(size=(1, 3))
    b = rng.normal(size=(1, 3))
    fwd = encode_block(params, 0, np.vstack([a, b]))
    rev = encode_block(params, 0, np.vstack([b, a]))
    assert not np.allclose(fwd, rev)


def test_similarity_values():
    assert similarity(np.array([1.0, 2.0]), np.array([1.0, 2.0])) == 1.0
    got = similarity(np.array([1.0, 0.0]), np.array([0.0, 2.0]))
    assert abs(got - math.exp(-3.0)) < 1e-15
    with pytest.raises(DimMismatch):
        similarity(np.zeros(2), np.zeros(3))


def test_encode_rejects_bad_input():
    params = small_params("rnn")
    with pytest.raises(EmptySequence):
        encode_block(params, 0, np.zeros((0, 3)))
    with pytest.raises(DimMismatch):
        encode_block(params, 0, np.zeros((2, 5)))
    with pytest.raises(BadConfig):
        encode_block(params, 2, np.zeros((2, 3)))


def test_pair_loss_empty_batch():
    with pytest.raises(EmptyBatch):
        pair_loss(small_params("rnn"), [])


GRADCHECK_CASES = [
    ("lstm", 1, False),
    ("lstm", 2, False),
    ("lstm", 1, True),
    ("lstm", 2, True),
    ("gru", 1, False),
    ("gru", 2, False),
    ("rnn", 1, False),
    ("rnn", 2, False),
]


@pytest.mark.parametrize("cell,layers,variant", GRADCHECK_CASES)
def test_gradient_check(cell, layers, variant):
    params = small_params(cell, layers=layers, seed=11,
                          forget_on_candidate=variant)
    rng = np.random.default_rng(12)
    seq1 = rng.normal(size=(3, 3))
    seq2 = rng.normal(size=(2, 3))
    err = gradient_check(params, (seq1, 0, seq2, 1, 1), eps=1e-5)
    assert err < 1e-4
    err = gradient_check(params, (seq1, 0, seq2, 0, 0), eps=1e-5)
    assert err < 1e-4


def _toy_vectorizer(dims=4):
    tokens = ["ADD A,B", "SUB B,C", "MUL C,D", "NOP"]
    rng = np.random.default_rng(21)
    out = {}
    for arch in (Arch.X86_64, Arch.ARM):
        vocab = Vocabulary(tokens)
        matrix = EmbeddingMatrix(vectors=rng.normal(size=(dims, len(tokens))),
                                 arch=arch)
        out[arch] = (matrix, vocab)
    return BlockVectorizer(out, (Arch.X86_64, Arch.ARM))


def _toy_pairs():
    tokens = ["ADD A,B", "SUB B,C", "MUL C,D", "NOP"]
    seqs = [
        (tokens[0], tokens[1]),
        (tokens[1], tokens[2], tokens[3]),
        (tokens[3], tokens[0]),
        (tokens[2],),
    ]
    pairs = []
    for i, s in enumerate(seqs):
        a = BasicBlock(id=i, arch=Arch.X86_64, opt=Opt.O2, instrs=s)
        b = BasicBlock(id=i, arch=Arch.ARM, opt=Opt.O2, instrs=s)
        pairs.append(BlockPair(a=a, b=b, label=1))
        other = seqs[(i + 1) % len(seqs)]
        c = BasicBlock(id=100 + i, arch=Arch.ARM, opt=Opt.O2, instrs=other)
        pairs.append(BlockPair(a=a, b=c, label=0))
    return pairs


def test_train_zero_epochs_returns_initial():
    vec = _toy_vectorizer()
    pairs = _toy_pairs()
    cfg = EncoderConfig(layers=1, input_dim=4, hidden_dim=3, cell="rnn",
                        epochs=0, seed=5)
    params = init_params(cfg)
    best, history = train(params, pairs, pairs, vec)
    assert history == []
    for (_, a), (_, b) in zip(iter_arrays(params), iter_arrays(best)):
        np.testing.assert_array_equal(a, b)


def test_train_improves_and_is_deterministic():
    vec = _toy_vectorizer()
    pairs = _toy_pairs()
    cfg = EncoderConfig(layers=1, input_dim=4, hidden_dim=3, cell="gru",
                        epochs=12, lr=0.2, seed=5)
    best, history = train(init_params(cfg), pairs, pairs, vec)
    assert len(history) == 12
    assert history[-1][1] >= history[0][1]
    assert max(auc for _, auc in history) == pytest.approx(1.0)

    best2, history2 = train(init_params(cfg), pairs, pairs, vec)
    assert history == history2
    for (_, a), (_, b) in zip(iter_arrays(best), iter_arrays(best2)):
        np.testing.assert_array_equal(a, b)


def test_train_keeps_best_validation_params():
    vec = _toy_vectorizer()
    pairs = _toy_pairs()
    cfg = EncoderConfig(layers=1, input_dim=4, hidden_dim=3, cell="rnn",
                        epochs=6, lr=0.3, seed=9)
    best, history = train(init_params(cfg), pairs, pairs, vec)
    best_auc = max(auc for _, auc in history)
    from xasm.encoder import score_pairs

    examples = [vec.example(p) for p in pairs]
    from xasm.evalmetrics import roc_auc

    auc, _ = roc_auc(score_pairs(best, examples))
    assert auc == pytest.approx(best_auc)


def test_train_patience_stops_early():
    vec = _toy_vectorizer()
    pairs = _toy_pairs()
    cfg = EncoderConfig(layers=1, input_dim=4, hidden_dim=3, cell="rnn",
                        epochs=50, lr=0.2, seed=5, patience=2)
    _, history = train(init_params(cfg), pairs, pairs, vec)
    assert len(history) < 50


def test_train_requires_data():
    vec = _toy_vectorizer()
    pairs = _toy_pairs()
    cfg = EncoderConfig(layers=1, input_dim=4, hidden_dim=3, cell="rnn",
                        epochs=1)
    with pytest.raises(EmptyDataset):
        train(init_params(cfg), [], pairs, vec)
    with pytest.raises(EmptyDataset):
        train(init_params(cfg), pairs, [], vec)


def test_vectorizer_tower_routing():
    vec = _toy_vectorizer()
    assert vec.tower_for(Arch.X86_64) == 0
    assert vec.tower_for(Arch.ARM) == 1
    same = BlockVectorizer(vec.embeddings, (Arch.ARM, Arch.ARM))
    assert same.tower_for(Arch.ARM) == 0
    with pytest.raises(BadConfig):
        same.tower_for(Arch.X86_64)


def test_block_encoder_caches_and_scores():
    vec = _toy_vectorizer()
    pairs = _toy_pairs()
    cfg = EncoderConfig(layers=1, input_dim=4, hidden_dim=3, cell="lstm",
                        epochs=0, seed=2)
    enc = BlockEncoder(init_params(cfg), vec)
    a = pairs[0].a
    v1 = enc.embed(a)
    v2 = enc.embed(a)
    assert v1 is v2
    assert 0.0 < enc.similarity(pairs[0].a, pairs[0].b) <= 1.0
    assert enc.similarity(a, a) == 1.0


@pytest.mark.parametrize("cell,variant", [("lstm", False), ("lstm", True),
                                          ("gru", False), ("rnn", False)])
def test_save_load_roundtrip(tmp_path, cell, variant):
    params = small_params(cell, layers=2, seed=13, forget_on_candidate=variant)
    history = [(0.5, 0.8), (0.25, 0.9)]
    path = tmp_path / "enc.bin"
    save_encoder(path, params, history=history,
                 extra_meta={"tower_archs": ["x86_64", "arm"]})
    loaded, meta = load_encoder(path)
    assert loaded.config.cell == cell
    assert loaded.config.layers == 2
    assert loaded.config.forget_on_candidate is variant
    assert meta["history"] == [[0.5, 0.8], [0.25, 0.9]]
    assert meta["tower_archs"] == ["x86_64", "arm"]
    for (na, a), (nb, b) in zip(iter_arrays(params), iter_arrays(loaded)):
        assert na == nb
        np.testing.assert_allclose(a, b, atol=1e-6)
    seq = np.random.default_rng(0).normal(size=(4, 3))
    np.testing.assert_allclose(encode_block(params, 0, seq),
                               encode_block(loaded, 0, seq), atol=1e-5)


def test_load_rejects_bad_magic(tmp_path):
    path = tmp_path / "enc.bin"
    path.write_bytes(b"NOPE" + b"\x00" * 64)
    with pytest.raises(MalformedRecord):
        load_encoder(path)


def test_load_rejects_truncation(tmp_path):
    params = small_params("rnn")
    path = tmp_path / "enc.bin"
    save_encoder(path, params)
    data = path.read_bytes()
    path.write_bytes(data[:-8])
    with pytest.raises(MalformedRecord):
        load_encoder(path)


def test_init_is_seeded_and_glorot_bounded():
    a = small_params("lstm", seed=1)
    b = small_params("lstm", seed=1)
    c = small_params("lstm", seed=2)
    for (_, x), (_, y) in zip(iter_arrays(a), iter_arrays(b)):
        np.testing.assert_array_equal(x, y)
    assert any(not np.array_equal(x, y)
               for (_, x), (_, y) in zip(iter_arrays(a), iter_arrays(c)))
    lim = math.sqrt(6.0 / (3 + 4))
    for name, arr in iter_arrays(a):
        if ".W_" in name:
            assert np.abs(arr).max() <= lim + 1e-12
    forget = a.towers[0][0].b["f"]
    np.testing.assert_array_equal(forget, np.ones(4))


def test_config_validation():
    with pytest.raises(BadConfig):
        EncoderConfig(cell="peephole").validate()
    with pytest.raises(BadConfig):
        EncoderConfig(layers=0).validate()
    with pytest.raises(BadConfig):
        EncoderConfig(lr=0.0).validate()
