import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from xasm import corpus
from xasm.corpus import (
    Arch,
    Opt,
    build_vocabulary,
    normalize_instruction,
    oov_rate,
    parse_corpus,
    parse_cfg,
    vocab_growth,
    write_cfg,
    write_corpus,
)
from xasm.errors import (
    DuplicateBlockOrdinal,
    EmptyCorpus,
    EmptyInstruction,
    MalformedRecord,
)

X = Arch.X86_64
A = Arch.ARM


@pytest.mark.parametrize("raw,expected", [
    ("MOVL %ESI, $.L.STR.31", "MOVL ESI,<STR>"),
    ("MOVL %EDX, $3", "MOVL EDX,0"),
    ("MOVQ %RDI, %RAX", "MOVQ RDI,RAX"),
    ("CALLQ STRNCMP", "CALLQ FOO"),
    ("TESTL %EAX, %EAX", "TESTL EAX,EAX"),
    ("JE .LBB0_5", "JE <TAG>"),
])
def test_normalize_reference_lines(raw, expected):
    assert normalize_instruction(raw, X) == expected


def test_normalize_case_and_spacing():
    assert normalize_instruction("  movl   %esi ,  $.l.str.0 ", X) == "MOVL ESI,<STR>"
    assert normalize_instruction("ret", X) == "RET"


def test_normalize_numbers():
    assert normalize_instruction("MOVL %EAX, $-17", X) == "MOVL EAX,-0"
    assert normalize_instruction("ADDQ %RAX, $0x1F", X) == "ADDQ RAX,0"
    assert normalize_instruction("MOVQ %RAX, [RBP-8]", X) == "MOVQ RAX,[RBP-0]"
    assert normalize_instruction("MOVZBL %R12D, [RBX+4]", X) == "MOVZBL R12D,[RBX+0]"
    # bare hex without the 0x prefix is a symbol, not a number
    assert normalize_instruction("MOVL %EAX, 1F", X) == "MOVL EAX,<TAG>"


def test_normalize_arm_flavors():
    assert normalize_instruction("LDMIB R5, {R0, R1}", A) == "LDMIB R5,{R0,R1}"
    assert normalize_instruction("ADD R0, R1, #12", A) == "ADD R0,R1,0"
    assert normalize_instruction("BL memcpy", A) == "BL FOO"
    assert normalize_instruction("BNE .LBB2_7", A) == "BNE <TAG>"
    assert normalize_instruction("LDR R7, .LCPI0_0", A) == "LDR R7,<TAG>"
    assert normalize_instruction("STR R1, [SP, #-4]!", A) == "STR R1,[SP,-0]!"


def test_normalize_call_to_local_label_is_tag():
    assert normalize_instruction("CALLQ .LBB0_5", X) == "CALLQ <TAG>"


def test_normalize_quoted_literal():
    assert normalize_instruction("PSEUDO %EAX, \"fmt str\"", X) == "PSEUDO EAX,<STR>"


def test_normalize_blank_raises():
    with pytest.raises(EmptyInstruction):
        normalize_instruction("   ", X)


def test_normalize_idempotent_on_reference_lines():
    lines = [
        "MOVL %ESI, $.L.STR.31", "MOVL %EDX, $3", "MOVQ %RDI, %RAX",
        "CALLQ STRNCMP", "TESTL %EAX, %EAX", "JE .LBB0_5",
        "MOVQ %RDX, GLOB+[RIP+8]",
    ]
    for raw in lines:
        once = normalize_instruction(raw, X)
        assert normalize_instruction(once, X) == once


_OPCODES = ["MOVL", "MOVQ", "ADDQ", "SUBL", "CMPQ", "JE", "JNE", "CALLQ", "TESTL"]
_OPERANDS = [
    "%eax", "%rbx", "%r12d", "$42", "$-3", "$0x10", "$.L.str.9",
    ".LBB1_2", "some_sym", "[RBP-16]", "[RAX+RBX*4]", "%xmm3",
]


@st.composite
def _instructions(draw):
    opcode = draw(st.sampled_from(_OPCODES))
    ops = draw(st.lists(st.sampled_from(_OPERANDS), min_size=0, max_size=3))
    sep = draw(st.sampled_from([", ", ",", " , "]))
    return opcode + (" " + sep.join(ops) if ops else "")


@given(_instructions())
@settings(max_examples=300, deadline=None)
def test_normalize_idempotent_and_deterministic(instr):
    first = normalize_instruction(instr, X)
    assert normalize_instruction(instr, X) == first
    assert normalize_instruction(first, X) == first


def _write_lines(path, records):
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec) + "\n")


def _fn(name, arch, blocks, opt="O1"):
    return {"fn": name, "arch": arch, "opt": opt, "blocks": blocks}


def test_parse_corpus_roundtrip(tmp_path):
    path = tmp_path / "c.jsonl"
    _write_lines(path, [
        _fn("f", "x86_64", [
            {"id": 0, "instrs": ["movl %eax, $5", "je .LBB0_1"]},
            {"id": 1, "instrs": ["retq"]},
        ]),
        _fn("g", "arm", [{"id": 0, "instrs": ["add r0, r1, #2"]}], opt="O3"),
    ])
    c = parse_corpus(path)
    assert [fn.name for fn in c.functions] == ["f", "g"]
    blocks = list(c.iter_blocks())
    assert blocks[0].instrs == ("MOVL EAX,0", "JE <TAG>")
    assert blocks[2].arch is Arch.ARM and blocks[2].opt is Opt.O3

    out = tmp_path / "out.jsonl"
    write_corpus(c, out)
    again = parse_corpus(out)
    assert again == c


def test_parse_corpus_reports_line_numbers(tmp_path):
    path = tmp_path / "bad.jsonl"
    with open(path, "w") as fh:
        fh.write(json.dumps(_fn("f", "x86_64", [{"id": 0, "instrs": ["nop"]}])) + "\n")
        fh.write("{oops\n")
    with pytest.raises(MalformedRecord) as exc:
        parse_corpus(path)
    assert exc.value.line == 2


@pytest.mark.parametrize("rec", [
    {"fn": "f", "arch": "x86_64", "blocks": [{"id": 0, "instrs": ["nop"]}]},
    _fn("f", "mips", [{"id": 0, "instrs": ["nop"]}]),
    _fn("f", "x86_64", [{"id": -1, "instrs": ["nop"]}]),
    _fn("f", "x86_64", [{"id": 0, "instrs": []}]),
    _fn("f", "x86_64", []),
    _fn("f", "x86_64", [{"id": 0, "instrs": ["nop"]}], opt="O5"),
])
def test_parse_corpus_malformed(tmp_path, rec):
    path = tmp_path / "bad.jsonl"
    _write_lines(path, [rec])
    with pytest.raises(MalformedRecord):
        parse_corpus(path)


def test_parse_corpus_duplicate_block_id(tmp_path):
    path = tmp_path / "dup.jsonl"
    _write_lines(path, [_fn("f", "x86_64", [
        {"id": 3, "instrs": ["nop"]},
        {"id": 3, "instrs": ["retq"]},
    ])])
    with pytest.raises(DuplicateBlockOrdinal):
        parse_corpus(path)


def test_parse_corpus_shared_ids_across_archs_ok(tmp_path):
    path = tmp_path / "ok.jsonl"
    _write_lines(path, [
        _fn("f", "x86_64", [{"id": 7, "instrs": ["nop"]}]),
        _fn("f", "arm", [{"id": 7, "instrs": ["nop"]}]),
    ])
    c = parse_corpus(path)
    assert len(list(c.iter_blocks())) == 2


def test_vocabulary_order_and_counts(tmp_path):
    path = tmp_path / "c.jsonl"
    _write_lines(path, [_fn("f", "x86_64", [
        {"id": 0, "instrs": ["retq", "nop", "retq"]},
        {"id": 1, "instrs": ["nop", "cltq"]},
    ])])
    v = build_vocabulary(parse_corpus(path))
    assert v.index_to_token == ["RETQ", "NOP", "CLTQ"]
    assert v.counts == {"RETQ": 2, "NOP": 2, "CLTQ": 1}
    assert v.index("NOP") == 1 and v.token(2) == "CLTQ"


def test_vocabulary_empty_corpus():
    with pytest.raises(EmptyCorpus):
        build_vocabulary(corpus.Corpus())


def test_vocab_growth_single_token():
    c = corpus.Corpus([corpus.FunctionRecord(
        "f", X, Opt.O1,
        (corpus.BasicBlock(0, X, Opt.O1, ("RETQ",)),),
    )])
    assert vocab_growth(c, 4) == [(0.25, 1), (0.5, 1), (0.75, 1), (1.0, 1)]


def test_vocab_growth_monotone_and_total(tmp_path):
    path = tmp_path / "c.jsonl"
    _write_lines(path, [_fn("f", "x86_64", [
        {"id": i, "instrs": [f"op{i % 4} %eax", "retq"]} for i in range(10)
    ])])
    c = parse_corpus(path)
    points = vocab_growth(c, 5)
    sizes = [s for _, s in points]
    assert sizes == sorted(sizes)
    assert sizes[-1] == len(build_vocabulary(c))


def test_oov_rate():
    def mk(tokens):
        blocks = tuple(
            corpus.BasicBlock(i, X, Opt.O1, (t,)) for i, t in enumerate(tokens)
        )
        return corpus.Corpus([corpus.FunctionRecord("f", X, Opt.O1, blocks)])

    vocab = build_vocabulary(mk(["A", "B"]))
    assert oov_rate(vocab, mk(["A", "B", "A"])) == 0.0
    assert oov_rate(vocab, mk(["C", "D"])) == 1.0
    assert oov_rate(vocab, mk(["A", "C", "B", "C"])) == 0.5
    with pytest.raises(EmptyCorpus):
        oov_rate(vocab, corpus.Corpus())


def test_normalized_vocab_never_larger_than_raw(tmp_path):
    path = tmp_path / "c.jsonl"
    _write_lines(path, [_fn("f", "x86_64", [
        {"id": i, "instrs": [f"movl %eax, ${i}", f"call fn_{i}"]}
        for i in range(30)
    ])])
    raw_v = build_vocabulary(parse_corpus(path, normalize=False))
    norm_v = build_vocabulary(parse_corpus(path))
    assert len(norm_v) <= len(raw_v)
    assert len(norm_v) == 2  # MOVL EAX,0 and CALL FOO


def _cfg_obj(nodes, edges, entry=0, arch="x86_64"):
    return {
        "arch": arch, "opt": "O1", "entry": entry,
        "nodes": [{"id": i, "instrs": ins} for i, ins in enumerate(nodes)],
        "edges": edges,
    }


def test_parse_cfg_roundtrip(tmp_path):
    path = tmp_path / "g.json"
    with open(path, "w") as fh:
        json.dump(_cfg_obj([["nop"], ["retq"]], [[0, 1]]), fh)
    g = parse_cfg(path)
    assert g.entry == 0
    assert g.successors(0) == [1] and g.successors(1) == []
    out = tmp_path / "g2.json"
    write_cfg(g, out)
    assert parse_cfg(out) == g


def test_normalize_cfg_matches_parse_time_normalization(tmp_path):
    path = tmp_path / "g.json"
    with open(path, "w") as fh:
        json.dump(_cfg_obj([["movl %eax, $5"], ["je .LBB0_1"]], [[0, 1]]), fh)
    raw = parse_cfg(path, normalize=False)
    assert corpus.normalize_cfg(raw) == parse_cfg(path)
    assert raw.nodes[0].instrs == ("movl %eax, $5",)  # input untouched


def test_parse_cfg_rejects_unreachable(tmp_path):
    path = tmp_path / "g.json"
    with open(path, "w") as fh:
        json.dump(_cfg_obj([["nop"], ["retq"], ["cltq"]], [[0, 1]]), fh)
    with pytest.raises(MalformedRecord):
        parse_cfg(path)


def test_parse_cfg_rejects_bad_edges(tmp_path):
    path = tmp_path / "g.json"
    with open(path, "w") as fh:
        json.dump(_cfg_obj([["nop"]], [[0, 4]]), fh)
    with pytest.raises(MalformedRecord):
        parse_cfg(path)
