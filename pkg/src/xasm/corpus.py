"""Corpus handling: instruction normalization, corpus/CFG parsing, vocabulary.

A corpus is a JSON-lines file, one function per line:

    {"fn": str, "arch": "x86_64"|"arm", "opt": "O1"|"O2"|"O3",
     "blocks": [{"id": uint, "instrs": [str, ...]}, ...]}

Instructions are normalized on load: register sigils stripped, numeric
constants collapsed to 0 (sign kept), string literals to <STR>, call targets
to FOO, remaining symbols to <TAG>, everything uppercased with canonical
spacing (one space after the opcode, commas without surrounding spaces).
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

from .errors import (
    DuplicateBlockOrdinal,
    EmptyCorpus,
    EmptyInstruction,
    MalformedRecord,
)


class Arch(str, Enum):
    X86_64 = "x86_64"
    ARM = "arm"


class Opt(str, Enum):
    O1 = "O1"
    O2 = "O2"
    O3 = "O3"


STR_TOKEN = "<STR>"
TAG_TOKEN = "<TAG>"
CALL_TOKEN = "FOO"

# Opcodes whose (non-local-label) operand is a direct call target.
CALL_OPCODES = frozenset({"CALL", "CALLQ", "BL", "BLX"})


def _x86_registers() -> frozenset[str]:
    regs = set()
    for base in "AX BX CX DX SI DI BP SP".split():
        regs.update({f"R{base}", f"E{base}", base})
    regs.update({"AL", "BL", "CL", "DL", "AH", "BH", "CH", "DH",
                 "SIL", "DIL", "BPL", "SPL"})
    for n in range(8, 16):
        regs.update({f"R{n}", f"R{n}D", f"R{n}W", f"R{n}B"})
    for n in range(16):
        regs.update({f"XMM{n}", f"YMM{n}"})
    regs.update({"RIP", "EIP", "RFLAGS", "EFLAGS",
                 "CS", "DS", "ES", "FS", "GS", "SS"})
    return frozenset(regs)


def _arm_registers() -> frozenset[str]:
    regs = {f"R{n}" for n in range(16)}
    regs.update({"SP", "LR", "PC", "FP", "IP", "SL", "SB", "CPSR", "APSR"})
    for n in range(32):
        regs.update({f"S{n}", f"D{n}"})
    for n in range(16):
        regs.add(f"Q{n}")
    # 64-bit names, so AArch64 listings pass through unharmed
    for n in range(31):
        regs.update({f"X{n}", f"W{n}"})
    regs.update({"XZR", "WZR"})
    return frozenset(regs)


_REGISTERS = {Arch.X86_64: _x86_registers(), Arch.ARM: _arm_registers()}

_ATOM_CHARS = frozenset(
    "ABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789_.@\"'"
)
_PLACEHOLDERS = (STR_TOKEN, TAG_TOKEN)


def _is_int_literal(atom: str) -> bool:
    body = atom
    if body.startswith("0X"):
        try:
            int(body, 16)
            return True
        except ValueError:
            return False
    try:
        int(body, 10)
        return True
    except ValueError:
        return False


def _scan_operand(op: str) -> list[tuple[bool, str]]:
    """Split an operand into (is_atom, text) pieces.

    <STR> and <TAG> are recognized as single atoms so normalized text
    rescans to itself. Whitespace separators are dropped.
    """
    pieces: list[tuple[bool, str]] = []
    i, n = 0, len(op)
    while i < n:
        matched = False
        for ph in _PLACEHOLDERS:
            if op.startswith(ph, i):
                pieces.append((True, ph))
                i += len(ph)
                matched = True
                break
        if matched:
            continue
        ch = op[i]
        if ch in _ATOM_CHARS:
            j = i
            while j < n and op[j] in _ATOM_CHARS and not any(
                op.startswith(ph, j) for ph in _PLACEHOLDERS
            ):
                j += 1
            pieces.append((True, op[i:j]))
            i = j
        else:
            if not ch.isspace():
                pieces.append((False, ch))
            i += 1
    return pieces


def _classify_atom(atom: str, registers: frozenset[str], is_call: bool) -> str:
    if atom in _PLACEHOLDERS:
        return atom
    if atom in registers:
        return atom
    if _is_int_literal(atom):
        return "0"
    if atom.startswith(".L.STR") or atom[0] in "\"'":
        return STR_TOKEN
    if is_call and not atom.startswith("."):
        return CALL_TOKEN
    return TAG_TOKEN


def _split_operands(text: str) -> list[str]:
    ops, depth, cur = [], 0, []
    for ch in text:
        if ch in "([{":
            depth += 1
        elif ch in ")]}":
            depth -= 1
        if ch == "," and depth == 0:
            ops.append("".join(cur))
            cur = []
        else:
            cur.append(ch)
    ops.append("".join(cur))
    return ops


def normalize_instruction(text: str, arch: Arch) -> str:
    """Normalize one raw instruction into its canonical token string."""
    stripped = text.strip()
    if not stripped:
        raise EmptyInstruction("blank instruction")
    upper = stripped.upper()
    head = upper.split(None, 1)
    opcode = head[0]
    if len(head) == 1:
        return opcode
    registers = _REGISTERS[arch]
    is_call = opcode in CALL_OPCODES
    rendered = []
    for op in _split_operands(head[1]):
        op = op.strip()
        if op and op[0] in "\"'":
            rendered.append(STR_TOKEN)
            continue
        # immediate/register sigils carry no information after classification
        op = op.replace("%", "").replace("$", "").replace("#", "")
        out = []
        for is_atom, piece in _scan_operand(op):
            out.append(_classify_atom(piece, registers, is_call)
                       if is_atom else piece)
        rendered.append("".join(out))
    return f"{opcode} " + ",".join(rendered)


@dataclass(frozen=True)
class BasicBlock:
    id: int
    arch: Arch
    opt: Opt
    instrs: tuple[str, ...]

    def __len__(self) -> int:
        return len(self.instrs)


@dataclass(frozen=True)
class FunctionRecord:
    name: str
    arch: Arch
    opt: Opt
    blocks: tuple[BasicBlock, ...]


@dataclass
class Corpus:
    functions: list[FunctionRecord] = field(default_factory=list)

    def iter_blocks(self):
        for fn in self.functions:
            yield from fn.blocks

    def iter_instructions(self):
        for block in self.iter_blocks():
            yield from block.instrs

    def total_instructions(self) -> int:
        return sum(len(b) for b in self.iter_blocks())

    def archs(self) -> set[Arch]:
        return {fn.arch for fn in self.functions}


class Vocabulary:
    """Bijective token <-> dense index map with occurrence counts.

    Indices follow first-occurrence order, so the map is stable for a fixed
    corpus.
    """

    def __init__(self, tokens: list[str], counts: dict[str, int] | None = None):
        self.index_to_token = list(tokens)
        self.token_to_index = {t: i for i, t in enumerate(self.index_to_token)}
        if len(self.token_to_index) != len(self.index_to_token):
            raise ValueError("duplicate tokens in vocabulary")
        self.counts = dict(counts) if counts else {t: 0 for t in tokens}

    def __len__(self) -> int:
        return len(self.index_to_token)

    def __contains__(self, token: str) -> bool:
        return token in self.token_to_index

    def index(self, token: str) -> int:
        return self.token_to_index[token]

    def token(self, index: int) -> str:
        return self.index_to_token[index]


def _parse_enum(kind, value, line):
    try:
        return kind(value)
    except ValueError:
        raise MalformedRecord(f"bad {kind.__name__} value {value!r}", line)


def _parse_block(rec, arch: Arch, opt: Opt, line: int, normalize: bool) -> BasicBlock:
    if not isinstance(rec, dict):
        raise MalformedRecord("block record is not an object", line)
    bid = rec.get("id")
    if not isinstance(bid, int) or isinstance(bid, bool) or bid < 0:
        raise MalformedRecord(f"block id {bid!r} is not an unsigned integer", line)
    instrs = rec.get("instrs")
    if not isinstance(instrs, list) or not instrs:
        raise MalformedRecord(f"block {bid} has no instruction list", line)
    if not all(isinstance(s, str) for s in instrs):
        raise MalformedRecord(f"block {bid} has non-string instructions", line)
    if normalize:
        try:
            toks = tuple(normalize_instruction(s, arch) for s in instrs)
        except EmptyInstruction:
            raise MalformedRecord(f"block {bid} contains a blank instruction", line)
    else:
        toks = tuple(s.strip() for s in instrs)
        if not all(toks):
            raise MalformedRecord(f"block {bid} contains a blank instruction", line)
    return BasicBlock(id=bid, arch=arch, opt=opt, instrs=toks)


def _parse_function(obj, line: int, normalize: bool) -> FunctionRecord:
    if not isinstance(obj, dict):
        raise MalformedRecord("record is not a JSON object", line)
    for key in ("fn", "arch", "opt", "blocks"):
        if key not in obj:
            raise MalformedRecord(f"missing key {key!r}", line)
    arch = _parse_enum(Arch, obj["arch"], line)
    opt = _parse_enum(Opt, obj["opt"], line)
    if not isinstance(obj["blocks"], list) or not obj["blocks"]:
        raise MalformedRecord("function has no blocks", line)
    blocks = tuple(
        _parse_block(rec, arch, opt, line, normalize) for rec in obj["blocks"]
    )
    seen = set()
    for b in blocks:
        if b.id in seen:
            raise DuplicateBlockOrdinal(
                f"line {line}: block id {b.id} repeats within function {obj['fn']!r}"
            )
        seen.add(b.id)
    return FunctionRecord(name=str(obj["fn"]), arch=arch, opt=opt, blocks=blocks)


def parse_corpus(path: str | Path, normalize: bool = True) -> Corpus:
    """Load a JSON-lines corpus, normalizing instructions unless told not to."""
    functions = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            if not raw.strip():
                continue
            try:
                obj = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise MalformedRecord(f"invalid JSON ({exc.msg})", line_no)
            functions.append(_parse_function(obj, line_no, normalize))
    return Corpus(functions=functions)


def write_corpus(corpus: Corpus, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for fn in corpus.functions:
            obj = {
                "fn": fn.name,
                "arch": fn.arch.value,
                "opt": fn.opt.value,
                "blocks": [
                    {"id": b.id, "instrs": list(b.instrs)} for b in fn.blocks
                ],
            }
            fh.write(json.dumps(obj, separators=(",", ":")) + "\n")


def normalize_corpus(corpus: Corpus) -> Corpus:
    """Normalized copy of an in-memory corpus (same shape, rewritten text)."""
    functions = []
    for fn in corpus.functions:
        blocks = tuple(
            BasicBlock(
                id=b.id,
                arch=b.arch,
                opt=b.opt,
                instrs=tuple(normalize_instruction(t, b.arch) for t in b.instrs),
            )
            for b in fn.blocks
        )
        functions.append(FunctionRecord(fn.name, fn.arch, fn.opt, blocks))
    return Corpus(functions)


def normalize_cfg(cfg: "Cfg") -> "Cfg":
    """Normalized copy of an in-memory graph; structure untouched."""
    nodes = [
        BasicBlock(
            id=b.id,
            arch=b.arch,
            opt=b.opt,
            instrs=tuple(normalize_instruction(t, b.arch) for t in b.instrs),
        )
        for b in cfg.nodes
    ]
    return Cfg(arch=cfg.arch, opt=cfg.opt, nodes=nodes,
               edges=list(cfg.edges), entry=cfg.entry)


def build_vocabulary(corpus: Corpus) -> Vocabulary:
    """Vocabulary over every instruction occurrence, first-occurrence order."""
    counts: Counter[str] = Counter()
    order: list[str] = []
    for tok in corpus.iter_instructions():
        if tok not in counts:
            order.append(tok)
        counts[tok] += 1
    if not order:
        raise EmptyCorpus("corpus has no instructions")
    return Vocabulary(order, counts)


def vocab_growth(corpus: Corpus, parts: int) -> list[tuple[float, int]]:
    """Cumulative vocabulary size at equal fractions of the corpus stream."""
    if parts < 1:
        raise ValueError("parts must be >= 1")
    stream = list(corpus.iter_instructions())
    n = len(stream)
    if n == 0:
        raise EmptyCorpus("corpus has no instructions")
    points = []
    seen: set[str] = set()
    consumed = 0
    for i in range(1, parts + 1):
        upto = -(-i * n // parts)  # ceil
        for tok in stream[consumed:upto]:
            seen.add(tok)
        consumed = upto
        points.append((i / parts, len(seen)))
    return points


def oov_rate(vocab: Vocabulary, heldout: Corpus) -> float:
    """Fraction of held-out instruction occurrences missing from vocab."""
    total = 0
    missing = 0
    for tok in heldout.iter_instructions():
        total += 1
        if tok not in vocab:
            missing += 1
    if total == 0:
        raise EmptyCorpus("held-out corpus has no instructions")
    return missing / total


@dataclass
class Cfg:
    """Control-flow graph over basic blocks; edges use node ordinals."""

    arch: Arch
    opt: Opt
    nodes: list[BasicBlock]
    edges: list[tuple[int, int]]
    entry: int

    def __post_init__(self):
        self._succ: list[list[int]] | None = None

    def successors(self, ordinal: int) -> list[int]:
        if self._succ is None:
            succ: list[list[int]] = [[] for _ in self.nodes]
            for u, v in self.edges:
                succ[u].append(v)
            self._succ = [sorted(set(s)) for s in succ]
        return self._succ[ordinal]

    def __len__(self) -> int:
        return len(self.nodes)


def parse_cfg(path: str | Path, normalize: bool = True) -> Cfg:
    """Load a CFG JSON file and reject structurally broken graphs."""
    with open(path, "r", encoding="utf-8") as fh:
        try:
            obj = json.load(fh)
        except json.JSONDecodeError as exc:
            raise MalformedRecord(f"invalid JSON ({exc.msg})")
    if not isinstance(obj, dict):
        raise MalformedRecord("CFG file is not a JSON object")
    for key in ("arch", "opt", "entry", "nodes", "edges"):
        if key not in obj:
            raise MalformedRecord(f"missing key {key!r}")
    arch = _parse_enum(Arch, obj["arch"], None)
    opt = _parse_enum(Opt, obj["opt"], None)
    raw_nodes = obj["nodes"]
    if not isinstance(raw_nodes, list) or not raw_nodes:
        raise MalformedRecord("CFG has no nodes")
    nodes = [_parse_block(rec, arch, opt, None, normalize) for rec in raw_nodes]
    n = len(nodes)
    entry = obj["entry"]
    if not isinstance(entry, int) or isinstance(entry, bool) or not 0 <= entry < n:
        raise MalformedRecord(f"entry ordinal {entry!r} out of range")
    edges = []
    for e in obj["edges"]:
        if (not isinstance(e, list) or len(e) != 2
                or not all(isinstance(x, int) and not isinstance(x, bool) for x in e)
                or not all(0 <= x < n for x in e)):
            raise MalformedRecord(f"bad edge {e!r}")
        edges.append((e[0], e[1]))
    cfg = Cfg(arch=arch, opt=opt, nodes=nodes, edges=edges, entry=entry)
    reached = {entry}
    frontier = [entry]
    while frontier:
        u = frontier.pop()
        for v in cfg.successors(u):
            if v not in reached:
                reached.add(v)
                frontier.append(v)
    if len(reached) != n:
        missing = sorted(set(range(n)) - reached)
        raise MalformedRecord(f"nodes unreachable from entry: {missing}")
    return cfg


def write_cfg(cfg: Cfg, path: str | Path) -> None:
    obj = {
        "arch": cfg.arch.value,
        "opt": cfg.opt.value,
        "entry": cfg.entry,
        "nodes": [{"id": b.id, "instrs": list(b.instrs)} for b in cfg.nodes],
        "edges": [[u, v] for u, v in cfg.edges],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, separators=(",", ":"))
        fh.write("\n")
