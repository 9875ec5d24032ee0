"""Synthetic two-dialect assembly generator for end-to-end experiments.

Real cross-architecture corpora need a patched compiler toolchain, so the
test suite fabricates one instead: a bank of abstract operation templates,
each rendered into two dialects. The first dialect looks like x86-64 AT&T
output, the second like ARM assembler. Register bindings are drawn fresh for
every rendering, which means the two sides of a pair never share literal
text and a matcher has to work at the level the encoder is supposed to learn.

Shared block ids across the two corpora mark renderings of the same template
instance; the pair generator picks those up as the similar class.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field

from .corpus import Arch, BasicBlock, Cfg, Corpus, FunctionRecord, Opt

X86_POOL = ["rax", "rbx", "rcx", "rdx"]
ARM_POOL = ["r0", "r1", "r2", "r3"]

# opclass -> (x86 template, arm template); {a}/{b} are bound registers
_RENDER = {
    "load": ("movq %{a}, [%{b}+{imm}]", "ldr {a}, [{b}, #{imm}]"),
    "store": ("movq [%{a}+{imm}], %{b}", "str {b}, [{a}, #{imm}]"),
    "move": ("movq %{a}, %{b}", "mov {a}, {b}"),
    "add": ("addq %{a}, %{b}", "add {a}, {a}, {b}"),
    "sub": ("subq %{a}, %{b}", "sub {a}, {a}, {b}"),
    "mul": ("imulq %{a}, %{b}", "mul {a}, {a}, {b}"),
    "xor": ("xorq %{a}, %{b}", "eor {a}, {a}, {b}"),
    "and": ("andq %{a}, %{b}", "and {a}, {a}, {b}"),
    "loadimm": ("movq %{a}, ${imm}", "mov {a}, #{imm}"),
    "cmp": ("cmpq %{a}, %{b}", "cmp {a}, {b}"),
    "test": ("testq %{a}, %{a}", "tst {a}, {a}"),
    "shift": ("shlq %{a}, ${imm}", "lsl {a}, {a}, #{imm}"),
    "call": ("callq {fn}", "bl {fn}"),
    "branch": ("jne {lab}", "bne {lab}"),
}
OPCLASSES = sorted(_RENDER)

# First-order idiom bias for template generation. Compilers emit recognizable
# local patterns (a compare feeds a branch, loads feed arithmetic, stores end
# a computation), and the skip-gram stage depends on exactly that kind of
# co-occurrence regularity to place same-mnemonic tokens near each other.
_FOLLOW = {
    "load": ["add", "sub", "mul", "xor", "and", "shift", "cmp", "move"],
    "loadimm": ["add", "sub", "mul", "xor", "and", "shift", "cmp"],
    "move": ["add", "sub", "mul", "xor", "and", "store"],
    "add": ["add", "sub", "mul", "shift", "store", "cmp"],
    "sub": ["add", "mul", "xor", "store", "cmp", "test"],
    "mul": ["add", "sub", "shift", "store", "cmp"],
    "xor": ["and", "shift", "store", "test"],
    "and": ["xor", "shift", "store", "test"],
    "shift": ["add", "and", "store", "cmp"],
    "cmp": ["branch"],
    "test": ["branch"],
    "branch": ["load", "loadimm", "call", "move"],
    "store": ["load", "loadimm", "call", "move"],
    "call": ["move", "load", "loadimm", "test"],
}
_OPENERS = ["load", "loadimm", "move", "call"]
_FOLLOW_BIAS = 0.75


@dataclass(frozen=True)
class TemplateOp:
    opclass: str
    a: int
    b: int


Template = tuple[TemplateOp, ...]


def random_template(rng: random.Random, min_len: int = 4, max_len: int = 8,
                    var_count: int = 3) -> Template:
    length = rng.randint(min_len, max_len)
    ops = []
    opclass = rng.choice(_OPENERS)
    for _ in range(length):
        ops.append(TemplateOp(opclass, rng.randrange(var_count),
                              rng.randrange(var_count)))
        if rng.random() < _FOLLOW_BIAS:
            opclass = rng.choice(_FOLLOW[opclass])
        else:
            opclass = rng.choice(OPCLASSES)
    return tuple(ops)


def template_bank(rng: random.Random, count: int, min_len: int = 4,
                  max_len: int = 8, var_count: int = 3) -> list[Template]:
    """`count` distinct templates; rejection keeps the bank duplicate-free."""
    seen: set[Template] = set()
    bank: list[Template] = []
    attempts = 0
    while len(bank) < count:
        t = random_template(rng, min_len, max_len, var_count)
        attempts += 1
        if attempts > 100 * count:
            raise RuntimeError("template space exhausted; relax the bounds")
        if t in seen:
            continue
        seen.add(t)
        bank.append(t)
    return bank


def render_block(template: Template, dialect: str, rng: random.Random,
                 callees: list[str], labels: list[str],
                 var_count: int = 3) -> tuple[str, ...]:
    """Raw (un-normalized) text for one rendering of a template."""
    pool = X86_POOL if dialect == "x86" else ARM_POOL
    binding = rng.sample(pool, var_count)
    lines = []
    for op in template:
        pattern = _RENDER[op.opclass][0 if dialect == "x86" else 1]
        lines.append(pattern.format(
            a=binding[op.a],
            b=binding[op.b],
            imm=rng.randint(1, 64),
            fn=rng.choice(callees),
            lab=rng.choice(labels),
        ))
    return tuple(lines)


@dataclass
class SynthConfig:
    functions: int = 40
    blocks_per_function: int = 10
    min_len: int = 4
    max_len: int = 8
    var_count: int = 3
    callee_count: int = 24
    seed: int = 0


def make_parallel_corpora(cfg: SynthConfig) -> tuple[Corpus, Corpus]:
    """Two raw corpora over the same template instances and block ids.

    The first is the x86 dialect tagged x86_64, the second the ARM dialect
    tagged arm. Every template instance is unique, so two distinct block ids
    never render the same instruction stream and the dissimilar class stays
    clean.
    """
    rng = random.Random(cfg.seed)
    total = cfg.functions * cfg.blocks_per_function
    bank = template_bank(rng, total, cfg.min_len, cfg.max_len, cfg.var_count)
    callees = [f"helper_{i}" for i in range(cfg.callee_count)]
    funcs_x: list[FunctionRecord] = []
    funcs_y: list[FunctionRecord] = []
    block_id = 0
    for f in range(cfg.functions):
        labels = [f".LBB{f}_{k}" for k in range(cfg.blocks_per_function)]
        blocks_x = []
        blocks_y = []
        for _ in range(cfg.blocks_per_function):
            template = bank[block_id]
            blocks_x.append(BasicBlock(
                id=block_id, arch=Arch.X86_64, opt=Opt.O2,
                instrs=render_block(template, "x86", rng, callees, labels,
                                    cfg.var_count)))
            blocks_y.append(BasicBlock(
                id=block_id, arch=Arch.ARM, opt=Opt.O2,
                instrs=render_block(template, "arm", rng, callees, labels,
                                    cfg.var_count)))
            block_id += 1
        funcs_x.append(FunctionRecord(f"synth_{f}", Arch.X86_64, Opt.O2,
                                      tuple(blocks_x)))
        funcs_y.append(FunctionRecord(f"synth_{f}", Arch.ARM, Opt.O2,
                                      tuple(blocks_y)))
    return Corpus(funcs_x), Corpus(funcs_y)


def make_raw_listing(min_instructions: int = 50_000, seed: int = 0) -> Corpus:
    """Raw x86-dialect corpus whose literal diversity swamps the vocabulary.

    Immediates, displacement offsets, string labels, and callee names are
    drawn from wide pools, so the raw token count grows roughly linearly
    with corpus size while the normalized one saturates early.
    """
    rng = random.Random(seed)
    callees = [f"sym_{i}" for i in range(800)]
    functions = []
    produced = 0
    f = 0
    while produced < min_instructions:
        labels = [f".LBB{f}_{k}" for k in range(12)]
        blocks = []
        for k in range(10):
            lines = []
            for _ in range(rng.randint(8, 14)):
                regs = rng.sample(X86_POOL, 2)
                kind = rng.randrange(6)
                if kind == 0:
                    lines.append(f"movq %{regs[0]}, ${rng.randint(1, 10**6)}")
                elif kind == 1:
                    lines.append(f"movq %{regs[0]}, "
                                 f"[%{regs[1]}+{rng.randint(1, 4096)}]")
                elif kind == 2:
                    lines.append(f"movq %{regs[0]}, $.L.str.{rng.randint(0, 2000)}")
                elif kind == 3:
                    lines.append(f"callq {rng.choice(callees)}")
                elif kind == 4:
                    lines.append(f"jne {rng.choice(labels)}")
                else:
                    lines.append(f"addq %{regs[0]}, %{regs[1]}")
            produced += len(lines)
            blocks.append(BasicBlock(id=k, arch=Arch.X86_64, opt=Opt.O2,
                                     instrs=tuple(lines)))
        functions.append(FunctionRecord(f"listing_{f}", Arch.X86_64, Opt.O2,
                                        tuple(blocks)))
        f += 1
    return Corpus(functions)


def _chain_cfg(blocks: list[BasicBlock], arch: Arch) -> Cfg:
    edges = [(i, i + 1) for i in range(len(blocks) - 1)]
    return Cfg(arch=arch, opt=Opt.O2, nodes=blocks, edges=edges, entry=0)


@dataclass
class ContainmentFixture:
    query: Cfg
    target: Cfg
    decoys: list[Cfg] = field(default_factory=list)
    planted_at: int = 0


def make_containment_fixture(seed: int = 0, component_size: int = 10,
                             target_size: int = 100,
                             decoy_count: int = 3,
                             min_len: int = 4,
                             max_len: int = 8) -> ContainmentFixture:
    """Query component planted (with one junk insertion) inside a big target.

    The query is the component rendered in the x86 dialect; the target embeds
    an ARM-dialect rendering of the same templates with fresh register
    bindings, split by one junk block, surrounded by unrelated blocks. Decoy
    graphs reuse only the unrelated template pool.
    """
    if target_size < component_size + 3:
        raise ValueError("target must be larger than the planted component")
    rng = random.Random(seed)
    # target junk: prefix + suffix + the one block spliced into the component
    junk_needed = (target_size - component_size) + decoy_count * target_size
    bank = template_bank(rng, component_size + junk_needed, min_len, max_len)
    comp_templates = bank[:component_size]
    junk_templates = bank[component_size:]
    callees = [f"helper_{i}" for i in range(24)]
    labels = [f".LBB9_{k}" for k in range(8)]

    def render_many(templates, dialect, arch, id_base):
        return [BasicBlock(id=id_base + i, arch=arch, opt=Opt.O2,
                           instrs=render_block(t, dialect, rng, callees, labels))
                for i, t in enumerate(templates)]

    query = _chain_cfg(render_many(comp_templates, "x86", Arch.X86_64, 0),
                       Arch.X86_64)

    planted = render_many(comp_templates, "arm", Arch.ARM, 1000)
    junk_iter = iter(junk_templates)

    def junk_blocks(count, id_base):
        return render_many([next(junk_iter) for _ in range(count)], "arm",
                           Arch.ARM, id_base)

    prefix_len = rng.randint(1, target_size - component_size - 2)
    suffix_len = target_size - component_size - 1 - prefix_len
    cut = component_size // 2
    nodes = (junk_blocks(prefix_len, 2000)
             + planted[:cut]
             + junk_blocks(1, 3000)
             + planted[cut:]
             + junk_blocks(suffix_len, 4000))
    target = _chain_cfg(nodes, Arch.ARM)

    decoys = [_chain_cfg(junk_blocks(target_size, 5000 + 1000 * d), Arch.ARM)
              for d in range(decoy_count)]
    return ContainmentFixture(query=query, target=target, decoys=decoys,
                              planted_at=prefix_len)
