"""Component-level matching: query CFG paths against a target CFG.

The query graph is decomposed into a small set of entry-rooted paths that
together cover most of its nodes. Each path is then aligned against walks of
the target graph with a longest-common-subsequence search, and the component
score is the length-weighted average of per-path LCS ratios.

Walks (on both sides) may pass through a node at most twice; the second visit
is what lets a single loop iteration unroll. The LCS search is a
label-correcting exploration with lossless dominance pruning, so its result
equals brute force over all bounded walks while visiting far fewer states.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

from .corpus import BasicBlock, Cfg
from .encoder import BlockEncoder
from .errors import EmptyPath
from . import lsh

NODE_VISIT_LIMIT = 2


def linearly_independent_paths(g: Cfg, coverage: float = 0.8,
                               start: int | None = None) -> list[list[int]]:
    """Entry-rooted maximal paths until `coverage` of the nodes are seen.

    Successors are explored in ascending ordinal order; a path is emitted
    only when it contains at least one node no earlier path covered, and
    enumeration halts once covered/total reaches the coverage fraction.
    Each path visits a node at most twice, which bounds path length and
    gives loops exactly one unrolled iteration.
    """
    if not g.nodes:
        raise EmptyPath("graph has no nodes")
    root = g.entry if start is None else start
    total = len(g.nodes)
    covered: set[int] = set()
    out: list[list[int]] = []
    done = False

    def extend(path: list[int], counts: dict[int, int]) -> None:
        nonlocal done
        succ = [w for w in g.successors(path[-1])
                if counts.get(w, 0) < NODE_VISIT_LIMIT]
        if not succ:
            if not covered.issuperset(path):
                out.append(list(path))
                covered.update(path)
                if len(covered) >= coverage * total:
                    done = True
            return
        for w in succ:
            if done:
                return
            path.append(w)
            counts[w] = counts.get(w, 0) + 1
            extend(path, counts)
            path.pop()
            counts[w] -= 1

    extend([root], {root: 1})
    return out


def text_match(a: BasicBlock, b: BasicBlock) -> bool:
    """Literal equality of normalized instruction sequences."""
    return a.instrs == b.instrs


def embedding_match(encoder: BlockEncoder, theta: float):
    """Match predicate: encoder similarity at or above theta."""

    def match(a: BasicBlock, b: BasicBlock) -> bool:
        return encoder.similarity(a, b) >= theta

    return match


def _lcs_step(row: tuple[int, ...], matches_j: list[bool]) -> tuple[int, ...]:
    """Extend an LCS row by one walk element; matches_j[j] covers query[j]."""
    m = len(row) - 1
    new = [0] * (m + 1)
    for j in range(1, m + 1):
        best = row[j]
        if new[j - 1] > best:
            best = new[j - 1]
        if matches_j[j - 1] and row[j - 1] + 1 > best:
            best = row[j - 1] + 1
        new[j] = best
    return tuple(new)


@dataclass
class _Label:
    node: int
    row: tuple[int, ...]
    counts: dict[int, int]
    walk: tuple[int, ...]
    pruned: bool = False


def _dominates(a: _Label, b: _Label) -> bool:
    """a reaches everything b can, with an LCS row at least as good."""
    if any(x < y for x, y in zip(a.row, b.row)):
        return False
    return all(b.counts.get(k, 0) >= v for k, v in a.counts.items())


@dataclass(frozen=True)
class LcsResult:
    length: int
    walk: tuple[int, ...]


def lcs_against_graph(query_path: list[BasicBlock], target: Cfg, match_fn,
                      node_visit_limit: int = NODE_VISIT_LIMIT,
                      starts=None) -> LcsResult:
    """Best LCS between the query block sequence and any bounded target walk.

    Walks may begin at any target node (or only at `starts` when given) and
    visit each node at most node_visit_limit times. Labels carry the LCS row
    over query prefixes; a label dominated at its node (row no better, visit
    budget no roomier) is discarded, which never changes the optimum. The
    witness walk is the first one found to reach the final length under
    ascending start and successor order.
    """
    if not query_path:
        raise EmptyPath("query path has no blocks")
    m = len(query_path)
    start_nodes = sorted(range(len(target.nodes))) if starts is None \
        else sorted(set(starts))

    match_memo: dict[int, list[bool]] = {}

    def matches_for(node: int) -> list[bool]:
        hit = match_memo.get(node)
        if hit is None:
            t = target.nodes[node]
            hit = [match_fn(q, t) for q in query_path]
            match_memo[node] = hit
        return hit

    kept: dict[int, list[_Label]] = {}
    queue: deque[_Label] = deque()
    best_len = 0
    best_walk: tuple[int, ...] = ()
    zero_row = tuple([0] * (m + 1))

    def offer(node: int, row: tuple[int, ...], counts: dict[int, int],
              walk: tuple[int, ...]) -> bool:
        nonlocal best_len, best_walk
        label = _Label(node, row, counts, walk)
        bucket = kept.setdefault(node, [])
        for other in bucket:
            if not other.pruned and _dominates(other, label):
                return False
        for other in bucket:
            if not other.pruned and _dominates(label, other):
                other.pruned = True
        bucket[:] = [x for x in bucket if not x.pruned]
        bucket.append(label)
        queue.append(label)
        if row[m] > best_len:
            best_len = row[m]
            best_walk = walk
        return True

    for v in start_nodes:
        offer(v, _lcs_step(zero_row, matches_for(v)), {v: 1}, (v,))
        if best_len == m:
            return LcsResult(best_len, best_walk)

    while queue:
        label = queue.popleft()
        if label.pruned:
            continue
        for w in target.successors(label.node):
            if label.counts.get(w, 0) >= node_visit_limit:
                continue
            counts = dict(label.counts)
            counts[w] = counts.get(w, 0) + 1
            offer(w, _lcs_step(label.row, matches_for(w)), counts,
                  label.walk + (w,))
            if best_len == m:
                return LcsResult(best_len, best_walk)
    return LcsResult(best_len, best_walk)


@dataclass(frozen=True)
class PathScore:
    path: tuple[int, ...]
    lcs_length: int
    ratio: float
    walk: tuple[int, ...]

    def to_dict(self) -> dict:
        return {
            "path": list(self.path),
            "lcs_length": self.lcs_length,
            "ratio": self.ratio,
            "walk": list(self.walk),
        }


def path_score(query_path: list[BasicBlock], path_nodes, target: Cfg,
               match_fn, starts=None) -> PathScore:
    res = lcs_against_graph(query_path, target, match_fn, starts=starts)
    return PathScore(path=tuple(path_nodes), lcs_length=res.length,
                     ratio=res.length / len(query_path), walk=res.walk)


def find_start_candidates(path_blocks: list[BasicBlock], index: lsh.LshIndex,
                          encoder: BlockEncoder, theta: float,
                          max_blocks_tried: int = 3,
                          exact: bool = False) -> tuple[int | None, list[int]]:
    """First path block whose store lookup is nonempty; (block offset, hits).

    Hits are target node ordinals in best-similarity order. Returns
    (None, []) when none of the first max_blocks_tried blocks match.
    """
    for k, block in enumerate(path_blocks[:max_blocks_tried]):
        hits = lsh.query(index, encoder.embed(block), theta=theta, exact=exact)
        if hits:
            return k, [key for key, _ in hits]
    return None, []


@dataclass(frozen=True)
class ComponentReport:
    score: float
    paths: tuple[PathScore, ...]
    query_nodes: int
    target_nodes: int
    theta: float
    starts_used: tuple[tuple[int, ...], ...]

    def to_dict(self) -> dict:
        return {
            "score": self.score,
            "paths": [p.to_dict() for p in self.paths],
            "query_nodes": self.query_nodes,
            "target_nodes": self.target_nodes,
            "theta": self.theta,
            "starts_used": [list(s) for s in self.starts_used],
        }


def component_score(query: Cfg, target: Cfg, encoder: BlockEncoder,
                    theta: float = 0.5, coverage: float = 0.8,
                    index: lsh.LshIndex | None = None,
                    exact: bool = False,
                    max_blocks_tried: int = 3,
                    jobs: int = 1) -> ComponentReport:
    """Length-weighted mean of per-path LCS ratios for the whole component.

    For every query path, candidate walk starts come from a similarity
    lookup of the path's leading blocks in the target store; a path with no
    candidates scores zero. With no path scoring at all, the component
    scores zero rather than erroring, since "nothing matched" is an answer.

    jobs > 1 scores paths on a thread pool; results are merged back in path
    order, so the report is the same either way (the embedding cache is
    shared, and duplicate cache fills are idempotent).
    """
    if index is None:
        dims = encoder.params.config.hidden_dim
        index = lsh.build_index(
            ((i, encoder.embed(b)) for i, b in enumerate(target.nodes)),
            dims=dims)
    match_fn = embedding_match(encoder, theta)
    paths = linearly_independent_paths(query, coverage)

    def score_one(nodes: list[int]) -> tuple[PathScore, tuple[int, ...]]:
        blocks = [query.nodes[v] for v in nodes]
        _, starts = find_start_candidates(blocks, index, encoder, theta,
                                          max_blocks_tried, exact=exact)
        if not starts:
            return PathScore(tuple(nodes), 0, 0.0, ()), ()
        return (path_score(blocks, nodes, target, match_fn, starts=starts),
                tuple(starts))

    if jobs > 1 and len(paths) > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(score_one, paths))
    else:
        results = [score_one(nodes) for nodes in paths]
    scores = [r[0] for r in results]
    starts_used = [r[1] for r in results]
    weight = sum(len(p.path) for p in scores)
    total = sum(p.lcs_length for p in scores)
    value = total / weight if weight else 0.0
    return ComponentReport(score=value, paths=tuple(scores),
                           query_nodes=len(query.nodes),
                           target_nodes=len(target.nodes),
                           theta=theta, starts_used=tuple(starts_used))
