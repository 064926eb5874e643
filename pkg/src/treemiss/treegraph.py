"""Arborescences over missing patterns: build, validate, enumerate, sample, transform."""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Mapping

from .patterns import (
    MAX_EXHAUSTIVE_D,
    MissingPattern,
    dominates,
    lex_sorted,
    potential_parents,
)
from .util import atomic_write_text

ENUMERATION_CAP = 10**6


@dataclass(frozen=True)
class ValidationReport:
    ok: bool
    violations: tuple[str, ...]

    def __str__(self) -> str:
        if self.ok:
            return "ok"
        return "; ".join(self.violations)


@dataclass(frozen=True)
class TreeGraph:
    """Parent assignment over a pattern set with the fully observed pattern as source.

    ``edges`` lists (child, parent) pairs in canonical order.  Construction does
    not enforce the arborescence invariants; ``validate`` reports violations.
    """

    d: int
    edges: tuple[tuple[MissingPattern, MissingPattern], ...]

    @classmethod
    def from_parent_map(cls, d: int, parent: Mapping[MissingPattern, MissingPattern]) -> "TreeGraph":
        edges = tuple(sorted(((c, p) for c, p in parent.items()), key=lambda e: (str(e[0]), str(e[1]))))
        return cls(d, edges)

    @cached_property
    def patterns(self) -> frozenset[MissingPattern]:
        pats = {MissingPattern.full(self.d)}
        for c, p in self.edges:
            pats.add(c)
            pats.add(p)
        return frozenset(pats)

    @property
    def source(self) -> MissingPattern:
        return MissingPattern.full(self.d)

    @cached_property
    def parent_map(self) -> dict[MissingPattern, MissingPattern]:
        return {c: p for c, p in self.edges}

    def parent_of(self, r: MissingPattern) -> MissingPattern:
        try:
            return self.parent_map[r]
        except KeyError:
            raise KeyError(f"pattern {r} has no parent in this graph") from None

    def children_of(self, r: MissingPattern) -> list[MissingPattern]:
        return lex_sorted(c for c, p in self.edges if p == r)

    def non_source_patterns(self) -> list[MissingPattern]:
        return lex_sorted(p for p in self.patterns if p != self.source)

    def to_dict(self) -> dict:
        return {"d": self.d, "edges": [[str(c), str(p)] for c, p in self.edges]}

    @classmethod
    def from_dict(cls, doc: dict) -> "TreeGraph":
        d = int(doc["d"])
        edges = tuple(
            sorted(
                ((MissingPattern.from_string(c), MissingPattern.from_string(p)) for c, p in doc["edges"]),
                key=lambda e: (str(e[0]), str(e[1])),
            )
        )
        return cls(d, edges)

    def save(self, path) -> None:
        atomic_write_text(path, json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path) -> "TreeGraph":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def to_dot(self) -> str:
        lines = ["digraph tree {", "  rankdir=TB;"]
        for c, p in self.edges:
            lines.append(f'  "{p}" -> "{c}";')
        lines.append("}")
        return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class PatternGraph:
    """Pattern graph allowing several parents per child; target type of merge."""

    d: int
    parents: tuple[tuple[MissingPattern, tuple[MissingPattern, ...]], ...]

    @classmethod
    def from_parent_sets(cls, d: int, parents: Mapping[MissingPattern, Iterable[MissingPattern]]) -> "PatternGraph":
        items = tuple(
            sorted(
                ((c, tuple(lex_sorted(ps))) for c, ps in parents.items()),
                key=lambda e: str(e[0]),
            )
        )
        return cls(d, items)

    @classmethod
    def of_tree(cls, g: TreeGraph) -> "PatternGraph":
        return cls.from_parent_sets(g.d, {c: (p,) for c, p in g.edges})

    @cached_property
    def parent_sets(self) -> dict[MissingPattern, frozenset[MissingPattern]]:
        return {c: frozenset(ps) for c, ps in self.parents}

    @cached_property
    def patterns(self) -> frozenset[MissingPattern]:
        pats = {MissingPattern.full(self.d)}
        for c, ps in self.parents:
            pats.add(c)
            pats.update(ps)
        return frozenset(pats)


def validate(g: TreeGraph) -> ValidationReport:
    """Check the three arborescence invariants; violations name offending patterns."""
    violations: list[str] = []
    src = g.source
    seen_children: dict[MissingPattern, int] = {}
    for c, _ in g.edges:
        seen_children[c] = seen_children.get(c, 0) + 1
    for c, k in sorted(seen_children.items(), key=lambda kv: str(kv[0])):
        if k > 1:
            violations.append(f"single-parent violation: pattern {c} has {k} parents")
    for c, p in g.edges:
        if c.d != g.d or p.d != g.d:
            violations.append(f"dimension violation: edge {c} -> {p} does not match d={g.d}")
            continue
        if c == src:
            violations.append("source violation: the fully observed pattern cannot have a parent")
            continue
        if not dominates(p, c):
            violations.append(f"regularity violation: parent {p} does not dominate child {c}")
    for r in g.non_source_patterns():
        if r not in seen_children:
            violations.append(f"missing parent: pattern {r} has no parent")
    # reachability: walk parents with a step cap so cycles terminate
    pm = g.parent_map
    for r in g.non_source_patterns():
        cur = r
        for _ in range(len(g.patterns) + 1):
            if cur == src:
                break
            cur = pm.get(cur)
            if cur is None:
                break
        else:
            violations.append(f"unreachable: pattern {r} has no path to the source")
            continue
        if cur is None and r in seen_children:
            violations.append(f"unreachable: pattern {r} has no path to the source")
    if len(g.edges) != len(g.patterns) - 1:
        violations.append(
            f"edge-count violation: {len(g.edges)} edges for {len(g.patterns)} patterns"
        )
    return ValidationReport(not violations, tuple(violations))


def _require_full(patterns: Iterable[MissingPattern]) -> tuple[set[MissingPattern], MissingPattern]:
    pats = set(patterns)
    if not pats:
        raise ValueError("empty pattern set")
    d = next(iter(pats)).d
    if any(p.d != d for p in pats):
        raise ValueError("patterns have mixed dimensions")
    full = MissingPattern.full(d)
    if full not in pats:
        raise ValueError("the fully observed pattern must be in the pattern set")
    return pats, full


def build_ccmv(patterns: Iterable[MissingPattern]) -> TreeGraph:
    """Every pattern's parent is the fully observed pattern (shallowest tree)."""
    pats, full = _require_full(patterns)
    return TreeGraph.from_parent_map(full.d, {r: full for r in pats if r != full})


def _flip_chain(r: MissingPattern, pats: set[MissingPattern], leftmost: bool, compress: bool) -> MissingPattern:
    cur = r
    while True:
        zeros = cur.missing
        j = min(zeros) if leftmost else max(zeros)
        cur = MissingPattern(cur.d, cur.mask | (1 << j))
        if cur in pats:
            return cur
        if not compress:
            raise ValueError(
                f"implied parent {cur} of {r} is not in the pattern set and chain compression is disabled"
            )


def build_lncmv(patterns: Iterable[MissingPattern], compress: bool = True) -> TreeGraph:
    """Parent flips the leftmost missing coordinate to observed, compressed onto the set."""
    pats, full = _require_full(patterns)
    return TreeGraph.from_parent_map(
        full.d, {r: _flip_chain(r, pats, True, compress) for r in pats if r != full}
    )


def build_rncmv(patterns: Iterable[MissingPattern], compress: bool = True) -> TreeGraph:
    """Parent flips the rightmost missing coordinate to observed."""
    pats, full = _require_full(patterns)
    return TreeGraph.from_parent_map(
        full.d, {r: _flip_chain(r, pats, False, compress) for r in pats if r != full}
    )


def count_trees(d: int) -> int:
    """Exact number of trees over the full pattern set on d coordinates."""
    if not 1 <= d <= MAX_EXHAUSTIVE_D:
        raise ValueError(f"count_trees requires 1 <= d <= {MAX_EXHAUSTIVE_D}")
    out = 1
    for m in range(1, d + 1):
        out *= ((1 << m) - 1) ** math.comb(d, m)
    return out


def _ppa_lists(patterns: Iterable[MissingPattern]) -> tuple[list[MissingPattern], list[list[MissingPattern]]]:
    pats, full = _require_full(patterns)
    children = lex_sorted(p for p in pats if p != full)
    ppas = []
    for r in children:
        ppa = lex_sorted(potential_parents(r, pats))
        if not ppa:
            raise ValueError(f"orphan pattern {r}: no potential parent in the pattern set")
        ppas.append(ppa)
    return children, ppas


def tree_space_size(patterns: Iterable[MissingPattern]) -> int:
    """Number of distinct trees over an explicit pattern set."""
    _, ppas = _ppa_lists(patterns)
    out = 1
    for ppa in ppas:
        out *= len(ppa)
    return out


def enumerate_trees(patterns: Iterable[MissingPattern], cap: int = ENUMERATION_CAP):
    """Yield every tree over the pattern set once, in canonical order."""
    patterns = list(patterns)
    children, ppas = _ppa_lists(patterns)
    total = 1
    for ppa in ppas:
        total *= len(ppa)
    if total > cap:
        raise ValueError(f"enumeration of {total} trees exceeds the cap of {cap}")
    d = children[0].d if children else next(iter(patterns)).d
    for combo in itertools.product(*ppas):
        yield TreeGraph.from_parent_map(d, dict(zip(children, combo)))


def sample_tree_uniform(patterns: Iterable[MissingPattern], rng) -> TreeGraph:
    """Uniform draw over all trees: each child picks a potential parent uniformly."""
    children, ppas = _ppa_lists(patterns)
    d = children[0].d if children else next(iter(patterns)).d
    parent = {}
    for r, ppa in zip(children, ppas):
        parent[r] = ppa[int(rng.integers(len(ppa)))]
    return TreeGraph.from_parent_map(d, parent)


def sample_tree_pmf(
    patterns: Iterable[MissingPattern],
    pmf: Mapping[TreeGraph, float],
    rng,
    max_attempts: int = 10**6,
) -> TreeGraph:
    """Rejection sampler over trees: uniform proposals accepted at rate p(T)/max p."""
    patterns = set(patterns)
    if not pmf:
        raise ValueError("empty tree pmf")
    total = 0.0
    for t, prob in pmf.items():
        if prob < 0:
            raise ValueError("pmf values must be nonnegative")
        rep = validate(t)
        if not rep.ok:
            raise ValueError(f"pmf assigns mass to an invalid tree: {rep}")
        if t.patterns != frozenset(patterns):
            raise ValueError("pmf tree does not match the working pattern set")
        total += prob
    if abs(total - 1.0) > 1e-9:
        raise ValueError(f"pmf must sum to 1, got {total}")
    peak = max(pmf.values())
    for _ in range(max_attempts):
        t = sample_tree_uniform(patterns, rng)
        if rng.random() <= pmf.get(t, 0.0) / peak:
            return t
    raise RuntimeError(f"tree sampler exhausted {max_attempts} proposals")


def path_to_source(g: TreeGraph, r: MissingPattern) -> list[MissingPattern]:
    """The unique path [source, ..., r]; a single element when r is the source."""
    if r not in g.patterns:
        raise ValueError(f"pattern {r} is not in the graph")
    path = [r]
    cur = r
    for _ in range(len(g.patterns)):
        if cur == g.source:
            return list(reversed(path))
        cur = g.parent_of(cur)
        path.append(cur)
    raise ValueError(f"no path from {r} to the source; graph is not a valid tree")


def ancestors(g: TreeGraph, r: MissingPattern) -> set[MissingPattern]:
    return set(path_to_source(g, r)) - {r}


def depth(g: TreeGraph) -> int:
    return max(len(path_to_source(g, r)) - 1 for r in g.patterns)


def merge(g1, g2) -> PatternGraph:
    """Union of parent sets; arguments may be trees or pattern graphs."""
    p1 = g1 if isinstance(g1, PatternGraph) else PatternGraph.of_tree(g1)
    p2 = g2 if isinstance(g2, PatternGraph) else PatternGraph.of_tree(g2)
    if p1.d != p2.d:
        raise ValueError(f"dimension mismatch: {p1.d} vs {p2.d}")
    if p1.patterns != p2.patterns:
        raise ValueError("merge requires identical pattern sets")
    merged: dict[MissingPattern, set[MissingPattern]] = {}
    for c, ps in list(p1.parent_sets.items()) + list(p2.parent_sets.items()):
        merged.setdefault(c, set()).update(ps)
    return PatternGraph.from_parent_sets(p1.d, merged)


def representor(g: TreeGraph, kept: Iterable[MissingPattern], compress: bool = True) -> TreeGraph:
    """Restrict the tree to ``kept`` patterns, re-linking across removed nodes."""
    kept = set(kept)
    full = g.source
    if full not in kept:
        raise ValueError("the fully observed pattern must be kept")
    extra = kept - g.patterns
    if extra:
        raise ValueError(f"kept patterns not in the graph: {lex_sorted(extra)}")
    parent = {}
    for r in lex_sorted(kept - {full}):
        p = g.parent_of(r)
        while p not in kept:
            if not compress:
                raise ValueError(
                    f"parent {p} of {r} was pruned and chain compression is disabled"
                )
            p = g.parent_of(p)
        parent[r] = p
    return TreeGraph.from_parent_map(g.d, parent)


@dataclass(frozen=True)
class MoralGraph:
    """Undirected tree edges plus sibling links, with its maximal cliques."""

    nodes: tuple[MissingPattern, ...]
    edges: frozenset[frozenset[MissingPattern]]
    cliques: tuple[tuple[MissingPattern, ...], ...]

    def adjacent(self, a: MissingPattern, b: MissingPattern) -> bool:
        return frozenset((a, b)) in self.edges


def _bron_kerbosch(adj: dict, r: set, p: set, x: set, out: list) -> None:
    if not p and not x:
        out.append(set(r))
        return
    pivot = max(p | x, key=lambda v: len(adj[v] & p))
    for v in list(p - adj[pivot]):
        _bron_kerbosch(adj, r | {v}, p & adj[v], x & adj[v], out)
        p.remove(v)
        x.add(v)


def sibling_moral_graph(g: TreeGraph) -> MoralGraph:
    """Undirected edges = tree edges plus all sibling pairs; cliques listed canonically."""
    nodes = lex_sorted(g.patterns)
    adj: dict[MissingPattern, set[MissingPattern]] = {v: set() for v in nodes}
    edges: set[frozenset[MissingPattern]] = set()

    def link(a, b):
        if a != b:
            adj[a].add(b)
            adj[b].add(a)
            edges.add(frozenset((a, b)))

    for c, p in g.edges:
        link(c, p)
    for p in nodes:
        kids = g.children_of(p)
        for a, b in itertools.combinations(kids, 2):
            link(a, b)
    found: list[set] = []
    _bron_kerbosch(adj, set(), set(nodes), set(), found)
    cliques = sorted((tuple(lex_sorted(c)) for c in found), key=lambda c: [str(p) for p in c])
    return MoralGraph(tuple(nodes), frozenset(edges), tuple(cliques))


def is_gncmv(g: TreeGraph) -> bool:
    """True iff every parent observes exactly one more coordinate than its child."""
    return all(p.n_observed == c.n_observed + 1 for c, p in g.edges)
