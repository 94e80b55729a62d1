"""Coherent comparison graphs built from posterior draws.

Every draw induces a complete relation over the treatments: each pair is
EQ (same effect), LT (first smaller) or GT.  Ties are structural, decided by
class keys rather than float equality:

* gaussian       - no ties; each treatment is its own class
* dp-gaussian    - same DP label; the reference is its own class
* dp-spike-slab  - every spike-flagged treatment joins the reference in a
                   zero class; slab treatments tie when they share a label

Within a draw, treatments are ordered by (effective value, class key), which
is a total preorder, so induced relations are coherent by construction.

Pairs are stored for ``j < k`` (1-based) in ``itertools.combinations`` order.
An edge ``(j, k)`` reads "effect of j is below effect of k"; an EQ pair
contributes both directions.
"""
from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np

from .config import ModelKind
from .samples import PosteriorSamples

__all__ = [
    "Kind",
    "Relation",
    "RelationDraws",
    "PairwiseProb",
    "ComparisonGraph",
    "TrimEntry",
    "TrimSequence",
    "pairs_of",
    "effective_values",
    "class_keys",
    "relation_draws",
    "induced_relation",
    "pairwise_probabilities",
    "build_initial_graph",
    "is_coherent",
    "graph_distance",
    "closest_coherent",
    "joint_probability",
    "trim_sequence",
    "trimmed_graph",
    "select_subgraph",
    "to_dot",
    "to_json",
]


class Kind(IntEnum):
    EQ = 0
    LT = 1
    GT = 2

    @property
    def label(self) -> str:
        return self.name.lower()

    def flipped(self) -> "Kind":
        return {Kind.EQ: Kind.EQ, Kind.LT: Kind.GT, Kind.GT: Kind.LT}[self]


def pairs_of(K: int) -> list[tuple[int, int]]:
    return list(itertools.combinations(range(1, K + 1), 2))


def _pair_index(K: int) -> dict:
    return {p: q for q, p in enumerate(pairs_of(K))}


def _score(a: Kind, b: Kind) -> int:
    if a == b:
        return 0
    if a == Kind.EQ or b == Kind.EQ:
        return 1
    return 2


# ------------------------------------------------------------------ relations
@dataclass(frozen=True)
class Relation:
    """Complete relation: one :class:`Kind` per pair ``j < k``."""

    K: int
    codes: tuple[int, ...]

    def __post_init__(self):
        if len(self.codes) != self.K * (self.K - 1) // 2:
            raise ValueError("one code per pair required")

    @classmethod
    def from_values(cls, values, keys=None) -> "Relation":
        """Relation induced by effective values; equal ``keys`` mean EQ.

        Without ``keys`` ties use exact equality of the values.
        """
        values = np.asarray(values, dtype=float)
        K = values.size
        if keys is None:
            keys = np.unique(values, return_inverse=True)[1]
        codes = []
        for j, k in itertools.combinations(range(K), 2):
            if keys[j] == keys[k]:
                codes.append(Kind.EQ)
            elif (values[j], keys[j]) < (values[k], keys[k]):
                codes.append(Kind.LT)
            else:
                codes.append(Kind.GT)
        return cls(K, tuple(int(c) for c in codes))

    def statement(self, j: int, k: int) -> Kind:
        if j == k:
            return Kind.EQ
        if j < k:
            return Kind(self.codes[_pair_index(self.K)[(j, k)]])
        return Kind(self.codes[_pair_index(self.K)[(k, j)]]).flipped()

    def classes(self) -> list[list[int]]:
        """EQ classes sorted from lowest to highest effect."""
        g = ComparisonGraph.from_codes(self.K, self.codes)
        return _ordered_classes(g)


@dataclass(frozen=True)
class RelationDraws:
    """Induced relations of every draw as an (M, P) code matrix."""

    K: int
    codes: np.ndarray

    @property
    def n_draws(self) -> int:
        return self.codes.shape[0]

    def unique(self):
        """Distinct relations, their counts and the index of a representative."""
        rows, first, counts = np.unique(self.codes, axis=0, return_index=True, return_counts=True)
        return rows, counts, first


def effective_values(ps: PosteriorSamples) -> np.ndarray:
    """e_k per draw: 0 for the reference and spike members, d_{1k} otherwise."""
    e = np.array(ps.d, dtype=float)
    if ps.model is ModelKind.DP_SPIKE_SLAB:
        e = np.where(ps.spike, 0.0, e)
    e[:, 0] = 0.0
    return e


def class_keys(ps: PosteriorSamples) -> np.ndarray:
    """Integer keys per draw and treatment; equal keys mean tied effects."""
    M, K = ps.d.shape
    if ps.model is ModelKind.GAUSSIAN:
        return np.broadcast_to(np.arange(K), (M, K)).copy()
    if ps.cluster is None:
        raise ValueError(f"{ps.model.value} samples need cluster labels")
    keys = np.array(ps.cluster, dtype=np.int64)
    keys[:, 0] = 0
    if ps.model is ModelKind.DP_SPIKE_SLAB:
        keys = np.where(ps.spike, 0, keys)
    return keys


def relation_draws(ps: PosteriorSamples) -> RelationDraws:
    if ps.n_draws == 0:
        raise ValueError("no posterior draws")
    e, keys = effective_values(ps), class_keys(ps)
    K = ps.K
    codes = np.empty((ps.n_draws, K * (K - 1) // 2), dtype=np.int8)
    for q, (j, k) in enumerate(itertools.combinations(range(K), 2)):
        ej, ek, kj, kk = e[:, j], e[:, k], keys[:, j], keys[:, k]
        lt = (ej < ek) | ((ej == ek) & (kj < kk))
        codes[:, q] = np.where(kj == kk, Kind.EQ, np.where(lt, Kind.LT, Kind.GT))
    return RelationDraws(K, codes)


def induced_relation(ps: PosteriorSamples, m: int) -> Relation:
    """Relation induced by draw ``m``."""
    rd = relation_draws(ps.subset([m]))
    return Relation(ps.K, tuple(int(c) for c in rd.codes[0]))


def _draws(obj) -> RelationDraws:
    return obj if isinstance(obj, RelationDraws) else relation_draws(obj)


# -------------------------------------------------------- pairwise summaries
@dataclass(frozen=True)
class PairwiseProb:
    """Counts of EQ/LT/GT per pair over ``n_draws``; columns follow :class:`Kind`."""

    K: int
    counts: np.ndarray  # (P, 3) int
    n_draws: int

    @property
    def probs(self) -> np.ndarray:
        return self.counts / self.n_draws

    def get(self, j: int, k: int) -> tuple[float, float, float]:
        """(p_eq, p_lt, p_gt) for the ordered pair (j, k)."""
        if j == k:
            raise ValueError("pair needs distinct treatments")
        q = _pair_index(self.K)[(min(j, k), max(j, k))]
        eq, lt, gt = self.probs[q]
        return (eq, lt, gt) if j < k else (eq, gt, lt)

    def prob(self, j: int, k: int, kind: Kind) -> float:
        return self.get(j, k)[int(kind)]

    def argmax(self) -> np.ndarray:
        """Dominant statement per pair; np.argmax keeps the first maximum,
        which gives the EQ > LT > GT precedence on exact ties."""
        return np.argmax(self.counts, axis=1)

    def max_prob(self) -> np.ndarray:
        return self.counts.max(axis=1) / self.n_draws


def pairwise_probabilities(ps) -> PairwiseProb:
    rd = _draws(ps)
    if rd.n_draws == 0:
        raise ValueError("no posterior draws")
    counts = np.stack([(rd.codes == c).sum(axis=0) for c in Kind], axis=1)
    return PairwiseProb(rd.K, counts, rd.n_draws)


# --------------------------------------------------------------------- graphs
@dataclass(frozen=True)
class ComparisonGraph:
    """Statements on a subset of pairs, each with its retained probability."""

    K: int
    statements: dict = field(default_factory=dict)  # (j, k), j < k -> Kind
    probs: dict = field(default_factory=dict)
    joint_prob: float | None = None
    gamma: float | None = None

    @classmethod
    def from_codes(cls, K, codes, probs=None, joint_prob=None, gamma=None) -> "ComparisonGraph":
        pairs = pairs_of(K)
        st = {p: Kind(int(c)) for p, c in zip(pairs, codes)}
        pr = {} if probs is None else {p: float(v) for p, v in zip(pairs, probs)}
        return cls(K, st, pr, joint_prob, gamma)

    @property
    def n_pairs(self) -> int:
        return len(self.statements)

    @property
    def density(self) -> float:
        return self.n_pairs / (self.K * (self.K - 1) // 2)

    def is_complete(self) -> bool:
        return self.n_pairs == self.K * (self.K - 1) // 2

    def edges(self) -> frozenset:
        out = set()
        for (j, k), kind in self.statements.items():
            if kind != Kind.GT:
                out.add((j, k))
            if kind != Kind.LT:
                out.add((k, j))
        return frozenset(out)

    def edge_key(self) -> tuple:
        return tuple(sorted(self.edges()))

    def codes(self) -> np.ndarray:
        """Statement codes per pair, -1 where a pair is not represented."""
        return np.array([int(self.statements.get(p, -1)) for p in pairs_of(self.K)], dtype=np.int8)

    def restrict(self, keep, gamma=None) -> "ComparisonGraph":
        keep = set(keep)
        return ComparisonGraph(
            self.K,
            {p: s for p, s in self.statements.items() if p in keep},
            {p: v for p, v in self.probs.items() if p in keep},
            None,
            gamma,
        )

    def with_joint(self, joint_prob: float) -> "ComparisonGraph":
        return ComparisonGraph(self.K, dict(self.statements), dict(self.probs), joint_prob, self.gamma)

    def same_edges(self, other: "ComparisonGraph") -> bool:
        return self.K == other.K and self.statements == other.statements


def build_initial_graph(pp: PairwiseProb) -> ComparisonGraph:
    return ComparisonGraph.from_codes(pp.K, pp.argmax(), pp.max_prob())


def _ordered_classes(g: ComparisonGraph) -> list[list[int]] | None:
    """EQ classes in increasing order, or None if the complete graph is incoherent."""
    K = g.K
    parent = list(range(K + 1))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for (j, k), s in g.statements.items():
        if s == Kind.EQ:
            parent[find(j)] = find(k)
    groups: dict[int, list[int]] = {}
    for t in range(1, K + 1):
        groups.setdefault(find(t), []).append(t)
    classes = list(groups.values())
    # EQ must be transitive and the between-class direction uniform
    below = {}
    for a, ca in enumerate(classes):
        for j, k in itertools.combinations(ca, 2):
            if g.statements[(j, k)] != Kind.EQ:
                return None
        for b in range(a + 1, len(classes)):
            kinds = {
                g.statements[(min(j, k), max(j, k))] if j < k else g.statements[(k, j)].flipped()
                for j in ca for k in classes[b]
            }
            if len(kinds) != 1 or Kind.EQ in kinds:
                return None
            below[(a, b)] = kinds.pop() == Kind.LT
    # a complete tournament on classes is acyclic iff wins form 0..n-1
    n = len(classes)
    wins = [0] * n
    for (a, b), a_below in below.items():
        wins[b if a_below else a] += 1
    if sorted(wins) != list(range(n)):
        return None
    return [c for _, c in sorted(zip(wins, classes))]


def is_coherent(g: ComparisonGraph, K: int | None = None) -> bool:
    if K is not None and K != g.K:
        raise ValueError(f"graph is over {g.K} treatments, not {K}")
    if not g.is_complete():
        raise ValueError("coherence is defined for complete graphs")
    return _ordered_classes(g) is not None


def graph_distance(tilde: ComparisonGraph, cand, pp: PairwiseProb) -> float:
    """Sum over pairs of p~(j,k) times the disagreement score.

    Scores: 0 when the statements agree, 1 when one is EQ and the other
    directional, 2 for opposite directions.
    """
    cand_codes = cand.codes if isinstance(cand, Relation) else tuple(cand.codes())
    weights = pp.max_prob()
    total = 0.0
    for q, p in enumerate(pairs_of(tilde.K)):
        total += weights[q] * _score(tilde.statements[p], Kind(int(cand_codes[q])))
    return total


def _distances(tilde: ComparisonGraph, rows: np.ndarray, pp: PairwiseProb) -> np.ndarray:
    score = np.array([[0, 1, 1], [1, 0, 2], [1, 2, 0]])
    t = tilde.codes().astype(int)
    return (score[t[None, :], rows.astype(int)] * pp.max_prob()[None, :]).sum(axis=1)


def _edge_key_codes(K, codes) -> tuple:
    return ComparisonGraph.from_codes(K, codes).edge_key()


def closest_coherent(tilde: ComparisonGraph, ps, pp: PairwiseProb | None = None) -> ComparisonGraph:
    """E0: the sample-supported relation nearest to ``tilde``.

    Ties on distance go to the more frequent relation, then to the
    lexicographically smaller sorted edge list.
    """
    rd = _draws(ps)
    pp = pp or pairwise_probabilities(rd)
    rows, counts, _ = rd.unique()
    dist = _distances(tilde, rows, pp)
    best = None
    for r in np.lexsort((-counts, dist)):
        if best is not None and (dist[r], -counts[r]) != (dist[best[0]], -counts[best[0]]):
            break
        key = _edge_key_codes(rd.K, rows[r])
        if best is None or key < best[1]:
            best = (r, key)
    r = best[0]
    probs = [pp.probs[q, c] for q, c in enumerate(rows[r])]
    return ComparisonGraph.from_codes(rd.K, rows[r], probs, counts[r] / rd.n_draws)


def _satisfied(rd: RelationDraws, g: ComparisonGraph) -> np.ndarray:
    c = g.codes()
    keep = c >= 0
    return np.all(rd.codes[:, keep] == c[keep], axis=1)


def joint_probability(g: ComparisonGraph, ps) -> float:
    rd = _draws(ps)
    if not g.statements:
        return 1.0
    return float(_satisfied(rd, g).mean())


@dataclass(frozen=True)
class TrimEntry:
    gamma: float
    graph: ComparisonGraph
    joint_prob: float


@dataclass(frozen=True)
class TrimSequence:
    entries: tuple[TrimEntry, ...]
    K: int

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def __getitem__(self, i):
        return self.entries[i]


def trimmed_graph(e0: ComparisonGraph, gamma: float, ps=None) -> ComparisonGraph:
    """E_gamma: statements of E0 with retained probability above ``gamma``."""
    g = e0.restrict([p for p, v in e0.probs.items() if v > gamma], gamma)
    if ps is not None:
        g = g.with_joint(joint_probability(g, ps))
    return g


def trim_sequence(e0: ComparisonGraph, pp: PairwiseProb, ps) -> TrimSequence:
    """Distinct non-empty E_gamma over the grid {0} + observed p(j,k)."""
    rd = _draws(ps)
    probs = {p: pp.prob(p[0], p[1], s) for p, s in e0.statements.items()}
    base = ComparisonGraph(e0.K, dict(e0.statements), probs, e0.joint_prob, e0.gamma)
    grid = sorted({0.0, *probs.values()})
    entries = []
    for gamma in grid:
        g = trimmed_graph(base, gamma)
        if not g.statements or (entries and g.same_edges(entries[-1].graph)):
            continue
        jp = joint_probability(g, rd)
        entries.append(TrimEntry(gamma, g.with_joint(jp), jp))
    return TrimSequence(tuple(entries), e0.K)


def select_subgraph(ts: TrimSequence, threshold: float) -> tuple[ComparisonGraph, float]:
    """Densest entry with joint probability at least ``threshold``, and its density."""
    if not 0 < threshold <= 1:
        raise ValueError("threshold must lie in (0, 1]")
    for entry in ts:
        if entry.joint_prob >= threshold:
            return entry.graph, entry.graph.density
    return ComparisonGraph(ts.K, {}, {}, 1.0, None), 0.0


# -------------------------------------------------------------------- export
def _names(K, names):
    return [str(k) for k in range(1, K + 1)] if names is None else [str(n) for n in names]


def _oriented(g: ComparisonGraph):
    """(low, high, kind, prob) with LT pairs pointing to the larger effect."""
    for (j, k), s in sorted(g.statements.items()):
        prob = g.probs.get((j, k))
        if s == Kind.GT:
            yield k, j, Kind.LT, prob
        else:
            yield j, k, s, prob


def to_dot(g: ComparisonGraph, names=None, title: str = "comparisons") -> str:
    names = _names(g.K, names)
    lines = [f'digraph "{title}" {{', "  rankdir=LR;"]
    lines += [f'  n{k} [label="{names[k - 1]}"];' for k in range(1, g.K + 1)]
    for a, b, kind, prob in _oriented(g):
        lab = "" if prob is None else f', label="{prob:.3f}"'
        if kind == Kind.EQ:
            lines.append(f"  n{a} -> n{b} [dir=both, style=solid{lab}];")
        else:
            lines.append(f"  n{a} -> n{b} [style=dashed{lab}];")
    lines.append("}")
    return "\n".join(lines) + "\n"


def to_json(g: ComparisonGraph, names=None) -> dict:
    names = _names(g.K, names)
    edges = [
        {"from": names[a - 1], "to": names[b - 1], "kind": kind.label,
         "prob": None if prob is None else float(prob)}
        for a, b, kind, prob in _oriented(g)
    ]
    jp = None if g.joint_prob is None else float(g.joint_prob)
    gamma = None if g.gamma is None or math.isnan(g.gamma) else float(g.gamma)
    return {"nodes": names, "edges": edges, "joint_prob": jp, "gamma": gamma}


def dumps(g: ComparisonGraph, names=None) -> str:
    return json.dumps(to_json(g, names), indent=2)
