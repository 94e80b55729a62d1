"""Hand-built relation fixtures and the brute-force comparison shared by graph tests."""
from fractions import Fraction

import numpy as np

from nmarank.config import ModelKind
from nmarank.graph import (
    ComparisonGraph,
    build_initial_graph,
    closest_coherent,
    joint_probability,
    pairs_of,
    pairwise_probabilities,
    trim_sequence,
)
from nmarank.samples import PosteriorSamples

from oracles import brute_closest, brute_initial, brute_joint, brute_pairwise, brute_relation, brute_trim


def samples_from_ranks(ranks):
    """Spike-slab draws whose induced relations order treatments by ``ranks``.

    Treatments sharing the reference's rank sit in the spike; other ties share a label.
    """
    ranks = np.asarray(ranks, dtype=float)
    M, K = ranks.shape
    d = ranks - ranks[:, :1]
    spike = d == 0
    cluster = ranks.astype(int) + 1
    cluster[:, 0] = 0
    return PosteriorSamples(ModelKind.DP_SPIKE_SLAB, d, np.full(M, 0.1), np.zeros(M, int), np.arange(M),
                            spike=spike, omega0=np.full(M, 0.5), cluster=cluster)


def brute_relations(ranks):
    return [brute_relation(list(r), list(r)) for r in ranks]


def as_dict(g: ComparisonGraph):
    return {p: int(s) for p, s in g.statements.items()}


def check_against_brute(ranks):
    K = len(ranks[0])
    ps = samples_from_ranks(ranks)
    rels = brute_relations(ranks)
    pp = pairwise_probabilities(ps)
    bp = brute_pairwise(rels, K)
    for q, pair in enumerate(pairs_of(K)):
        assert [Fraction(int(c), len(ranks)) for c in pp.counts[q]] == list(bp[pair])
    tilde = build_initial_graph(pp)
    assert as_dict(tilde) == brute_initial(bp)
    e0 = closest_coherent(tilde, ps, pp)
    b0 = brute_closest(brute_initial(bp), bp, rels)
    assert as_dict(e0) == b0
    assert e0.joint_prob == float(brute_joint(b0, rels))
    ts = trim_sequence(e0, pp, ps)
    bt = brute_trim(b0, bp, rels)
    assert len(ts) == len(bt)
    for entry, (gamma, stmts, jp) in zip(ts, bt):
        assert entry.gamma == float(gamma)
        assert as_dict(entry.graph) == stmts
        assert entry.joint_prob == float(jp)
        assert joint_probability(entry.graph, ps) == float(brute_joint(stmts, rels))
    return ps, pp, e0, ts


# 20 draws over K=4: a dominant order with ties, plus competitors
FIXTURE_A = [(0, 1, 1, 2)] * 9 + [(0, 1, 2, 3)] * 4 + [(0, 2, 1, 3)] * 3 + [(1, 0, 1, 2)] * 2 + [(0, 0, 1, 1)] * 2
# pairwise majorities form a cycle on 1, 2, 3, so E0 needs the distance search
FIXTURE_B = [(0, 1, 2, 3)] * 7 + [(2, 0, 1, 3)] * 7 + [(1, 2, 0, 3)] * 6
