import csv
import io
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nmarank.config import ModelKind
from nmarank.graph import Kind
from nmarank.intervals import conditional_credible_interval, league_table, odds_ratio_samples
from nmarank.samples import PosteriorSamples

from oracles import type7_quantile


def spike_slab_samples(d, spike=None, cluster=None):
    """Spike-slab samples from effective rows; slab treatments get their own labels."""
    d = np.asarray(d, float)
    M, K = d.shape
    spike = (d == 0) if spike is None else np.asarray(spike)
    if cluster is None:
        cluster = np.broadcast_to(np.arange(K), (M, K)).copy()
    return PosteriorSamples(ModelKind.DP_SPIKE_SLAB, d, np.full(M, 0.1), np.zeros(M, int), np.arange(M),
                            spike=spike, omega0=np.full(M, 0.5), cluster=cluster)


# 14 draws with treatment 2 above the reference, 4 tied, 2 below
LT_VALUES = [0.05, 0.1, 0.12, 0.2, 0.21, 0.25, 0.3, 0.33, 0.4, 0.45, 0.5, 0.6, 0.75, 0.9]
FIXTURE = [[0.0, v] for v in LT_VALUES] + [[0.0, 0.0]] * 4 + [[0.0, -0.3], [0.0, -0.1]]


def test_odds_ratio_identities():
    ps = spike_slab_samples([[0.0, math.log(2)], [0.0, 0.0], [0.0, -0.4]])
    o12, o21 = odds_ratio_samples(ps, 1, 2), odds_ratio_samples(ps, 2, 1)
    assert o12[0] == pytest.approx(2.0, abs=1e-15)
    assert o12[1] == 1.0
    np.testing.assert_allclose(o12 * o21, 1.0, rtol=1e-15)
    with pytest.raises(ValueError):
        odds_ratio_samples(ps, 1, 1)
    with pytest.raises(ValueError):
        odds_ratio_samples(ps, 1, 3)


def test_literal_levels_against_sorted_oracle():
    ps = spike_slab_samples(FIXTURE)
    ci = conditional_credible_interval(ps, 1, 2, 0.05)
    assert ci.kind == Kind.LT
    o = [math.exp(r[1]) for r in FIXTURE]
    lo, hi = type7_quantile(o, 0.025 * 0.7), type7_quantile(o, 0.975 * 0.7)
    assert ci.interval == pytest.approx((lo, hi), rel=1e-14)
    assert ci.coverage == np.mean([(lo <= x <= hi) for x in o])
    assert ci.p_eq == pytest.approx(0.2)
    assert ci.point == pytest.approx(np.mean(o), rel=1e-14)


def test_greater_branch_levels():
    ps = spike_slab_samples(FIXTURE)
    ci = conditional_credible_interval(ps, 2, 1, 0.05)
    assert ci.kind == Kind.GT
    o = [math.exp(-r[1]) for r in FIXTURE]
    p_gt = 0.7
    lo, hi = type7_quantile(o, 1 - 0.975 * p_gt), type7_quantile(o, 1 - 0.025 * p_gt)
    assert ci.interval == pytest.approx((lo, hi), rel=1e-14)


def test_equal_branch_is_singleton():
    d = [[0.0, 0.0]] * 12 + [[0.0, 0.3]] * 5 + [[0.0, -0.2]] * 3
    ci = conditional_credible_interval(spike_slab_samples(d), 1, 2)
    assert ci.kind == Kind.EQ and ci.interval == (1.0, 1.0)
    assert ci.coverage == ci.p_eq == 12 / 20


def test_unanimous_direction_gives_nominal_coverage():
    rng = np.random.default_rng(0)
    n = 4000
    d = np.column_stack([np.zeros(n), np.abs(rng.normal(1, 0.3, n)) + 1e-3])
    ci = conditional_credible_interval(spike_slab_samples(d), 1, 2, 0.05)
    assert abs(ci.coverage - 0.95) <= 1 / n


def test_degenerate_sample_collapses():
    ci = conditional_credible_interval(spike_slab_samples([[0.0, 0.5]] * 10), 1, 2)
    assert ci.interval[0] == ci.interval[1] == pytest.approx(math.exp(0.5))
    assert ci.coverage == 1.0


def test_alpha_validated():
    with pytest.raises(ValueError):
        conditional_credible_interval(spike_slab_samples(FIXTURE), 1, 2, 0.0)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31), st.floats(0.01, 0.5), st.floats(0.01, 0.5), st.floats(0, 0.4))
def test_recount_and_monotone_in_alpha(seed, a1, a2, tie):
    rng = np.random.default_rng(seed)
    n = 50
    v = rng.normal(0.2, 0.5, n)
    v[rng.random(n) < tie] = 0.0
    ps = spike_slab_samples(np.column_stack([np.zeros(n), v]))
    lo_a, hi_a = sorted((a1, a2))
    wide = conditional_credible_interval(ps, 1, 2, lo_a)
    narrow = conditional_credible_interval(ps, 1, 2, hi_a)
    o = np.exp(v)
    for ci in (wide, narrow):
        if ci.kind == Kind.EQ:
            assert ci.coverage == ci.p_eq
        else:
            assert ci.interval[0] <= ci.interval[1]
            assert ci.coverage == np.mean((o >= ci.interval[0]) & (o <= ci.interval[1]))
    if wide.kind != Kind.EQ:
        assert narrow.interval[0] >= wide.interval[0]
        assert narrow.interval[1] <= wide.interval[1]


# --------------------------------------------------------------- league table
def test_all_tied_pair_reads_singleton():
    table = league_table(spike_slab_samples([[0.0, 0.0]] * 8), names=["A", "B"])
    for r, c in ((1, 2), (2, 1)):
        cell = table.cell(r, c)
        assert cell.interval_text == "{1}"
        assert cell.ci.p_eq == 1.0
        assert cell.text == "1.00 {1} (100.00%; 100.00%)"


def test_league_is_antisymmetric():
    rng = np.random.default_rng(3)
    d = np.column_stack([np.zeros(200), rng.normal(0.3, 0.2, 200), rng.normal(-0.2, 0.3, 200)])
    d[rng.random((200, 3)) < 0.2] = 0.0
    table = league_table(spike_slab_samples(d))
    for r in range(1, 4):
        for c in range(1, 4):
            if r != c:
                a, b = table.cell(r, c).ci, table.cell(c, r).ci
                assert a.point * b.point == pytest.approx(1.0, rel=1e-14)
                assert a.p_eq == b.p_eq


def test_gaussian_cells_report_nominal_coverage():
    rng = np.random.default_rng(1)
    d = np.column_stack([np.zeros(100), rng.normal(0.5, 0.2, 100)])
    ps = PosteriorSamples(ModelKind.GAUSSIAN, d, np.full(100, 0.1), np.zeros(100, int), np.arange(100))
    cell = league_table(ps, alpha=0.1).cell(1, 2).ci
    assert cell.p_eq == 0.0 and cell.coverage == 0.9
    o = np.exp(d[:, 1])
    assert cell.interval == pytest.approx((np.quantile(o, 0.05), np.quantile(o, 0.95)))


def test_cell_text_format():
    table = league_table(spike_slab_samples(FIXTURE), names=["P", "Q"])
    text = table.cell(1, 2).text
    ci = table.cell(1, 2).ci
    assert text == f"{ci.point:.2f} [{ci.interval[0]:.2f}, {ci.interval[1]:.2f}] (20.00%; {100 * ci.coverage:.2f}%)"


def test_transpose_swaps_cells():
    ps = spike_slab_samples(FIXTURE)
    a, b = league_table(ps), league_table(ps, transpose=True)
    assert b.cell(1, 2) == a.cell(2, 1)


def test_markdown_and_csv_exports():
    table = league_table(spike_slab_samples(FIXTURE), names=["P", "Q"])
    md = table.to_markdown().splitlines()
    assert len(md) == 4
    assert md[0].startswith("|") and "P" in md[0] and "Q" in md[0]
    assert set(md[1]) <= {"|", "-"}
    assert len({len(line) for line in md}) == 1
    rows = list(csv.DictReader(io.StringIO(table.to_csv())))
    assert [(r["row"], r["col"]) for r in rows] == [("P", "Q"), ("Q", "P")]
    assert rows[0]["kind"] == "lt" and rows[1]["kind"] == "gt"
    assert rows[0]["p_eq"] == "20.00%"
    assert rows[0]["text"] == table.cell(1, 2).text


def test_names_length_checked():
    with pytest.raises(ValueError):
        league_table(spike_slab_samples(FIXTURE), names=["only"])
