"""Conditional credible intervals for odds ratios and league tables."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from .config import ModelKind
from .graph import Kind, effective_values, pairs_of, relation_draws
from .samples import PosteriorSamples

__all__ = [
    "ConditionalCI",
    "LeagueCell",
    "LeagueTable",
    "odds_ratio_samples",
    "conditional_credible_interval",
    "league_table",
]


@dataclass(frozen=True)
class ConditionalCI:
    pair: tuple[int, int]
    point: float
    interval: tuple[float, float]  # (1, 1) encodes the singleton {1}
    kind: Kind
    coverage: float
    p_eq: float

    @property
    def is_singleton(self) -> bool:
        return self.kind == Kind.EQ

    def contains(self, o: np.ndarray) -> np.ndarray:
        lo, hi = self.interval
        return (o >= lo) & (o <= hi)


def _check_pair(K, j, k):
    if j == k or not (1 <= j <= K and 1 <= k <= K):
        raise ValueError(f"invalid pair ({j}, {k}) for {K} treatments")


def odds_ratio_samples(ps: PosteriorSamples, j: int, k: int, e: np.ndarray | None = None) -> np.ndarray:
    """Per-draw o_jk = exp(e_k - e_j)."""
    _check_pair(ps.K, j, k)
    e = effective_values(ps) if e is None else e
    return np.exp(e[:, k - 1] - e[:, j - 1])


def _pair_counts(rd, j, k):
    """Counts (eq, lt, gt) for the ordered pair (j, k)."""
    q = pairs_of(rd.K).index((min(j, k), max(j, k)))
    col = rd.codes[:, q]
    eq, lt, gt = ((col == c).sum() for c in Kind)
    return np.array([eq, lt, gt] if j < k else [eq, gt, lt]), rd.n_draws


def conditional_credible_interval(
    ps: PosteriorSamples, j: int, k: int, alpha: float = 0.05, *, _rd=None, _e=None
) -> ConditionalCI:
    """Interval for o_jk that collapses to {1} when a tie is the dominant statement.

    For the dominant directional statement with probability p the interval is
    read off the pooled draws at levels ``[1-(1-a/2)p, 1-(a/2)p]`` (j > k) or
    ``[(a/2)p, (1-a/2)p]`` (j < k), with linear interpolation between order
    statistics.  ``coverage`` is a recount of draws inside the interval.
    """
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    o = odds_ratio_samples(ps, j, k, _e)
    counts, n = _pair_counts(_rd if _rd is not None else relation_draws(ps), j, k)
    p_eq, p_lt, p_gt = counts / n
    point = float(o.mean())
    kind = Kind(int(np.argmax(counts)))
    if kind == Kind.EQ:
        return ConditionalCI((j, k), point, (1.0, 1.0), kind, float(p_eq), float(p_eq))
    if kind == Kind.GT:
        levels = [1 - (1 - alpha / 2) * p_gt, 1 - (alpha / 2) * p_gt]
    else:
        levels = [(alpha / 2) * p_lt, (1 - alpha / 2) * p_lt]
    lo, hi = np.quantile(o, np.clip(levels, 0.0, 1.0), method="linear")
    cover = float(np.mean((o >= lo) & (o <= hi)))
    return ConditionalCI((j, k), point, (float(lo), float(hi)), kind, cover, float(p_eq))


def _equal_tailed(ps, j, k, alpha, e):
    o = odds_ratio_samples(ps, j, k, e)
    lo, hi = np.quantile(o, [alpha / 2, 1 - alpha / 2], method="linear")
    kind = Kind.LT if np.mean(o > 1) >= np.mean(o < 1) else Kind.GT
    return ConditionalCI((j, k), float(o.mean()), (float(lo), float(hi)), kind, 1 - alpha, 0.0)


def _mirror(ci: ConditionalCI) -> ConditionalCI:
    j, k = ci.pair
    lo, hi = ci.interval
    return ConditionalCI((k, j), 1.0 / ci.point, (1.0 / hi, 1.0 / lo), ci.kind.flipped(), ci.coverage, ci.p_eq)


def _fmt_or(x):
    return f"{x:.2f}"


def _fmt_pct(x):
    return f"{100 * x:.2f}%"


@dataclass(frozen=True)
class LeagueCell:
    ci: ConditionalCI

    @property
    def interval_text(self) -> str:
        if self.ci.kind == Kind.EQ:
            return "{1}"
        lo, hi = self.ci.interval
        return f"[{_fmt_or(lo)}, {_fmt_or(hi)}]"

    @property
    def text(self) -> str:
        return (f"{_fmt_or(self.ci.point)} {self.interval_text} "
                f"({_fmt_pct(self.ci.p_eq)}; {_fmt_pct(self.ci.coverage)})")


@dataclass(frozen=True)
class LeagueTable:
    """Cell (r, c), 1-based, summarises the odds ratio o_rc = exp(e_c - e_r).

    With ``transpose`` the grid is displayed column-major instead, so cell
    (r, c) shows o_cr.
    """

    names: tuple[str, ...]
    cells: dict
    alpha: float
    model: ModelKind
    transpose: bool = False

    @property
    def K(self) -> int:
        return len(self.names)

    def cell(self, r: int, c: int) -> LeagueCell | None:
        if r == c:
            return None
        return self.cells[(c, r) if self.transpose else (r, c)]

    def grid(self) -> list[list[str]]:
        return [
            [self.names[r - 1] if r == c else self.cell(r, c).text for c in range(1, self.K + 1)]
            for r in range(1, self.K + 1)
        ]

    def to_markdown(self) -> str:
        rows = [[""] + list(self.names)] + [[self.names[i]] + row for i, row in enumerate(self.grid())]
        widths = [max(len(r[c]) for r in rows) for c in range(len(rows[0]))]

        def line(r):
            return "| " + " | ".join(s.ljust(w) for s, w in zip(r, widths)) + " |"

        out = [line(rows[0]), "|" + "|".join("-" * (w + 2) for w in widths) + "|"]
        out += [line(r) for r in rows[1:]]
        return "\n".join(out) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["row", "col", "kind", "odds_ratio", "lower", "upper", "p_eq", "coverage", "text"])
        for r in range(1, self.K + 1):
            for c in range(1, self.K + 1):
                if r == c:
                    continue
                ci = self.cell(r, c).ci
                w.writerow([
                    self.names[r - 1], self.names[c - 1], ci.kind.label, _fmt_or(ci.point),
                    _fmt_or(ci.interval[0]), _fmt_or(ci.interval[1]),
                    _fmt_pct(ci.p_eq), _fmt_pct(ci.coverage), self.cell(r, c).text,
                ])
        return buf.getvalue()


def league_table(ps: PosteriorSamples, alpha: float = 0.05, names=None, transpose: bool = False) -> LeagueTable:
    """All-pairs table.  Pairs j < k are computed directly; (k, j) is the
    exact reciprocal so point estimates are anti-symmetric.

    Gaussian-effects samples never tie, so their cells use plain
    equal-tailed intervals with coverage reported as 1 - alpha.
    """
    names = tuple(ps.labels if names is None else names)
    if len(names) != ps.K:
        raise ValueError(f"expected {ps.K} names, got {len(names)}")
    e = effective_values(ps)
    rd = relation_draws(ps)
    cells = {}
    for j in range(1, ps.K + 1):
        for k in range(j + 1, ps.K + 1):
            if ps.model is ModelKind.GAUSSIAN:
                ci = _equal_tailed(ps, j, k, alpha, e)
            else:
                ci = conditional_credible_interval(ps, j, k, alpha, _rd=rd, _e=e)
            cells[(j, k)] = LeagueCell(ci)
            cells[(k, j)] = LeagueCell(_mirror(ci))
    return LeagueTable(names, cells, alpha, ps.model, transpose)
