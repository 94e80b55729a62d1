"""Sampler self-checks: the successive-conditional ("getting it right") test.

Two samplers of the joint law of parameters and data are compared:

* marginal-conditional: independent prior draws of every latent variable;
* successive-conditional: alternate one MCMC sweep given the data with
  fresh data simulated from the current parameters.

If every update leaves its conditional invariant, both produce the prior
marginals, so moment discrepancies beyond Monte-Carlo error reveal bugs.

The successive simulator is run as many independent short chains, each
started from an exact prior draw.  Started at the joint law, a correct
kernel keeps every cycle exactly prior-distributed, and the chains' means
are independent, so the standard error needs no autocorrelation estimate.
One long chain would mix very slowly through the heavy slab tails.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .config import McmcConfig, ModelKind, PriorConfig
from .data import Arm, Dataset, Study
from .kernels import make_stream
from .samplers import GibbsSampler, sample_prior, simulate_events

__all__ = ["small_network", "tracked", "prior_draws", "successive_draws", "batch_means_se", "MomentCheck",
           "compare_moments"]

# The spike-slab prior on d12 has Cauchy-like tails (no mean), and tau2 is
# lognormal with a huge variance, so bounded or log transforms are tracked.
STATS = ("log_tau2", "log_tau2_sq", "atan_d12", "atan_d12_sq", "d12", "d12_sq", "omega0")


def small_network(n: int = 10) -> Dataset:
    """Three two-arm studies closing a triangle on three treatments."""
    pairs = [(1, 2), (1, 3), (2, 3)]
    studies = tuple(Study(f"s{i + 1}", (Arm(a, 0, n), Arm(b, 0, n)), a) for i, (a, b) in enumerate(pairs))
    return Dataset(studies, 3)


def tracked(state, model: ModelKind) -> tuple:
    ss = model is ModelKind.DP_SPIKE_SLAB
    lt = math.log(state.tau2)
    d12 = float(state.d[1])
    a = math.atan(d12)
    raw = (math.nan, math.nan) if ss else (d12, d12 * d12)
    return (lt, lt * lt, a, a * a, *raw, state.omega0 if ss else math.nan)


def prior_draws(ds: Dataset, prior: PriorConfig, model, n: int, seed: int = 0) -> np.ndarray:
    model = ModelKind.parse(model)
    sampler = GibbsSampler(ds, prior, model)
    rng = make_stream(seed, 0)
    return np.array([tracked(sample_prior(sampler.net, prior, model, rng), model) for _ in range(n)])


def successive_draws(ds: Dataset, prior: PriorConfig, model, n_chains: int, cycles: int, seed: int = 0,
                     sweeps_per_cycle: int = 1, refresh: bool = True) -> np.ndarray:
    """(n_chains, cycles, stats).  Cycle: simulate data from the state, then sweep."""
    model = ModelKind.parse(model)
    sampler = GibbsSampler(ds, prior, model, McmcConfig(adapt=False))
    base = sampler.net
    out = np.empty((n_chains, cycles, len(STATS)))
    for c in range(n_chains):
        rng = make_stream(seed, c + 1)
        state = sample_prior(base, prior, model, rng)
        for t in range(cycles):
            sampler.net = base.with_events(simulate_events(base, state, rng))
            sampler.sweep(state, rng, refresh, sweeps_per_cycle)
            out[c, t] = tracked(state, model)
    return out


def batch_means_se(x, n_batches: int = 50) -> float:
    x = np.asarray(x, float)
    b = len(x) // n_batches
    means = x[: b * n_batches].reshape(n_batches, b).mean(axis=1)
    return float(means.std(ddof=1) / math.sqrt(n_batches))


@dataclass(frozen=True)
class MomentCheck:
    stat: str
    successive: float
    prior: float
    se: float

    @property
    def z(self) -> float:
        return (self.successive - self.prior) / self.se if self.se > 0 else 0.0

    def ok(self, k: float = 4.0) -> bool:
        return abs(self.z) <= k


def compare_moments(succ: np.ndarray, prior: np.ndarray) -> list[MomentCheck]:
    """Successive draws (chains, cycles, stats) against prior draws (n, stats)."""
    out = []
    chain_means = succ.mean(axis=1)
    for q, name in enumerate(STATS):
        a, b = chain_means[:, q], prior[:, q]
        if np.isnan(a).all():
            continue
        se = math.sqrt(a.var(ddof=1) / len(a) + b.var(ddof=1) / len(b))
        out.append(MomentCheck(name, float(a.mean()), float(b.mean()), se))
    return out
