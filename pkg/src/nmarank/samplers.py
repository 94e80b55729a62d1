"""Metropolis-within-Gibbs samplers for the three contrast-based NMA models.

Conventions
-----------
* Treatments are 0-based internally (reference = 0); every study keeps its
  baseline arm in column 0 of the padded arrays.
* ``delta[i, j]`` is the contrast of the (j+1)-th arm of study ``i`` against
  its baseline; padding slots beyond ``t[i]`` are ignored.
* tau^2 is updated on ``eta = log(tau2)`` with prior N(m_ell, s_ell) on eta.
  That is the same target as a LogN(m_ell, s_ell) density on tau2 plus the
  log-Jacobian ``log(tau2)``; the tests check the two forms agree.
* For DP models ``d`` is kept equal to ``atoms[labels]`` (0 for the
  reference) so every density sees the effective d_{1k}.

The per-sweep work is compiled (see ``_jit``); this module owns state
construction, adaptation, bookkeeping and the multi-chain driver.
"""
from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit, gammaln

from . import _jit
from .config import McmcConfig, ModelKind, PriorConfig
from .data import Dataset, DataError, validate_network
from .kernels import make_stream, sample_equicorr_mvn, sample_nlp, stick_breaking_weights
from .samples import PosteriorSamples

__all__ = [
    "Network",
    "ChainState",
    "GibbsSampler",
    "SamplerAbort",
    "effective_d",
    "run_chain",
    "run_chains",
    "sample_prior",
    "simulate_events",
]

TAU2_FLOOR = _jit.TAU2_FLOOR
_MODEL_CODE = {
    ModelKind.GAUSSIAN: _jit.GAUSSIAN,
    ModelKind.DP_GAUSSIAN: _jit.DP_GAUSSIAN,
    ModelKind.DP_SPIKE_SLAB: _jit.DP_SPIKE_SLAB,
}
_BLOCKS = {1: "mu", 2: "delta", 3: "tau", 4: "d", 5: "atoms", 6: "refresh", 7: "labels", 8: "spike"}


class SamplerAbort(RuntimeError):
    """A log-target evaluated to NaN; the message carries a dump of the state."""

    def __init__(self, msg, state=None):
        super().__init__(msg if state is None else f"{msg}\nstate: {state.dump()}")
        self.state = state


class Network:
    """Padded array view of a :class:`Dataset`."""

    def __init__(self, ds: Dataset):
        self.dataset = ds
        self.K = ds.n_treatments
        self.N = ds.n_studies
        A = max(len(s.arms) for s in ds.studies)
        self.A = A
        trt = np.zeros((self.N, A), dtype=np.int64)
        y = np.zeros((self.N, A))
        n = np.zeros((self.N, A))
        mask = np.zeros((self.N, A), dtype=bool)
        for i, s in enumerate(ds.studies):
            for j, k in enumerate([s.baseline, *s.non_baseline]):
                a = s.arm(k)
                trt[i, j] = k - 1
                y[i, j] = a.events
                n[i, j] = a.trials
                mask[i, j] = True
        self.trt = trt
        self.base = np.ascontiguousarray(trt[:, 0])
        self.nb_trt = np.ascontiguousarray(trt[:, 1:])
        self.arm_mask = mask
        self.nb_mask = np.ascontiguousarray(mask[:, 1:])
        self.t = self.nb_mask.sum(axis=1).astype(np.int64)
        self.n = n
        self.y = y
        self.lchoose = np.where(mask, gammaln(n + 1) - gammaln(y + 1) - gammaln(n - y + 1), 0.0)
        self.involves = np.zeros((self.K, self.N), dtype=bool)
        for i, s in enumerate(ds.studies):
            for k in s.treatments:
                self.involves[k - 1, i] = True
        self.inv_ptr = np.concatenate([[0], np.cumsum(self.involves.sum(axis=1))]).astype(np.int64)
        self.inv_idx = np.concatenate([np.nonzero(row)[0] for row in self.involves]).astype(np.int64)

    def with_events(self, y: np.ndarray) -> "Network":
        other = object.__new__(Network)
        other.__dict__.update(self.__dict__)
        other.y = np.where(self.arm_mask, y, 0.0)
        other.lchoose = np.where(
            self.arm_mask, gammaln(self.n + 1) - gammaln(other.y + 1) - gammaln(self.n - other.y + 1), 0.0
        )
        return other

    def packed(self):
        return (self.nb_trt, self.base, self.t, self.y, self.n, self.lchoose,
                self.arm_mask, self.inv_ptr, self.inv_idx)


@dataclass
class ChainState:
    """Latent variables of one chain.

    ``labels`` are 0-based DP component labels with ``labels[0] == -1`` for
    the reference; ``scal`` holds (tau2, omega0).  Gaussian-effects states
    carry empty DP arrays.
    """

    mu: np.ndarray
    delta: np.ndarray
    scal: np.ndarray
    d: np.ndarray
    atoms: np.ndarray
    labels: np.ndarray
    sticks: np.ndarray
    weights: np.ndarray
    spike: np.ndarray

    @classmethod
    def empty(cls, net: Network, H: int = 0) -> "ChainState":
        labels = np.full(net.K, -1, dtype=np.int64)
        return cls(
            mu=np.zeros(net.N),
            delta=np.zeros(net.nb_mask.shape),
            scal=np.array([1.0, np.nan]),
            d=np.zeros(net.K),
            atoms=np.zeros(H),
            labels=labels,
            sticks=np.ones(H),
            weights=np.zeros(H),
            spike=np.zeros(H, dtype=bool),
        )

    @property
    def tau2(self) -> float:
        return float(self.scal[0])

    @tau2.setter
    def tau2(self, value):
        self.scal[0] = value

    @property
    def omega0(self) -> float | None:
        v = float(self.scal[1])
        return None if math.isnan(v) else v

    @omega0.setter
    def omega0(self, value):
        self.scal[1] = np.nan if value is None else value

    def sync_d(self):
        """Recompute effective d from atoms and labels (DP models)."""
        if self.atoms.size:
            self.d[:] = np.where(self.labels >= 0, self.atoms[np.maximum(self.labels, 0)], 0.0)
        return self

    def packed(self):
        return (self.mu, self.delta, self.scal, self.d, self.atoms, self.labels,
                self.sticks, self.weights, self.spike)

    def copy(self) -> "ChainState":
        return ChainState(*(a.copy() for a in self.packed()))

    def dump(self) -> dict:
        return {k: v.tolist() for k, v in self.__dict__.items()}


def effective_d(state: ChainState) -> np.ndarray:
    if state.atoms.size == 0:
        return state.d.copy()
    return np.where(state.labels >= 0, state.atoms[np.maximum(state.labels, 0)], 0.0)


def _prm(prior: PriorConfig, use_likelihood: bool) -> np.ndarray:
    p = np.zeros(_jit.N_PRM)
    p[_jit.PRM_M_B], p[_jit.PRM_S_B] = prior.m_b, prior.s_b
    p[_jit.PRM_M_ELL], p[_jit.PRM_S_ELL] = prior.m_ell, prior.s_ell
    p[_jit.PRM_M_D], p[_jit.PRM_S_D] = prior.m_d, prior.s_d
    p[_jit.PRM_CORR], p[_jit.PRM_ALPHA] = prior.corr, prior.alpha
    p[_jit.PRM_A_OMEGA], p[_jit.PRM_B_OMEGA] = prior.a_omega, prior.b_omega
    if prior.nlp is not None:
        p[_jit.PRM_NLP_P], p[_jit.PRM_SPIKE_SD] = prior.nlp.shape, prior.nlp.spike_sd
    else:
        p[_jit.PRM_NLP_P], p[_jit.PRM_SPIKE_SD] = 1.0, 1.0
    p[_jit.PRM_USE_LIK] = 1.0 if use_likelihood else 0.0
    return p


class GibbsSampler:
    """Transition kernel of one chain.  Updates modify the state in place."""

    def __init__(
        self,
        dataset: Dataset | Network,
        prior: PriorConfig,
        model: ModelKind,
        mcmc: McmcConfig | None = None,
        use_likelihood: bool = True,
    ):
        self.net = dataset if isinstance(dataset, Network) else Network(dataset)
        self.prior = prior
        self.model = ModelKind.parse(model)
        prior.check(self.model)
        self.mcmc = mcmc or McmcConfig()
        self.use_likelihood = use_likelihood
        self.code = _MODEL_CODE[self.model]
        self.prm = _prm(prior, use_likelihood)
        net, mc = self.net, self.mcmc
        self.H = prior.truncation(net.K) if self.model.is_dp else 0
        n_eff = self.H if self.model.is_dp else net.K
        self.steps = (
            np.full(net.N, mc.mu_step),
            np.full(net.nb_mask.shape, mc.delta_step),
            np.full(1, mc.logtau2_step),
            np.full(n_eff, mc.d_step),
        )
        shapes = [(net.N,), net.nb_mask.shape, (1,), (n_eff,), (max(self.H, 1),)]
        self.cnt = tuple(np.zeros(s) for s in shapes for _ in (0, 1))

    def set_events(self, y: np.ndarray) -> None:
        self.net = self.net.with_events(y)

    # ------------------------------------------------------------------ setup
    def init_state(self, rng) -> ChainState:
        net, pc = self.net, self.prior
        state = ChainState.empty(net, self.H)
        yb, nb = net.y[:, 0], net.n[:, 0]
        state.mu[:] = np.log((yb + 0.5) / (nb - yb + 0.5))
        y1, n1 = net.y[:, 1:], net.n[:, 1:]
        arm_logit = np.log((y1 + 0.5) / (n1 - y1 + 0.5))
        state.delta[:] = np.where(net.nb_mask, arm_logit - state.mu[:, None], 0.0)
        state.tau2 = math.exp(pc.m_ell)
        if self.model is ModelKind.GAUSSIAN:
            state.d[:] = pc.m_d + pc.s_d * rng.standard_normal(net.K)
            state.d[0] = 0.0
            return state
        H = self.H
        if self.model is ModelKind.DP_SPIKE_SLAB:
            state.spike[:] = rng.random(H) < 0.5
            state.omega0 = 0.5
            slab = sample_nlp(pc.nlp, rng, size=H)
            spk = pc.nlp.spike_sd * rng.standard_normal(H)
            state.atoms[:] = np.where(state.spike, spk, slab)
        else:
            state.atoms[:] = pc.m_d + pc.s_d * rng.standard_normal(H)
        state.labels[1:] = rng.integers(0, H, size=net.K - 1)
        V = rng.beta(1.0, pc.alpha, size=H)
        V[-1] = 1.0
        state.sticks[:] = V
        state.weights[:] = stick_breaking_weights(V).weights
        return state.sync_d()

    # ------------------------------------------------------- conditional ratios
    def study_loglik(self, state: ChainState, i: int) -> float:
        return float(_jit.study_loglik(i, state.mu[i], state.delta, self.net.packed(), self.prm[_jit.PRM_USE_LIK]))

    def mu_log_ratio(self, state, i, value) -> float:
        return float(_jit.mu_ratio(i, value, self.net.packed(), state.packed(), self.prm))

    def delta_log_ratio(self, state, i, j, value) -> float:
        return float(_jit.delta_ratio(i, j, value, self.net.packed(), state.packed(), self.prm))

    def tau_log_ratio(self, state, eta_new) -> float:
        """Log ratio for moving log(tau2) to ``eta_new``."""
        return float(_jit.tau_ratio(eta_new, self.net.packed(), state.packed(), self.prm))

    def d_log_ratio(self, state, k, value) -> float:
        return float(_jit.d_ratio(k, value, self.net.packed(), state.packed(), self.prm))

    def atom_log_ratio(self, state, h, value) -> float:
        return float(_jit.atom_ratio(h, value, self.code, self.net.packed(), state.packed(), self.prm))

    def atom_lik_ratio(self, state, h, value) -> float:
        return float(_jit.atom_lik_ratio(h, value, self.net.packed(), state.packed(), self.prm))

    def label_log_probs(self, state, k) -> np.ndarray:
        return _jit.label_log_probs(k, self.net.packed(), state.packed(), self.prm)

    def spike_log_probs(self, state) -> np.ndarray:
        """log Pr(s_h = 1 | -) for every component."""
        return np.array([_jit.spike_log_prob(a, state.scal[1], self.prm) for a in state.atoms])

    # --------------------------------------------------------------- updates
    def _call(self, code, state):
        if code:
            raise SamplerAbort(f"non-finite log-target in {_BLOCKS.get(code, code)} update", state)
        return state

    def update_mu(self, state, rng):
        return self._call(_jit.update_mu(self.net.packed(), state.packed(), self.prm, self.steps, self.cnt, rng), state)

    def update_delta(self, state, rng):
        return self._call(_jit.update_delta(self.net.packed(), state.packed(), self.prm, self.steps, self.cnt, rng), state)

    def update_tau(self, state, rng):
        return self._call(_jit.update_tau(self.net.packed(), state.packed(), self.prm, self.steps, self.cnt, rng), state)

    def update_d(self, state, rng):
        return self._call(_jit.update_d(self.net.packed(), state.packed(), self.prm, self.steps, self.cnt, rng), state)

    def update_atoms(self, state, rng):
        return self._call(
            _jit.update_atoms(self.code, self.net.packed(), state.packed(), self.prm, self.steps, self.cnt, rng), state
        )

    def refresh_atoms(self, state, rng):
        """Independence proposal of (s_h, d*_h) from the base measure.

        Prior and proposal cancel, leaving the likelihood ratio, so empty
        components are redrawn exactly from the base measure.  It lets occupied
        components cross between spike and slab, which the local random walk
        essentially never does.
        """
        return self._call(_jit.refresh_atoms(self.code, self.net.packed(), state.packed(), self.prm, self.cnt, rng), state)

    def update_labels(self, state, rng):
        return self._call(_jit.update_labels(self.net.packed(), state.packed(), self.prm, rng), state)

    def update_sticks(self, state, rng):
        _jit.update_sticks(state.packed(), self.prm, rng)
        return state

    def update_spike_indicators(self, state, rng):
        return self._call(_jit.update_spike(state.packed(), self.prm, rng), state)

    def update_omega0(self, state, rng):
        _jit.update_omega(state.packed(), self.prm, rng)
        return state

    def sweep(self, state, rng, refresh: bool = True, n: int = 1):
        code = _jit.run_sweeps(
            n, self.code, refresh, self.net.packed(), state.packed(), self.prm, self.steps, self.cnt, rng
        )
        return self._call(code, state)

    # ------------------------------------------------------------ adaptation
    def counts(self):
        return tuple(c.copy() for c in self.cnt)

    def adapt(self, before, batch_index: int):
        """Robbins-Monro step on log proposal scales toward the target rate,
        using acceptance counts accumulated since the snapshot ``before``."""
        gain = min(0.1, 1.0 / math.sqrt(batch_index))
        target = self.mcmc.target_accept
        for q, step in enumerate(self.steps):
            acc = self.cnt[2 * q] - before[2 * q]
            prop = self.cnt[2 * q + 1] - before[2 * q + 1]
            with np.errstate(invalid="ignore", divide="ignore"):
                rate = acc / prop
            direction = np.where(rate > target, 1.0, -1.0)
            step[...] = np.where(prop > 0, step * np.exp(gain * direction), step)

    def reset_counters(self):
        for c in self.cnt:
            c[...] = 0

    def acceptance_rates(self) -> dict:
        names = ["mu", "delta", "tau", "atoms" if self.model.is_dp else "d"]
        if self.model.is_dp:
            names.append("refresh")
        out = {}
        for q, name in enumerate(names):
            tot = self.cnt[2 * q + 1].sum()
            out[name] = float(self.cnt[2 * q].sum() / tot) if tot else float("nan")
        return out


def sample_prior(net: Network, prior: PriorConfig, model: ModelKind, rng) -> ChainState:
    """Exact joint draw of every latent variable from the prior."""
    model = ModelKind.parse(model)
    pc = prior
    K, N = net.K, net.N
    H = pc.truncation(K) if model.is_dp else 0
    state = ChainState.empty(net, H)
    state.mu[:] = pc.m_b + pc.s_b * rng.standard_normal(N)
    state.tau2 = math.exp(pc.m_ell + pc.s_ell * rng.standard_normal())
    if model is ModelKind.GAUSSIAN:
        state.d[:] = pc.m_d + pc.s_d * rng.standard_normal(K)
        state.d[0] = 0.0
    else:
        V = rng.beta(1.0, pc.alpha, size=H)
        V[-1] = 1.0
        w = stick_breaking_weights(V).weights
        state.sticks[:], state.weights[:] = V, w
        labels = np.searchsorted(np.cumsum(w), rng.random(K - 1) * w.sum(), side="right")
        state.labels[1:] = np.minimum(labels, H - 1)
        if model is ModelKind.DP_SPIKE_SLAB:
            state.omega0 = float(rng.beta(pc.a_omega, pc.b_omega))
            state.spike[:] = rng.random(H) < state.omega0
            slab = sample_nlp(pc.nlp, rng, size=H)
            spk = pc.nlp.spike_sd * rng.standard_normal(H)
            state.atoms[:] = np.where(state.spike, spk, slab)
        else:
            state.atoms[:] = pc.m_d + pc.s_d * rng.standard_normal(H)
        state.sync_d()
    for i in range(N):
        t = net.t[i]
        mean = state.d[net.nb_trt[i, :t]] - state.d[net.base[i]]
        state.delta[i, :t] = sample_equicorr_mvn(mean, rng=rng, tau2=state.tau2, corr=pc.corr)
    return state


def simulate_events(net: Network, state: ChainState, rng) -> np.ndarray:
    """Binomial outcomes (N, A) from the logit model at ``state``."""
    eta = state.mu[:, None] + np.concatenate([np.zeros((net.N, 1)), state.delta], axis=1)
    y = rng.binomial(net.n.astype(np.int64), expit(eta))
    return np.where(net.arm_mask, y, 0).astype(float)


# -------------------------------------------------------------------- driver
@dataclass
class ChainResult:
    chain: int
    iteration: np.ndarray
    d: np.ndarray
    tau2: np.ndarray
    spike: np.ndarray | None
    omega0: np.ndarray | None
    cluster: np.ndarray | None
    acceptance: dict = field(default_factory=dict)
    steps: dict = field(default_factory=dict)


def run_chain(
    dataset: Dataset,
    prior: PriorConfig,
    mcmc: McmcConfig,
    model: ModelKind,
    chain: int,
    use_likelihood: bool = True,
    refresh: bool = True,
) -> ChainResult:
    model = ModelKind.parse(model)
    rng = make_stream(mcmc.seed, chain)
    sampler = GibbsSampler(dataset, prior, model, mcmc, use_likelihood=use_likelihood)
    state = sampler.init_state(rng)
    m = mcmc.kept_per_chain
    K = sampler.net.K
    ss = model is ModelKind.DP_SPIKE_SLAB
    out_it = np.zeros(m, dtype=int)
    out_d = np.zeros((m, K))
    out_tau = np.zeros(m)
    out_spike = np.zeros((m, K), dtype=bool) if ss else None
    out_omega = np.zeros(m) if ss else None
    out_cluster = np.zeros((m, K), dtype=int) if model.is_dp else None

    it = 0
    batch = mcmc.adapt_batch if mcmc.adapt else mcmc.burn_in
    while it < mcmc.burn_in:
        n = min(batch, mcmc.burn_in - it)
        before = sampler.counts()
        sampler.sweep(state, rng, refresh, n)
        it += n
        if mcmc.adapt and n == batch:
            sampler.adapt(before, it // batch)
    sampler.reset_counters()
    for slot in range(m):
        sampler.sweep(state, rng, refresh, mcmc.thin)
        it += mcmc.thin
        out_it[slot] = it
        out_d[slot] = effective_d(state)
        out_tau[slot] = state.tau2
        if model.is_dp:
            out_cluster[slot] = state.labels + 1
        if ss:
            flags = state.spike[np.maximum(state.labels, 0)]
            flags[0] = True
            out_spike[slot] = flags
            out_omega[slot] = state.omega0
    # iterations past the last kept draw do not change the output
    steps = {"mu": sampler.steps[0].tolist(), "delta": sampler.steps[1].tolist(),
             "logtau2": float(sampler.steps[2][0]), "effects": sampler.steps[3].tolist()}
    return ChainResult(chain, out_it, out_d, out_tau, out_spike, out_omega, out_cluster,
                       sampler.acceptance_rates(), steps)


def _run_chain_args(args):
    return run_chain(*args)


def run_chains(
    dataset: Dataset,
    prior: PriorConfig,
    mcmc: McmcConfig,
    model: ModelKind,
    jobs: int = 1,
    use_likelihood: bool = True,
    refresh: bool = True,
) -> PosteriorSamples:
    """Run ``mcmc.chains`` independent chains and pool their kept draws.

    Chain ``c`` uses ``make_stream(mcmc.seed, c)``, so results do not depend
    on ``jobs``.
    """
    model = ModelKind.parse(model)
    prior.check(model)
    if not validate_network(dataset).connected:
        raise DataError("treatment network is disconnected; cannot fit")
    tasks = [(dataset, prior, mcmc, model, c, use_likelihood, refresh) for c in range(mcmc.chains)]
    if jobs > 1 and mcmc.chains > 1:
        with ProcessPoolExecutor(max_workers=min(jobs, mcmc.chains)) as ex:
            results = list(ex.map(_run_chain_args, tasks))
    else:
        results = [run_chain(*t) for t in tasks]

    def cat(attr):
        parts = [getattr(r, attr) for r in results]
        return None if parts[0] is None else np.concatenate(parts)

    return PosteriorSamples(
        model=model,
        d=cat("d"),
        tau2=cat("tau2"),
        chain=np.concatenate([np.full(len(r.iteration), r.chain) for r in results]),
        iteration=cat("iteration"),
        spike=cat("spike"),
        omega0=cat("omega0"),
        cluster=cat("cluster"),
        labels=dataset.labels,
        prior=prior,
        mcmc=mcmc,
        acceptance={r.chain: r.acceptance for r in results},
    )
