import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from nmarank.config import McmcConfig, ModelKind, PriorConfig
from nmarank.data import DataError, parse_dataset
from nmarank.graph import pairwise_probabilities
from nmarank.kernels import make_stream
from nmarank.samplers import ChainState, GibbsSampler, SamplerAbort, run_chains
from nmarank.samples import read_jsonl, write_jsonl

from model_cases import MODELS, batch_means_se, check_all_ratios, make_case, two_arm_dataset
from oracles import _binom, _norm

PAIR = two_arm_dataset([("s1", (1, 5, 10), (2, 3, 12)), ("s2", (2, 4, 9), (3, 6, 11))])
SS_PRIOR = PriorConfig(v0=0.5)


def _sampler(model=ModelKind.GAUSSIAN, ds=PAIR, prior=None, **kw):
    prior = prior or (SS_PRIOR if model is ModelKind.DP_SPIKE_SLAB else PriorConfig())
    return GibbsSampler(ds, prior, model, **kw)


def expit(x):
    return 1 / (1 + math.exp(-x))


# ------------------------------------------------------------- conditionals
@pytest.mark.parametrize("model", MODELS, ids=lambda m: m.value)
@pytest.mark.parametrize("use_lik", [True, False], ids=["posterior", "prior-only"])
def test_every_ratio_matches_full_joint(model, use_lik):
    fails = []
    for seed in range(60):
        sampler, state, rng = make_case(seed, model, K=int(3 + seed % 3), N=int(3 + seed % 4), use_likelihood=use_lik)
        fails += [f"seed {seed}: {f}" for f in check_all_ratios(sampler, state, rng)]
    assert not fails, "\n".join(fails[:10])


def test_study_loglik_single_arm_value():
    ds = two_arm_dataset([("s", (1, 5, 10), (2, 2, 7))])
    sm = _sampler(ds=ds)
    state = ChainState.empty(sm.net)
    state.delta[0, 0] = 0.4
    other = _binom(2, 7, expit(0.4))
    assert sm.study_loglik(state, 0) - other == pytest.approx(-1.40205, abs=1e-5)
    assert sm.study_loglik(state, 0) == pytest.approx(_binom(5, 10, 0.5) + other, abs=1e-12)


def test_study_loglik_saturated_logistic():
    ds = two_arm_dataset([("s", (1, 10, 10), (2, 10, 10))])
    sm = _sampler(ds=ds)
    state = ChainState.empty(sm.net)
    state.mu[0] = 40.0
    val = sm.study_loglik(state, 0)
    assert math.isfinite(val) and abs(val) < 1e-15


def test_mu_hand_case():
    ds = two_arm_dataset([("s", (1, 5, 10), (2, 3, 10))])
    sm = _sampler(ds=ds)
    state = ChainState.empty(sm.net)

    def target(mu):
        return _binom(5, 10, expit(mu)) + _binom(3, 10, expit(mu)) + _norm(mu, 0, 10)

    assert sm.mu_log_ratio(state, 0, 0.1) == pytest.approx(target(0.1) - target(0.0), abs=1e-12)


def test_delta_symmetric_mvn_term_cancels():
    ds = two_arm_dataset([("s", (1, 5, 10), (2, 3, 10))])
    sm = _sampler(ds=ds)
    state = ChainState.empty(sm.net)
    state.tau2 = 0.01
    state.d[1] = 0.25
    state.delta[0, 0] = 0.2
    lik = _binom(3, 10, expit(0.3)) - _binom(3, 10, expit(0.2))
    assert sm.delta_log_ratio(state, 0, 0, 0.3) == pytest.approx(lik, abs=1e-12)


def test_zero_step_is_always_accepted():
    for model in MODELS:
        sm, state, rng = make_case(3, model)
        assert sm.mu_log_ratio(state, 0, state.mu[0]) == 0.0
        assert sm.delta_log_ratio(state, 0, 0, state.delta[0, 0]) == 0.0
        assert sm.tau_log_ratio(state, math.log(state.tau2)) == 0.0
        if model.is_dp:
            assert sm.atom_log_ratio(state, 0, state.atoms[0]) == 0.0
        else:
            assert sm.d_log_ratio(state, 1, state.d[1]) == 0.0


def test_spike_atom_far_outside_spike_rejected_prior_only():
    sm = _sampler(ModelKind.DP_SPIKE_SLAB, use_likelihood=False)
    state = sm.init_state(make_stream(0))
    state.spike[:] = True
    state.atoms[0] = 0.0
    state.sync_d()
    assert math.exp(sm.atom_log_ratio(state, 0, 5 * SS_PRIOR.v0)) < 1e-6


def test_spike_indicator_edge_cases():
    sm = _sampler(ModelKind.DP_SPIKE_SLAB)
    state = sm.init_state(make_stream(0))
    state.omega0 = 0.5
    state.atoms[:] = [0.0, 10 * SS_PRIOR.v0, 0.3]
    lp = sm.spike_log_probs(state)
    assert lp[0] == 0.0  # the slab vanishes at zero
    assert math.exp(lp[1]) < 1e-6
    state.omega0 = 1.0
    assert np.all(sm.spike_log_probs(state) == 0.0)
    rng = make_stream(1)
    for _ in range(50):
        sm.update_spike_indicators(state, rng)
        assert state.spike.all()


def test_label_probabilities_symmetric_and_degenerate():
    sm = _sampler(ModelKind.DP_GAUSSIAN, prior=PriorConfig(H=2))
    state = sm.init_state(make_stream(0))
    state.atoms[:] = 0.4
    state.sticks[:] = [0.5, 1.0]
    state.weights[:] = [0.5, 0.5]
    state.sync_d()
    np.testing.assert_allclose(np.exp(sm.label_log_probs(state, 1)), [0.5, 0.5], atol=1e-15)
    state.atoms[:] = [0.1, -0.7]
    state.sticks[:] = [1.0, 1.0]
    state.weights[:] = [1.0, 0.0]
    state.sync_d()
    lp = sm.label_log_probs(state, 2)
    assert lp[0] == 0.0 and lp[1] == -math.inf
    rng = make_stream(2)
    for _ in range(20):
        sm.update_labels(state, rng)
        assert np.all(state.labels[1:] == 0)


# ------------------------------------------------------- conjugate updates
def _ks_pvalue(draws, a, b):
    return stats.kstest(draws, stats.beta(a, b).cdf).pvalue


def test_stick_updates_use_label_counts():
    ds = two_arm_dataset([("a", (1, 1, 9), (2, 1, 9)), ("b", (2, 1, 9), (3, 1, 9)), ("c", (3, 1, 9), (4, 1, 9))])
    sm = _sampler(ModelKind.DP_GAUSSIAN, ds=ds)
    state = sm.init_state(make_stream(0))
    state.labels[1:] = [0, 0, 1]
    rng = make_stream(9)
    draws = []
    for _ in range(20_000):
        sm.update_sticks(state, rng)
        draws.append(state.sticks.copy())
        assert abs(state.weights.sum() - 1) <= 1e-12
    draws = np.array(draws)
    assert np.all(draws[:, -1] == 1.0)
    assert _ks_pvalue(draws[:, 0], 3, 2) > 1e-3
    assert _ks_pvalue(draws[:, 1], 2, 1) > 1e-3
    assert _ks_pvalue(draws[:, 2], 1, 1) > 1e-3


def test_sticks_when_every_label_is_last():
    ds = two_arm_dataset([("a", (1, 1, 9), (2, 1, 9)), ("b", (2, 1, 9), (3, 1, 9))])
    sm = _sampler(ModelKind.DP_GAUSSIAN, ds=ds)
    state = sm.init_state(make_stream(0))
    state.labels[1:] = sm.H - 1
    rng = make_stream(4)
    draws = np.array([sm.update_sticks(state, rng).sticks[0] for _ in range(20_000)])
    assert _ks_pvalue(draws, 1, 1 + 2) > 1e-3


def test_omega_update_is_conjugate():
    ds = two_arm_dataset([("a", (1, 1, 9), (2, 1, 9)), ("b", (2, 1, 9), (3, 1, 9))])
    sm = _sampler(ModelKind.DP_SPIKE_SLAB, ds=ds)
    state = sm.init_state(make_stream(0))
    state.spike[:] = [True, False, True]
    rng = make_stream(5)
    draws = np.array([sm.update_omega0(state, rng).omega0 for _ in range(20_000)])
    assert _ks_pvalue(draws, 3, 2) > 1e-3


# --------------------------------------------------------- prior-only runs
def _prior_run(model, sweeps=60_000, thin=10, seed=1):
    sm = _sampler(model, use_likelihood=False, mcmc=McmcConfig(adapt=False, mu_step=8.0, d_step=1.0, logtau2_step=2.0))
    rng = make_stream(seed)
    state = sm.init_state(rng)
    sm.sweep(state, rng, n=1000)
    out = []
    for _ in range(sweeps // thin):
        sm.sweep(state, rng, n=thin)
        out.append((state.mu[0], math.log(state.tau2), state.d[1], state.atoms[0] if model.is_dp else np.nan))
    return np.array(out)


def _within(x, target, k=4.0):
    se = batch_means_se(x)
    return abs(np.mean(x) - target) < k * se, (np.mean(x), target, se)


def test_prior_only_gaussian_marginals():
    out = _prior_run(ModelKind.GAUSSIAN)
    ok, info = _within(out[:, 0] / 10, 0.0)
    assert ok, info
    ok, info = _within((out[:, 0] / 10) ** 2, 1.0)
    assert ok, info
    logtau = out[:, 1]
    for q in (0.25, 0.5, 0.75):
        cut = -2.34 + 2 * stats.norm.ppf(q)
        ok, info = _within((logtau < cut).astype(float), q)
        assert ok, (q, info)


def test_prior_only_dp_gaussian_atoms():
    out = _prior_run(ModelKind.DP_GAUSSIAN)
    ok, info = _within(out[:, 3], 0.0)
    assert ok, info
    ok, info = _within(out[:, 3] ** 2, 1.0)
    assert ok, info


# ----------------------------------------------------------- bookkeeping
@settings(max_examples=25, deadline=None)
@given(chains=st.integers(1, 3), burn=st.integers(0, 30), extra=st.integers(1, 40), thin=st.integers(1, 7))
def test_kept_draw_count(chains, burn, extra, thin):
    mc = McmcConfig(chains=chains, iterations=burn + extra, burn_in=burn, thin=thin)
    assert mc.n_kept == chains * (extra // thin)
    if mc.n_kept:
        ps = run_chains(PAIR, PriorConfig(), mc, ModelKind.GAUSSIAN)
        assert ps.n_draws == mc.n_kept
        assert np.all(ps.iteration % thin == burn % thin)


@pytest.mark.parametrize("chains, iters, burn, thin, kept", [(5, 200_000, 100_000, 100, 5000), (3, 1000, 500, 10, 150)])
def test_kept_count_examples(chains, iters, burn, thin, kept):
    assert McmcConfig(chains=chains, iterations=iters, burn_in=burn, thin=thin).n_kept == kept


@pytest.mark.parametrize("model", MODELS, ids=lambda m: m.value)
def test_same_seed_is_bit_identical(model):
    mc = McmcConfig(chains=2, iterations=600, burn_in=200, thin=4, seed=7)
    prior = SS_PRIOR if model is ModelKind.DP_SPIKE_SLAB else PriorConfig()
    a = run_chains(PAIR, prior, mc, model)
    b = run_chains(PAIR, prior, mc, model)
    assert a.same_draws(b)
    c = run_chains(PAIR, prior, McmcConfig.from_dict({**mc.to_dict(), "seed": 8}), model)
    assert not a.same_draws(c)


def test_jobs_do_not_change_draws():
    mc = McmcConfig(chains=2, iterations=400, burn_in=100, thin=3, seed=3)
    a = run_chains(PAIR, SS_PRIOR, mc, ModelKind.DP_SPIKE_SLAB, jobs=1)
    b = run_chains(PAIR, SS_PRIOR, mc, ModelKind.DP_SPIKE_SLAB, jobs=2)
    assert a.same_draws(b)


def test_gaussian_effects_never_tie():
    ps = run_chains(PAIR, PriorConfig(), McmcConfig(chains=2, iterations=2000, burn_in=500, thin=5), ModelKind.GAUSSIAN)
    assert np.all(pairwise_probabilities(ps).counts[:, 0] == 0)


@pytest.mark.parametrize("model", MODELS[1:], ids=lambda m: m.value)
def test_dp_state_stays_consistent(model):
    sm, state, rng = make_case(11, model)
    for _ in range(200):
        sm.sweep(state, rng)
        assert state.d[0] == 0.0
        np.testing.assert_array_equal(state.d[1:], state.atoms[state.labels[1:]])
        assert abs(state.weights.sum() - 1) <= 1e-12
        assert state.tau2 > 0
        if model is ModelKind.DP_SPIKE_SLAB:
            assert 0 < state.omega0 < 1


def test_init_with_zero_events_is_finite():
    ds = two_arm_dataset([("s", (1, 0, 20), (2, 0, 20)), ("t", (2, 3, 9), (3, 9, 9))])
    sm = _sampler(ds=ds)
    state = sm.init_state(make_stream(0))
    assert state.mu[0] == pytest.approx(math.log(0.5 / 20.5))
    assert np.all(np.isfinite(state.mu)) and np.all(np.isfinite(state.delta))
    assert state.tau2 == pytest.approx(math.exp(-2.34))


def test_nan_target_aborts_with_state_dump():
    sm, state, rng = make_case(0, ModelKind.GAUSSIAN)
    state.mu[0] = np.nan
    with pytest.raises(SamplerAbort, match="state"):
        sm.sweep(state, rng)


def test_disconnected_network_refused():
    text = "study_id,treatment,events,total\na,1,1,9\na,2,1,9\nb,3,1,9\nb,4,1,9\n"
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        ds = parse_dataset(text)
    with pytest.raises(DataError, match="disconnected"):
        run_chains(ds, PriorConfig(), McmcConfig(chains=1, iterations=10, burn_in=0, thin=1), ModelKind.GAUSSIAN)


@pytest.mark.parametrize("model", MODELS, ids=lambda m: m.value)
def test_jsonl_round_trip(model, tmp_path):
    prior = SS_PRIOR if model is ModelKind.DP_SPIKE_SLAB else PriorConfig()
    ps = run_chains(PAIR, prior, McmcConfig(chains=2, iterations=300, burn_in=100, thin=5), model)
    path = tmp_path / "s.jsonl"
    write_jsonl(ps, path)
    back = read_jsonl(path)
    assert back.same_draws(ps)
    write_jsonl(back, tmp_path / "t.jsonl")
    assert (tmp_path / "t.jsonl").read_bytes() == path.read_bytes()
