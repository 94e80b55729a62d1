"""Compiled kernels for one sweep of the samplers.

Argument bundles (all tuples of arrays so numba can type them once):

net  = (nb_trt, base, t, y, n, lchoose, arm_mask, inv_ptr, inv_idx)
st   = (mu, delta, scal, d, atoms, labels, sticks, weights, spike)
       scal = [tau2, omega0]; for DP models d mirrors atoms[labels]
prm  = float vector, see PRM_* indices
cnt  = (acc_mu, prop_mu, acc_delta, prop_delta, acc_tau, prop_tau,
        acc_eff, prop_eff, acc_ref, prop_ref)
"""
from __future__ import annotations

import math

import numpy as np
from numba import njit

LOG_2PI = math.log(2.0 * math.pi)
TAU2_FLOOR = 1e-12

PRM_M_B, PRM_S_B, PRM_M_ELL, PRM_S_ELL, PRM_M_D, PRM_S_D = 0, 1, 2, 3, 4, 5
PRM_CORR, PRM_ALPHA, PRM_A_OMEGA, PRM_B_OMEGA = 6, 7, 8, 9
PRM_NLP_P, PRM_SPIKE_SD, PRM_USE_LIK = 10, 11, 12
N_PRM = 13

GAUSSIAN, DP_GAUSSIAN, DP_SPIKE_SLAB = 0, 1, 2


@njit(cache=True)
def log1pexp(x):
    if x > 0:
        return x + math.log1p(math.exp(-x))
    return math.log1p(math.exp(x))


@njit(cache=True)
def arm_loglik(y, n, lc, eta):
    # log p = -log(1 + e^-eta); log(1 - p) = -log(1 + e^eta)
    return lc - y * log1pexp(-eta) - (n - y) * log1pexp(eta)


@njit(cache=True)
def norm_lpdf(x, m, sd):
    z = (x - m) / sd
    return -0.5 * z * z - math.log(sd) - 0.5 * LOG_2PI


@njit(cache=True)
def nlp_lpdf(x, p):
    """Inverse-moment density with scale 1 and order 1."""
    x2 = x * x
    if x2 == 0.0:
        return -np.inf
    lx2 = math.log(x2)
    arg = -p * lx2
    if arg > 700.0:
        return -np.inf
    return math.log(p) - math.lgamma(1.0 / (2.0 * p)) - lx2 - math.exp(arg)


@njit(cache=True)
def study_loglik(i, mu_i, delta, net, use_lik):
    if use_lik == 0.0:
        return 0.0
    y, n, lc, t = net[3], net[4], net[5], net[2]
    out = arm_loglik(y[i, 0], n[i, 0], lc[i, 0], mu_i)
    for j in range(t[i]):
        out += arm_loglik(y[i, j + 1], n[i, j + 1], lc[i, j + 1], mu_i + delta[i, j])
    return out


@njit(cache=True)
def mvn_terms(row, d, i, net):
    """(sum r^2, (sum r)^2, t) of the residual delta_i - d_{1i}."""
    nb_trt, base, t = net[0], net[1], net[2]
    db = d[base[i]]
    s1 = 0.0
    s = 0.0
    ti = t[i]
    for j in range(ti):
        r = row[j] - (d[nb_trt[i, j]] - db)
        s1 += r * r
        s += r
    return s1, s * s, ti


@njit(cache=True)
def mvn_from_terms(s1, s2, ti, tau2, corr):
    logdet = ti * math.log(tau2) + (ti - 1) * math.log1p(-corr) + math.log1p((ti - 1) * corr)
    quad = (s1 - corr / (1.0 + (ti - 1) * corr) * s2) / (tau2 * (1.0 - corr))
    return -0.5 * (ti * LOG_2PI + logdet + quad)


@njit(cache=True)
def study_mvn(row, d, i, net, tau2, corr):
    s1, s2, ti = mvn_terms(row, d, i, net)
    return mvn_from_terms(s1, s2, ti, tau2, corr)


# ---------------------------------------------------------------- log ratios
@njit(cache=True)
def mu_ratio(i, value, net, st, prm):
    mu, delta = st[0], st[1]
    lik = study_loglik(i, value, delta, net, prm[PRM_USE_LIK]) - study_loglik(i, mu[i], delta, net, prm[PRM_USE_LIK])
    return lik + norm_lpdf(value, prm[PRM_M_B], prm[PRM_S_B]) - norm_lpdf(mu[i], prm[PRM_M_B], prm[PRM_S_B])


@njit(cache=True)
def delta_ratio(i, j, value, net, st, prm):
    mu, delta, scal, d = st[0], st[1], st[2], st[3]
    out = 0.0
    if prm[PRM_USE_LIK] != 0.0:
        y, n, lc = net[3], net[4], net[5]
        out += arm_loglik(y[i, j + 1], n[i, j + 1], lc[i, j + 1], mu[i] + value)
        out -= arm_loglik(y[i, j + 1], n[i, j + 1], lc[i, j + 1], mu[i] + delta[i, j])
    row = delta[i].copy()
    row[j] = value
    corr = prm[PRM_CORR]
    out += study_mvn(row, d, i, net, scal[0], corr) - study_mvn(delta[i], d, i, net, scal[0], corr)
    return out


@njit(cache=True)
def tau_ratio(eta_new, net, st, prm):
    delta, scal, d = st[1], st[2], st[3]
    tau2 = scal[0]
    tau2_new = math.exp(eta_new)
    if tau2_new < TAU2_FLOOR:
        return -np.inf
    corr = prm[PRM_CORR]
    out = 0.0
    for i in range(delta.shape[0]):
        s1, s2, ti = mvn_terms(delta[i], d, i, net)
        out += mvn_from_terms(s1, s2, ti, tau2_new, corr) - mvn_from_terms(s1, s2, ti, tau2, corr)
    return out + norm_lpdf(eta_new, prm[PRM_M_ELL], prm[PRM_S_ELL]) - norm_lpdf(math.log(tau2), prm[PRM_M_ELL], prm[PRM_S_ELL])


@njit(cache=True)
def _mvn_diff_studies(d_new, d_old, studies, net, st, prm):
    delta, scal = st[1], st[2]
    out = 0.0
    for i in studies:
        out += study_mvn(delta[i], d_new, i, net, scal[0], prm[PRM_CORR])
        out -= study_mvn(delta[i], d_old, i, net, scal[0], prm[PRM_CORR])
    return out


@njit(cache=True)
def d_ratio(k, value, net, st, prm):
    d = st[3]
    inv_ptr, inv_idx = net[7], net[8]
    d_new = d.copy()
    d_new[k] = value
    lik = _mvn_diff_studies(d_new, d, inv_idx[inv_ptr[k]:inv_ptr[k + 1]], net, st, prm)
    return lik + norm_lpdf(value, prm[PRM_M_D], prm[PRM_S_D]) - norm_lpdf(d[k], prm[PRM_M_D], prm[PRM_S_D])


@njit(cache=True)
def _atom_studies(h, labels, net):
    """Sorted indices of studies containing a treatment with label h."""
    inv_ptr, inv_idx = net[7], net[8]
    n_studies = net[2].shape[0]
    hit = np.zeros(n_studies, dtype=np.bool_)
    for k in range(labels.shape[0]):
        if labels[k] == h:
            for q in range(inv_ptr[k], inv_ptr[k + 1]):
                hit[inv_idx[q]] = True
    return np.nonzero(hit)[0]


@njit(cache=True)
def atom_lik_ratio(h, value, net, st, prm):
    d, labels = st[3], st[5]
    d_new = d.copy()
    for k in range(labels.shape[0]):
        if labels[k] == h:
            d_new[k] = value
    return _mvn_diff_studies(d_new, d, _atom_studies(h, labels, net), net, st, prm)


@njit(cache=True)
def atom_log_prior(value, h, model, st, prm):
    if model == DP_GAUSSIAN:
        return norm_lpdf(value, prm[PRM_M_D], prm[PRM_S_D])
    if st[8][h]:
        return norm_lpdf(value, 0.0, prm[PRM_SPIKE_SD])
    return nlp_lpdf(value, prm[PRM_NLP_P])


@njit(cache=True)
def atom_ratio(h, value, model, net, st, prm):
    atoms = st[4]
    prior = atom_log_prior(value, h, model, st, prm) - atom_log_prior(atoms[h], h, model, st, prm)
    if prior == -np.inf:
        return -np.inf
    return atom_lik_ratio(h, value, net, st, prm) + prior


@njit(cache=True)
def label_log_probs(k, net, st, prm):
    """Normalised log Pr(c_k = h | -), h = 0..H-1."""
    d, atoms, weights = st[3], st[4], st[7]
    inv_ptr, inv_idx = net[7], net[8]
    H = atoms.shape[0]
    lp = np.empty(H)
    d_new = d.copy()
    studies = inv_idx[inv_ptr[k]:inv_ptr[k + 1]]
    delta, scal = st[1], st[2]
    for h in range(H):
        if weights[h] <= 0.0:
            lp[h] = -np.inf
            continue
        d_new[k] = atoms[h]
        acc = math.log(weights[h])
        for i in studies:
            acc += study_mvn(delta[i], d_new, i, net, scal[0], prm[PRM_CORR])
        lp[h] = acc
    m = -np.inf
    for h in range(H):
        if lp[h] > m:
            m = lp[h]
    if m == -np.inf or np.isnan(m):
        return lp
    tot = 0.0
    for h in range(H):
        tot += math.exp(lp[h] - m)
    return lp - (m + math.log(tot))


@njit(cache=True)
def spike_log_prob(value, omega0, prm):
    """log Pr(s_h = 1 | d*_h, omega0)."""
    if omega0 >= 1.0:
        return 0.0
    if omega0 <= 0.0:
        return -np.inf
    b = math.log(omega0) + norm_lpdf(value, 0.0, prm[PRM_SPIKE_SD])
    a = math.log1p(-omega0) + nlp_lpdf(value, prm[PRM_NLP_P])
    if a == -np.inf:
        return 0.0
    mx = max(a, b)
    return b - (mx + math.log(math.exp(a - mx) + math.exp(b - mx)))


# ------------------------------------------------------------------- updates
@njit(cache=True)
def _bad(x):
    return np.isnan(x)


@njit(cache=True)
def update_mu(net, st, prm, steps, cnt, rng):
    mu = st[0]
    step = steps[0]
    for i in range(mu.shape[0]):
        value = mu[i] + step[i] * rng.standard_normal()
        lr = mu_ratio(i, value, net, st, prm)
        if _bad(lr):
            return 1
        cnt[1][i] += 1
        if math.log(rng.random()) < lr:
            mu[i] = value
            cnt[0][i] += 1
    return 0


@njit(cache=True)
def update_delta(net, st, prm, steps, cnt, rng):
    delta = st[1]
    t = net[2]
    step = steps[1]
    for i in range(delta.shape[0]):
        for j in range(t[i]):
            value = delta[i, j] + step[i, j] * rng.standard_normal()
            lr = delta_ratio(i, j, value, net, st, prm)
            if _bad(lr):
                return 2
            cnt[3][i, j] += 1
            if math.log(rng.random()) < lr:
                delta[i, j] = value
                cnt[2][i, j] += 1
    return 0


@njit(cache=True)
def update_tau(net, st, prm, steps, cnt, rng):
    scal = st[2]
    eta_new = math.log(scal[0]) + steps[2][0] * rng.standard_normal()
    lr = tau_ratio(eta_new, net, st, prm)
    if _bad(lr):
        return 3
    cnt[5][0] += 1
    if math.log(rng.random()) < lr:
        scal[0] = math.exp(eta_new)
        cnt[4][0] += 1
    return 0


@njit(cache=True)
def update_d(net, st, prm, steps, cnt, rng):
    d = st[3]
    step = steps[3]
    for k in range(1, d.shape[0]):
        value = d[k] + step[k] * rng.standard_normal()
        lr = d_ratio(k, value, net, st, prm)
        if _bad(lr):
            return 4
        cnt[7][k] += 1
        if math.log(rng.random()) < lr:
            d[k] = value
            cnt[6][k] += 1
    return 0


@njit(cache=True)
def _set_atom(h, value, st):
    d, atoms, labels = st[3], st[4], st[5]
    atoms[h] = value
    for k in range(labels.shape[0]):
        if labels[k] == h:
            d[k] = value


@njit(cache=True)
def update_atoms(model, net, st, prm, steps, cnt, rng):
    atoms = st[4]
    step = steps[3]
    for h in range(atoms.shape[0]):
        value = atoms[h] + step[h] * rng.standard_normal()
        lr = atom_ratio(h, value, model, net, st, prm)
        if _bad(lr):
            return 5
        cnt[7][h] += 1
        if math.log(rng.random()) < lr:
            _set_atom(h, value, st)
            cnt[6][h] += 1
    return 0


@njit(cache=True)
def draw_nlp(p, rng):
    w = rng.gamma(1.0 / (2.0 * p), 1.0)
    mag = w ** (-1.0 / (2.0 * p))
    if rng.random() < 0.5:
        return -mag
    return mag


@njit(cache=True)
def refresh_atoms(model, net, st, prm, cnt, rng):
    atoms, scal, spike = st[4], st[2], st[8]
    for h in range(atoms.shape[0]):
        s_new = False
        if model == DP_SPIKE_SLAB:
            s_new = rng.random() < scal[1]
            if s_new:
                value = prm[PRM_SPIKE_SD] * rng.standard_normal()
            else:
                value = draw_nlp(prm[PRM_NLP_P], rng)
        else:
            value = prm[PRM_M_D] + prm[PRM_S_D] * rng.standard_normal()
        lr = atom_lik_ratio(h, value, net, st, prm)
        if _bad(lr):
            return 6
        cnt[9][h] += 1
        if math.log(rng.random()) < lr:
            _set_atom(h, value, st)
            if model == DP_SPIKE_SLAB:
                spike[h] = s_new
            cnt[8][h] += 1
    return 0


@njit(cache=True)
def update_labels(net, st, prm, rng):
    d, atoms, labels = st[3], st[4], st[5]
    H = atoms.shape[0]
    for k in range(1, labels.shape[0]):
        lp = label_log_probs(k, net, st, prm)
        if not np.isfinite(lp.max()):
            return 7
        u = rng.random()
        c = 0.0
        choice = H - 1
        for h in range(H):
            c += math.exp(lp[h])
            if u < c:
                choice = h
                break
        labels[k] = choice
        d[k] = atoms[choice]
    return 0


@njit(cache=True)
def stick_weights(V, weights):
    rest = 1.0
    for h in range(V.shape[0]):
        weights[h] = V[h] * rest
        rest *= 1.0 - V[h]


@njit(cache=True)
def update_sticks(st, prm, rng):
    labels, sticks, weights = st[5], st[6], st[7]
    H = sticks.shape[0]
    counts = np.zeros(H)
    for k in range(1, labels.shape[0]):
        counts[labels[k]] += 1.0
    above = 0.0
    for h in range(H - 1, -1, -1):
        if h < H - 1:
            sticks[h] = rng.beta(1.0 + counts[h], prm[PRM_ALPHA] + above)
        above += counts[h]
    sticks[H - 1] = 1.0
    stick_weights(sticks, weights)
    return 0


@njit(cache=True)
def update_spike(st, prm, rng):
    atoms, scal, spike = st[4], st[2], st[8]
    for h in range(atoms.shape[0]):
        lp1 = spike_log_prob(atoms[h], scal[1], prm)
        if _bad(lp1):
            return 8
        spike[h] = math.log(rng.random()) < lp1
    return 0


@njit(cache=True)
def update_omega(st, prm, rng):
    spike, scal = st[8], st[2]
    ones = 0.0
    for h in range(spike.shape[0]):
        if spike[h]:
            ones += 1.0
    scal[1] = rng.beta(prm[PRM_A_OMEGA] + ones, prm[PRM_B_OMEGA] + spike.shape[0] - ones)
    return 0


@njit(cache=True)
def sweep(model, refresh, net, st, prm, steps, cnt, rng):
    """One full sweep; returns 0 or the code of the block that saw a NaN."""
    code = update_mu(net, st, prm, steps, cnt, rng)
    if code:
        return code
    code = update_delta(net, st, prm, steps, cnt, rng)
    if code:
        return code
    code = update_tau(net, st, prm, steps, cnt, rng)
    if code:
        return code
    if model == GAUSSIAN:
        return update_d(net, st, prm, steps, cnt, rng)
    code = update_atoms(model, net, st, prm, steps, cnt, rng)
    if code:
        return code
    if refresh:
        code = refresh_atoms(model, net, st, prm, cnt, rng)
        if code:
            return code
    code = update_labels(net, st, prm, rng)
    if code:
        return code
    update_sticks(st, prm, rng)
    if model == DP_SPIKE_SLAB:
        code = update_spike(st, prm, rng)
        if code:
            return code
        update_omega(st, prm, rng)
    return 0


@njit(cache=True)
def run_sweeps(n, model, refresh, net, st, prm, steps, cnt, rng):
    """``n`` sweeps, accumulating acceptance counts into ``cnt``."""
    for _ in range(n):
        code = sweep(model, refresh, net, st, prm, steps, cnt, rng)
        if code:
            return code
    return 0
