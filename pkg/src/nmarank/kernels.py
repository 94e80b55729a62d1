"""Density kernels, random streams and small closed-form algebra.

All normal and lognormal scale parameters are standard deviations.  The
lognormal law is placed on tau^2 itself: ``log(tau2) ~ N(m, sd^2)``.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln
from scipy.stats import norm

__all__ = [
    "EquicorrSpec",
    "NlpSpec",
    "StickWeights",
    "CalibrationError",
    "equicorr_inverse",
    "equicorr_logdet",
    "equicorr_mvn_logpdf",
    "equicorr_logpdf_rows",
    "sample_equicorr_mvn",
    "nlp_logpdf",
    "sample_nlp",
    "calibrate_nlp_shape",
    "stick_breaking_weights",
    "normal_logpdf",
    "lognormal_logpdf",
    "beta_logpdf",
    "binomial_logpmf",
    "scalar_log_densities",
    "make_stream",
    "SPIKE_MASS",
]

LOG_2PI = math.log(2.0 * math.pi)
SPIKE_MASS = 0.999
_TAU2_FLOOR = 1e-300


class CalibrationError(RuntimeError):
    """The slab shape could not be bracketed."""


@dataclass(frozen=True)
class EquicorrSpec:
    dim: int
    tau2: float
    corr: float = 0.5

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("dim must be positive")
        if not self.tau2 > 0:
            raise ValueError(f"tau2 must be positive, got {self.tau2}")
        if not (1 - self.corr > 0 and 1 + (self.dim - 1) * self.corr > 0):
            raise ValueError(f"correlation {self.corr} not positive definite for dim {self.dim}")

    def matrix(self) -> np.ndarray:
        t = self.dim
        return self.tau2 * (self.corr * (np.ones((t, t)) - np.eye(t)) + np.eye(t))


def equicorr_inverse(spec: EquicorrSpec) -> np.ndarray:
    t, g = spec.dim, spec.corr
    c = g / (1 + (t - 1) * g)
    return (np.eye(t) - c * np.ones((t, t))) / (spec.tau2 * (1 - g))


def equicorr_logdet(dim, tau2, corr):
    """log det S, vectorised over ``dim`` and ``tau2``."""
    dim = np.asarray(dim, dtype=float)
    return dim * np.log(tau2) + (dim - 1) * math.log1p(-corr) + np.log1p((dim - 1) * corr)


def equicorr_logpdf_rows(resid, mask, tau2, corr):
    """Row-wise log N(resid | 0, S) for padded residual rows.

    ``resid`` has shape (..., A) with padding entries excluded by ``mask``;
    each row's dimension is its mask count.
    """
    r = np.where(mask, resid, 0.0)
    t = mask.sum(axis=-1)
    s1 = (r * r).sum(axis=-1)
    s2 = r.sum(axis=-1) ** 2
    quad = (s1 - corr / (1 + (t - 1) * corr) * s2) / (tau2 * (1 - corr))
    return -0.5 * (t * LOG_2PI + equicorr_logdet(t, tau2, corr) + quad)


def equicorr_mvn_logpdf(x, mean, spec: EquicorrSpec) -> float:
    x = np.asarray(x, dtype=float).ravel()
    mean = np.asarray(mean, dtype=float).ravel()
    if x.shape != mean.shape or x.size != spec.dim:
        raise ValueError(f"dimension mismatch: x={x.size}, mean={mean.size}, dim={spec.dim}")
    r = x - mean
    return float(equicorr_logpdf_rows(r, np.ones_like(r, dtype=bool), spec.tau2, spec.corr))


def sample_equicorr_mvn(mean, spec: EquicorrSpec | None = None, rng=None, *, tau2=None, corr=0.5):
    """One-factor draw ``mean + sqrt(g tau2) z0 + sqrt((1-g) tau2) z``.

    ``tau2`` may be passed directly (bypassing :class:`EquicorrSpec`) so the
    degenerate tau2 -> 0 limit can be requested; it then returns ``mean``.
    """
    mean = np.asarray(mean, dtype=float)
    if spec is not None:
        tau2, corr = spec.tau2, spec.corr
    if tau2 < _TAU2_FLOOR:
        return mean.copy()
    z0 = rng.standard_normal()
    z = rng.standard_normal(mean.shape)
    return mean + math.sqrt(corr * tau2) * z0 + math.sqrt((1 - corr) * tau2) * z


@dataclass(frozen=True)
class NlpSpec:
    shape: float
    v0: float
    x0: float
    scale: float = 1.0
    order: float = 1.0

    @property
    def spike_sd(self) -> float:
        return self.v0 / 3.0


def nlp_logpdf(x, shape, scale=1.0, order=1.0):
    """Inverse-moment nonlocal density (log).  Equals -inf at 0."""
    if isinstance(shape, NlpSpec):
        shape, scale, order = shape.shape, shape.scale, shape.order
    x = np.asarray(x, dtype=float)
    x2 = x * x
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        log_x2 = np.log(x2)
        # (x^2/r)^(-p) computed in log space to keep the x -> 0 limit finite
        penalty = np.exp(-shape * (log_x2 - math.log(scale)))
        out = (
            math.log(shape)
            + 0.5 * order * math.log(scale)
            - gammaln(order / (2 * shape))
            - 0.5 * (order + 1) * log_x2
            - penalty
        )
    out = np.where(x2 == 0, -np.inf, out)
    return float(out) if out.ndim == 0 else out


def sample_nlp(spec: NlpSpec, rng, size=None):
    """Exact draws: with r=u=1, w = |x|^(-2p) is Gamma(1/(2p), 1)."""
    p = spec.shape
    w = rng.gamma(spec.order / (2 * p), 1.0, size=size)
    mag = np.sqrt(spec.scale) * w ** (-1.0 / (2 * p))
    sign = np.where(rng.random(size=size) < 0.5, -1.0, 1.0)
    return sign * mag


def _match_residual(p, x0, spike_sd):
    return nlp_logpdf(x0, p) - normal_logpdf(x0, 0.0, spike_sd)


def _bisect(f, lo, hi, iters=200):
    flo = f(lo)
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        fm = f(mid)
        if fm == 0 or hi - lo <= 4 * np.finfo(float).eps * mid:
            return mid
        if (fm > 0) == (flo > 0):
            lo, flo = mid, fm
        else:
            hi = mid
    return 0.5 * (lo + hi)


def calibrate_nlp_shape(v0: float, bracket=(0.25, 8.0), max_iter: int = 200) -> NlpSpec:
    """Choose the slab shape so slab and spike densities cross at x0.

    x0 is the half-width holding 0.999 of the spike N(0, v0/3).  The matching
    equation can have two roots in p; the larger one is the one with negligible
    spike/slab overlap, so when ``bracket`` holds no sign change the search
    widens to a log grid and keeps the largest root found.
    """
    if not v0 > 0:
        raise ValueError(f"v0 must be positive, got {v0}")
    sd = v0 / 3.0
    x0 = float(norm.ppf(0.5 + SPIKE_MASS / 2)) * sd

    def f(p):
        return _match_residual(p, x0, sd)

    lo, hi = bracket
    if np.sign(f(lo)) == np.sign(f(hi)):
        grid = np.geomspace(1e-3, 1e3, 601)
        vals = np.array([f(p) for p in grid])
        flips = np.nonzero(np.sign(vals[:-1]) != np.sign(vals[1:]))[0]
        if flips.size == 0:
            raise CalibrationError(
                f"no sign change for v0={v0} on bracket [{bracket[0]}, {bracket[1]}] "
                f"or widened grid [{grid[0]}, {grid[-1]}]"
            )
        i = flips[-1]
        lo, hi = grid[i], grid[i + 1]
        warnings.warn(
            f"slab shape for v0={v0} lies outside [{bracket[0]}, {bracket[1]}]; "
            f"using root in [{lo:.4g}, {hi:.4g}]",
            stacklevel=2,
        )
    p = _bisect(f, lo, hi, max_iter)
    return NlpSpec(shape=p, v0=v0, x0=x0)


@dataclass(frozen=True)
class StickWeights:
    sticks: np.ndarray
    weights: np.ndarray


def stick_breaking_weights(V) -> StickWeights:
    V = np.asarray(V, dtype=float)
    if V.ndim != 1 or V.size == 0:
        raise ValueError("sticks must be a non-empty vector")
    if np.any((V < 0) | (V > 1)) or not np.all(np.isfinite(V)):
        raise ValueError("every stick must lie in [0, 1]")
    if V[-1] != 1.0:
        raise ValueError("last stick must equal 1 (truncation)")
    remaining = np.concatenate(([1.0], np.cumprod(1.0 - V[:-1])))
    w = V * remaining
    if abs(1.0 - w.sum()) > 1e-12:
        raise ValueError(f"stick weights sum to {w.sum()!r}")
    return StickWeights(V.copy(), w)


def normal_logpdf(x, mean, sd):
    z = (np.asarray(x, dtype=float) - mean) / sd
    return -0.5 * z * z - np.log(sd) - 0.5 * LOG_2PI


def lognormal_logpdf(x, m, sd):
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore"):
        lx = np.log(x)
    return normal_logpdf(lx, m, sd) - lx


def beta_logpdf(x, a, b):
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore"):
        return (
            (a - 1) * np.log(x) + (b - 1) * np.log1p(-x)
            + gammaln(a + b) - gammaln(a) - gammaln(b)
        )


def binomial_logpmf(y, n, prob=None, *, logit=None):
    """Binomial log-mass, optionally parameterised on the logit scale.

    The logit form uses ``log p = -log(1 + e^-eta)``, which stays finite when
    the probability saturates.
    """
    y = np.asarray(y, dtype=float)
    n = np.asarray(n, dtype=float)
    lc = gammaln(n + 1) - gammaln(y + 1) - gammaln(n - y + 1)
    if logit is not None:
        eta = np.asarray(logit, dtype=float)
        return lc - y * np.logaddexp(0.0, -eta) - (n - y) * np.logaddexp(0.0, eta)
    prob = np.asarray(prob, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        a = np.where(y > 0, y * np.log(prob), 0.0)
        b = np.where(n - y > 0, (n - y) * np.log1p(-prob), 0.0)
    return lc + a + b


def scalar_log_densities(x, law: str, *params) -> float:
    """Dispatch ``law`` in {normal, lognormal, beta, binomial} with validation."""
    if law == "normal" or law == "lognormal":
        m, sd = params
        if not sd > 0:
            raise ValueError("sd must be positive")
        fn = normal_logpdf if law == "normal" else lognormal_logpdf
        return float(fn(x, m, sd))
    if law == "beta":
        a, b = params
        if not (a > 0 and b > 0):
            raise ValueError("beta parameters must be positive")
        return float(beta_logpdf(x, a, b))
    if law == "binomial":
        n, prob = params
        if not 0 <= prob <= 1:
            raise ValueError("prob must lie in [0, 1]")
        return float(binomial_logpmf(x, n, prob))
    raise ValueError(f"unknown law {law!r}")


def make_stream(seed: int, index: int = 0) -> np.random.Generator:
    """Independent stream ``index`` derived from a master ``seed``.

    The (seed, index) pair is hashed by SeedSequence into the key of a
    counter-based Philox generator, so streams never overlap and do not depend
    on the order in which they are created.
    """
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(index)])))
