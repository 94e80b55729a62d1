"""Prior and MCMC configuration."""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from enum import Enum

from .kernels import NlpSpec, calibrate_nlp_shape

__all__ = ["ModelKind", "PriorConfig", "McmcConfig", "ConfigError", "MCMC_PROFILES"]


class ConfigError(ValueError):
    pass


class ModelKind(str, Enum):
    GAUSSIAN = "gaussian"
    DP_GAUSSIAN = "dp-gaussian"
    DP_SPIKE_SLAB = "dp-spike-slab"

    @property
    def is_dp(self) -> bool:
        return self is not ModelKind.GAUSSIAN

    @classmethod
    def parse(cls, value) -> "ModelKind":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower().replace("_", "-"))
        except ValueError:
            raise ConfigError(
                f"unknown model {value!r}; expected one of {[m.value for m in cls]}"
            ) from None


@dataclass(frozen=True)
class PriorConfig:
    m_b: float = 0.0
    s_b: float = 10.0
    m_ell: float = -2.34
    s_ell: float = 2.0
    m_d: float = 0.0
    s_d: float = 1.0
    corr: float = 0.5
    alpha: float = 1.0
    H: int | None = None  # truncation; None means K
    v0: float | None = None
    a_omega: float = 1.0
    b_omega: float = 1.0
    nlp: NlpSpec | None = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        for name in ("m_b", "s_b", "m_ell", "s_ell", "m_d", "s_d", "alpha", "a_omega", "b_omega"):
            if not math.isfinite(getattr(self, name)):
                raise ConfigError(f"{name} must be finite")
        for name in ("s_b", "s_ell", "s_d", "alpha", "a_omega", "b_omega"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if not 0 <= self.corr < 1:
            raise ConfigError("corr must lie in [0, 1)")
        if self.H is not None and self.H < 2:
            raise ConfigError("truncation H must be at least 2")
        if self.v0 is not None:
            if not self.v0 > 0:
                raise ConfigError("v0 must be positive")
            if self.nlp is None or self.nlp.v0 != self.v0:
                object.__setattr__(self, "nlp", calibrate_nlp_shape(self.v0))

    def truncation(self, n_treatments: int) -> int:
        return max(2, n_treatments) if self.H is None else self.H

    def check(self, model: ModelKind) -> None:
        if model is ModelKind.DP_SPIKE_SLAB and self.v0 is None:
            raise ConfigError("dp-spike-slab requires v0")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d.pop("nlp")
        if self.nlp is not None:
            d["nlp_shape"] = self.nlp.shape
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PriorConfig":
        names = {f.name for f in dataclasses.fields(cls)} - {"nlp"}
        return cls(**{k: v for k, v in d.items() if k in names})


@dataclass(frozen=True)
class McmcConfig:
    chains: int = 4
    iterations: int = 20_000
    burn_in: int = 10_000
    thin: int = 10
    seed: int = 0
    mu_step: float = 0.2
    delta_step: float = 0.2
    logtau2_step: float = 0.5
    d_step: float = 0.2
    adapt: bool = True
    adapt_batch: int = 50
    target_accept: float = 0.44

    def __post_init__(self):
        if self.chains < 1:
            raise ConfigError("chains must be >= 1")
        if not 0 <= self.burn_in < self.iterations:
            raise ConfigError("burn_in must satisfy 0 <= burn_in < iterations")
        if self.thin < 1:
            raise ConfigError("thin must be >= 1")
        for name in ("mu_step", "delta_step", "logtau2_step", "d_step"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")

    @property
    def kept_per_chain(self) -> int:
        return (self.iterations - self.burn_in) // self.thin

    @property
    def n_kept(self) -> int:
        return self.chains * self.kept_per_chain

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "McmcConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


MCMC_PROFILES = {
    "desk": dict(chains=4, iterations=20_000, burn_in=10_000, thin=10),
    "paper": dict(chains=5, iterations=200_000, burn_in=100_000, thin=100),
}
