"""Immutable store of kept posterior draws and its JSON-lines format."""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .config import McmcConfig, ModelKind, PriorConfig

__all__ = ["PosteriorSamples", "write_jsonl", "read_jsonl", "format_float"]


def format_float(x: float) -> str:
    """17 significant digits: enough to round-trip any double exactly."""
    x = float(x)
    if not np.isfinite(x):
        raise ValueError(f"cannot serialise non-finite value {x}")
    return format(x, ".17g")


@dataclass(frozen=True)
class PosteriorSamples:
    """Kept draws pooled across chains.

    ``d`` holds the effective d_{1k} (column 0 is the reference, always 0).
    ``spike[m, k]`` is true when treatment k sits in a spike component in
    draw m; the reference column is always true.  ``cluster`` holds 1-based
    DP labels with 0 for the reference.
    """

    model: ModelKind
    d: np.ndarray
    tau2: np.ndarray
    chain: np.ndarray
    iteration: np.ndarray
    spike: np.ndarray | None = None
    omega0: np.ndarray | None = None
    cluster: np.ndarray | None = None
    labels: tuple[str, ...] = ()
    prior: PriorConfig | None = None
    mcmc: McmcConfig | None = None
    acceptance: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "model", ModelKind.parse(self.model))
        for name in ("d", "tau2", "chain", "iteration", "spike", "omega0", "cluster"):
            arr = getattr(self, name)
            if arr is not None:
                arr = np.array(arr)
                arr.setflags(write=False)
                object.__setattr__(self, name, arr)
        if self.d.ndim != 2:
            raise ValueError("d must be (draws, K)")
        if not self.labels:
            object.__setattr__(self, "labels", tuple(str(k) for k in range(1, self.K + 1)))

    @property
    def n_draws(self) -> int:
        return self.d.shape[0]

    @property
    def K(self) -> int:
        return self.d.shape[1]

    def __len__(self):
        return self.n_draws

    def subset(self, idx) -> "PosteriorSamples":
        def take(a):
            return None if a is None else a[idx]

        return PosteriorSamples(
            self.model, take(self.d), take(self.tau2), take(self.chain), take(self.iteration),
            take(self.spike), take(self.omega0), take(self.cluster), self.labels,
            self.prior, self.mcmc, self.acceptance,
        )

    def same_draws(self, other: "PosteriorSamples") -> bool:
        if self.model != other.model:
            return False
        for name in ("d", "tau2", "chain", "iteration", "spike", "omega0", "cluster"):
            a, b = getattr(self, name), getattr(other, name)
            if (a is None) != (b is None):
                return False
            if a is not None and not np.array_equal(a, b):
                return False
        return True


def _lines(ps: PosteriorSamples):
    model = ps.model.value
    for m in range(ps.n_draws):
        d = ", ".join(format_float(v) for v in ps.d[m])
        spike = "null" if ps.spike is None else "[" + ", ".join("true" if f else "false" for f in ps.spike[m]) + "]"
        omega = "null" if ps.omega0 is None else format_float(ps.omega0[m])
        cluster = "null" if ps.cluster is None else "[" + ", ".join(str(int(c)) for c in ps.cluster[m]) + "]"
        yield (
            f'{{"chain": {int(ps.chain[m])}, "iter": {int(ps.iteration[m])}, "model": "{model}", '
            f'"d": [{d}], "spike": {spike}, "tau2": {format_float(ps.tau2[m])}, '
            f'"omega0": {omega}, "cluster": {cluster}}}\n'
        )


def write_jsonl(ps: PosteriorSamples, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.writelines(_lines(ps))


def read_jsonl(path, labels=()) -> PosteriorSamples:
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if line.strip():
                try:
                    rows.append(json.loads(line))
                except json.JSONDecodeError as exc:
                    raise ValueError(f"{path}:{lineno}: {exc}") from None
    if not rows:
        raise ValueError(f"{path}: no draws")
    models = {r["model"] for r in rows}
    if len(models) != 1:
        raise ValueError(f"{path}: mixed models {sorted(models)}")

    def col(key, dtype):
        if rows[0].get(key) is None:
            return None
        return np.array([r[key] for r in rows], dtype=dtype)

    return PosteriorSamples(
        model=models.pop(),
        d=col("d", float),
        tau2=col("tau2", float),
        chain=col("chain", int),
        iteration=col("iter", int),
        spike=col("spike", bool),
        omega0=col("omega0", float),
        cluster=col("cluster", int),
        labels=tuple(labels),
    )
