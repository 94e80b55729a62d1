"""Synthetic-data study: 18 scenarios, replicate fits and recovery metrics."""
from __future__ import annotations

import csv
import io
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from importlib.resources import files
from pathlib import Path

import numpy as np
from scipy.special import expit

from .config import McmcConfig, ModelKind, PriorConfig
from .data import Dataset, read_dataset, parse_dataset, with_events
from .graph import (
    Relation,
    build_initial_graph,
    closest_coherent,
    pairwise_probabilities,
    relation_draws,
    select_subgraph,
    trim_sequence,
)
from .kernels import sample_equicorr_mvn
from .samplers import run_chains
from .samples import PosteriorSamples

__all__ = [
    "BASE_VECTORS",
    "Scenario",
    "SimulatedData",
    "RecoveryMetrics",
    "scenario_catalog",
    "load_template",
    "true_relation",
    "generate_dataset",
    "evaluate_fit",
    "replicate_seed",
    "run_replicate",
    "run_study",
    "aggregate",
]

BASE_VECTORS = {
    "gaussian": (0.0, -0.6, -0.3, 0.3, 0.6, 0.9),
    "dp-gaussian": (0.0, 0.3, -0.3, -0.3, 0.3, 0.3),
    "dp-spike-slab": (0.0, 0.3, 0.0, 0.0, 0.3, 0.3),
}
EFFECT_SIZES = (0, 1, 2)
TAUS = (0.05, 0.1)


@dataclass(frozen=True)
class Scenario:
    base: str
    effect_size: int
    tau: float  # standard deviation of the study-level contrasts

    def __post_init__(self):
        if self.base not in BASE_VECTORS:
            raise ValueError(f"unknown base vector {self.base!r}")
        if self.effect_size not in EFFECT_SIZES or self.tau not in TAUS:
            raise ValueError("effect size and tau must come from the scenario grid")

    @property
    def d1(self) -> np.ndarray:
        # multiply then add 0.0 so a zero multiplier never yields -0.0
        return np.asarray(BASE_VECTORS[self.base]) * self.effect_size + 0.0

    @property
    def label(self) -> str:
        return f"{self.base}_x{self.effect_size}_tau{self.tau:g}"


def scenario_catalog() -> list[Scenario]:
    return [Scenario(b, m, t) for b in BASE_VECTORS for m in EFFECT_SIZES for t in TAUS]


def load_template(path=None) -> Dataset:
    """The bundled 55-study K=6 skeleton, or a user CSV without events."""
    if path is None:
        text = files("nmarank").joinpath("data/template_k6.csv").read_text(encoding="utf-8")
        return parse_dataset(text, require_events=False)
    return read_dataset(path, require_events=False)


def true_relation(sc: Scenario) -> Relation:
    """Ties are exact equalities among the entries of d1."""
    return Relation.from_values(sc.d1)


@dataclass(frozen=True)
class SimulatedData:
    dataset: Dataset
    truth: Relation
    mu: np.ndarray
    delta: tuple


def generate_dataset(sc: Scenario, template: Dataset, rng, mu_sd: float = 0.5, corr: float = 0.5,
                     mu: np.ndarray | None = None) -> SimulatedData:
    """Binomial outcomes on the template's arms under scenario ``sc``.

    Baseline log-odds are iid N(0, mu_sd) unless ``mu`` is given.
    """
    d1 = sc.d1
    if template.n_treatments != d1.size:
        raise ValueError(f"template has {template.n_treatments} treatments, scenario {d1.size}")
    events, mus, deltas = {}, [], []
    for i, s in enumerate(template.studies):
        m = float(rng.normal(0.0, mu_sd)) if mu is None else float(mu[i])
        nb = s.non_baseline
        mean = d1[[k - 1 for k in nb]] - d1[s.baseline - 1]
        delta = sample_equicorr_mvn(mean, rng=rng, tau2=sc.tau**2, corr=corr)
        events[(i, s.baseline)] = rng.binomial(s.arm(s.baseline).trials, expit(m))
        for k, dk in zip(nb, delta):
            events[(i, k)] = rng.binomial(s.arm(k).trials, expit(m + dk))
        mus.append(m)
        deltas.append(tuple(float(x) for x in delta))
    return SimulatedData(with_events(template, events), true_relation(sc), np.array(mus), tuple(deltas))


@dataclass(frozen=True)
class RecoveryMetrics:
    joint_prob_true_graph: float
    pair_probs: tuple[float, ...]  # probability of the true statement, pairs j < k
    subgraph_correct: bool
    subgraph_density: float
    subgraph_joint_prob: float

    @property
    def mean_pair_prob(self) -> float:
        return float(np.mean(self.pair_probs))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["pair_probs"] = list(self.pair_probs)
        d["mean_pair_prob"] = self.mean_pair_prob
        return d


def evaluate_fit(truth: Relation, ps: PosteriorSamples, threshold: float = 0.9) -> RecoveryMetrics:
    if truth.K != ps.K:
        raise ValueError(f"truth over {truth.K} treatments, samples over {ps.K}")
    rd = relation_draws(ps)
    true_codes = np.array(truth.codes, dtype=np.int8)
    hit = rd.codes == true_codes[None, :]
    joint = float(np.all(hit, axis=1).mean())
    pair_probs = tuple(float(v) for v in hit.mean(axis=0))
    pp = pairwise_probabilities(rd)
    e0 = closest_coherent(build_initial_graph(pp), rd, pp)
    g, density = select_subgraph(trim_sequence(e0, pp, rd), threshold)
    correct = all(truth.statement(j, k) == s for (j, k), s in g.statements.items())
    return RecoveryMetrics(joint, pair_probs, correct, density, float(g.joint_prob))


# ------------------------------------------------------------- study driver
def replicate_seed(seed: int, scenario_index: int, replicate: int) -> int:
    """Independent 63-bit seed per (scenario, replicate)."""
    ss = np.random.SeedSequence([int(seed), int(scenario_index), int(replicate)])
    return int(ss.generate_state(2, dtype=np.uint64)[0] >> np.uint64(1))


def _prior_for(model: ModelKind, v0: float) -> PriorConfig:
    return PriorConfig(v0=v0) if model is ModelKind.DP_SPIKE_SLAB else PriorConfig()


def run_replicate(scenario_index: int, replicate: int, mcmc: McmcConfig, models=tuple(ModelKind),
                  seed: int = 0, v0: float = 0.05, template: Dataset | None = None,
                  mu_sd: float = 0.5, threshold: float = 0.9) -> dict:
    """Simulate one data set and fit every requested model to it."""
    sc = scenario_catalog()[scenario_index]
    template = template or load_template()
    rs = replicate_seed(seed, scenario_index, replicate)
    sim = generate_dataset(sc, template, np.random.Generator(np.random.Philox(rs)), mu_sd=mu_sd)
    metrics = {}
    for mk in models:
        mk = ModelKind.parse(mk)
        mc = McmcConfig.from_dict({**mcmc.to_dict(), "seed": rs})
        ps = run_chains(sim.dataset, _prior_for(mk, v0), mc, mk)
        metrics[mk.value] = evaluate_fit(sim.truth, ps, threshold).to_dict()
    return {
        "scenario": {"index": scenario_index, "label": sc.label, **asdict(sc), "d1": sc.d1.tolist()},
        "replicate": replicate,
        "seed": rs,
        "metrics": metrics,
        "mcmc_config": mcmc.to_dict(),
        "v0": v0,
    }


def _replicate_task(args):
    return run_replicate(*args)


def run_study(scenarios, replicates: int, mcmc: McmcConfig, out_dir=None, models=tuple(ModelKind),
              seed: int = 0, v0: float = 0.05, jobs: int = 1) -> list[dict]:
    """Fit every (scenario, replicate) and optionally write one JSON file each."""
    tasks = [(s, r, mcmc, tuple(models), seed, v0) for s in scenarios for r in range(replicates)]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            results = list(ex.map(_replicate_task, tasks))
    else:
        results = [_replicate_task(t) for t in tasks]
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        for res in results:
            name = f"scenario{res['scenario']['index']:02d}_rep{res['replicate']:03d}.json"
            (out / name).write_text(json.dumps(res, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return results


def aggregate(results) -> str:
    """CSV of replicate means per (scenario, model)."""
    groups: dict = {}
    for res in results:
        for model, m in res["metrics"].items():
            groups.setdefault((res["scenario"]["index"], res["scenario"]["label"], model), []).append(m)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["scenario", "label", "model", "replicates", "joint_prob_true_graph",
                "mean_pair_prob", "subgraph_correct", "subgraph_density"])
    for (idx, label, model), ms in sorted(groups.items()):
        def mean(key):
            return float(np.mean([float(m[key]) for m in ms]))

        w.writerow([idx, label, model, len(ms), f"{mean('joint_prob_true_graph'):.6f}",
                    f"{mean('mean_pair_prob'):.6f}", f"{mean('subgraph_correct'):.6f}",
                    f"{mean('subgraph_density'):.6f}"])
    return buf.getvalue()
