"""Command-line interface: fit, rank, league, simulate and replay.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 sampler abort.
Every command writes ``manifest.json`` next to its outputs; ``replay`` reruns a
manifest into a directory of choice.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from pathlib import Path

from . import __version__
from .config import MCMC_PROFILES, ConfigError, McmcConfig, ModelKind, PriorConfig
from .data import DataError, read_dataset
from .graph import (
    build_initial_graph,
    closest_coherent,
    pairwise_probabilities,
    relation_draws,
    select_subgraph,
    to_dot,
    to_json,
    trim_sequence,
)
from .intervals import league_table
from .kernels import CalibrationError
from .samplers import SamplerAbort, run_chains
from .samples import read_jsonl, write_jsonl
from .simulation import aggregate, run_study, scenario_catalog

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_ABORT = 0, 2, 3, 4
JOBS_ENV = "NMARANK_JOBS"

PRIOR_FLAGS = {
    "m_b": float, "s_b": float, "m_ell": float, "s_ell": float, "m_d": float, "s_d": float,
    "corr": float, "concentration": float, "H": int, "v0": float, "a_omega": float, "b_omega": float,
}
MCMC_FLAGS = {"chains": int, "iters": int, "burn": int, "thin": int, "seed": int}


class UsageError(Exception):
    pass


def default_jobs() -> int:
    env = os.environ.get(JOBS_ENV)
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise UsageError(f"{JOBS_ENV} must be an integer, got {env!r}") from None
    return os.cpu_count() or 1


def _digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# --------------------------------------------------------------- arguments
def _add_prior(p):
    g = p.add_argument_group("prior")
    for name, typ in PRIOR_FLAGS.items():
        flag = "--" + name.replace("_", "-") if name != "H" else "--truncation"
        g.add_argument(flag, dest=name, type=typ, default=None)


def _add_mcmc(p):
    g = p.add_argument_group("mcmc")
    g.add_argument("--mcmc", dest="profile", choices=sorted(MCMC_PROFILES), default=None)
    for name, typ in MCMC_FLAGS.items():
        g.add_argument("--" + name, dest=name, type=typ, default=None)
    g.add_argument("--no-adapt", dest="adapt", action="store_false", default=None)
    g.add_argument("--no-refresh", dest="refresh", action="store_false", default=None)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="nmarank", description="Bayesian network meta-analysis with ranking graphs")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    fit = sub.add_parser("fit", help="fit a model and write posterior draws")
    fit.add_argument("--config", type=Path)
    fit.add_argument("--input", type=Path)
    fit.add_argument("--model")
    fit.add_argument("--reference")
    fit.add_argument("--out", type=Path)
    fit.add_argument("--jobs", type=int)
    _add_prior(fit)
    _add_mcmc(fit)

    for name, helptext in (("rank", "trimmed comparison graphs"), ("league", "league table")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--config", type=Path)
        p.add_argument("--samples", type=Path, help="samples.jsonl or a fit output directory")
        p.add_argument("--out", type=Path)
        if name == "rank":
            p.add_argument("--threshold", type=float)
        else:
            p.add_argument("--alpha", type=float)
            p.add_argument("--transpose", action="store_true", default=None)

    sim = sub.add_parser("simulate", help="run the scenario study")
    sim.add_argument("--config", type=Path)
    sim.add_argument("--scenario", help="index 0-17 or 'all'")
    sim.add_argument("--replicates", type=int)
    sim.add_argument("--models", help="comma-separated model names")
    sim.add_argument("--v0", type=float)
    sim.add_argument("--out", type=Path)
    sim.add_argument("--jobs", type=int)
    _add_mcmc(sim)

    rp = sub.add_parser("replay", help="rerun the command recorded in a manifest")
    rp.add_argument("manifest", type=Path)
    rp.add_argument("--out", type=Path, required=True)
    return ap


def _resolve(args) -> dict:
    """Merge defaults < config file < explicit flags."""
    cfg = {}
    if getattr(args, "config", None) is not None:
        try:
            cfg = json.loads(args.config.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from None
        if not isinstance(cfg, dict):
            raise UsageError("config file must hold a JSON object")
    flags = {k: v for k, v in vars(args).items() if v is not None and k not in ("config", "command")}
    merged = {**cfg, **{k: (str(v) if isinstance(v, Path) else v) for k, v in flags.items()}}
    return merged


def _mcmc_config(opts) -> McmcConfig:
    base = dict(MCMC_PROFILES[opts.get("profile", "desk")])
    mapping = {"chains": "chains", "iters": "iterations", "burn": "burn_in", "thin": "thin", "seed": "seed",
               "adapt": "adapt"}
    for flag, name in mapping.items():
        if opts.get(flag) is not None:
            base[name] = opts[flag]
    return McmcConfig(**base)


def _prior_config(opts) -> PriorConfig:
    kw = {}
    for name in PRIOR_FLAGS:
        if opts.get(name) is not None:
            kw["alpha" if name == "concentration" else name] = opts[name]
    return PriorConfig(**kw)


def _require(opts, *names):
    for n in names:
        if opts.get(n) in (None, ""):
            raise UsageError(f"--{n} is required")


def _write_manifest(out: Path, command: str, opts: dict, inputs: dict, outputs: list, extra=None):
    outputs = sorted(str(Path(p).relative_to(out)) for p in outputs)
    manifest = {
        "command": command,
        "version": __version__,
        "config": {k: v for k, v in sorted(opts.items()) if k != "out"},
        "inputs": inputs,
        "outputs": outputs,
    }
    if extra:
        manifest.update(extra)
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")


# ---------------------------------------------------------------- commands
def cmd_fit(opts) -> int:
    _require(opts, "input", "model", "out")
    model = ModelKind.parse(opts["model"])
    prior = _prior_config(opts)
    prior.check(model)
    mcmc = _mcmc_config(opts)
    src = Path(opts["input"])
    try:
        ds = read_dataset(src, reference=opts.get("reference"))
    except OSError as exc:
        raise DataError(f"cannot read {src}: {exc}") from None
    jobs = opts.get("jobs") or default_jobs()
    ps = run_chains(ds, prior, mcmc, model, jobs=jobs, refresh=opts.get("refresh", True))
    out = Path(opts["out"])
    out.mkdir(parents=True, exist_ok=True)
    write_jsonl(ps, out / "samples.jsonl")
    acc = {str(c): rates for c, rates in sorted(ps.acceptance.items())}
    (out / "acceptance.json").write_text(json.dumps(acc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    resolved = {k: v for k, v in opts.items() if k != "jobs"}
    resolved["input"] = str(src.resolve())
    _write_manifest(
        out, "fit", resolved, {str(src.resolve()): _digest(src)},
        [out / "samples.jsonl", out / "acceptance.json"],
        {"labels": list(ds.labels), "prior": prior.to_dict(), "mcmc": mcmc.to_dict(), "model": model.value},
    )
    print(f"{ps.n_draws} kept draws written to {out / 'samples.jsonl'}")
    for c, rates in acc.items():
        print(f"chain {c}: " + ", ".join(f"{k}={v:.3f}" for k, v in rates.items()))
    return EXIT_OK


def _load_samples(opts):
    _require(opts, "samples", "out")
    path = Path(opts["samples"])
    if path.is_dir():
        path = path / "samples.jsonl"
    labels = ()
    man = path.parent / "manifest.json"
    if man.exists():
        try:
            labels = tuple(json.loads(man.read_text(encoding="utf-8")).get("labels", ()))
        except json.JSONDecodeError:
            labels = ()
    try:
        ps = read_jsonl(path, labels)
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise DataError(f"unreadable samples {path}: {exc}") from None
    return path, ps


def cmd_rank(opts) -> int:
    path, ps = _load_samples(opts)
    out = Path(opts["out"])
    out.mkdir(parents=True, exist_ok=True)
    rd = relation_draws(ps)
    pp = pairwise_probabilities(rd)
    tilde = build_initial_graph(pp)
    e0 = closest_coherent(tilde, rd, pp)
    seq = trim_sequence(e0, pp, rd)
    names = list(ps.labels)
    written = []
    index = []
    for i, entry in enumerate(seq):
        f = out / f"graph_{i:02d}.dot"
        f.write_text(to_dot(entry.graph, names, f"gamma={entry.gamma:.4f}"), encoding="utf-8")
        written.append(f)
        index.append({"file": f.name, "gamma": entry.gamma, "joint_prob": entry.joint_prob,
                      "n_pairs": entry.graph.n_pairs, "graph": to_json(entry.graph, names)})
    summary = {"initial": to_json(tilde, names), "closest_coherent": to_json(e0, names), "sequence": index}
    threshold = opts.get("threshold")
    if threshold is not None:
        g, density = select_subgraph(seq, threshold)
        (out / "selected.dot").write_text(to_dot(g, names, f"threshold={threshold}"), encoding="utf-8")
        written.append(out / "selected.dot")
        summary["selected"] = {**to_json(g, names), "density": density, "threshold": threshold}
    (out / "index.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    written.append(out / "index.json")
    resolved = {**opts, "samples": str(path.resolve())}
    _write_manifest(out, "rank", resolved, {str(path.resolve()): _digest(path)}, written)
    for e in index:
        print(f"gamma={e['gamma']:.4f} pairs={e['n_pairs']} joint_prob={e['joint_prob']:.4f}")
    return EXIT_OK


def cmd_league(opts) -> int:
    path, ps = _load_samples(opts)
    alpha = opts.get("alpha", 0.05)
    if not 0 < alpha < 1:
        raise ConfigError("alpha must lie in (0, 1)")
    out = Path(opts["out"])
    out.mkdir(parents=True, exist_ok=True)
    table = league_table(ps, alpha, transpose=bool(opts.get("transpose", False)))
    (out / "league.csv").write_text(table.to_csv(), encoding="utf-8")
    (out / "league.md").write_text(table.to_markdown(), encoding="utf-8")
    resolved = {**opts, "samples": str(path.resolve())}
    _write_manifest(out, "league", resolved, {str(path.resolve()): _digest(path)},
                    [out / "league.csv", out / "league.md"])
    sys.stdout.write(table.to_markdown())
    return EXIT_OK


def cmd_simulate(opts) -> int:
    _require(opts, "out")
    mcmc = _mcmc_config(opts)
    which = str(opts.get("scenario", "all"))
    n = len(scenario_catalog())
    if which == "all":
        scenarios = list(range(n))
    else:
        try:
            scenarios = [int(s) for s in which.split(",")]
        except ValueError:
            raise ConfigError(f"--scenario must be 'all' or indices, got {which!r}") from None
        if any(not 0 <= s < n for s in scenarios):
            raise ConfigError(f"scenario indices must lie in 0..{n - 1}")
    models = [ModelKind.parse(m) for m in str(opts.get("models", ",".join(m.value for m in ModelKind))).split(",")]
    reps = opts.get("replicates", 1)
    if reps < 1:
        raise ConfigError("--replicates must be >= 1")
    v0 = opts.get("v0", 0.05)
    out = Path(opts["out"])
    results = run_study(scenarios, reps, mcmc, out, models, seed=mcmc.seed, v0=v0,
                        jobs=opts.get("jobs") or default_jobs())
    (out / "summary.csv").write_text(aggregate(results), encoding="utf-8")
    written = sorted(out.glob("scenario*_rep*.json")) + [out / "summary.csv"]
    resolved = {k: v for k, v in opts.items() if k != "jobs"}
    _write_manifest(out, "simulate", resolved, {}, written)
    sys.stdout.write((out / "summary.csv").read_text(encoding="utf-8"))
    return EXIT_OK


COMMANDS = {"fit": cmd_fit, "rank": cmd_rank, "league": cmd_league, "simulate": cmd_simulate}


def cmd_replay(manifest: Path, out: Path) -> int:
    try:
        m = json.loads(manifest.read_text(encoding="utf-8"))
        command, opts = m["command"], dict(m["config"])
    except (OSError, json.JSONDecodeError, KeyError) as exc:
        raise DataError(f"unreadable manifest {manifest}: {exc}") from None
    if command not in COMMANDS:
        raise ConfigError(f"manifest records unknown command {command!r}")
    for path, digest in m.get("inputs", {}).items():
        if not Path(path).exists() or _digest(path) != digest:
            raise DataError(f"input {path} is missing or changed since the manifest was written")
    opts["out"] = str(out)
    return COMMANDS[command](opts)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "replay":
            return cmd_replay(args.manifest, args.out)
        return COMMANDS[args.command](_resolve(args))
    except (UsageError, ConfigError, CalibrationError) as exc:
        parser.print_usage(sys.stderr)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except SamplerAbort as exc:
        print(f"sampler aborted: {exc}", file=sys.stderr)
        return EXIT_ABORT


if __name__ == "__main__":
    sys.exit(main())
