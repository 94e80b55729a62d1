import csv
import io
import json

import numpy as np
import pytest

from nmarank import cli
from nmarank.cli import JOBS_ENV, main
from nmarank.samplers import GibbsSampler

DATA = """study_id,treatment,events,total
a,A,12,40
a,B,20,40
b,A,9,35
b,C,10,35
c,B,15,30
c,C,14,30
d,A,11,50
d,D,25,50
e,B,8,25
e,D,12,25
f,A,7,30
f,B,14,30
f,D,16,30
"""

QUICK = ["--chains", "2", "--iters", "600", "--burn", "200", "--thin", "4", "--seed", "3"]


@pytest.fixture(autouse=True)
def _one_job(monkeypatch):
    monkeypatch.setenv(JOBS_ENV, "1")


@pytest.fixture
def data(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text(DATA)
    return p


def _fit(tmp_path, data, model, name="fit", extra=()):
    out = tmp_path / name
    args = ["fit", "--input", str(data), "--model", model, "--out", str(out), *QUICK, *extra]
    if model == "dp-spike-slab":
        args += ["--v0", "0.5"]
    assert main(args) == 0
    return out


def test_fit_writes_draws_and_manifest(tmp_path, data, capsys):
    out = _fit(tmp_path, data, "dp-spike-slab")
    lines = (out / "samples.jsonl").read_text().splitlines()
    assert len(lines) == 2 * (400 // 4)
    first = json.loads(lines[0])
    assert set(first) == {"chain", "iter", "model", "d", "spike", "tau2", "omega0", "cluster"}
    assert len(first["d"]) == 4 and first["d"][0] == 0
    man = json.loads((out / "manifest.json").read_text())
    assert man["command"] == "fit" and man["labels"] == ["A", "B", "C", "D"]
    assert man["mcmc"]["seed"] == 3 and man["prior"]["v0"] == 0.5
    assert sorted(man["outputs"]) == ["acceptance.json", "samples.jsonl"]
    assert "chain 0:" in capsys.readouterr().out


def test_paper_scale_fit_keeps_three_thousand(tmp_path, data):
    out = tmp_path / "run1"
    args = ["fit", "--model", "dp-spike-slab", "--input", str(data), "--chains", "3", "--iters", "200000",
            "--burn", "100000", "--thin", "100", "--v0", "0.1", "--seed", "7", "--out", str(out)]
    assert main(args) == 0
    assert len((out / "samples.jsonl").read_text().splitlines()) == 3000


def test_missing_input_is_usage_error(tmp_path, capsys):
    assert main(["fit", "--model", "gaussian", "--out", str(tmp_path / "x")]) == 2
    err = capsys.readouterr().err
    assert "usage:" in err and "--input" in err


def test_spike_slab_needs_v0(tmp_path, data):
    assert main(["fit", "--input", str(data), "--model", "dp-spike-slab", "--out", str(tmp_path / "x")]) == 2


def test_unknown_model_is_config_error(tmp_path, data):
    assert main(["fit", "--input", str(data), "--model", "probit", "--out", str(tmp_path / "x")]) == 2


def test_bad_row_is_data_error(tmp_path, capsys):
    p = tmp_path / "bad.csv"
    p.write_text("study_id,treatment,events,total\ns,1,3,10\ns,2,12,10\n")
    assert main(["fit", "--input", str(p), "--model", "gaussian", "--out", str(tmp_path / "x")]) == 3
    assert "row 3" in capsys.readouterr().err


def test_sampler_abort_maps_to_exit_four(tmp_path, data, monkeypatch, capsys):
    def explode(ds, prior, mcmc, model, **kw):
        # a corrupted state reaching the compiled sweep
        sm = GibbsSampler(ds, prior, model)
        state = sm.init_state(np.random.default_rng(0))
        state.mu[0] = np.nan
        sm.sweep(state, np.random.default_rng(1))

    monkeypatch.setattr(cli, "run_chains", explode)
    args = ["fit", "--input", str(data), "--model", "gaussian", "--out", str(tmp_path / "x"), *QUICK]
    assert main(args) == 4
    assert "non-finite" in capsys.readouterr().err


def test_config_file_and_flag_precedence(tmp_path, data):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"input": str(data), "model": "gaussian", "chains": 1, "iters": 300,
                               "burn": 100, "thin": 10, "seed": 5}))
    out = tmp_path / "c"
    assert main(["fit", "--config", str(cfg), "--thin", "5", "--out", str(out)]) == 0
    man = json.loads((out / "manifest.json").read_text())
    assert man["mcmc"]["chains"] == 1 and man["mcmc"]["thin"] == 5 and man["mcmc"]["seed"] == 5
    assert len((out / "samples.jsonl").read_text().splitlines()) == 40


def test_rank_on_gaussian_has_no_ties(tmp_path, data):
    fit = _fit(tmp_path, data, "gaussian")
    out = tmp_path / "rank"
    assert main(["rank", "--samples", str(fit), "--out", str(out), "--threshold", "0.5"]) == 0
    dots = sorted(out.glob("graph_*.dot"))
    assert dots
    assert all("dir=both" not in p.read_text() for p in dots)
    index = json.loads((out / "index.json").read_text())
    joints = [e["joint_prob"] for e in index["sequence"]]
    assert joints == sorted(joints)
    assert (out / "selected.dot").exists()


def test_rank_unreadable_samples(tmp_path):
    bad = tmp_path / "s.jsonl"
    bad.write_text("{not json\n")
    assert main(["rank", "--samples", str(bad), "--out", str(tmp_path / "r")]) == 3
    assert main(["rank", "--samples", str(tmp_path / "missing.jsonl"), "--out", str(tmp_path / "r")]) == 3


def _tied_samples(tmp_path):
    path = tmp_path / "tied.jsonl"
    rows = []
    for m in range(10):
        tied = m < 7
        rows.append({"chain": 0, "iter": m + 1, "model": "dp-spike-slab", "d": [0.0, 0.0 if tied else 0.4, 0.3],
                     "spike": [True, tied, False], "tau2": 0.1, "omega0": 0.5, "cluster": [0, 1, 2]})
    path.write_text("".join(json.dumps(r) + "\n" for r in rows))
    return path


def test_league_shows_singletons(tmp_path, capsys):
    out = tmp_path / "lg"
    assert main(["league", "--samples", str(_tied_samples(tmp_path)), "--alpha", "0.05", "--out", str(out)]) == 0
    rows = list(csv.DictReader(io.StringIO((out / "league.csv").read_text())))
    assert len(rows) == 6
    assert any("{1}" in r["text"] for r in rows)
    assert "{1}" in (out / "league.md").read_text()
    assert "{1}" in capsys.readouterr().out


def test_league_rejects_bad_alpha(tmp_path):
    assert main(["league", "--samples", str(_tied_samples(tmp_path)), "--alpha", "1.5", "--out", str(tmp_path / "l")]) == 2


def test_replay_is_byte_identical(tmp_path, data):
    fit = _fit(tmp_path, data, "dp-gaussian")
    again = tmp_path / "again"
    assert main(["replay", str(fit / "manifest.json"), "--out", str(again)]) == 0
    for name in ("samples.jsonl", "acceptance.json", "manifest.json"):
        assert (again / name).read_bytes() == (fit / name).read_bytes()
    rank = tmp_path / "rank"
    assert main(["rank", "--samples", str(fit / "samples.jsonl"), "--out", str(rank)]) == 0
    rank2 = tmp_path / "rank2"
    assert main(["replay", str(rank / "manifest.json"), "--out", str(rank2)]) == 0
    for p in rank.iterdir():
        assert (rank2 / p.name).read_bytes() == p.read_bytes()


def test_replay_refuses_changed_input(tmp_path, data):
    fit = _fit(tmp_path, data, "gaussian")
    data.write_text(DATA.replace("a,A,12,40", "a,A,13,40"))
    assert main(["replay", str(fit / "manifest.json"), "--out", str(tmp_path / "r")]) == 3


def test_simulate_every_scenario(tmp_path):
    out = tmp_path / "sim"
    args = ["simulate", "--scenario", "all", "--replicates", "1", "--mcmc", "desk",
            "--chains", "1", "--iters", "300", "--burn", "100", "--thin", "10", "--out", str(out)]
    assert main(args) == 0
    assert len(list(out.glob("scenario*_rep000.json"))) == 18
    summary = (out / "summary.csv").read_text().splitlines()
    assert len(summary) == 1 + 18 * 3


@pytest.mark.parametrize("scenario", ["18", "x"])
def test_simulate_bad_scenario(tmp_path, scenario):
    assert main(["simulate", "--scenario", scenario, "--out", str(tmp_path / "s")]) == 2


def test_non_finite_hyperparameter_rejected(tmp_path, data):
    assert main(["fit", "--input", str(data), "--model", "gaussian", "--m-b", "inf", "--out", str(tmp_path / "x")]) == 2
