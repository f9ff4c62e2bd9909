import csv
import json
import os

import pytest

from dpsc.cli import EXIT_ACCOUNTANT, EXIT_CONFIG, EXIT_IO, EXIT_OK, load_config, main
from dpsc.data import read_dataset
from dpsc.exceptions import ConfigError


def run(*argv):
    return main([str(a) for a in argv])


def read_bytes(path):
    with open(path, "rb") as fh:
        return fh.read()


def test_generate_defaults_and_determinism(tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert run("generate", "--set", f"paths.dataset={a}") == EXIT_OK
    assert run("generate", "--set", f"paths.dataset={b}") == EXIT_OK
    data, meta = read_dataset(a)
    assert (data.n, data.p) == (11000, 100)
    assert len(meta["true_w"]) == 100
    assert read_bytes(a) == read_bytes(b)


def test_generate_rejects_too_few_features(tmp_path):
    assert run("generate", "--set", f"paths.dataset={tmp_path / 'd.csv'}",
               "--set", "synth.p=8") == EXIT_CONFIG


@pytest.fixture()
def dataset(tmp_path):
    path = tmp_path / "d.csv"
    assert run("generate", "--set", f"paths.dataset={path}", "--set", "synth.n=400",
               "--set", "synth.p=10", "--set", "master_seed=5") == EXIT_OK
    return path


def test_train_noise_off_trace_settles(tmp_path, dataset):
    model, trace = tmp_path / "m.json", tmp_path / "t.csv"
    code = run("train", "--set", f"paths.dataset={dataset}", "--set", f"paths.model={model}",
               "--set", f"paths.trace={trace}", "--set", "solver.noise_mode=off",
               "--set", "solver.K=60")
    assert code == EXIT_OK
    with open(trace, newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert list(rows[0])[:4] == ["iteration", "objective", "primal_residual",
                                 "epsilon_spent_so_far"]
    obj = [float(r["objective"]) for r in rows]
    assert all(b <= a + 1e-9 for a, b in zip(obj[5:], obj[6:]))
    assert json.loads(model.read_text())["epsilon_spent"] == 0.0


def test_train_epsilon_below_floor(tmp_path, dataset, capsys):
    code = run("train", "--set", f"paths.dataset={dataset}", "--set", f"paths.model={tmp_path / 'm'}",
               "--set", "privacy.epsilon=0.01")
    assert code == EXIT_ACCOUNTANT
    assert "epsilon below K*2.8c2/(cn)" in capsys.readouterr().err


def test_train_repeat_gives_identical_model(tmp_path, dataset):
    outs = []
    for name in ("m1.json", "m2.json"):
        out = tmp_path / name
        assert run("train", "--set", f"paths.dataset={dataset}", "--set", f"paths.model={out}",
                   "--set", "privacy.epsilon=2.0", "--set", "solver.K=20") == EXIT_OK
        outs.append(read_bytes(out))
    assert outs[0] == outs[1]


def test_accountant_command(tmp_path, capsys):
    out = tmp_path / "acc.csv"
    code = run("accountant", "--set", f"paths.output={out}", "--set", "accountant.n=10000",
               "--set", "accountant.epsilons=[1.0,4.0]", "--set", "accountant.gammas=[10]")
    assert code == EXIT_OK
    rows = list(csv.DictReader(out.open()))
    assert len(rows) == 3 and all(r["valid"] == "true" for r in rows)
    assert "gamma" in capsys.readouterr().out
    bad = run("accountant", "--set", f"paths.output={out}", "--set", "accountant.n=100",
              "--set", "accountant.epsilons=[0.001]")
    assert bad == EXIT_ACCOUNTANT
    assert "minimal feasible epsilon" in capsys.readouterr().err


def test_config_errors(tmp_path):
    assert run("train") == EXIT_CONFIG  # missing paths
    assert run("generate", "--set", f"paths.dataset={tmp_path / 'x'}",
               "--set", "solver.nope=1") == EXIT_CONFIG
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert run("generate", "--config", bad) == EXIT_CONFIG
    assert run("metrics", "--set", f"paths.dataset={tmp_path / 'missing'}",
               "--set", f"paths.model={tmp_path / 'm'}",
               "--set", f"paths.output={tmp_path / 'o'}") == EXIT_IO


def test_config_file_round_trip(tmp_path, capsys):
    cfg_path = tmp_path / "c.json"
    cfg_path.write_text(json.dumps({"solver": {"alpha": 0.7}, "paths": {"dataset": "d.csv"}}))
    assert run("generate", "--config", cfg_path, "--print-config") == EXIT_OK
    printed = json.loads(capsys.readouterr().out)
    assert printed["solver"]["alpha"] == 0.7
    dumped = tmp_path / "dump.json"
    dumped.write_text(json.dumps(printed))
    assert load_config("generate", dumped) == printed
    with pytest.raises(ConfigError):
        load_config("train", dumped)  # written for another command


def test_metrics_command(tmp_path, dataset):
    model, report = tmp_path / "m.json", tmp_path / "r.json"
    run("train", "--set", f"paths.dataset={dataset}", "--set", f"paths.model={model}",
        "--set", "solver.noise_mode=off", "--set", "solver.K=30")
    assert run("metrics", "--set", f"paths.dataset={dataset}", "--set", f"paths.model={model}",
               "--set", f"paths.output={report}") == EXIT_OK
    rep = json.loads(report.read_text())
    assert 0 <= rep["ce"] <= 0.3 and rep["mse"] is not None


def test_experiment_single_cell_matches_train(tmp_path):
    out, runs = tmp_path / "res.csv", tmp_path / "runs.csv"
    common = ["--set", "master_seed=9", "--set", "synth.p=10", "--set", "solver.K=20"]
    code = run("experiment", *common, "--set", f"paths.output={out}", "--set", f"paths.runs={runs}",
               "--set", "grid.epsilons=[2.0]", "--set", "grid.sizes=[300]",
               "--set", "grid.repeats=1", "--set", "grid.lambda_policy=fixed_list",
               "--set", "grid.lambdas=[0.02]", "--set", "grid.test_n=100",
               "--set", 'grid.algorithms=["DPLL"]')
    assert code == EXIT_OK
    manifest = json.loads((tmp_path / "res.csv.manifest.json").read_text())
    seeds = manifest["seeds"]["runs"][0]
    record = next(csv.DictReader(runs.open()))

    data, model = tmp_path / "d.csv", tmp_path / "m.json"
    assert run("generate", *common, "--set", f"paths.dataset={data}", "--set", "synth.n=400",
               "--set", f"synth.seed={seeds['data']}") == EXIT_OK
    assert run("train", *common, "--set", f"paths.dataset={data}", "--set", f"paths.model={model}",
               "--set", "train.test_n=100", "--set", f"train.split_seed={seeds['split']}",
               "--set", f"solver.seed={seeds['solver']}", "--set", "penalty.lam=0.02",
               "--set", "privacy.epsilon=2.0") == EXIT_OK
    metrics = json.loads(model.read_text())["metrics"]
    assert float(record["ce"]) == metrics["ce"]
    assert float(record["mse"]) == metrics["mse"]


def test_experiment_default_epsilon_grid_and_resume(tmp_path):
    out = tmp_path / "res.csv"
    argv = ["experiment", "--set", f"paths.output={out}", "--set", "synth.p=10",
            "--set", "grid.sizes=[200]", "--set", "grid.repeats=1", "--set", "grid.test_n=50",
            "--set", "solver.K=5", "--set", "grid.lambda_policy=fixed_list",
            "--set", "grid.lambdas=[0.01]"]
    assert run(*argv) == EXIT_OK
    rows = list(csv.DictReader(out.open()))
    assert len(rows) == 32
    assert sorted({float(r["epsilon"]) for r in rows}) == [0.1, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 4.0]
    cells = sorted(os.listdir(str(out) + ".cells"))
    first = read_bytes(out)
    stamps = {c: os.stat(os.path.join(str(out) + ".cells", c)).st_mtime_ns for c in cells}
    assert run(*argv) == EXIT_OK
    assert read_bytes(out) == first
    assert {c: os.stat(os.path.join(str(out) + ".cells", c)).st_mtime_ns for c in cells} == stamps


def test_manifest_replay_is_byte_identical(tmp_path, dataset):
    model, trace = tmp_path / "m.json", tmp_path / "t.csv"
    run("train", "--set", f"paths.dataset={dataset}", "--set", f"paths.model={model}",
        "--set", f"paths.trace={trace}", "--set", "privacy.epsilon=3.0", "--set", "solver.K=15")
    manifest = tmp_path / "m.json.manifest.json"
    before = {p: read_bytes(p) for p in (model, trace, manifest)}
    for p in before:
        p.unlink()
    assert run("train", "--config", manifest.with_name("replay.json")) == EXIT_IO
    saved = tmp_path / "saved.manifest.json"
    saved.write_bytes(before[manifest])
    assert run("train", "--config", saved) == EXIT_OK
    assert {p: read_bytes(p) for p in before} == before
