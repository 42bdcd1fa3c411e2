import json
import subprocess
import sys

import numpy as np
import pytest
import torch
import yaml

from adakde.cli import EXIT_CONFIG, EXIT_OK, EXIT_PARTIAL, EXIT_RUNTIME, main
from adakde.recommender import BandwidthRecommender, RecommenderConfig, load_checkpoint, save_checkpoint

TRAIN = {"n_tasks": 6, "n_t": 32, "m_t": 8, "epochs": 1, "batch": 3, "width": 4, "n_heads": 1, "n_blocks": 1,
         "k_nn": 4, "seed": 2}


@pytest.fixture
def workdir(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    (tmp_path / "train.yaml").write_text(yaml.safe_dump(TRAIN))
    np.savetxt(tmp_path / "x.csv", np.random.default_rng(0).normal(size=(40, 2)), delimiter=",")
    return tmp_path


def checkpoint(path, d=2):
    m = BandwidthRecommender(RecommenderConfig(d=d, k_nn=4, width=4, n_blocks=1, n_heads=1),
                             torch.Generator().manual_seed(0))
    return str(save_checkpoint(m, path))


def exp_config(path, **kw):
    data = {"scenario": "GMD_F", "dims": [2], "sample_sizes": [48], "n_instances": 2, "n_replicates": 1,
            "n_eval": 50, "methods": ["Silverman", "Oracle"], "seed": 1}
    data.update(kw)
    path.write_text(yaml.safe_dump(data))
    return str(path)


def test_gen_tasks_then_pretrain(workdir, capsys):
    assert main(["gen-tasks", "--config", "train.yaml", "--out", "tasks", "--shard-size", "4"]) == EXIT_OK
    assert sorted(p.name for p in (workdir / "tasks").glob("*.npz")) == ["tasks_0000000.npz", "tasks_0000004.npz"]
    assert main(["pretrain", "--config", "train.yaml", "--out", "a.nnkd", "--tasks", "tasks"]) == EXIT_OK
    assert main(["pretrain", "--config", "train.yaml", "--out", "b.nnkd"]) == EXIT_OK
    # stored tasks and on-the-fly tasks are the same, so the weights are too
    a, b = load_checkpoint("a.nnkd"), load_checkpoint("b.nnkd")
    for x, y in zip(a.state_dict().values(), b.state_dict().values()):
        assert torch.equal(x, y)
    assert a.checkpoint_metadata["train_config"]["seed"] == 2
    assert "epoch 1/1" in capsys.readouterr().out


def test_pretrain_seed_override(workdir):
    assert main(["pretrain", "--config", "train.yaml", "--out", "s.nnkd", "--seed", "99"]) == EXIT_OK
    assert load_checkpoint("s.nnkd").checkpoint_metadata["train_config"]["seed"] == 99


def test_recommend_and_finetune(workdir, capsys):
    ck = checkpoint(workdir / "m.nnkd")
    assert main(["recommend", "--checkpoint", ck, "--sample", "x.csv", "--out", "f.csv"]) == EXIT_OK
    F = np.loadtxt("f.csv", delimiter=",")
    assert F.shape == (40, 3) and np.all(F[:, [0, 2]] > 0)
    capsys.readouterr()
    assert main(["finetune", "--checkpoint", ck, "--sample", "x.csv", "--out", "g.csv"]) == EXIT_OK
    res = json.loads(capsys.readouterr().out)
    assert res["objective_at_gamma_star"] <= res["objective_at_one"]
    G = np.loadtxt("g.csv", delimiter=",")
    np.testing.assert_allclose(G, F * np.sqrt(res["gamma_star"]), rtol=1e-14)
    assert main(["finetune", "--factors", "f.csv", "--sample", "x.csv", "--out", "h.csv"]) == EXIT_OK
    assert (workdir / "h.csv").read_bytes() == (workdir / "g.csv").read_bytes()


def test_recommend_wrong_dimension_is_runtime_error(workdir):
    ck = checkpoint(workdir / "m3.nnkd", d=3)
    assert main(["recommend", "--checkpoint", ck, "--sample", "x.csv", "--out", "f.csv"]) == EXIT_RUNTIME


def test_eval_and_report(workdir, capsys):
    cfg = exp_config(workdir / "e.yaml")
    assert main(["eval", "--config", cfg, "--out", "res"]) == EXIT_OK
    out = capsys.readouterr().out
    assert "| Oracle |" in out
    assert main(["report", "--raw", "res/runs.csv", "--out", "again"]) == EXIT_OK
    for name in ("runs.csv", "summary.md", "plot_data.csv"):
        assert (workdir / "res" / name).read_bytes() == (workdir / "again" / name).read_bytes()


def test_eval_overrides(workdir):
    cfg = exp_config(workdir / "e.yaml")
    assert main(["eval", "--config", cfg, "--out", "a", "--methods", "oracle", "--seed", "5", "--jobs", "1"]) == 0
    rows = (workdir / "a" / "runs.csv").read_text().splitlines()[1:]
    assert len(rows) == 2 and all(",Oracle," in r for r in rows)
    meta = json.loads((workdir / "a" / "metadata.json").read_text())
    assert meta["config"]["seed"] == 5


def test_eval_partial_and_total_failure(workdir):
    ck = checkpoint(workdir / "m3.nnkd", d=3)
    cfg = exp_config(workdir / "e.yaml", methods=["Silverman", "NNKDE_pre"], checkpoint="m3.nnkd")
    assert main(["eval", "--config", cfg, "--out", "p"]) == EXIT_PARTIAL
    cfg = exp_config(workdir / "f.yaml", methods=["NNKDE_pre"], checkpoint=ck)
    assert main(["eval", "--config", cfg, "--out", "q"]) == EXIT_RUNTIME


@pytest.mark.parametrize("argv", [
    ["eval", "--config", "missing.yaml", "--out", "r"],
    ["eval", "--config", "bad.yaml", "--out", "r"],
    ["eval", "--config", "e.yaml", "--out", "r", "--methods", "Scott"],
    ["eval", "--config", "e.yaml", "--out", "r", "--checkpoint", "nope.nnkd", "--methods", "NNKDE_pre"],
    ["eval", "--config", "e.yaml", "--out", "r", "--jobs", "0"],
    ["eval", "--config", "e.yaml", "--out", "r", "--seed", "-4"],
    ["recommend", "--checkpoint", "nope.nnkd", "--sample", "x.csv", "--out", "f.csv"],
    ["finetune", "--sample", "x.csv", "--out", "f.csv"],
    ["finetune", "--factors", "x.csv", "--sample", "x.csv", "--out", "f.csv", "--bracket", "2", "3"],
    ["pretrain", "--config", "bad_train.yaml", "--out", "m.nnkd"],
    ["bogus"],
    [],
])
def test_config_errors_exit_one(workdir, argv):
    exp_config(workdir / "e.yaml")
    (workdir / "bad.yaml").write_text("scenario: GMD_F\ndims: [2]\n")
    (workdir / "bad_train.yaml").write_text("lr: 1\nmomentum: 3\n")
    with pytest.raises(SystemExit) as info:
        sys.exit(main(argv))
    assert info.value.code == EXIT_CONFIG


def test_corrupt_checkpoint_exit_one(workdir):
    ck = workdir / "m.nnkd"
    checkpoint(ck)
    raw = bytearray(ck.read_bytes())
    raw[-20] ^= 1
    ck.write_bytes(bytes(raw))
    assert main(["recommend", "--checkpoint", str(ck), "--sample", "x.csv", "--out", "f.csv"]) == EXIT_CONFIG


def test_console_script_entry_point(workdir):
    out = subprocess.run([sys.executable, "-m", "adakde.cli", "--help"], capture_output=True, text=True)
    assert out.returncode == 0 and "gen-tasks" in out.stdout


def test_jobs_env_respected(workdir, monkeypatch):
    cfg = exp_config(workdir / "e.yaml")
    monkeypatch.setenv("ADAKDE_JOBS", "2")
    assert main(["eval", "--config", cfg, "--out", "j"]) == EXIT_OK
    assert json.loads((workdir / "j" / "metadata.json").read_text())["metadata"]["jobs"] == 2
