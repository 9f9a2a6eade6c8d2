import csv
import subprocess
import sys

import numpy as np
import pytest

from _pipeline import GRID, TRAIN, pipeline, run
from geps.cli import runconfig
from geps.cli.main import CSV_COLUMNS
from geps.datagen import dataset as dsmod
from geps.diffcore import container
from geps.meta.config import TrainConfig


@pytest.fixture(scope="module")
def done(tmp_path_factory):
    return pipeline(tmp_path_factory.mktemp("pipe"))


def rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_pipeline_outputs(done):
    names = {p.name for p in (done / "run").iterdir()}
    assert {"checkpoint.gck", "config.toml", "metrics.csv", "contexts.csv", "loss.svg",
            "eval_eval.csv", "eval_eval.svg", "checks.csv", "timing.log"} <= names
    for name in ("metrics.csv", "eval_eval.csv", "checks.csv"):
        with open(done / "run" / name) as fh:
            assert tuple(fh.readline().strip().split(",")) == CSV_COLUMNS
    checks = {r["metric"]: r["value"] for r in rows(done / "run" / "checks.csv")}
    assert checks == {"out_range_ge_in_range": "1", "aggregate_is_env_mean": "1"}
    ev = rows(done / "run" / "eval_eval.csv")
    for h in ("in", "out"):
        per = [float(r["value"]) for r in ev if r["horizon"] == h and r["env_id"] != "ALL"]
        agg = [float(r["value"]) for r in ev if r["horizon"] == h and r["env_id"] == "ALL"]
        assert len(per) == 2 and agg[0] == pytest.approx(np.mean(per), abs=1e-12)


def test_adapt_metrics_and_manifest(done):
    m = rows(done / "ada" / "metrics.csv")
    assert {r["metric"] for r in m} == {"loss", "plateau_step"}
    manifest = (done / "MANIFEST.tsv").read_text().splitlines()
    assert [line.split("\t")[0] for line in manifest] == ["tr.gds", "ev.gds", "ad.gds", "ade.gds"]


def test_config_round_trip(done):
    cfg, _ = runconfig.resolve(runconfig.load_flat(done / "run" / "config.toml"))
    assert cfg.epochs == 5 and cfg.width == 16 and isinstance(cfg, TrainConfig)


def test_exit_codes(done, tmp_path):
    tr = done / "tr.gds"
    assert run("train", "--data", tmp_path / "nope.gds", "--out", tmp_path / "x") == 3
    assert run("train", "--data", tr, *TRAIN, "--out", done / "run") == 8
    assert run("train", "--data", tr, "--set", "train.bogus=1", "--out", tmp_path / "y") == 9
    assert run("generate", "--kind", "pendulum", "--pool", "train", "--envs", 1, "--trajs", 1,
               "--grid", "colour=3", "--out", tmp_path / "g.gds") == 9
    # contexts are unknown for adaptation-pool environments until adapt runs
    assert run("evaluate", "--run", done / "run", "--data", done / "ade.gds") == 4
    # a gray-scott dataset cannot feed a pendulum model
    assert run("generate", "--kind", "gray_scott", "--pool", "eval", "--envs", 1, "--trajs", 1,
               "--grid", "T=2", "--grid", "points=8", "--out", tmp_path / "gs.gds") == 0
    assert run("evaluate", "--run", done / "run", "--data", tmp_path / "gs.gds") == 4

    ds = dsmod.read_dataset(tr)
    (tmp_path / "v.gds").write_bytes(container.encode({"u": ds.u, "t": ds.t}, ds.meta(), version=99))
    assert run("evaluate", "--run", done / "run", "--data", tmp_path / "v.gds") == 5
    blob = bytearray(tr.read_bytes())
    blob[len(blob) // 2] ^= 0x01
    (tmp_path / "c.gds").write_bytes(bytes(blob))
    assert run("evaluate", "--run", done / "run", "--data", tmp_path / "c.gds") == 10
    with pytest.raises(SystemExit) as info:
        run("train")
    assert info.value.code == 2


def test_force_overwrites(done, tmp_path):
    out = tmp_path / "r"
    assert run("train", "--data", done / "tr.gds", *TRAIN, "--out", out) == 0
    assert run("train", "--data", done / "tr.gds", *TRAIN, "--out", out, "--force") == 0


def test_output_root_env(done, tmp_path, monkeypatch):
    monkeypatch.setenv("GEPS_OUTPUT_ROOT", str(tmp_path))
    assert run("generate", "--kind", "pendulum", "--pool", "train", "--envs", 1, "--trajs", 1,
               *GRID, "--out", "rel.gds") == 0
    assert (tmp_path / "rel.gds").exists()


def test_ablate_commands(done, tmp_path):
    assert run("ablate-codedim", "--data", done / "tr.gds", "--set", "train.epochs=2",
               "--dims", "1,2,4", "--out", tmp_path / "cd") == 0
    m = rows(tmp_path / "cd" / "metrics.csv")
    n = {r["env_id"]: int(r["value"]) for r in m if r["metric"] == "n_params"}
    cf = {r["env_id"]: int(r["value"]) for r in m if r["metric"] == "closed_form"}
    assert n == cf and n["4"] - n["2"] == 2 * (n["2"] - n["1"])
    assert run("ablate-init", "--data", done / "tr.gds", "--eval", done / "ev.gds",
               "--set", "train.epochs=1", "--inits", "lora,orthogonal", "--out", tmp_path / "ai") == 0
    m = rows(tmp_path / "ai" / "metrics.csv")
    assert {r["env_id"] for r in m if r["metric"] == "final_loss"} == {"lora", "orthogonal"}
    assert (tmp_path / "ai" / "relative_mse.svg").exists()


def test_plot_rerenders(done):
    svg = (done / "run" / "loss.svg").read_bytes()
    (done / "run" / "loss.svg").unlink()
    assert run("plot", "--run", done / "run") == 0
    assert (done / "run" / "loss.svg").read_bytes() == svg
    assert svg.startswith(b"<svg") or b"<svg" in svg[:200]


def test_console_entry_point():
    out = subprocess.run([sys.executable, "-m", "geps.cli.main", "--help"], capture_output=True,
                         text=True)
    assert out.returncode == 0
    for cmd in ("generate", "train", "adapt", "evaluate", "ablate-init", "ablate-codedim", "plot"):
        assert cmd in out.stdout
