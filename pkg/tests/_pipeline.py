"""Small end-to-end CLI run shared by the CLI and acceptance tests."""

from pathlib import Path

from geps.cli.main import main

GRID = ["--grid", "T=5"]
TRAIN = ["--set", "train.epochs=5", "--set", "model.width=16"]


def run(*argv) -> int:
    return main([str(a) for a in argv])


def pipeline(root: Path) -> Path:
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    gen = [("train", "train", 2, 2, "tr.gds"), ("eval", "train", 2, 2, "ev.gds"),
           ("adapt", "adapt", 1, 1, "ad.gds"), ("eval", "adapt", 1, 2, "ade.gds")]
    for pool, env_pool, n_env, n_traj, name in gen:
        assert run("generate", "--kind", "pendulum", "--pool", pool, "--env-pool", env_pool,
                   "--envs", n_env, "--trajs", n_traj, *GRID, "--out", root / name) == 0
    assert run("train", "--data", root / "tr.gds", *TRAIN, "--out", root / "run") == 0
    assert run("adapt", "--run", root / "run", "--data", root / "ad.gds",
               "--set", "adapt.epochs=20", "--out", root / "ada") == 0
    assert run("evaluate", "--run", root / "run", "--data", root / "ev.gds") == 0
    assert run("evaluate", "--run", root / "ada", "--data", root / "ade.gds") == 0
    assert run("plot", "--run", root / "run") == 0
    return root
