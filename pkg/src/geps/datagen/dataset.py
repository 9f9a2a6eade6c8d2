"""Trajectory datasets: generation driver and container round trip."""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from geps.datagen import simulate as sim
from geps.datagen.envs import EnvironmentSpec, sample_environments
from geps.diffcore import container
from geps.diffcore.rng import derive_seed

GENERATOR_VERSION = 1
SPLITS = ("train", "eval", "adapt", "adapt_eval")


@dataclass
class TrajectoryDataset:
    """``u`` is ``(env, traj, time, channel, *space)``."""

    kind: str
    u: np.ndarray
    t: np.ndarray
    envs: list
    split: str = "train"
    grid: dict = field(default_factory=dict)
    seed: int = 0
    generator_version: int = GENERATOR_VERSION

    def __post_init__(self):
        self.u = np.asarray(self.u, dtype=np.float64)
        self.t = np.asarray(self.t, dtype=np.float64)
        if self.u.ndim < 4:
            raise ValueError("u must be (env, traj, time, channel, *space)")
        if self.u.shape[0] != len(self.envs):
            raise ValueError("one environment spec per leading slice of u")
        if self.u.shape[2] != self.t.size:
            raise ValueError("time axis does not match t")

    @property
    def env_ids(self) -> list[str]:
        return [e.env_id for e in self.envs]

    @property
    def n_envs(self) -> int:
        return self.u.shape[0]

    @property
    def n_trajs(self) -> int:
        return self.u.shape[1]

    @property
    def state_shape(self) -> tuple:
        return self.u.shape[3:]

    def env_index(self, env_id) -> int:
        try:
            return self.env_ids.index(str(env_id))
        except ValueError:
            raise KeyError(f"environment {env_id!r} not in dataset") from None

    def subset(self, env_ids=None, n_trajs: int | None = None, n_times: int | None = None):
        idx = (list(range(self.n_envs)) if env_ids is None
               else [self.env_index(e) for e in env_ids])
        u = self.u[idx]
        if n_trajs is not None:
            u = u[:, :n_trajs]
        t = self.t if n_times is None else self.t[:n_times]
        u = u[:, :, :t.size]
        return TrajectoryDataset(self.kind, u, t, [self.envs[i] for i in idx], self.split,
                                 dict(self.grid), self.seed, self.generator_version)

    def meta(self) -> dict:
        return {"kind": self.kind, "split": self.split, "grid": self.grid, "seed": self.seed,
                "generator_version": self.generator_version,
                "envs": [e.to_dict() for e in self.envs], "dataset": True}


def write_dataset(ds: TrajectoryDataset, path) -> None:
    container.write(path, {"u": ds.u, "t": ds.t}, ds.meta())


def read_dataset(path) -> TrajectoryDataset:
    arrays, meta = container.read(path)
    if not meta.get("dataset") or "u" not in arrays:
        raise container.ContainerFormatError(f"{path} is not a dataset file")
    envs = [EnvironmentSpec.from_dict(d) for d in meta["envs"]]
    return TrajectoryDataset(meta["kind"], arrays["u"], arrays["t"], envs, meta["split"],
                             meta["grid"], meta["seed"], meta["generator_version"])


# defaults ---------------------------------------------------------------------------

DEFAULT_GRID = {
    "pendulum": {"T": 25.0, "dt": 0.5, "micro": 100},
    "gray_scott": {"T": 200.0, "dt": 1.0, "points": 32},
    "burgers": {"T": 0.05, "dt": 1e-3, "dns_points": 2048, "les_points": 256, "k0": 10.0},
    "combined": {"T": 30.0, "frames": 10, "points": 256, "dt_micro": 0.01},
}

# Evaluation splits cover twice the training horizon so the same file serves
# the in-range and out-range protocols.
HORIZON_FACTOR = {"train": 1, "adapt": 1, "eval": 2, "adapt_eval": 2}


def resolve_grid(kind: str, split: str, overrides: dict | None = None) -> dict:
    g = dict(DEFAULT_GRID[kind])
    g.update(overrides or {})
    factor = HORIZON_FACTOR[split]
    if kind == "combined":
        g["frames"] = (int(g["frames"]) - 1) * factor + 1
    g["T"] = float(g["T"]) * factor
    g["T_train"] = float(g["T"]) / factor
    return g


def _simulate_env(kind: str, env: EnvironmentSpec, seeds: list[int], g: dict) -> np.ndarray:
    """All trajectories of one environment, ``(traj, time, channel, *space)``."""
    if kind == "pendulum":
        ics = np.concatenate([sim.pendulum_ic(s) for s in seeds])
        return sim.integrate_pendulum(env, ics, g["T"], g["dt"], int(g["micro"]))
    if kind == "gray_scott":
        return np.stack([sim.simulate_gray_scott(env, s, g["T"], g["dt"], int(g["points"]))
                         for s in seeds])
    if kind == "burgers":
        ics = np.stack([sim.burgers_spectrum_ic(g["k0"], int(g["dns_points"]), s) for s in seeds])
        les = sim.simulate_burgers(env, ics, g["T"], g["dt"], int(g["les_points"]))
        return les[:, :, None, :]
    if kind == "combined":
        ics = np.stack([sim.combined_ic(s, int(g["points"]), env.domain["extent"]) for s in seeds])
        out = sim.simulate_combined(env, None, g["T"], int(g["frames"]), ic=ics,
                                    dt_micro=g["dt_micro"])
        return out[:, :, None, :]
    raise ValueError(kind)


def _time_axis(kind: str, g: dict) -> np.ndarray:
    if kind == "combined":
        return np.linspace(0.0, g["T"], int(g["frames"]))
    return sim.time_grid(g["T"], g["dt"])


def _job(args):
    return _simulate_env(*args)


def generate_dataset(kind: str, split: str, n_envs: int, n_trajs: int, seed: int,
                     env_pool: str | None = None, envs: list | None = None,
                     mode: str | None = None, grid: dict | None = None,
                     jobs: int = 1) -> TrajectoryDataset:
    """Simulate ``n_trajs`` trajectories in each of ``n_envs`` environments.

    Environments come from ``env_pool`` (``train`` for ``train``/``eval``
    splits, ``adapt`` otherwise) drawn with ``seed``, so a training set and
    its evaluation set share environments but never initial conditions.
    """
    if split not in SPLITS:
        raise ValueError(f"split must be one of {SPLITS}")
    if n_envs < 1 or n_trajs < 1:
        raise ValueError("need at least one environment and one trajectory")
    if envs is None:
        env_pool = env_pool or ("train" if split in ("train", "eval") else "adapt")
        envs = sample_environments(kind, n_envs, env_pool, seed, mode)
    g = resolve_grid(kind, split, grid)
    tasks = []
    for env in envs:
        seeds = [derive_seed(seed, "traj", kind, split, env.env_id, j) for j in range(n_trajs)]
        tasks.append((kind, env, seeds, g))
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            results = list(ex.map(_job, tasks))  # map keeps submission order
    else:
        results = [_job(tk) for tk in tasks]
    u = np.stack(results)
    return TrajectoryDataset(kind, u, _time_axis(kind, g), list(envs), split, g, int(seed))
