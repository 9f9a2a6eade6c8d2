"""Initialisation and context-size sweeps."""

from __future__ import annotations

import time
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from geps.backbones import param_count
from geps.datagen.dataset import TrajectoryDataset
from geps.diffcore.params import INIT_SCHEMES
from geps.dynamics.integrate import IntegrationDivergedError
from geps.meta.config import TrainConfig
from geps.meta.engine import (
    TrainingDivergedError,
    build_solver,
    evaluate,
    init_params,
    physics_grid,
    train,
)

CODE_DIMS = (1, 2, 4, 8, 16)


def _run(args):
    cfg, ds, eval_ds, grid = args
    t0 = time.perf_counter()
    solver = build_solver(cfg, grid)
    params = init_params(solver, ds.env_ids)
    row = {"n_params": solver.net.params.num_params(),
           "closed_form": param_count(solver.net.spec),
           "n_context": cfg.context_dim * ds.n_envs if cfg.conditioned else 0}
    try:
        res = train(solver, params, ds, cfg)
        rep = evaluate(solver, res.params, eval_ds if eval_ds is not None else ds, ("in",))
        row.update(final_loss=res.best_loss, relative_mse=rep["in"].aggregate,
                   loss_curve=[r["loss"] for r in res.log], status="ok")
    except (TrainingDivergedError, IntegrationDivergedError, FloatingPointError) as exc:
        row.update(final_loss=float("nan"), relative_mse=float("nan"), loss_curve=[],
                   status=f"failed: {exc}")
    row["seconds"] = time.perf_counter() - t0
    return row


def _map(tasks, jobs: int):
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            return list(ex.map(_run, tasks))
    return [_run(t) for t in tasks]


def ablate_init(ds: TrajectoryDataset, config: TrainConfig, inits=INIT_SCHEMES,
                eval_ds: TrajectoryDataset | None = None, jobs: int = 1) -> list[dict]:
    """One training run per init scheme with identical data, seed and budget.

    Failed runs are kept as rows with NaN metrics.
    """
    grid = physics_grid(config.kind, ds.grid, ds.envs)
    tasks = [(config.with_(init=name), ds, eval_ds, grid) for name in inits]
    rows = _map(tasks, jobs)
    for name, row in zip(inits, rows):
        row["init"] = name
    return rows


def ablate_code_dim(ds: TrajectoryDataset, config: TrainConfig, dims=CODE_DIMS,
                    eval_ds: TrajectoryDataset | None = None, jobs: int = 1) -> list[dict]:
    """One run per context size; reports parameter counts next to the error."""
    grid = physics_grid(config.kind, ds.grid, ds.envs)
    tasks = [(config.with_(context_dim=int(r)), ds, eval_ds, grid) for r in dims]
    rows = _map(tasks, jobs)
    for r, row in zip(dims, rows):
        row["r"] = int(r)
    return rows


def param_increment(config: TrainConfig, r: int) -> int:
    """Shared parameters added by the low-rank path at context size ``r``."""
    spec = config.with_(context_dim=r).backbone_spec()
    return int(sum(di * r + 2 * r * do for di, do in spec.layer_dims()))


def is_linear_in_r(rows: list[dict]) -> bool:
    rs = np.array([row["r"] for row in rows], dtype=float)
    n = np.array([row["n_params"] for row in rows], dtype=float)
    if rs.size < 2:
        return True
    slope = (n[-1] - n[0]) / (rs[-1] - rs[0])
    return bool(np.allclose(n, n[0] + slope * (rs - rs[0]), rtol=0, atol=0))
