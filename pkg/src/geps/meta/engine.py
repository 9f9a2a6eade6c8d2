"""Joint training, context adaptation and evaluation."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from geps.backbones import Model, build_backbone, model_forward
from geps.condlayers import CTX_PREFIX, ctx_name
from geps.datagen.dataset import TrajectoryDataset
from geps.diffcore import tensor as T
from geps.diffcore.container import read as read_container
from geps.diffcore.optim import AdamState, PlateauScheduler, adam_step
from geps.diffcore.params import ParamStore
from geps.diffcore.rng import stream
from geps.diffcore.tensor import value_and_grad
from geps.dynamics import physics
from geps.dynamics.hybrid import (
    PHYS_PREFIX,
    HybridModel,
    init_physics_params,
    phys_name,
)
from geps.dynamics.hybrid import hybrid_rhs
from geps.dynamics.integrate import IntegrationDivergedError, rollout_node, rollout_onestep, stack_history
from geps.meta.config import TrainConfig
from geps.meta.metrics import mse, relative_mse_per_traj

OVERRIDE_PREFIX = "override/"


class MissingContextError(KeyError):
    pass


class TrainingDivergedError(FloatingPointError):
    def __init__(self, epoch: int, params: ParamStore | None, msg: str = ""):
        super().__init__(msg or f"training loss became non-finite at epoch {epoch}")
        self.epoch = epoch
        self.params = params


class FrozenParameterMutation(AssertionError):
    pass


@dataclass
class Solver:
    config: TrainConfig
    net: Model
    hybrid: HybridModel | None = None
    grid: dict = field(default_factory=dict)

    @property
    def kind(self) -> str:
        return self.config.kind

    @property
    def shared_names(self) -> list[str]:
        return self.net.shared_names()


def physics_grid(kind: str, ds_grid: Mapping | None = None, envs=()) -> dict:
    g = dict(ds_grid or {})
    if kind == "gray_scott":
        pts = int(g.get("points", 32))
        extent = envs[0].domain.get("extent", physics.GS_DS * pts) if envs else physics.GS_DS * pts
        return {"ds": extent / pts}
    if kind == "burgers":
        return {"dx": 2 * np.pi / int(g.get("les_points", 256))}
    if kind == "combined":
        return {"length": float(envs[0].domain.get("extent", physics.COMBINED_LENGTH))
                if envs else physics.COMBINED_LENGTH}
    return {}


def build_solver(config: TrainConfig, grid: dict | None = None) -> Solver:
    net = build_backbone(config.backbone_spec(), config.seed)
    hyb = None
    if config.hybrid:
        hyb = HybridModel(config.kind, net, config.strategy, config.combine, dict(grid or {}))
    return Solver(config, net, hyb, dict(grid or {}))


def init_params(solver: Solver, env_ids: Sequence[str]) -> ParamStore:
    """Network weights, zero contexts and initial physical coefficients."""
    cfg = solver.config
    entries = dict(solver.net.params.items())
    if cfg.conditioned:
        if len(set(env_ids)) != len(env_ids):
            raise ValueError("duplicate environment ids")
        for e in env_ids:
            entries[ctx_name(e)] = np.zeros(cfg.context_dim)
    if solver.hybrid is not None:
        entries.update(init_physics_params(cfg.kind, cfg.strategy, cfg.context_dim, env_ids))
    frozen = []
    if not cfg.conditioned:
        # the low-rank path is never exercised without contexts
        frozen = [n for n in entries if n.startswith(solver.net.prefix)
                  and n.rsplit("/", 1)[-1] in ("A", "B", "b2")]
    return ParamStore(entries, frozen)


# forward ----------------------------------------------------------------------

def _with_overrides(p: Mapping, env_id) -> Mapping:
    pre = f"{OVERRIDE_PREFIX}{env_id}/"
    extra = {n[len(pre):]: p[n] for n in p if n.startswith(pre)}
    if not extra:
        return p
    merged = {n: p[n] for n in p}
    merged.update(extra)
    return merged


def contexts_for(solver: Solver, p: Mapping, env_ids: Sequence[str]):
    if not solver.config.conditioned:
        return None
    missing = [e for e in dict.fromkeys(env_ids) if ctx_name(e) not in p]
    if missing:
        raise MissingContextError(f"no context for environments {missing}")
    if len(set(env_ids)) == 1:
        return p[ctx_name(env_ids[0])]
    return T.stack([p[ctx_name(e)] for e in env_ids], axis=0)


def make_rhs(solver: Solver, p: Mapping, env_ids: Sequence[str]) -> Callable:
    uniform = len(set(env_ids)) == 1
    env_arg = env_ids[0] if uniform else list(env_ids)
    if solver.hybrid is not None:
        h = solver.hybrid
        return lambda u, t, c: hybrid_rhs(h, p, u, t, c, env_arg)
    return lambda u, t, c: model_forward(solver.net, u, c, p)


def predict(solver: Solver, p: Mapping, u0, env_ids: Sequence[str], t_grid):
    """ODE rollout of a batch; returns ``(n_t, n, *state)``."""
    if len(set(env_ids)) == 1:
        p = _with_overrides(p, env_ids[0])
    c = contexts_for(solver, p, env_ids)
    return rollout_node(make_rhs(solver, p, env_ids), u0, c, t_grid, solver.config.substeps)


def predict_onestep(solver: Solver, p: Mapping, history, env_ids: Sequence[str], n_steps: int):
    """Residual next-state rollout from ``history`` ``(H, n, *state)``."""
    if len(set(env_ids)) == 1:
        p = _with_overrides(p, env_ids[0])
    c = contexts_for(solver, p, env_ids)
    net = solver.net

    def stepper(window, cc):
        return T.add(window[-1], model_forward(net, stack_history(window, 1), cc, p))

    return rollout_onestep(stepper, [history[i] for i in range(len(history))], c, n_steps)


# training loss ------------------------------------------------------------------

def _windows(n_t: int, K: int) -> list[int]:
    if K <= 0 or K >= n_t - 1:
        return [0]
    starts = list(range(0, n_t - 1 - K + 1, K))
    if starts[-1] + K < n_t - 1:
        starts.append(n_t - 1 - K)
    return starts


def batch_loss(solver: Solver, p: Mapping, truth: np.ndarray, t: np.ndarray,
               env_ids: Sequence[str], tf_window: int | None = None):
    """MSE of the rollout against ``truth`` ``(n, n_t, *state)`` over predicted frames."""
    cfg = solver.config
    K = cfg.tf_window if tf_window is None else tf_window
    n, n_t = truth.shape[:2]
    if cfg.rollout == "onestep":
        H = cfg.history
        hist = np.moveaxis(truth[:, :H], 1, 0)
        preds = predict_onestep(solver, p, hist, env_ids, n_t - H)
        pred = T.stack(preds, axis=1)
        return mse(pred, truth[:, H:])
    starts = _windows(n_t, K)
    if starts == [0]:
        pred = predict(solver, p, truth[:, 0], env_ids, t)
        return mse(pred[1:], np.moveaxis(truth[:, 1:], 1, 0))
    u0 = np.concatenate([truth[:, s] for s in starts], axis=0)
    tt = np.concatenate([np.repeat(t[s:s + K + 1, None], n, axis=1) for s in starts], axis=1)
    target = np.concatenate([np.moveaxis(truth[:, s + 1:s + K + 1], 1, 0) for s in starts], axis=1)
    ids = list(env_ids) * len(starts)
    pred = predict(solver, p, u0, ids, tt)
    return mse(pred[1:], target)


def trajectory_loss(solver: Solver, params: Mapping, ds: TrajectoryDataset, env_id=None,
                    tf_window: int | None = 0) -> float:
    """Full-horizon loss of one environment (or all) without gradients."""
    ids = ds.env_ids if env_id is None else [env_id]
    vals = []
    for e in ids:
        i = ds.env_index(e)
        vals.append(float(T.value(batch_loss(solver, params, ds.u[i], ds.t,
                                             [e] * ds.n_trajs, tf_window))))
    return float(np.mean(vals))


# training -------------------------------------------------------------------------

@dataclass
class TrainResult:
    params: ParamStore
    log: list
    best_loss: float
    final_params: ParamStore | None = None


def _batches(config: TrainConfig, ds: TrajectoryDataset, rng) -> list[list[tuple[int, int]]]:
    B = config.batch_size
    if config.batching == "mixed":
        pairs = [(e, j) for e in range(ds.n_envs) for j in range(ds.n_trajs)]
        perm = rng.permutation(len(pairs))
        return [[pairs[k] for k in perm[i:i + B]] for i in range(0, len(pairs), B)]
    out = []
    for e in rng.permutation(ds.n_envs):
        perm = rng.permutation(ds.n_trajs)
        out.extend([[(int(e), int(j)) for j in perm[i:i + B]] for i in range(0, ds.n_trajs, B)])
    return out


def train(solver: Solver, params: ParamStore, ds: TrajectoryDataset,
          config: TrainConfig | None = None, callback: Callable | None = None) -> TrainResult:
    """Joint first-order training of shared weights and contexts.

    One Adam step per mini-batch over every trainable entry, a plateau
    schedule on the epoch loss, and the lowest-loss parameters retained.
    """
    cfg = config or solver.config
    rng = stream(cfg.seed, "batches")
    sched = PlateauScheduler(cfg.lr, cfg.sched_threshold, cfg.sched_patience,
                             cfg.sched_decay, cfg.sched_min_lr)
    state = AdamState()
    best, best_params = float("inf"), params
    env_ids = ds.env_ids
    log = []
    step = 0
    for epoch in range(cfg.epochs):
        losses = []
        for batch in _batches(cfg, ds, rng):
            truth = np.stack([ds.u[e, j] for e, j in batch])
            ids = [env_ids[e] for e, _ in batch]
            loss, g = value_and_grad(
                lambda p: batch_loss(solver, p, truth, ds.t, ids), params)
            if not np.isfinite(loss):
                raise TrainingDivergedError(epoch, best_params)
            params, state = adam_step(params, g, state, sched.lr)
            losses.append(loss)
            step += 1
        epoch_loss = float(np.mean(losses))
        lr = sched.lr
        sched.step(epoch_loss)
        if epoch_loss < best:
            best, best_params = epoch_loss, params
        log.append({"epoch": epoch, "step": step, "loss": epoch_loss, "lr": lr})
        if callback is not None:
            callback(log[-1])
    return TrainResult(best_params, log, best, params)


# adaptation ---------------------------------------------------------------------------

@dataclass
class AdaptResult:
    params: ParamStore
    logs: dict
    plateau_steps: dict
    stopped: dict
    final_loss: dict


def _adapt_entries(solver: Solver, trained: ParamStore, env_id: str, mode: str) -> dict:
    """Initial values of the entries adapted for one new environment."""
    cfg = solver.config
    out = {}
    if cfg.conditioned:
        ctxs = [trained[n] for n in trained.names(CTX_PREFIX)]
        if not ctxs:
            raise MissingContextError("trained model holds no contexts")
        c0 = np.mean(np.stack(ctxs), axis=0)
        if mode == "finetune-last":
            # the network still needs a code; keep the mean one fixed
            out["__fixed__"] = {ctx_name(env_id): c0}
        else:
            out[ctx_name(env_id)] = c0
    if mode == "extended":
        if not cfg.conditioned:
            raise ValueError("extended adaptation needs a conditioned model")
        for pre in solver.net.layer_prefixes():
            for leaf in ("A", "B"):
                out[f"{OVERRIDE_PREFIX}{env_id}/{pre}{leaf}"] = trained[pre + leaf]
    elif mode == "finetune-last":
        last = solver.net.layer_prefixes()[-1]
        for leaf in ("W", "b1"):
            out[f"{OVERRIDE_PREFIX}{env_id}/{last}{leaf}"] = trained[last + leaf]
    elif mode == "context+physics" and solver.hybrid is not None and cfg.strategy == 2:
        vals = [trained[n] for n in trained.names(PHYS_PREFIX + "env/")]
        out[phys_name(env_id)] = np.mean(np.stack(vals), axis=0)
    if solver.hybrid is not None and cfg.strategy == 2 and phys_name(env_id) not in out \
            and phys_name(env_id) not in trained:
        # physics is needed for the forward pass even when it is not adapted
        vals = [trained[n] for n in trained.names(PHYS_PREFIX + "env/")]
        out.setdefault("__fixed__", {})[phys_name(env_id)] = np.mean(np.stack(vals), axis=0)
    if not [k for k in out if k != "__fixed__"]:
        raise ValueError(f"adaptation mode {mode!r} leaves nothing to adapt")
    return out


def adapt(solver: Solver, trained: ParamStore, ds: TrajectoryDataset,
          config: TrainConfig | None = None, mode: str | None = None,
          n_traj: int | None = None) -> AdaptResult:
    """Fit per-environment entries on a few trajectories with everything else frozen.

    Each environment runs its own Adam loop from the mean trained context,
    stopping after ``adapt_patience`` steps without a relative improvement of
    ``adapt_threshold`` (or at ``adapt_epochs``).  The shared entries of
    ``trained`` are checked to be bit-identical afterwards.
    """
    cfg = config or solver.config
    mode = mode or cfg.adapt_mode
    store = trained
    logs, plateau, stopped, final = {}, {}, {}, {}
    for e in ds.env_ids:
        i = ds.env_index(e)
        truth_all = ds.u[i] if n_traj is None else ds.u[i, :n_traj]
        init = _adapt_entries(solver, trained, e, mode)
        fixed = init.pop("__fixed__", {})
        names = list(init)
        upd = {**init, **fixed}
        work = store.replace({n: a for n, a in upd.items() if n in store})
        add = {n: a for n, a in upd.items() if n not in store}
        if add:
            work = work.merged(ParamStore(add))
        work = work.freeze_all_except(names)
        state = AdamState()
        rng = stream(cfg.seed, "adapt", e)
        best, best_vals, best_step, since = float("inf"), {n: work[n] for n in names}, 0, 0
        log = []
        done = False
        for step in range(cfg.adapt_epochs):
            nb = truth_all.shape[0]
            if nb > cfg.adapt_batch_size:
                idx = np.sort(rng.permutation(nb)[:cfg.adapt_batch_size])
                truth = truth_all[idx]
            else:
                truth = truth_all
            ids = [e] * truth.shape[0]
            loss, g = value_and_grad(lambda p: batch_loss(solver, p, truth, ds.t, ids), work)
            if not np.isfinite(loss):
                raise TrainingDivergedError(step, None, f"adaptation diverged for {e} at step {step}")
            log.append({"step": step, "loss": loss})
            if loss < best * (1.0 - cfg.adapt_threshold):
                best, best_step, since = loss, step, 0
                best_vals = {n: work[n] for n in names}
            else:
                since += 1
                if since >= cfg.adapt_patience:
                    done = True
                    break
            work, state = adam_step(work, g, state, cfg.adapt_lr)
        shared = [n for n in trained if n in work and n not in names]
        if work.checksum(shared) != trained.checksum(shared):
            raise FrozenParameterMutation(f"shared parameters changed while adapting {e}")
        logs[e], plateau[e], stopped[e], final[e] = log, best_step, done, best
        new = {n: best_vals[n] for n in names}
        new.update(fixed)
        replace = {n: a for n, a in new.items() if n in store}
        add = {n: a for n, a in new.items() if n not in store}
        store = store.replace(replace).merged(ParamStore(add)) if add else store.replace(replace)
    changed = set()
    for e in ds.env_ids:
        changed.update({ctx_name(e), phys_name(e)})
    keep = [n for n in trained if n not in changed]
    if store.checksum(keep) != trained.checksum(keep):
        raise FrozenParameterMutation("shared parameters changed during adaptation")
    return AdaptResult(store, logs, plateau, stopped, final)


# evaluation -------------------------------------------------------------------------

@dataclass
class EvalReport:
    split: str
    horizon: str
    per_env: dict
    aggregate: float
    n_frames: int = 0

    def rows(self, run_id: str, phase: str) -> list[dict]:
        rows = [{"run_id": run_id, "phase": phase, "env_id": e, "horizon": self.horizon,
                 "metric": "relative_mse", "value": v, "step": ""}
                for e, v in self.per_env.items()]
        rows.append({"run_id": run_id, "phase": phase, "env_id": "ALL", "horizon": self.horizon,
                     "metric": "relative_mse", "value": self.aggregate, "step": ""})
        return rows


HORIZONS = ("in", "out")


def horizon_frames(ds: TrajectoryDataset, horizon: str, history: int = 1) -> np.ndarray:
    T_train = float(ds.grid.get("T_train", ds.t[-1]))
    tol = 1e-9 * max(1.0, T_train)
    t = ds.t
    if horizon == "in":
        sel = (t > t[0] + tol) & (t <= T_train + tol)
    elif horizon == "out":
        sel = (t > T_train + tol) & (t <= 2 * T_train + tol)
    else:
        raise ValueError(f"horizon must be one of {HORIZONS}")
    idx = np.nonzero(sel)[0]
    idx = idx[idx >= history]
    if idx.size == 0:
        raise ValueError(f"dataset holds no frames in the {horizon}-range horizon")
    return idx


def rollout_dataset_env(solver: Solver, params: Mapping, ds: TrajectoryDataset, env_id,
                        last_frame: int | None = None) -> np.ndarray:
    """Prediction ``(traj, time, *state)`` for every trajectory of one environment."""
    i = ds.env_index(env_id)
    n_t = ds.t.size if last_frame is None else last_frame + 1
    truth = ds.u[i, :, :n_t]
    ids = [str(env_id)] * truth.shape[0]
    if solver.config.rollout == "onestep":
        H = solver.config.history
        preds = predict_onestep(solver, params, np.moveaxis(truth[:, :H], 1, 0), ids, n_t - H)
        return np.concatenate([truth[:, :H], np.stack([T.value(x) for x in preds], axis=1)], axis=1)
    pred = predict(solver, params, truth[:, 0], ids, ds.t[:n_t])
    return np.moveaxis(T.value(pred), 0, 1)


def evaluate(solver: Solver, params: Mapping, ds: TrajectoryDataset,
             horizons: Sequence[str] = ("in",)) -> dict:
    """Relative MSE per environment for each requested horizon.

    All horizons share one rollout from each trajectory's initial state.
    Divergent rollouts score ``inf``.
    """
    H = solver.config.history if solver.config.rollout == "onestep" else 1
    frames = {h: horizon_frames(ds, h, H if solver.config.rollout == "onestep" else 0)
              for h in horizons}
    last = int(max(f.max() for f in frames.values()))
    per = {h: {} for h in horizons}
    for e in ds.env_ids:
        if solver.config.conditioned and ctx_name(e) not in params:
            raise MissingContextError(f"no context for environment {e!r}")
        try:
            pred = rollout_dataset_env(solver, params, ds, e, last)
        except IntegrationDivergedError:
            for h in horizons:
                per[h][e] = float("inf")
            continue
        truth = ds.u[ds.env_index(e)]
        for h in horizons:
            idx = frames[h]
            per[h][e] = float(np.mean(relative_mse_per_traj(truth[:, idx], pred[:, idx])))
    return {h: EvalReport(ds.split, h, per[h], float(np.mean(list(per[h].values()))),
                          int(frames[h].size)) for h in horizons}


# checkpoints -------------------------------------------------------------------------

def save_checkpoint(path, solver: Solver, params: ParamStore, env_ids: Sequence[str],
                    stage: str = "train", extra: Mapping | None = None) -> None:
    meta = {"checkpoint": True, "stage": stage, "config": solver.config.to_dict(),
            "grid": solver.grid, "env_ids": list(env_ids)}
    meta.update(extra or {})
    params.save(path, meta)


class NotACheckpointError(ValueError):
    pass


def load_checkpoint(path) -> tuple[Solver, ParamStore, dict]:
    arrays, meta = read_container(path)
    if not meta.get("checkpoint"):
        raise NotACheckpointError(f"{path} is not a checkpoint")
    cfg = TrainConfig.from_dict(meta["config"])
    solver = build_solver(cfg, meta.get("grid"))
    params = ParamStore(arrays, frozen=meta.get("frozen", ()))
    expected = solver.net.params.shapes()
    for n, shp in expected.items():
        if n not in params or params[n].shape != shp:
            raise ValueError(f"checkpoint entry {n!r} does not match the configured backbone")
    return solver, params, meta
