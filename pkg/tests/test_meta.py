import numpy as np
import pytest

from geps.backbones import BackboneSpec, build_backbone
from geps.condlayers import ctx_name
from geps.datagen.dataset import TrajectoryDataset
from geps.datagen.envs import EnvironmentSpec
from geps.diffcore import tensor as T
from geps.diffcore.params import ParamStore
from geps.diffcore.rng import stream
from geps.meta import ablation, engine
from geps.meta.config import TrainConfig
from geps.meta.metrics import ZeroNormError, relative_mse, relative_mse_per_traj


def linear_dataset(rates=(0.3, 0.8), n_traj=4, T_end=2.0, n_t=9, split="train", seed=0):
    """Two-state decaying rotation per environment, closed form."""
    t = np.linspace(0, T_end, n_t)
    g = stream(seed, "lin", split)
    u = np.zeros((len(rates), n_traj, n_t, 2))
    envs = []
    for e, a in enumerate(rates):
        for j in range(n_traj):
            u0 = g.uniform(0.5, 1.0, size=2)
            rot = np.stack([np.cos(t), np.sin(t)], axis=-1)
            u[e, j, :, 0] = np.exp(-a * t) * (u0[0] * rot[:, 0] - u0[1] * rot[:, 1])
            u[e, j, :, 1] = np.exp(-a * t) * (u0[0] * rot[:, 1] + u0[1] * rot[:, 0])
        envs.append(EnvironmentSpec("pendulum", f"lin-{e}", {"rate": a}))
    return TrajectoryDataset("pendulum", u, t, envs, split, {"T_train": T_end / 2 if split != "train" else T_end})


def small_config(**kw):
    base = dict(kind="pendulum", depth=3, width=16, context_dim=2, substeps=2, tf_window=0,
                batch_size=8, epochs=10, lr=1e-2, adapt_epochs=40)
    base.update(kw)
    return TrainConfig(**base)


def setup(cfg, ds):
    solver = engine.build_solver(cfg)
    return solver, engine.init_params(solver, ds.env_ids)


# metrics -----------------------------------------------------------------------

def test_relative_mse_examples():
    y = np.array([3.0, 4.0])
    assert relative_mse(y, y) == 0.0
    assert relative_mse(y, np.zeros(2)) == 1.0
    assert relative_mse(y, np.array([3.0, 0.0])) == pytest.approx(0.64, abs=1e-15)
    with pytest.raises(ZeroNormError):
        relative_mse(np.zeros(2), y)


def test_relative_mse_scale_invariance():
    g = stream(1, "r")
    y, yh = g.standard_normal((5, 7)), g.standard_normal((5, 7))
    base = relative_mse_per_traj(y, yh)
    for lam in (-3.0, 1e-3, 250.0):
        assert np.max(np.abs(relative_mse_per_traj(lam * y, lam * yh) - base)) < 1e-12


# trajectory loss ----------------------------------------------------------------

def test_loss_zero_on_own_rollout_and_constant_offset():
    ds = linear_dataset()
    cfg = small_config()
    solver, p = setup(cfg, ds)
    u0 = ds.u[0, :, 0]
    pred = T.value(engine.predict(solver, p, u0, [ds.env_ids[0]] * 4, ds.t))
    truth = np.moveaxis(pred, 0, 1)
    assert float(engine.batch_loss(solver, p, truth, ds.t, [ds.env_ids[0]] * 4)) == 0.0
    shifted = truth.copy()
    shifted[:, 1:] += 0.01
    assert float(engine.batch_loss(solver, p, shifted, ds.t, [ds.env_ids[0]] * 4)) == pytest.approx(1e-4, rel=1e-9)


def test_loss_closed_form_with_zero_network():
    ds = linear_dataset()
    cfg = small_config(conditioning="erm")
    net = build_backbone(BackboneSpec("mlp", depth=2, width=4, context_dim=2, zero_final=True), 0)
    solver = engine.Solver(cfg, net)
    truth = ds.u[1]
    loss = float(engine.batch_loss(solver, net.params, truth, ds.t, ["x"] * 4))
    expect = np.mean((truth[:, 1:] - truth[:, :1]) ** 2)
    assert abs(loss - expect) < 1e-12


def test_teacher_forcing_windows_cover_every_frame():
    assert engine._windows(51, 5)[:3] == [0, 5, 10]
    starts = engine._windows(12, 5)
    covered = sorted({s + k for s in starts for k in range(1, 6)})
    assert covered == list(range(1, 12))
    assert engine._windows(10, 0) == [0]


# training -----------------------------------------------------------------------

def test_training_converges_on_linear_dynamics():
    ds = linear_dataset()
    cfg = small_config(epochs=500, substeps=1)
    solver, p = setup(cfg, ds)
    res = engine.train(solver, p, ds, cfg)
    assert res.best_loss < 0.01 * res.log[0]["loss"]
    assert res.params.shapes() == p.shapes()
    assert len(res.params.names("ctx/")) == 2


def test_training_is_deterministic_and_first_order():
    ds = linear_dataset()
    cfg = small_config(epochs=3, batch_size=3)
    runs = []
    for _ in range(2):
        solver, p = setup(cfg, ds)
        runs.append(engine.train(solver, p, ds, cfg))
    assert runs[0].params.checksum() == runs[1].params.checksum()
    assert runs[0].log == runs[1].log
    # one optimiser step per mini-batch: ceil(8 / 3) = 3 per epoch
    assert [r["step"] for r in runs[0].log] == [3, 6, 9]


def test_erm_freezes_lowrank_path():
    ds = linear_dataset()
    cfg = small_config(conditioning="erm", epochs=2)
    solver, p = setup(cfg, ds)
    res = engine.train(solver, p, ds, cfg)
    frozen = sorted(p.frozen)
    assert frozen and all(n.rsplit("/", 1)[-1] in ("A", "B", "b2") for n in frozen)
    assert res.params.checksum(frozen) == p.checksum(frozen)
    assert not res.params.names("ctx/")


def test_onestep_rollout_history():
    ds = linear_dataset(n_t=12)
    cfg = small_config(rollout="onestep", history=3, epochs=2)
    solver, p = setup(cfg, ds)
    assert solver.net.spec.in_channels == 6
    res = engine.train(solver, p, ds, cfg)
    assert np.isfinite(res.best_loss)


def test_batching_modes():
    ds = linear_dataset()
    rng = stream(0, "b")
    per_env = engine._batches(small_config(batching="per_env", batch_size=3), ds, rng)
    assert all(len({e for e, _ in b}) == 1 for b in per_env)
    mixed = engine._batches(small_config(batch_size=3), ds, rng)
    assert sorted(x for b in mixed for x in b) == [(e, j) for e in range(2) for j in range(4)]


# adaptation ---------------------------------------------------------------------

@pytest.fixture(scope="module")
def trained():
    ds = linear_dataset()
    cfg = small_config(epochs=150, substeps=1)
    solver, p = setup(cfg, ds)
    return solver, engine.train(solver, p, ds, cfg), ds, cfg


def test_context_adaptation_is_pure(trained):
    solver, res, ds, cfg = trained
    new = linear_dataset(rates=(0.5,), n_traj=1, split="adapt", seed=3)
    new = TrajectoryDataset("pendulum", new.u, new.t,
                            [EnvironmentSpec("pendulum", "new-0", {"rate": 0.5})], "adapt")
    out = engine.adapt(solver, res.params, new, cfg)
    shared = list(res.params)
    assert out.params.checksum(shared) == res.params.checksum(shared)
    c0 = np.mean([res.params[n] for n in res.params.names("ctx/")], axis=0)
    assert not np.array_equal(out.params[ctx_name("new-0")], c0)
    log = out.logs["new-0"]
    assert log[0]["step"] == 0 and out.plateau_steps["new-0"] < cfg.adapt_epochs


def test_self_adaptation_sanity(trained):
    solver, res, ds, cfg = trained
    env = ds.env_ids[0]
    own = engine.trajectory_loss(solver, res.params, ds, env)
    relabeled = TrajectoryDataset("pendulum", ds.u[:1], ds.t,
                                  [EnvironmentSpec("pendulum", "again", {})], "adapt")
    out = engine.adapt(solver, res.params, relabeled, cfg.with_(adapt_epochs=200))
    adapted = engine.trajectory_loss(solver, out.params, relabeled, "again")
    assert adapted <= 1.5 * own


def test_adaptation_modes(trained):
    solver, res, ds, cfg = trained
    new = TrajectoryDataset("pendulum", ds.u[1:, :1], ds.t,
                            [EnvironmentSpec("pendulum", "n", {})], "adapt")
    ext = engine.adapt(solver, res.params, new, cfg.with_(adapt_epochs=3), mode="extended")
    assert ext.params.names("override/n/")
    ft = engine.adapt(solver, res.params, new, cfg.with_(adapt_epochs=3), mode="finetune-last")
    assert sorted(ft.params.names("override/")) == ["override/n/net/2/W", "override/n/net/2/b1"]
    for out in (ext, ft):
        assert out.params.checksum(list(res.params)) == res.params.checksum()


def test_frozen_mutation_is_detected(trained, monkeypatch):
    solver, res, ds, cfg = trained
    new = TrajectoryDataset("pendulum", ds.u[1:, :1], ds.t,
                            [EnvironmentSpec("pendulum", "m", {})], "adapt")
    real = engine.adam_step

    def evil(params, grads, state, lr):
        params, state = real(params, grads, state, lr)
        return params._with_frozen(frozenset()).replace({"net/0/b1": params["net/0/b1"] + 1}), state

    monkeypatch.setattr(engine, "adam_step", evil)
    with pytest.raises(engine.FrozenParameterMutation):
        engine.adapt(solver, res.params, new, cfg.with_(adapt_epochs=2))


# evaluation -----------------------------------------------------------------------

def test_evaluate_perfect_model_and_bookkeeping(trained):
    solver, res, ds, cfg = trained
    t = np.linspace(0, 4.0, 17)
    u = np.zeros((2, 2, 17, 2))
    for e, env in enumerate(ds.env_ids):
        u0 = ds.u[e, :2, 0]
        u[e] = np.moveaxis(T.value(engine.predict(solver, res.params, u0, [env] * 2, t)), 0, 1)
    ev = TrajectoryDataset("pendulum", u, t, ds.envs, "eval", {"T_train": 2.0})
    rep = engine.evaluate(solver, res.params, ev, ("in", "out"))
    assert all(v == 0.0 for r in rep.values() for v in r.per_env.values())
    assert rep["in"].n_frames == 8 and rep["out"].n_frames == 8
    noisy = TrajectoryDataset("pendulum", u * 1.1, t, ds.envs, "eval", {"T_train": 2.0})
    r = engine.evaluate(solver, res.params, noisy, ("in",))["in"]
    assert abs(r.aggregate - np.mean(list(r.per_env.values()))) < 1e-12
    rows = r.rows("run", "eval")
    assert rows[-1]["env_id"] == "ALL" and len(rows) == 3


def test_evaluate_missing_context(trained):
    solver, res, ds, cfg = trained
    other = TrajectoryDataset("pendulum", ds.u[:1], ds.t, [EnvironmentSpec("pendulum", "?", {})],
                              "eval", {"T_train": 1.0})
    with pytest.raises(engine.MissingContextError):
        engine.evaluate(solver, res.params, other)


def test_checkpoint_round_trip(tmp_path, trained):
    solver, res, ds, cfg = trained
    path = tmp_path / "ck.gck"
    engine.save_checkpoint(path, solver, res.params, ds.env_ids)
    s2, p2, meta = engine.load_checkpoint(path)
    assert p2.checksum() == res.params.checksum() and s2.config == cfg
    assert meta["env_ids"] == ds.env_ids
    ParamStore({"x": np.zeros(1)}).save(path)
    with pytest.raises(engine.NotACheckpointError):
        engine.load_checkpoint(path)


# ablations ---------------------------------------------------------------------

def test_ablate_init_rows_and_determinism():
    ds = linear_dataset()
    cfg = small_config(epochs=3)
    a = ablation.ablate_init(ds, cfg)
    b = ablation.ablate_init(ds, cfg)
    assert [r["init"] for r in a] == ["kaiming", "xavier", "lora", "orthogonal"]
    strip = lambda rows: [{k: v for k, v in r.items() if k != "seconds"} for r in rows]
    assert strip(a) == strip(b)


def test_ablate_code_dim_param_counts():
    ds = linear_dataset()
    cfg = small_config(epochs=1)
    rows = ablation.ablate_code_dim(ds, cfg)
    assert [r["r"] for r in rows] == [1, 2, 4, 8, 16]
    assert all(r["n_params"] == r["closed_form"] for r in rows)
    assert ablation.is_linear_in_r(rows)
    inc = rows[1]["n_params"] - rows[0]["n_params"]
    assert inc == ablation.param_increment(cfg, 1)


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(kind="nope")
    with pytest.raises(ValueError):
        TrainConfig(adapt_mode="everything")
    with pytest.raises(ValueError):
        TrainConfig(rollout="onestep", hybrid=True)
    with pytest.raises(KeyError):
        TrainConfig.from_dict({"kind": "pendulum", "bogus": 1})
    cfg = TrainConfig(kind="gray_scott")
    assert (cfg.context_dim, cfg.batch_size, cfg.kernel) == (4, 4, 3)
    assert TrainConfig.from_dict(cfg.to_dict()) == cfg


# history conditioning --------------------------------------------------------------

@pytest.mark.slow
def test_history_conditioning_beats_unconditioned_out_of_distribution():
    from geps.datagen.dataset import generate_dataset
    grid = {"dns_points": 512, "les_points": 64, "T": 0.05, "dt": 2.5e-3}
    tr = generate_dataset("burgers", "train", 4, 4, 0, grid=grid)
    ad = generate_dataset("burgers", "adapt", 4, 1, 0, grid=grid)
    ade = generate_dataset("burgers", "adapt_eval", 4, 8, 0, grid=grid)
    out = {}
    for H in (3, 5, 10):
        for cond, mode in (("geps", "context"), ("erm", "finetune-last")):
            cfg = TrainConfig(kind="burgers", conditioning=cond, rollout="onestep", history=H,
                              epochs=300, width=16)
            solver = engine.build_solver(cfg)
            res = engine.train(solver, engine.init_params(solver, tr.env_ids), tr, cfg)
            adapted = engine.adapt(solver, res.params, ad, cfg, mode=mode)
            out[H, cond] = engine.evaluate(solver, adapted.params, ade, ("in",))["in"].aggregate
    assert all(out[H, "geps"] < out[H, "erm"] for H in (3, 5, 10)), out
