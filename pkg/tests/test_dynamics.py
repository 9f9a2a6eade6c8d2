import numpy as np
import pytest

from _fd import max_grad_error
from geps.backbones import BackboneSpec, build_backbone
from geps.diffcore import tensor as T
from geps.diffcore.rng import stream
from geps.dynamics import physics
from geps.dynamics.hybrid import (
    THETA,
    WP,
    HybridModel,
    UnresolvedPhysicsError,
    hybrid_rhs,
    init_physics_params,
    phys_name,
    physics_params_for_env,
)
from geps.dynamics.integrate import (
    IntegrationDivergedError,
    integrate_rk4,
    rk4_step,
    rollout_node,
    rollout_onestep,
)


def test_rk4_zero_rhs():
    u = np.array([1.0, -2.0])
    np.testing.assert_array_equal(rk4_step(lambda u, t: np.zeros_like(u), u, 0.0, 0.1), u)


def test_rk4_linear_taylor():
    assert rk4_step(lambda u, t: u, np.array(1.0), 0.0, 0.1) == pytest.approx(
        1 + 0.1 + 0.1 ** 2 / 2 + 0.1 ** 3 / 6 + 0.1 ** 4 / 24, abs=1e-15)


def test_rk4_divergence_reports_step():
    with pytest.raises(IntegrationDivergedError) as info, np.errstate(over="ignore"):
        integrate_rk4(lambda u, t: u ** 2, np.array(1.0), 0.0, 0.5, 10)
    assert info.value.step >= 1


def test_rk4_richardson_ratio():
    err = [abs(integrate_rk4(lambda u, t: -u, np.array(1.0), 0.0, dt, round(1 / dt))
               - np.exp(-1.0)) for dt in (0.1, 0.05)]
    assert 14 < err[0] / err[1] < 18


def test_rollout_node_trivial_cases():
    u0 = np.array([0.3, 0.4])
    traj = rollout_node(lambda u, t, c: np.zeros_like(u), u0, None, np.linspace(0, 1, 5))
    assert traj.shape == (5, 2) and np.all(traj == u0)
    np.testing.assert_array_equal(rollout_node(lambda u, t, c: u, u0, None, [0.0]), [u0])


def test_small_angle_pendulum():
    p = {"omega0_sq": 1.0, "F": 0.0, "w_f": 0.0}
    t = np.arange(0, 25.0001, 0.5)
    traj = rollout_node(lambda u, s, c: physics.rhs_pendulum_known(u, p, s),
                        np.array([0.01, 0.0]), None, t, substeps=50)
    assert np.max(np.abs(traj[:, 0] - 0.01 * np.cos(t))) < 1e-3


def test_rollout_onestep_examples():
    hist = [np.ones(3)]
    out = rollout_onestep(lambda w, c: w[-1], hist, None, 4)
    assert len(out) == 4 and all(np.all(o == 1) for o in out)
    assert rollout_onestep(lambda w, c: w[-1], hist, None, 0) == []
    out = rollout_onestep(lambda w, c: 0.5 * w[-1], [np.array(3.0)], None, 10)
    assert max(abs(o - 3.0 * 0.5 ** (k + 1)) for k, o in enumerate(out)) < 1e-10
    # window of three: next = oldest
    out = rollout_onestep(lambda w, c: w[0], [np.array(1.0), np.array(2.0), np.array(3.0)], None, 4)
    assert [float(o) for o in out] == [1.0, 2.0, 3.0, 1.0]


def test_pendulum_rhs_examples():
    p = {"omega0_sq": 1.0, "F": 0.0, "w_f": 1.0}
    np.testing.assert_array_equal(physics.rhs_pendulum_known(np.zeros(2), p, 0.0), [0, 0])
    assert physics.rhs_pendulum_known(np.array([np.pi / 2, 0]), p, 0.0)[1] == pytest.approx(-1)
    full = physics.rhs_pendulum(np.array([0.0, 2.0]), {**p, "alpha": 0.5}, 0.0)
    assert full[1] == pytest.approx(-1.0)


def test_gray_scott_fixed_point_and_constants():
    p = {"F": 0.04, "k": 0.06}
    du, dv = physics.rhs_gray_scott_full(np.ones((8, 8)), np.zeros((8, 8)), p)
    assert np.all(du == 0) and np.all(dv == 0)
    du, dv = physics.rhs_gray_scott_full(np.full((4, 4), 0.5), np.full((4, 4), 0.25), p)
    np.testing.assert_allclose(du, -0.5 * 0.0625 + 0.04 * 0.5, atol=1e-15)
    np.testing.assert_allclose(dv, 0.5 * 0.0625 - 0.1 * 0.25, atol=1e-15)


def test_laplacian_circulant_oracle():
    n, m, ds = 5, 6, 2.0
    f = stream(0, "f").standard_normal((n, m))

    def circ(k):
        C = -2 * np.eye(k)
        for i in range(k):
            C[i, (i + 1) % k] += 1
            C[i, (i - 1) % k] += 1
        return C

    dense = (np.kron(circ(n), np.eye(m)) + np.kron(np.eye(n), circ(m))) @ f.ravel() / ds ** 2
    assert np.max(np.abs(physics.laplacian_periodic(f, ds).ravel() - dense)) < 1e-12


def test_gray_scott_tensor_path_matches_kernel():
    g = stream(1, "gs")
    u, v = g.uniform(size=(6, 6)), g.uniform(size=(6, 6))
    p = {"F": 0.03, "k": 0.055}
    fast = physics.rhs_gray_scott_full(u, v, p)
    slow = physics.rhs_gray_scott_full(T.tensor(u), v, p)
    np.testing.assert_allclose(T.value(slow[0]), fast[0], atol=1e-14)
    np.testing.assert_allclose(T.value(slow[1]), fast[1], atol=1e-14)


def test_burgers_examples():
    n = 256
    dx = 2 * np.pi / n
    x = np.arange(n) * dx
    np.testing.assert_array_equal(physics.rhs_burgers_known(np.full(n, 0.7), 0.1, dx), 0.0)
    got = physics.rhs_burgers_known(np.sin(x), 0.0, dx)
    assert np.max(np.abs(got + np.sin(x) * np.cos(x))) < 2 * dx ** 2
    u = stream(2, "b").standard_normal(n)
    assert abs(np.sum(physics.rhs_burgers_known(u, 0.0, dx))) * dx < 1e-12


def test_combined_examples():
    n, L = 64, physics.COMBINED_LENGTH
    x = np.arange(n) * L / n
    k = 2 * np.pi * 3 / L
    heat = physics.rhs_combined(np.sin(k * x), {"alpha": 0, "beta": 0.4, "delta": 0, "gamma": 0}, L)
    np.testing.assert_allclose(heat, -0.4 * k ** 2 * np.sin(k * x), atol=1e-12)
    zero = physics.rhs_combined(np.full(n, 2.0), {"alpha": 1, "beta": 1, "delta": 1, "gamma": 1}, L)
    assert np.max(np.abs(zero)) < 1e-12
    u = 0.3 * np.sin(k * x)
    flux = physics.rhs_combined(u, {"alpha": 1, "beta": 0, "delta": 0, "gamma": 0}, L)
    np.testing.assert_allclose(flux, -2 * u * 0.3 * k * np.cos(k * x), atol=1e-10)


def test_combined_tensor_path_matches_fft():
    u = stream(3, "c").standard_normal((2, 32))
    p = {"alpha": np.array([0.5, 1.0]), "beta": 0.2, "delta": 0.3, "gamma": 0.1}
    a = physics.rhs_combined(u, p, 16.0)
    b = physics.rhs_combined(T.tensor(u), p, 16.0)
    assert np.max(np.abs(a - T.value(b))) < 1e-10


# hybrid --------------------------------------------------------------------

def _pend_net(r=2, zero_final=True):
    return build_backbone(BackboneSpec("mlp", width=8, depth=2, context_dim=r,
                                       zero_final=zero_final), 0)


def test_strategy1_resolution():
    h = HybridModel("pendulum", _pend_net(), strategy=1)
    params = init_physics_params("pendulum", 1, 2)
    got = physics_params_for_env(h, params, "e", np.zeros(2))
    assert [float(got[n]) for n in h.coeff_names] == list(physics.INITIAL_COEFFICIENTS["pendulum"])
    params[WP] = np.ones((2, 3))
    got = physics_params_for_env(h, params, "e", np.array([1.0, 0.5]))
    np.testing.assert_allclose([float(got[n]) for n in h.coeff_names], params[THETA] + 1.5)


def test_strategy2_resolution():
    h = HybridModel("pendulum", _pend_net())
    params = init_physics_params("pendulum", 2, 2, ["a", "b"])
    params[phys_name("b")] = np.array([0.5, 0.0, 1.0])
    got = physics_params_for_env(h, params, ["a", "b"])
    np.testing.assert_array_equal(got["omega0_sq"], [0.1, 0.5])
    with pytest.raises(UnresolvedPhysicsError):
        physics_params_for_env(h, params, "zz")


def test_hybrid_zero_net_is_pure_physics():
    h = HybridModel("pendulum", _pend_net())
    params = {**dict(h.net.params.items()), **init_physics_params("pendulum", 2, 2, ["a"])}
    u = np.array([[0.3, 0.1]])
    theta = dict(zip(h.coeff_names, params[phys_name("a")]))
    np.testing.assert_array_equal(hybrid_rhs(h, params, u, 1.5, np.zeros((1, 2)), ["a"]),
                                  physics.rhs_pendulum_known(u, theta, 1.5))


def test_hybrid_zero_physics_is_pure_network():
    from geps.backbones import model_forward
    net = build_backbone(BackboneSpec("conv1d", width=4, depth=2, kernel=3, in_channels=1,
                                      out_channels=1, context_dim=2), 1)
    h = HybridModel("combined", net)
    params = {**dict(net.params.items()), phys_name("a"): np.zeros(4)}
    u = stream(4, "u").standard_normal((1, 1, 16))
    c = np.array([[0.2, -0.3]])
    np.testing.assert_allclose(hybrid_rhs(h, params, u, 0.0, c, ["a"]),
                               model_forward(net, u, c), atol=1e-15)


def test_composed_mode_shapes():
    net = build_backbone(BackboneSpec("conv1d", width=4, depth=2, kernel=3, in_channels=2,
                                      out_channels=1, context_dim=2), 0)
    h = HybridModel("burgers", net, mode="composed", grid={"dx": 2 * np.pi / 16})
    params = {**dict(net.params.items()), phys_name("a"): np.array([0.01])}
    out = hybrid_rhs(h, params, np.ones((1, 1, 16)), 0.0, np.zeros((1, 2)), ["a"])
    assert out.shape == (1, 1, 16)
    with pytest.raises(ValueError):
        HybridModel("burgers", build_backbone(BackboneSpec("conv1d", width=4, depth=2, in_channels=1,
                                                           out_channels=1), 0), mode="composed")


def test_burgers_nu_gradient_through_rollout():
    n = 16
    x = np.arange(n) * 2 * np.pi / n
    u0 = (np.sin(x) + 0.5 * np.cos(2 * x))[None, None]
    target = 0.9 * u0
    h = HybridModel("burgers", None, grid={"dx": 2 * np.pi / n})

    def loss(p):
        f = lambda u, t, c: hybrid_rhs(h, p, u, t, None, ["e"])
        traj = rollout_node(f, u0, None, [0.0, 0.05], substeps=5)
        return T.mean((traj[-1] - target) ** 2)

    assert max_grad_error(loss, {phys_name("e"): np.array([0.05])}, h=1e-6) < 1e-4
