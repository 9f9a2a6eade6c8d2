import numpy as np
import pytest

from _fd import max_grad_error
from geps.backbones import BackboneSpec, build_backbone, model_forward, param_count, swish
from geps.diffcore import tensor as T
from geps.diffcore.params import ParamStore
from geps.diffcore.rng import stream


def test_swish_values():
    assert swish(np.array(0.0)) == 0.0
    assert abs(swish(np.array(20.0)) - 20.0) < 1e-7
    assert swish(np.array(1.0)) == pytest.approx(0.7310585786300049, abs=1e-12)


def test_mlp_param_count():
    spec = BackboneSpec("mlp", depth=4, width=64, in_channels=2, out_channels=2, context_dim=16)
    model = build_backbone(spec, 0)
    expect = sum(di * do + di * 16 + 16 * do + do + 16 * do for di, do in spec.layer_dims())
    assert param_count(spec) == expect == model.params.num_params()


def test_conv2d_flattening():
    spec = BackboneSpec("conv2d", kernel=3, in_channels=2, out_channels=2)
    assert spec.layer_dims()[0][0] == 18
    assert build_backbone(spec, 1).params["net/0/W"].shape == (18, 64)


def test_determinism():
    spec = BackboneSpec("conv1d", kernel=5, width=8)
    assert build_backbone(spec, 7).params.checksum() == build_backbone(spec, 7).params.checksum()
    assert build_backbone(spec, 7).params.checksum() != build_backbone(spec, 8).params.checksum()


@pytest.mark.parametrize("bad", [dict(depth=1), dict(kind="rnn"), dict(kind="conv1d", kernel=4),
                                 dict(width=0), dict(context_dim=0)])
def test_invalid_spec(bad):
    with pytest.raises(ValueError):
        BackboneSpec(**bad)


def test_zero_final_layer_outputs_zero():
    spec = BackboneSpec("mlp", width=8, zero_final=True)
    model = build_backbone(spec, 0)
    u = stream(1, "u").standard_normal((5, 2))
    assert np.all(model_forward(model, u, None) == 0.0)


@pytest.mark.parametrize("kind,shape", [("mlp", (2,)), ("conv1d", (2, 16)), ("conv2d", (2, 6, 5))])
def test_shape_preserved(kind, shape):
    model = build_backbone(BackboneSpec(kind, width=6, context_dim=3), 0)
    u = stream(2, "u").standard_normal(shape)
    assert model_forward(model, u, np.ones(3)).shape == shape
    ub = stream(3, "u").standard_normal((4,) + shape)
    assert model_forward(model, ub, stream(4, "c").standard_normal((4, 3))).shape == ub.shape
    with pytest.raises(ValueError):
        model_forward(model, np.zeros((3,) + shape[1:]), None)


@pytest.mark.parametrize("kind", ["mlp", "conv1d", "conv2d"])
def test_zero_context_matches_unconditioned(kind):
    model = build_backbone(BackboneSpec(kind, width=6, context_dim=3, kernel=3), 5)
    shape = {"mlp": (3, 2), "conv1d": (3, 2, 8), "conv2d": (3, 2, 4, 4)}[kind]
    u = stream(6, "u").standard_normal(shape)
    assert np.max(np.abs(model_forward(model, u, np.zeros(3)) - model_forward(model, u, None))) < 1e-14


@pytest.mark.parametrize("kind,shift", [("conv1d", (3,)), ("conv2d", (2, -1))])
def test_translation_equivariance(kind, shift):
    model = build_backbone(BackboneSpec(kind, width=6, context_dim=2, kernel=3), 3)
    space = (12,) if kind == "conv1d" else (6, 7)
    u = stream(7, "u").standard_normal((2,) + space)
    c = np.array([0.4, -0.9])
    axes = tuple(range(1, 1 + len(space)))
    a = np.roll(model_forward(model, u, c), shift, axes)
    b = model_forward(model, np.roll(u, shift, axes), c)
    assert np.max(np.abs(a - b)) < 1e-10


@pytest.mark.parametrize("kind", ["mlp", "conv1d"])
def test_context_gradient(kind):
    model = build_backbone(BackboneSpec(kind, width=5, depth=3, context_dim=2, kernel=3), 2)
    u = stream(8, "u").standard_normal((2, 2) if kind == "mlp" else (2, 2, 6))
    f = lambda p: T.mean(model_forward(model, u, p["c"]))
    assert max_grad_error(f, {"c": np.array([0.2, -0.5])}) < 1e-5


def test_weight_gradient_through_model():
    model = build_backbone(BackboneSpec("conv1d", width=3, depth=2, context_dim=2, kernel=3), 2)
    u = stream(9, "u").standard_normal((1, 2, 5))
    frozen = [n for n in model.params if not n.startswith("net/0/")]
    store = {**dict(model.params.items()), "c": np.array([0.3, 0.1])}
    f = lambda p: T.mean(model_forward(model, u, p["c"], p) ** 2)
    assert max_grad_error(f, store, frozen=frozen) < 1e-5
