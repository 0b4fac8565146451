import numpy as np
import pytest

from h2t.core.errors import ValidationError
from h2t.core.fusion import SelectionStrategy, fuse_feature_maps, select_channels
from h2t.core.gradcheck import finite_diff_check
from h2t.core.model import BackboneKind, BackboneSpec, ModelState, backbone_forward, classifier_forward
from h2t.core.tensor import Tensor

EPSILON = 1e-3
MARGIN = 0.02
TOLERANCE = 1e-3


def _relu_margin(z: np.ndarray) -> float:
    return float(np.abs(z).min())


def _pool_margin(h: np.ndarray) -> float:
    b, c, height, width = h.shape
    oh, ow = height // 2, width // 2
    blocks = h[:, :, :2 * oh, :2 * ow].reshape(b, c, oh, 2, ow, 2).transpose(0, 1, 2, 4, 3, 5)
    ranked = np.sort(blocks.reshape(b, c, oh, ow, 4), axis=-1)
    live = ranked[..., -1] > 0
    if not live.any():
        return np.inf
    return float((ranked[..., -1] - ranked[..., -2])[live].min())


def kink_margin(model: ModelState, x: np.ndarray) -> float:
    """Smallest distance of any ReLU input or max-pool winner from a switch"""
    spec = model.spec
    margins = [np.inf]
    with Tensor.no_grad():
        if spec.kind is BackboneKind.MLP:
            h = x.astype(np.float64)
            for i in range(len(spec.widths)):
                z = h @ model.backbone[f"fc{i}.weight"].value + model.backbone[f"fc{i}.bias"].value
                margins.append(_relu_margin(z))
                h = np.maximum(z, 0)
        else:
            h = Tensor(x.reshape(len(x), *spec.input_shape))
            pad = 1 if spec.padding == "same" else 0
            for i in range(len(spec.widths)):
                z = h.conv2d(model.backbone[f"conv{i}.weight"].tensor,
                             model.backbone[f"conv{i}.bias"].tensor, pad).data
                margins.append(_relu_margin(z))
                h = Tensor(np.maximum(z, 0))
                if spec.pool:
                    margins.append(_pool_margin(h.data))
                    h = h.max_pool2x2()
    return min(margins)


def kink_free_case(spec: BackboneSpec, num_classes: int, batch: int, inputs: int = 1,
                   tries: int = 1000, start: int = 0):
    """First seed from ``start`` whose model and inputs stay clear of every kink"""
    for seed in range(start, start + tries):
        model = ModelState.initialize(spec, num_classes, seed)
        rng = np.random.default_rng(seed)
        xs = [rng.standard_normal((batch, spec.in_dims)).astype(np.float32) for _ in range(inputs)]
        if all(kink_margin(model, x) > MARGIN for x in xs):
            return model, xs, rng.integers(0, num_classes, size=batch)
    pytest.fail("no kink-free configuration found")


def random_case(case: int):
    """Seeded backbone spec cycling through MLP, one-layer and two-layer TinyConv"""
    rng = np.random.default_rng(case)
    num_classes = int(rng.integers(2, 5))
    layers = case % 3
    if layers == 0:
        widths = tuple(int(w) for w in rng.integers(2, 7, size=int(rng.integers(1, 3))))
        return BackboneSpec(BackboneKind.MLP, in_dims=int(rng.integers(3, 7)), widths=widths), num_classes, 3
    channels = int(rng.integers(1, 3))
    widths = tuple(int(w) for w in rng.integers(1, 4, size=layers))
    # a second 3x3 valid conv does not fit the 2x2 maps left by the first
    padding = "same" if layers == 2 else str(rng.choice(["same", "valid"]))
    spec = BackboneSpec(BackboneKind.TINY_CONV, in_dims=channels * 16, widths=widths,
                        input_shape=(channels, 4, 4), padding=padding, pool=bool(rng.integers(0, 2)))
    return spec, num_classes, int(rng.integers(1, 3))


@pytest.mark.parametrize("case", range(100), ids=lambda case: f"case{case}")
def test_gradients_match_finite_differences(case):
    spec, num_classes, batch = random_case(case)
    model, (x,), y = kink_free_case(spec, num_classes, batch, start=1000 * case)
    assert finite_diff_check(model, x, y, epsilon=EPSILON) < TOLERANCE


def test_cases_cover_both_conv_depths():
    depths = {(random_case(case)[0].kind, len(random_case(case)[0].widths)) for case in range(100)}
    assert (BackboneKind.TINY_CONV, 1) in depths
    assert (BackboneKind.TINY_CONV, 2) in depths


def test_linear_model_gradients_match_finite_differences(rng):
    spec = BackboneSpec(BackboneKind.MLP, in_dims=5, widths=())
    model = ModelState.initialize(spec, num_classes=4, seed=3)
    x = rng.standard_normal((6, 5)).astype(np.float32)
    y = rng.integers(0, 4, size=6)
    assert finite_diff_check(model, x, y, epsilon=EPSILON) < TOLERANCE


@pytest.mark.parametrize("p", [0.0, 0.5, 1.0])
def test_fused_forward_gradients_match_finite_differences(p):
    spec = BackboneSpec(BackboneKind.MLP, in_dims=4, widths=(5, 4))
    model, (x_bal, x_inst), y = kink_free_case(spec, num_classes=3, batch=3, inputs=2)
    mask = select_channels(spec.feature_dim, p, SelectionStrategy.FIRST)

    def fused_loss(m):
        maps, _ = backbone_forward(m, x_bal)
        donor, _ = backbone_forward(m, x_inst)
        pooled = fuse_feature_maps(maps, donor, mask).spatial_mean()
        return classifier_forward(m, pooled).cross_entropy(y)

    assert finite_diff_check(model, loss_fn=fused_loss, epsilon=EPSILON) < TOLERANCE


def test_gradient_check_leaves_model_unchanged(mlp_model, rng):
    before = mlp_model.copy()
    x = rng.standard_normal((4, 4)).astype(np.float32)
    finite_diff_check(mlp_model, x, np.array([0, 1, 2, 3]))
    for name, param in before.parameters():
        np.testing.assert_array_equal(param.value, dict(mlp_model.parameters())[name].value)


def test_gradient_check_needs_inputs_or_loss(mlp_model):
    with pytest.raises(ValidationError):
        finite_diff_check(mlp_model)
