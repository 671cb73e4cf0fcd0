import math

import numpy as np
import pytest

from models.model_factory import build_lenet5, build_model, build_vgg_small, parse_layout
from src.config.run_config import ModelConfig
from src.core.gradcheck import finite_diff_grad, max_relative_error
from src.core.tensor import Tape
from src.nn import functional as F
from src.nn.layers import BatchNormState, Sigmoid
from src.nn.weights import load_weights, save_weights
from src.noise.spec import NoiseSpec
from src.utils.errors import ConfigError, ShapeError, UsageError, WeightsError


def _leaves(tape, *arrays):
    return [tape.leaf(np.asarray(a, dtype=np.float64)) for a in arrays]


def test_conv_identity_kernel(rng):
    x = rng.normal(size=(2, 1, 5, 5))
    tape = Tape()
    xn, w, b = _leaves(tape, x, np.ones((1, 1, 1, 1)), np.zeros(1))
    np.testing.assert_allclose(F.conv2d_forward(tape, xn, w, b).value, x)


def test_conv_all_ones():
    tape = Tape()
    xn, w, b = _leaves(tape, np.ones((1, 1, 3, 3)), np.ones((1, 1, 3, 3)), np.zeros(1))
    out = F.conv2d_forward(tape, xn, w, b)
    assert out.shape == (1, 1, 1, 1)
    assert out.value.item() == 9.0


def test_conv_output_shape(rng):
    tape = Tape()
    xn, w, b = _leaves(tape, rng.normal(size=(2, 3, 32, 32)), rng.normal(size=(16, 3, 3, 3)), np.zeros(16))
    assert F.conv2d_forward(tape, xn, w, b, pad=1).shape == (2, 16, 32, 32)


def test_conv_channel_mismatch():
    tape = Tape()
    xn, w, b = _leaves(tape, np.ones((1, 2, 4, 4)), np.ones((1, 3, 3, 3)), np.zeros(1))
    with pytest.raises(ShapeError):
        F.conv2d_forward(tape, xn, w, b)


def test_maxpool_single_window():
    tape = Tape()
    (x,) = _leaves(tape, np.array([[[[1.0, 2.0], [3.0, 4.0]]]]))
    assert F.maxpool2_forward(tape, x).value.item() == 4.0


def test_maxpool_ties_route_to_first_element():
    tape = Tape()
    (x,) = _leaves(tape, np.full((1, 1, 4, 4), 7.0))
    out = F.maxpool2_forward(tape, x)
    assert out.shape == (1, 1, 2, 2)
    np.testing.assert_array_equal(out.value, np.full((1, 1, 2, 2), 7.0))
    grads = tape.backward(F.ops.sum(tape, out))
    expected = np.zeros((4, 4))
    expected[::2, ::2] = 1.0
    np.testing.assert_array_equal(grads[x][0, 0], expected)


def test_maxpool_odd_extent():
    tape = Tape()
    (x,) = _leaves(tape, np.ones((1, 1, 3, 4)))
    with pytest.raises(ShapeError):
        F.maxpool2_forward(tape, x)


def _bn_state(C):
    return BatchNormState(C, momentum=0.1, eps=1e-5, dtype=np.float64)


def test_batchnorm_normalized_input_is_unchanged():
    x = np.array([[-1.0], [1.0], [-1.0], [1.0]])
    tape = Tape()
    xn, g, b = _leaves(tape, x, np.ones(1), np.zeros(1))
    out = F.batchnorm_forward(tape, xn, g, b, _bn_state(1), train=True)
    np.testing.assert_allclose(out.value, x, atol=1e-5)


def test_batchnorm_beta_shifts_mean(rng):
    tape = Tape()
    xn, g, b = _leaves(tape, rng.normal(2.0, 3.0, size=(8, 3, 4, 4)), np.ones(3), np.full(3, 5.0))
    out = F.batchnorm_forward(tape, xn, g, b, _bn_state(3), train=True)
    np.testing.assert_allclose(out.value.mean(axis=(0, 2, 3)), np.full(3, 5.0), atol=1e-10)


def test_batchnorm_training_output_is_standardized(rng):
    tape = Tape()
    xn, g, b = _leaves(tape, rng.normal(-4.0, 3.0, size=(16, 3, 5, 5)), np.ones(3), np.zeros(3))
    out = F.batchnorm_forward(tape, xn, g, b, _bn_state(3), train=True).value
    assert np.all(np.abs(out.mean(axis=(0, 2, 3))) < 1e-5)
    assert np.all(np.abs(out.var(axis=(0, 2, 3)) - 1.0) < 1e-4)


def test_batchnorm_eval_uses_running_stats(rng):
    x = rng.normal(size=(4, 2))
    tape = Tape()
    xn, g, b = _leaves(tape, x, np.full(2, 2.0), np.zeros(2))
    state = _bn_state(2)
    out = F.batchnorm_forward(tape, xn, g, b, state, train=False)
    np.testing.assert_allclose(out.value, 2.0 * x / math.sqrt(1.0 + 1e-5))


def test_batchnorm_running_stats_update_and_freeze(rng):
    x = rng.normal(3.0, 2.0, size=(16, 2))
    state = _bn_state(2)
    tape = Tape()
    xn, g, b = _leaves(tape, x, np.ones(2), np.zeros(2))
    F.batchnorm_forward(tape, xn, g, b, state, train=True, update_stats=False)
    np.testing.assert_array_equal(state.running_mean, np.zeros(2))
    F.batchnorm_forward(tape, xn, g, b, state, train=True)
    np.testing.assert_allclose(state.running_mean, 0.1 * x.mean(axis=0))
    np.testing.assert_allclose(state.running_var, 0.9 + 0.1 * x.var(axis=0, ddof=1))


def test_batchnorm_batch_of_one_in_training():
    tape = Tape()
    xn, g, b = _leaves(tape, np.ones((1, 2)), np.ones(2), np.zeros(2))
    with pytest.raises(UsageError):
        F.batchnorm_forward(tape, xn, g, b, _bn_state(2), train=True)


def test_cross_entropy_uniform_logits():
    tape = Tape()
    (z,) = _leaves(tape, np.zeros((3, 10)))
    loss = F.softmax_cross_entropy(tape, z, np.array([0, 4, 9]))
    assert loss.value == pytest.approx(math.log(10), abs=1e-12)


def test_cross_entropy_hand_value():
    tape = Tape()
    (z,) = _leaves(tape, np.array([[1.0, 2.0]]))
    loss = F.softmax_cross_entropy(tape, z, np.array([1]))
    assert loss.value == pytest.approx(0.31326, abs=1e-5)


def test_cross_entropy_confident_limit():
    tape = Tape()
    (z,) = _leaves(tape, np.array([[0.0, 800.0]]))
    assert F.softmax_cross_entropy(tape, z, np.array([1])).value == pytest.approx(0.0, abs=1e-12)


def test_cross_entropy_label_out_of_range():
    tape = Tape()
    (z,) = _leaves(tape, np.zeros((2, 3)))
    with pytest.raises(UsageError):
        F.softmax_cross_entropy(tape, z, np.array([0, 3]))


def test_dropout_identity_cases(rng):
    tape = Tape()
    (x,) = _leaves(tape, rng.normal(size=(4, 4)))
    assert F.dropout_forward(tape, x, 0.0, train=True, rng=rng) is x
    assert F.dropout_forward(tape, x, 0.7, train=False) is x


def test_dropout_drop_fraction(rng):
    tape = Tape()
    (x,) = _leaves(tape, np.ones((200, 100)))
    out = F.dropout_forward(tape, x, 0.5, train=True, rng=rng)
    assert abs(np.mean(out.value == 0) - 0.5) < 0.02
    np.testing.assert_array_equal(np.unique(out.value), [0.0, 2.0])


# --- gradient checks --------------------------------------------------------
def _gradcheck(build, arrays):
    tape = Tape()
    nodes = [tape.leaf(a) for a in arrays]
    grads = tape.backward(build(tape, nodes))
    for k, a in enumerate(arrays):
        def f(v, k=k):
            t = Tape()
            return build(t, [t.leaf(v if i == k else arrays[i]) for i in range(len(arrays))]).value
        assert max_relative_error(grads[nodes[k]], finite_diff_grad(f, a)) < 1e-4, f"input {k}"


def _weighted_sum(tape, out, seed=3):
    w = np.random.default_rng(seed).normal(size=out.shape)
    return F.ops.sum(tape, F.ops.mul(tape, out, tape.leaf(w)))


def test_conv_gradcheck(rng):
    arrays = [rng.normal(size=(2, 2, 4, 4)), rng.normal(size=(2, 2, 3, 3)), rng.normal(size=2)]
    _gradcheck(lambda t, n: _weighted_sum(t, F.conv2d_forward(t, n[0], n[1], n[2], stride=1, pad=1)), arrays)


def test_strided_conv_gradcheck(rng):
    arrays = [rng.normal(size=(1, 1, 5, 5)), rng.normal(size=(2, 1, 3, 3)), rng.normal(size=2)]
    _gradcheck(lambda t, n: _weighted_sum(t, F.conv2d_forward(t, n[0], n[1], n[2], stride=2)), arrays)


def test_maxpool_gradcheck(rng):
    x = rng.permutation(32).reshape(2, 1, 4, 4).astype(np.float64)
    _gradcheck(lambda t, n: _weighted_sum(t, F.maxpool2_forward(t, n[0])), [x])


def test_sigmoid_layer_gradcheck(rng):
    layer = Sigmoid()
    _gradcheck(lambda t, n: _weighted_sum(t, layer.forward(t, n[0], None)), [rng.normal(size=(2, 3, 4))])


def test_batchnorm_gradcheck(rng):
    arrays = [rng.normal(size=(4, 2, 2, 2)), rng.normal(size=2), rng.normal(size=2)]

    def build(t, n):
        return _weighted_sum(t, F.batchnorm_forward(t, n[0], n[1], n[2], _bn_state(2), train=True))

    _gradcheck(build, arrays)


def test_linear_and_cross_entropy_gradcheck(rng):
    arrays = [rng.normal(size=(4, 6)), rng.normal(size=(3, 6)), rng.normal(size=3)]
    labels = np.array([0, 2, 1, 2])
    _gradcheck(lambda t, n: F.softmax_cross_entropy(t, F.linear_forward(t, n[0], n[1], n[2]), labels), arrays)


def test_lenet_end_to_end_gradcheck():
    model = build_lenet5(seed=1, dtype=np.float64)
    rng = np.random.default_rng(5)
    x = rng.normal(size=(1, 1, 28, 28))
    y = np.array([3])
    tape = Tape()
    res = model.forward(tape, x, train=True)
    grads = tape.backward(F.softmax_cross_entropy(tape, res.logits, y))
    # a few parameter elements, checked by perturbing the owned arrays
    for key in ("3.weight", "7.bias", "11.weight"):
        param = model.parameters()[key]
        flat = param.reshape(-1)
        analytic = grads[res.params[key]].reshape(-1)[:8]
        numeric = np.zeros(8)
        for i in range(8):
            orig = flat[i]
            vals = []
            for step in (1e-5, -1e-5):
                flat[i] = orig + step
                t = Tape()
                vals.append(F.softmax_cross_entropy(t, model.forward(t, x, train=True).logits, y).value)
            flat[i] = orig
            numeric[i] = (vals[0] - vals[1]) / 2e-5
        assert max_relative_error(analytic, numeric, floor=1e-6) < 1e-4, key


# --- models -----------------------------------------------------------------
def test_lenet_zero_image_gives_finite_logits(lenet):
    logits = lenet.predict(np.zeros((1, 1, 28, 28)))
    assert logits.shape == (1, 10)
    assert np.all(np.isfinite(logits))


def test_lenet_hooks():
    assert len(build_lenet5().hooks) == 2
    with_input = build_lenet5(NoiseSpec(kind="anl", epsilon=0.03, input_hook=True))
    assert [h.label for h in with_input.hooks] == ["input", "conv1", "conv2"]
    assert with_input.first_conv_hook() == 1


def test_lenet_eval_forward_ignores_noise(rng):
    x = rng.normal(size=(2, 1, 28, 28))
    plain = build_lenet5(NoiseSpec(), seed=0, dtype=np.float64)
    noisy = build_lenet5(NoiseSpec(kind="anl", epsilon=0.5), seed=0, dtype=np.float64)
    called = []

    def hook_fn(hook_id, tape, h):
        called.append(hook_id)
        return F.ops.add_const(tape, h, np.ones(h.shape))

    tape = Tape()
    out = noisy.forward(tape, x, train=False, hook_fn=hook_fn).logits.value
    np.testing.assert_array_equal(out, plain.predict(x))
    assert called == []


def test_lenet_accepts_32x32():
    model = build_lenet5(input_shape=(3, 32, 32))
    assert model.predict(np.zeros((2, 3, 32, 32))).shape == (2, 10)


def test_lenet_rejects_wrong_input(lenet):
    with pytest.raises(ShapeError):
        lenet.predict(np.zeros((1, 1, 32, 32)))


def test_vgg_small_shape_and_hooks(rng):
    model = build_vgg_small(layout="8,M,8", fc_width=16, seed=0)
    assert model.predict(rng.normal(size=(3, 3, 32, 32))).shape == (3, 10)
    bn_positions = [i for i, layer in enumerate(model.layers) if layer.kind == "BatchNorm"]
    assert [h.position for h in model.hooks] == [p + 1 for p in bn_positions]


def test_vgg_parameter_count_is_deterministic():
    a = build_vgg_small(layout="8,M,16", fc_width=32, seed=0)
    b = build_vgg_small(layout="8,M,16", fc_width=32, seed=7)
    expected = (3 * 8 * 9 + 8) + 16 + (8 * 16 * 9 + 16) + 32 + (16 * 16 * 16 * 32 + 32) + (32 * 10 + 10)
    assert a.num_parameters() == b.num_parameters() == expected


def test_parse_layout():
    assert parse_layout("16, 16,M,32") == [16, 16, "M", 32]
    with pytest.raises(ConfigError):
        parse_layout("16,x")


def test_build_model_from_config():
    model = build_model(ModelConfig(arch="lenet5", fc_dropout=0.5), NoiseSpec(), (1, 28, 28))
    assert any(layer.kind == "Dropout" for layer in model.layers)
    with pytest.raises(ConfigError):
        build_model(ModelConfig(arch="resnet"), NoiseSpec(), (1, 28, 28))


def test_sigmoid_activation_variant():
    model = build_model(ModelConfig(arch="lenet5", activation="sigmoid", dtype="float64"), NoiseSpec(), (1, 28, 28))
    kinds = [layer.kind for layer in model.layers]
    assert kinds.count("Sigmoid") == 4 and "ReLU" not in kinds
    assert [h.position for h in model.hooks] == [1, 4]
    assert np.all(np.isfinite(model.predict(np.zeros((2, 1, 28, 28)))))
    with pytest.raises(ConfigError):
        build_model(ModelConfig(activation="tanh"), NoiseSpec(), (1, 28, 28))


def test_weights_round_trip(tmp_path, rng):
    model = build_vgg_small(layout="8,M,8", fc_width=16, seed=0)
    model.layers[1].state.running_mean[...] = rng.normal(size=8)
    path = tmp_path / "weights.bin"
    save_weights(model, str(path))
    other = build_vgg_small(layout="8,M,8", fc_width=16, seed=3)
    load_weights(other, str(path))
    x = rng.normal(size=(2, 3, 32, 32))
    np.testing.assert_array_equal(model.predict(x), other.predict(x))


def test_weights_bad_magic(tmp_path, lenet):
    path = tmp_path / "weights.bin"
    save_weights(lenet, str(path))
    data = bytearray(path.read_bytes())
    data[:4] = b"XXXX"
    path.write_bytes(bytes(data))
    with pytest.raises(WeightsError, match="magic"):
        load_weights(lenet, str(path))


def test_weights_architecture_mismatch(tmp_path, lenet):
    path = tmp_path / "weights.bin"
    save_weights(lenet, str(path))
    with pytest.raises(WeightsError):
        load_weights(build_vgg_small(layout="8", fc_width=16), str(path))


def test_weights_truncated(tmp_path, lenet):
    path = tmp_path / "weights.bin"
    save_weights(lenet, str(path))
    path.write_bytes(path.read_bytes()[:-10])
    with pytest.raises(WeightsError, match="truncated"):
        load_weights(lenet, str(path))
