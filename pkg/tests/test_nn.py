import numpy as np
import pytest

from gradcases import LAYER_CASES, network_case
from vocalprint.errors import CorruptArchiveError, IncompatibleWeightsError, ShapeError, StateError
from vocalprint.models.architectures import build_lcnn, build_tdnn
from vocalprint.nn import AdamW, LayerSpec, Network, Tensor, build_layer, load_weights, parameter, save_weights
from vocalprint.nn import functional as F
from vocalprint.nn.archive import decode_archive, encode_archive
from vocalprint.nn.gradcheck import check_gradients


def t(x, grad=False):
    return Tensor(np.asarray(x, dtype=np.float64), requires_grad=grad)


# -- tensor basics


def test_broadcast_add_accumulates_into_the_small_operand():
    a, b = t(np.ones((3, 4)), True), t(np.ones(4), True)
    (a + b).sum().backward()
    assert np.array_equal(b.grad, np.full(4, 3.0))
    assert np.array_equal(a.grad, np.ones((3, 4)))


def test_shared_subexpression_gradients_add():
    x = t([2.0], True)
    y = x * x + x
    y.sum().backward()
    assert x.grad[0] == pytest.approx(5.0)


def test_dense_sum_loss_gradient_is_x_pattern():
    x = t([[1.0, 2.0, 3.0]])
    w = parameter(np.zeros((2, 3)))
    F.dense(x, w).sum().backward()
    assert np.array_equal(w.grad, [[1, 2, 3], [1, 2, 3]])


def test_relu_gates_dead_units():
    net = Network([("fc", LayerSpec("dense", {"in_features": 3, "out_features": 4})), ("act", LayerSpec("relu")),
                   ("out", LayerSpec("dense", {"in_features": 4, "out_features": 1}))], seed=0, dtype=np.float64)
    net.forward(np.zeros((2, 3)))
    grads = net.backward(np.ones((2, 1)))
    assert not np.any(grads["fc.weight"])


# -- layer semantics


def test_mfm_example():
    out = F.max_feature_map(t([[[1.0, 2.0], [5.0, 0.0]]]))
    assert np.array_equal(out.data, [[[5.0, 2.0]]])


def test_conv1d_output_length():
    layer = build_layer(LayerSpec("conv1d", {"in_channels": 1, "out_channels": 1, "kernel": 3, "dilation": 2}),
                        np.random.default_rng(0), np.float64)
    assert layer(t(np.ones((1, 1, 10)))).shape == (1, 1, 6)


def test_conv1d_matches_direct_sum(rng):
    x, w, b = rng.standard_normal((2, 3, 12)), rng.standard_normal((4, 3, 3)), rng.standard_normal(4)
    out = F.conv1d(t(x), t(w), t(b), stride=1, dilation=2, padding=2).data
    xp = np.pad(x, ((0, 0), (0, 0), (2, 2)))
    ref = np.zeros((2, 4, 12))
    for n in range(2):
        for o in range(4):
            for i in range(12):
                ref[n, o, i] = b[o] + sum(w[o, c, k] * xp[n, c, i + 2 * k] for c in range(3) for k in range(3))
    assert np.allclose(out, ref, atol=1e-12)


def test_conv2d_matches_direct_sum(rng):
    x, w = rng.standard_normal((1, 2, 5, 6)), rng.standard_normal((3, 2, 3, 3))
    out = F.conv2d(t(x), t(w), None, stride=(2, 1), padding=(1, 1)).data
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    ref = np.zeros(out.shape)
    for o in range(3):
        for i in range(out.shape[2]):
            for j in range(out.shape[3]):
                ref[0, o, i, j] = np.sum(w[o] * xp[0, :, 2 * i : 2 * i + 3, j : j + 3])
    assert np.allclose(out, ref, atol=1e-12)


def test_uniform_attention_gives_mean_and_population_std(rng):
    x = rng.standard_normal((2, 3, 7))
    w1, b1 = np.zeros((4, 3, 1)), np.zeros(4)
    w2 = np.zeros((3, 4, 1))
    out = F.attentive_stats_pool(t(x), t(w1), t(b1), t(w2)).data
    assert np.allclose(out[:, :3], x.mean(axis=2))
    assert np.allclose(out[:, 3:], x.std(axis=2), atol=1e-7)


def test_softmax_sums_to_one_and_is_shift_invariant(rng):
    x = rng.standard_normal((4, 6))
    a = F.softmax(t(x)).data
    b = F.softmax(t(x + 37.5)).data
    assert np.allclose(a.sum(axis=-1), 1, atol=1e-6)
    assert np.max(np.abs(a - b)) < 1e-6


def test_batchnorm_recorded_stats_normalize_the_batch(rng):
    layer = build_layer(LayerSpec("batchnorm", {"channels": 3}), rng, np.float64)
    x = rng.standard_normal((8, 3, 5)) * 3 + 2
    layer.record_stats(x)
    layer.training = False
    y = layer(t(x)).data
    assert np.allclose(y.mean(axis=(0, 2)), 0, atol=1e-5)
    assert np.allclose(y.var(axis=(0, 2)), 1, atol=1e-5)


def test_shape_errors_name_expected_and_actual():
    layer = build_layer(LayerSpec("dense", {"in_features": 4, "out_features": 2}), np.random.default_rng(0))
    with pytest.raises(ShapeError, match=r"\[N, 4\]"):
        layer(t(np.ones((2, 5))))


def test_forward_is_deterministic(rng):
    net = build_tdnn(4)
    x = rng.standard_normal((2, 80, 50)).astype(np.float32)
    net.eval()
    assert np.array_equal(net.forward(x).data, net.forward(x).data)


def test_backward_before_forward():
    with pytest.raises(StateError):
        build_lcnn().backward(np.ones((1, 1)))


@pytest.mark.parametrize("kind", sorted(LAYER_CASES))
def test_layer_gradients(kind):
    params, shape = LAYER_CASES[kind]
    fwd, leaves = network_case([("l", LayerSpec(kind, params))], shape, seed=0)
    errs = check_gradients(fwd, leaves, rng=np.random.default_rng(1))
    assert max(errs.values()) < 1e-4, errs


def test_time_only_mean_pool_keeps_frequency_rows(rng):
    layer = build_layer(LayerSpec("mean_pool", {"axes": (2,)}), rng)
    x = rng.standard_normal((2, 3, 7, 4))
    out = layer(t(x)).data
    assert out.shape == (2, 12)
    assert np.allclose(out.reshape(2, 3, 4), x.mean(axis=2))


def test_time_only_mean_pool_gradients():
    fwd, leaves = network_case([("l", LayerSpec("mean_pool", {"axes": (2,)}))], (2, 3, 5, 4), seed=0)
    errs = check_gradients(fwd, leaves, rng=np.random.default_rng(1))
    assert max(errs.values()) < 1e-4, errs


def test_unknown_layer_kind():
    with pytest.raises(ValueError):
        LayerSpec("lstm")


# -- optimizer


def test_adamw_step_descends_a_quadratic():
    p = parameter(np.array([3.0, -2.0]))
    opt = AdamW({"p": p}, lr=1e-2, weight_decay=0.0)
    before = float(np.sum(p.data**2))
    (p * p).sum().backward()
    opt.step()
    assert float(np.sum(p.data**2)) < before


def test_adamw_decay_is_decoupled():
    p = parameter(np.array([1.0]))
    opt = AdamW({"p": p}, lr=0.1, weight_decay=0.5)
    p.grad = np.zeros(1)
    opt.step()
    assert p.data[0] == pytest.approx(1.0 - 0.1 * 0.5)


# -- archives


def test_archive_roundtrip_bit_exact(tmp_path):
    net = build_lcnn(seed=3)
    save_weights(net, tmp_path / "a.vpw")
    other = load_weights(build_lcnn(seed=99), tmp_path / "a.vpw")
    save_weights(other, tmp_path / "b.vpw")
    assert (tmp_path / "a.vpw").read_bytes() == (tmp_path / "b.vpw").read_bytes()
    for k, v in net.state_dict().items():
        assert np.array_equal(v, other.state_dict()[k])


def test_truncated_and_flipped_archives_are_rejected(tmp_path):
    raw = encode_archive(build_lcnn().state_dict())
    with pytest.raises(CorruptArchiveError):
        decode_archive(raw[:-10])
    flipped = bytearray(raw)
    flipped[len(raw) // 2] ^= 0x01
    with pytest.raises(CorruptArchiveError):
        decode_archive(bytes(flipped))
    with pytest.raises(CorruptArchiveError):
        decode_archive(b"XXXX" + raw[4:])


def test_lcnn_weights_do_not_fit_the_embedder(tmp_path):
    save_weights(build_lcnn(), tmp_path / "d.vpw")
    with pytest.raises(IncompatibleWeightsError, match="first mismatched layer"):
        load_weights(build_tdnn(8), tmp_path / "d.vpw")
