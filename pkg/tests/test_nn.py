import numpy as np
import pytest

from igcrn import nn
from igcrn import tensor as T
from igcrn.nn import BatchNormState, ConfigError, ParameterStore
from igcrn.tensor import ShapeError, Tensor

torch = pytest.importorskip("torch")


def _t(a):
    return torch.from_numpy(np.ascontiguousarray(a))


@pytest.mark.parametrize("stride,padding", [((1, 1), (2, 0)), ((2, 1), (2, 0)), ((2, 2), (1, 1))])
def test_conv2d_matches_reference(stride, padding):
    rng = np.random.default_rng(0)
    x = rng.standard_normal((2, 3, 11, 6))
    w = rng.standard_normal((4, 3, 5, 2))
    b = rng.standard_normal(4)
    got = nn.conv2d(Tensor(x), Tensor(w), Tensor(b), stride, padding).data
    ref = torch.nn.functional.conv2d(_t(x), _t(w), _t(b), stride=stride, padding=padding).numpy()
    np.testing.assert_allclose(got, ref, rtol=1e-10, atol=1e-10)


@pytest.mark.parametrize("stride,padding,out_pad", [((1, 1), (2, 0), (0, 0)), ((2, 1), (2, 0), (1, 0))])
def test_conv_transpose2d_matches_reference(stride, padding, out_pad):
    rng = np.random.default_rng(1)
    x = rng.standard_normal((2, 4, 6, 3))
    w = rng.standard_normal((4, 3, 5, 1))
    b = rng.standard_normal(3)
    got = nn.conv_transpose2d(Tensor(x), Tensor(w), Tensor(b), stride, padding, out_pad).data
    ref = torch.nn.functional.conv_transpose2d(_t(x), _t(w), _t(b), stride=stride, padding=padding,
                                               output_padding=out_pad).numpy()
    np.testing.assert_allclose(got, ref, rtol=1e-10, atol=1e-10)


@pytest.mark.parametrize("stride,padding,out_pad", [((1, 1), (2, 0), (0, 0)), ((2, 1), (2, 0), (1, 0))])
def test_transpose_is_adjoint_of_conv(stride, padding, out_pad):
    rng = np.random.default_rng(2)
    x = rng.standard_normal((2, 3, 8, 5))
    w = rng.standard_normal((4, 3, 5, 1))
    y = nn.conv2d(Tensor(x), Tensor(w), None, stride, padding).data
    u = rng.standard_normal(y.shape)
    xt = nn.conv_transpose2d(Tensor(u), Tensor(w), None, stride, padding, out_pad).data
    assert xt.shape == x.shape
    assert abs(np.sum(y * u) - np.sum(x * xt)) < 1e-10 * np.sum(np.abs(y * u))


def test_inplace_conv_keeps_frequency_extent():
    x = Tensor(np.zeros((1, 2, 256, 7)))
    w = Tensor(np.zeros((3, 2, 5, 1)))
    assert nn.conv2d(x, w, None, (1, 1), (2, 0)).shape == (1, 3, 256, 7)
    wt = Tensor(np.zeros((2, 3, 5, 1)))
    assert nn.conv_transpose2d(x, wt, None, (1, 1), (2, 0)).shape == (1, 3, 256, 7)


def test_conv_rejects_bad_input():
    with pytest.raises(ShapeError):
        nn.conv2d(Tensor(np.zeros((1, 2, 5, 5))), Tensor(np.zeros((3, 4, 3, 1))), None)
    with pytest.raises(ConfigError):
        nn.conv2d(Tensor(np.zeros((1, 2, 5, 5))), Tensor(np.zeros((3, 2, 3, 1))), None, stride=(0, 1))


@pytest.mark.parametrize("reverse", [False, True])
def test_lstm_matches_reference(reverse):
    rng = np.random.default_rng(3)
    n, t, d, h = 3, 6, 4, 5
    x = rng.standard_normal((n, t, d))
    wi = 0.5 * rng.standard_normal((4 * h, d))
    wh = 0.5 * rng.standard_normal((4 * h, h))
    b = rng.standard_normal(4 * h)
    got = nn.lstm_layer(Tensor(x), Tensor(wi), Tensor(wh), Tensor(b), reverse).data
    cell = torch.nn.LSTM(d, h, batch_first=True).double()
    with torch.no_grad():
        cell.weight_ih_l0.copy_(_t(wi))
        cell.weight_hh_l0.copy_(_t(wh))
        cell.bias_ih_l0.copy_(_t(b))
        cell.bias_hh_l0.zero_()
        inp = _t(x[:, ::-1]) if reverse else _t(x)
        ref = cell(inp)[0].numpy()
    if reverse:
        ref = ref[:, ::-1]
    np.testing.assert_allclose(got, ref, rtol=1e-10, atol=1e-12)


def test_batch_norm_train_statistics_and_running_update():
    rng = np.random.default_rng(4)
    x = rng.standard_normal((4, 3, 5, 2)) * 3 + 1
    st = BatchNormState.create(3, dtype=np.float64)
    y = nn.batch_norm(Tensor(x), Tensor(np.ones(3)), Tensor(np.zeros(3)), st, True).data
    np.testing.assert_allclose(y.mean(axis=(0, 2, 3)), 0, atol=1e-12)
    np.testing.assert_allclose(y.var(axis=(0, 2, 3)), 1, rtol=1e-4)
    np.testing.assert_allclose(st.running_mean, 0.1 * x.mean(axis=(0, 2, 3)), rtol=1e-12)
    np.testing.assert_allclose(st.running_var, 0.9 + 0.1 * x.var(axis=(0, 2, 3), ddof=1), rtol=1e-12)


def test_batch_norm_eval_before_statistics_raises():
    st = BatchNormState.create(2)
    with pytest.raises(ConfigError):
        nn.batch_norm(Tensor(np.zeros((1, 2, 3, 1))), Tensor(np.ones(2)), Tensor(np.zeros(2)), st, False)


@pytest.mark.parametrize("training", [True, False])
def test_fused_gate_norm_elu_equals_composition(training):
    rng = np.random.default_rng(5)
    z = rng.standard_normal((2, 6, 4, 3))
    g, b = rng.uniform(0.5, 1.5, 3), rng.standard_normal(3)
    s1, s2 = BatchNormState.create(3, dtype=np.float64), BatchNormState.create(3, dtype=np.float64)
    if not training:
        for s in (s1, s2):
            s.running_mean, s.running_var, s.initialized = np.full(3, 0.2), np.full(3, 1.5), True
    fused = nn.gated_norm_elu(Tensor(z), Tensor(g), Tensor(b), s1, training).data
    composed = T.elu(nn.batch_norm(nn.glu_gate(Tensor(z)), Tensor(g), Tensor(b), s2, training)).data
    np.testing.assert_allclose(fused, composed, rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(s1.running_var, s2.running_var, rtol=1e-12)


def test_zero_weight_block_outputs_zero():
    """Gate 0.5 times main branch 0, normalized with stats (0, 1), is exactly 0."""
    z = Tensor(np.zeros((1, 4, 8, 3)))
    st = BatchNormState.create(2, dtype=np.float64)
    st.running_mean, st.running_var, st.initialized = np.zeros(2), np.ones(2), True
    y = nn.gated_norm_elu(z, Tensor(np.ones(2)), Tensor(np.zeros(2)), st, False)
    assert np.all(y.data == 0)


def test_frequency_fold_round_trip():
    x = Tensor(np.arange(2 * 3 * 4 * 5, dtype=np.float64).reshape(2, 3, 4, 5))
    s = nn.reshape_freq_to_batch(x)
    assert s.shape == (8, 5, 3)
    np.testing.assert_array_equal(s.data[1 * 4 + 2, :, 1], x.data[1, 1, 2, :])
    np.testing.assert_array_equal(nn.reshape_batch_to_freq(s, 2, 4).data, x.data)
    with pytest.raises(ShapeError):
        nn.reshape_batch_to_freq(s, 3, 4)


def test_freq_linear_is_per_channel_affine():
    rng = np.random.default_rng(6)
    x = rng.standard_normal((2, 2, 5, 3))
    w = rng.standard_normal((2, 4, 5))
    b = rng.standard_normal((2, 4))
    y = nn.freq_linear(Tensor(x), Tensor(w), Tensor(b)).data
    ref = np.einsum("cof,bcft->bcot", w, x) + b[None, :, :, None]
    np.testing.assert_allclose(y, ref, rtol=1e-12)


def test_parameter_store_rejects_duplicates_and_counts():
    ps = ParameterStore()
    ps.add("a", np.zeros((2, 3)))
    ps.add("b", np.zeros(4))
    assert ps.count() == 10
    assert list(ps) == ["a", "b"]
    with pytest.raises(KeyError):
        ps.add("a", np.zeros(1))
