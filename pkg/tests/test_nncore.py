import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from forknet.nncore import functional as fn
from forknet.nncore import tensor as tt
from forknet.nncore.gradcheck import gradcheck
from forknet.nncore.layers import DilatedDenseBlock, ImprovedTransformer, Linear
from forknet.nncore.params import ParamStore
from forknet.nncore.tensor import Tensor, make_op, no_grad


def T(x, grad=False):
    return Tensor(np.asarray(x, dtype=float), requires_grad=grad)


def sigmoid(x):
    return 1 / (1 + np.exp(-x))


# ------------------------------------------------------------ autodiff engine


def test_backward_accumulates_shared_subexpressions():
    x = T([2.0, -3.0], True)
    y = x * x + x * 3.0
    y.sum().backward()
    np.testing.assert_allclose(x.grad, 2 * x.data + 3)


def test_backward_requires_scalar_or_seed():
    x = T([1.0, 2.0], True)
    with pytest.raises(ValueError):
        (x * 2).backward()


def test_no_grad_records_nothing():
    x = T([1.0], True)
    with no_grad():
        y = x * 2
    assert not y.requires_grad and y._backward is None
    assert tt.is_grad_enabled()


def test_unbroadcast_sums_expanded_axes():
    a = T(np.ones((3, 1)), True)
    b = T(np.ones(4), True)
    (a + b).sum().backward()
    np.testing.assert_array_equal(a.grad, np.full((3, 1), 4.0))
    np.testing.assert_array_equal(b.grad, np.full(4, 3.0))


def test_pad_truncates_with_negative_width():
    x = T(np.arange(6.0).reshape(2, 3))
    np.testing.assert_array_equal(tt.pad(x, [(0, 0), (1, -2)]).data, [[0, 0], [0, 3]])


def test_softmax_rows_sum_to_one():
    x = T(np.random.default_rng(0).standard_normal((4, 7)) * 30)
    np.testing.assert_allclose(tt.softmax(x).data.sum(-1), 1.0, atol=1e-14)


# ------------------------------------------------------------ gradcheck itself


def test_gradcheck_flags_a_wrong_backward():
    def bad_square(a):
        return make_op(a.data**2, (a,), lambda g: (g * a.data,))  # missing factor 2

    x = T(np.random.default_rng(1).standard_normal(5), True)
    report = gradcheck(lambda: tt.tsum(bad_square(x)), {"x": x})
    assert report.errors["x"] > 0.4 and not report.passed(1e-4)


def test_gradcheck_reports_non_finite():
    x = T([0.0], True)
    with np.errstate(divide="ignore"):
        report = gradcheck(lambda: tt.tsum(tt.sqrt(x)), {"x": x})
    assert report.failures


def test_gradcheck_pointwise_conv_squared_error():
    rng = np.random.default_rng(2)
    x, w, b = T(rng.standard_normal((1, 3, 4, 2)), True), T(rng.standard_normal((2, 3)), True), T(rng.standard_normal(3), True)
    target = rng.standard_normal((1, 3, 4, 3))

    def loss():
        d = fn.pointwise_conv(x, w, b) - target
        return tt.tsum(d * d)

    assert gradcheck(loss, {"x": x, "w": w, "b": b}).max_error < 1e-6


def test_gradcheck_gru_t4_d3_h3():
    rng = np.random.default_rng(3)
    x = T(rng.standard_normal((1, 4, 3)), True)
    wi, wh, b = T(rng.standard_normal((3, 9)), True), T(rng.standard_normal((3, 9)), True), T(rng.standard_normal(9), True)
    r = rng.standard_normal((1, 4, 3))
    report = gradcheck(lambda: tt.tsum(fn.gru_sequence(x, wi, wh, b) * r), {"x": x, "wi": wi, "wh": wh, "b": b})
    assert report.max_error < 1e-4


# ------------------------------------------------------------ convolution


def conv_oracle(x, k, b, d):
    """Direct nested-loop causal conv on (batch, T, F, Cin)."""
    nb, nt, nf, _ = x.shape
    cout, _, kt, kf = k.shape
    pf = (kf - 1) // 2
    out = np.zeros((nb, nt, nf, cout)) + b
    for t in range(nt):
        for f in range(nf):
            for i in range(kt):
                ts = t - (kt - 1 - i) * d
                if ts < 0:
                    continue
                for j in range(kf):
                    fs = f + j - pf
                    if 0 <= fs < nf:
                        out[:, t, f] += x[:, ts, fs] @ k[:, :, i, j].T
    return out


@settings(max_examples=15, deadline=None)
@given(st.integers(1, 3), st.sampled_from([1, 3, 5]), st.integers(1, 4), st.integers(0, 2**31))
def test_conv_matches_loop_oracle(kt, kf, d, seed):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((2, 6, 5, 3))
    k = rng.standard_normal((4, 3, kt, kf))
    b = rng.standard_normal(4)
    np.testing.assert_allclose(fn.conv2d_causal(T(x), T(k), T(b), d).data, conv_oracle(x, k, b, d), atol=1e-12)


def test_conv_scalar_kernel_doubles():
    x = np.random.default_rng(4).standard_normal((1, 3, 4, 1))
    y = fn.conv2d_causal(T(x), T(np.full((1, 1, 1, 1), 2.0)), T([0.0]))
    np.testing.assert_allclose(y.data, 2 * x)


def test_conv_ones_kernel_on_constant():
    y = fn.conv2d_causal(T(np.ones((1, 2, 6, 1))), T(np.ones((1, 1, 1, 3))), T([0.0])).data
    np.testing.assert_allclose(y[0, :, 1:-1, 0], 3.0)
    np.testing.assert_allclose(y[0, :, [0, -1], 0], 2.0)


def test_conv_rejects_even_frequency_kernel():
    with pytest.raises(ValueError):
        fn.conv2d_causal(T(np.ones((1, 2, 4, 1))), T(np.ones((1, 1, 2, 2))))


def test_conv_is_causal():
    rng = np.random.default_rng(5)
    x = rng.standard_normal((1, 8, 5, 2))
    k = T(rng.standard_normal((3, 2, 2, 3)))
    y = x.copy()
    y[:, 5:] = rng.standard_normal(y[:, 5:].shape)
    a, b = fn.conv2d_causal(T(x), k, None, 2).data, fn.conv2d_causal(T(y), k, None, 2).data
    assert np.array_equal(a[:, :5], b[:, :5]) and not np.array_equal(a[:, 5:], b[:, 5:])


def test_pointwise_conv_examples():
    rng = np.random.default_rng(6)
    x = rng.standard_normal((1, 3, 4, 2))
    np.testing.assert_array_equal(fn.pointwise_conv(T(x), T(np.eye(2)), T(np.zeros(2))).data, x)
    s = fn.pointwise_conv(T(x), T([[1.0], [1.0]])).data
    np.testing.assert_allclose(s[..., 0], x[..., 0] + x[..., 1])
    w, b = rng.standard_normal((2, 5)), rng.standard_normal(5)
    want = np.einsum("btfc,co->btfo", x, w) + b
    np.testing.assert_allclose(fn.pointwise_conv(T(x), T(w), T(b)).data, want, atol=1e-12)
    with pytest.raises(ValueError):
        fn.pointwise_conv(T(x), T(np.ones((3, 1))))


def test_gated_conv_examples():
    rng = np.random.default_rng(7)
    x = T(rng.standard_normal((1, 4, 5, 2)))
    ka, ba = T(rng.standard_normal((3, 2, 2, 3))), T(rng.standard_normal(3))
    a = fn.conv2d_causal(x, ka, ba).data
    zero_k, zero_b = T(np.zeros((3, 2, 2, 3))), T(np.zeros(3))
    np.testing.assert_allclose(fn.gated_conv2d(x, ka, ba, zero_k, zero_b).data, 0.5 * a)
    np.testing.assert_allclose(fn.gated_conv2d(x, ka, ba, zero_k, T(np.full(3, 30.0))).data, a, atol=1e-9 * np.abs(a).max() + 1e-12)
    kg = T(rng.standard_normal((3, 2, 2, 3)))
    assert not fn.gated_conv2d(x, zero_k, zero_b, kg, ba).data.any()


def test_dense_block_depth_one_is_single_layer():
    store = ParamStore()
    block = DilatedDenseBlock(store, "b", np.random.default_rng(8), 3, depth=1)
    x = T(np.random.default_rng(9).standard_normal((1, 4, 5, 3)))
    conv, norm, act = block.layers[0]
    want = tt.prelu(fn.layer_norm(fn.conv2d_causal(x, conv.w, conv.b, 1), norm.gain, norm.bias), act.slope)
    np.testing.assert_array_equal(block(x).data, want.data)
    assert sorted(store.names()) == ["b.layer0.act.slope", "b.layer0.conv.bias", "b.layer0.conv.weight",
                                     "b.layer0.norm.bias", "b.layer0.norm.gain"]


def test_dense_block_receptive_field_is_16_frames():
    store = ParamStore()
    block = DilatedDenseBlock(store, "b", np.random.default_rng(10), 2, depth=4)
    rng = np.random.default_rng(11)
    x = rng.standard_normal((1, 40, 3, 2))
    base = block(T(x)).data
    affected = []
    for s in range(40):
        y = x.copy()
        y[0, s] += 1.0
        affected.append(np.abs(block(T(y)).data - base)[0, 30].max() > 0)
    # output frame 30 depends on frames 15..30 only
    assert [s for s in range(40) if affected[s]] == list(range(15, 31))


# ------------------------------------------------------------ GRU


def gru_oracle(x, wi, wh, b, reverse=False):
    n, length, _ = x.shape
    h_dim = wh.shape[0]
    out = np.zeros((n, length, h_dim))
    order = range(length - 1, -1, -1) if reverse else range(length)
    for s in range(n):
        h = np.zeros(h_dim)
        for t in order:
            gx = x[s, t] @ wi + b
            z = sigmoid(gx[:h_dim] + h @ wh[:, :h_dim])
            r = sigmoid(gx[h_dim:2 * h_dim] + h @ wh[:, h_dim:2 * h_dim])
            c = np.tanh(gx[2 * h_dim:] + (r * h) @ wh[:, 2 * h_dim:])
            h = (1 - z) * h + z * c
            out[s, t] = h
    return out


@pytest.mark.parametrize("reverse", [False, True])
def test_gru_matches_loop_oracle(reverse):
    rng = np.random.default_rng(12)
    x, wi, wh, b = rng.standard_normal((3, 7, 4)), rng.standard_normal((4, 15)), rng.standard_normal((5, 15)), rng.standard_normal(15)
    got = fn.gru_sequence(T(x), T(wi), T(wh), T(b), reverse).data
    np.testing.assert_allclose(got, gru_oracle(x, wi, wh, b, reverse), atol=1e-12)


def test_gru_zero_weights_zero_state():
    x = np.random.default_rng(13).standard_normal((2, 5, 3))
    out = fn.gru_sequence(T(x), T(np.zeros((3, 6))), T(np.zeros((2, 6))), T(np.zeros(6))).data
    assert not out.any()


def test_gru_scalar_hand_evaluation():
    x = np.array([[[0.3], [-0.2]]])
    wi = np.array([[0.0, 0.0, 50.0]])
    out = fn.gru_sequence(T(x), T(wi), T(np.zeros((1, 3))), T(np.zeros(3))).data
    assert abs(out[0, 0, 0] - 0.5 * np.tanh(50 * 0.3)) < 1e-12


def test_gru_forward_is_causal():
    rng = np.random.default_rng(14)
    x = rng.standard_normal((1, 8, 3))
    w = [T(rng.standard_normal(s)) for s in ((3, 12), (4, 12), (12,))]
    y = x.copy()
    y[0, 4:] += 1.0
    a, b = fn.gru_sequence(T(x), *w).data, fn.gru_sequence(T(y), *w).data
    assert np.array_equal(a[:, :4], b[:, :4])


def test_gru_dimension_mismatch():
    with pytest.raises(ValueError):
        fn.gru_sequence(T(np.ones((1, 2, 3))), T(np.ones((4, 6))), T(np.ones((2, 6))), T(np.ones(6)))


# ------------------------------------------------------------ layer norm


def test_layer_norm_examples():
    g, b = T([1.0, 1.0]), T([0.0, 0.0])
    np.testing.assert_allclose(fn.layer_norm(T([[1.0, -1.0]]), g, b).data, [[1, -1]] / np.sqrt(1 + 1e-5))
    c = fn.layer_norm(T(np.full((1, 4), 3.0)), T(np.ones(4)), T(np.zeros(4))).data
    assert not c.any()
    x = np.random.default_rng(15).standard_normal((10, 16)) * 5 + 2
    y = fn.layer_norm(T(x), T(np.ones(16)), T(np.zeros(16))).data
    np.testing.assert_allclose(y.mean(-1), 0, atol=1e-12)
    np.testing.assert_allclose(y.var(-1), 1, atol=1e-5)


# ------------------------------------------------------------ attention


def attention_oracle(x, p, heads):
    n, length, d = x.shape
    dk = d // heads
    q, k, v = (x @ p[f"w{c}"] + p[f"b{c}"] for c in "qkv")
    out = np.zeros_like(x)
    for s in range(n):
        for h in range(heads):
            sl = slice(h * dk, (h + 1) * dk)
            for i in range(length):
                logits = np.array([q[s, i, sl] @ k[s, j, sl] for j in range(length)]) / np.sqrt(dk)
                w = np.exp(logits - logits.max())
                w /= w.sum()
                out[s, i, sl] = w @ v[s, :, sl]
    return out @ p["wo"] + p["bo"]


def mha(x, p, heads):
    return fn.multi_head_attention(T(x), *(T(p[k]) for k in ("wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo")), heads)


def random_attn_params(rng, d):
    return {k: rng.standard_normal((d, d) if k[0] == "w" else d) for k in ("wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo")}


def test_attention_matches_brute_force():
    rng = np.random.default_rng(16)
    x = rng.standard_normal((2, 6, 8))
    p = random_attn_params(rng, 8)
    np.testing.assert_allclose(mha(x, p, 2).data, attention_oracle(x, p, 2), atol=1e-12)


def identity_attn(d):
    return {k: (np.eye(d) if k[0] == "w" else np.zeros(d)) for k in ("wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo")}


def test_attention_length_one_returns_value():
    x = np.random.default_rng(17).standard_normal((3, 1, 4))
    np.testing.assert_allclose(mha(x, identity_attn(4), 2).data, x, atol=1e-14)


def test_attention_uniform_keys_average_values():
    rng = np.random.default_rng(18)
    x = rng.standard_normal((1, 5, 4))
    p = identity_attn(4)
    p["wk"] = np.zeros((4, 4))
    out = mha(x, p, 2).data
    np.testing.assert_allclose(out, np.broadcast_to(x.mean(1, keepdims=True), x.shape), atol=1e-14)


def test_attention_rejects_bad_heads():
    with pytest.raises(ValueError):
        mha(np.ones((1, 2, 6)), identity_attn(6), 4)


def test_transformer_residual_only_path():
    store = ParamStore()
    layer = ImprovedTransformer(store, "tf", np.random.default_rng(19), 4, 2, 3)
    layer.attn.out.w.data[...] = 0
    layer.proj.w.data[...] = 0
    x = T(np.random.default_rng(20).standard_normal((3, 5, 4)))
    n1 = fn.layer_norm(x, layer.norm1.gain, layer.norm1.bias)
    want = fn.layer_norm(n1, layer.norm2.gain, layer.norm2.bias).data
    np.testing.assert_allclose(layer(x).data, want, atol=1e-12)


def test_transformer_is_per_sequence():
    store = ParamStore()
    layer = ImprovedTransformer(store, "tf", np.random.default_rng(21), 4, 2, 3)
    rng = np.random.default_rng(22)
    x = rng.standard_normal((4, 6, 4))
    y = x.copy()
    y[2] = rng.standard_normal((6, 4))
    a, b = layer(T(x)).data, layer(T(y)).data
    assert a.shape == x.shape
    assert np.array_equal(a[[0, 1, 3]], b[[0, 1, 3]])


# ------------------------------------------------------------ params


def test_param_store_contract():
    store = ParamStore()
    lin = Linear(store, "lin", np.random.default_rng(23), 2, 32)
    assert store.count() == 96 and store.names() == ["lin.weight", "lin.bias"]
    bound = 1 / np.sqrt(2)
    assert np.abs(lin.w.data).max() <= bound and not lin.b.data.any()
    with pytest.raises(KeyError):
        store.add("lin.bias", np.zeros(1))
    state = store.state()
    state["lin.bias"] = np.ones(32)
    store.load_state(state)
    assert store["lin.bias"].data.sum() == 32
    with pytest.raises(KeyError):
        store.load_state({"lin.weight": state["lin.weight"]})
    with pytest.raises(ValueError):
        store.load_state({"lin.weight": state["lin.weight"], "lin.bias": np.ones(3)})


def test_same_seed_same_params():
    def build(seed):
        store = ParamStore()
        DilatedDenseBlock(store, "b", np.random.default_rng(seed), 3)
        return store.state()

    a, b = build(7), build(7)
    assert all(np.array_equal(a[k], b[k]) for k in a)
