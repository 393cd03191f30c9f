"""Differentiable layer primitives.

Feature maps are channel-last: ``(batch, frames, freq, channels)``. Sequence
ops take ``(n_sequences, length, features)``.
"""

from __future__ import annotations

import numpy as np

from .tensor import Tensor, _sigmoid, add, make_op, matmul, mul, reshape, sigmoid, transpose

LN_EPS = 1e-5


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x @ weight + bias`` with ``weight`` shaped ``(in, out)``."""
    y = matmul(x, weight)
    return y if bias is None else add(y, bias)


def pointwise_conv(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """1x1 convolution: a per-(t, f) linear map across channels."""
    if x.shape[-1] != weight.shape[0]:
        raise ValueError(f"pointwise_conv: input has {x.shape[-1]} channels, weight expects {weight.shape[0]}")
    return linear(x, weight, bias)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = LN_EPS) -> Tensor:
    """Normalize over the channel (last) axis only."""
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    out = xhat * gain.data + bias.data

    def backward(g):
        gx = None
        if x.requires_grad:
            gh = g * gain.data
            gx = inv * (gh - gh.mean(axis=-1, keepdims=True) - xhat * (gh * xhat).mean(axis=-1, keepdims=True))
        lead = tuple(range(g.ndim - 1))
        ggain = (g * xhat).sum(axis=lead) if gain.requires_grad else None
        gbias = g.sum(axis=lead) if bias.requires_grad else None
        return gx, ggain, gbias

    return make_op(out, (x, gain, bias), backward)


def conv2d_causal(x: Tensor, kernel: Tensor, bias: Tensor | None = None, dilation_t: int = 1) -> Tensor:
    """2-D convolution, causal along frames and 'same' along frequency.

    ``kernel`` is ``(c_out, c_in, k_t, k_f)``. Frames are padded on the past
    side with ``(k_t - 1) * dilation_t`` zeros, so output frame ``t`` reads
    input frames ``t - (k_t - 1) * dilation_t .. t`` only.
    """
    c_out, c_in, k_t, k_f = kernel.shape
    if k_f % 2 == 0:
        raise ValueError(f"conv2d_causal: frequency kernel size must be odd, got {k_f}")
    if x.shape[-1] != c_in:
        raise ValueError(f"conv2d_causal: input has {x.shape[-1]} channels, kernel expects {c_in}")
    nb, nt, nf, _ = x.shape
    pf = (k_f - 1) // 2
    # Project every tap at once, then shift-and-add the per-tap outputs.
    # Tap (i, j) reads frame t - (k_t - 1 - i) * dilation_t and bin f + j - pf.
    wall = kernel.data.transpose(1, 2, 3, 0).reshape(c_in, -1)
    x2 = x.data.reshape(-1, c_in)
    y = (x2 @ wall).reshape(nb, nt, nf, k_t, k_f, c_out)
    moves = []
    for i in range(k_t):
        lag = (k_t - 1 - i) * dilation_t
        if lag >= nt:
            continue
        for j in range(k_f):
            o = j - pf
            f_dst = slice(max(-o, 0), nf - max(o, 0))
            f_src = slice(max(o, 0), nf - max(-o, 0))
            moves.append(((slice(None), slice(lag, nt), f_dst), (slice(None), slice(0, nt - lag), f_src, i, j)))
    out = np.zeros((nb, nt, nf, c_out))
    if bias is not None:
        out += bias.data
    for dst, src in moves:
        out[dst] += y[src]

    def backward(g):
        gy = np.zeros_like(y)
        for dst, src in moves:
            gy[src] = g[dst]
        gy = gy.reshape(x2.shape[0], -1)
        gx = (gy @ wall.T).reshape(x.shape) if x.requires_grad else None
        gk = (x2.T @ gy).reshape(c_in, k_t, k_f, c_out).transpose(3, 0, 1, 2) if kernel.requires_grad else None
        gb = g.reshape(-1, c_out).sum(axis=0) if bias is not None and bias.requires_grad else None
        return gx, gk, gb

    parents = (x, kernel) if bias is None else (x, kernel, bias)
    return make_op(out, parents, backward)


def gated_conv2d(x: Tensor, kernel_a: Tensor, bias_a: Tensor, kernel_g: Tensor, bias_g: Tensor,
                 dilation_t: int = 1) -> Tensor:
    """``conv_a(x) * sigmoid(conv_g(x))`` with two causal convolutions."""
    a = conv2d_causal(x, kernel_a, bias_a, dilation_t)
    gate = conv2d_causal(x, kernel_g, bias_g, dilation_t)
    return mul(a, sigmoid(gate))


def gru_sequence(x: Tensor, w_in: Tensor, w_hid: Tensor, bias: Tensor, reverse: bool = False) -> Tensor:
    """Run a GRU over axis 1 of ``x`` (``(n, length, d_in)``) from a zero state.

    Weights are packed gate-wise as ``[update | reset | candidate]``:
    ``w_in`` is ``(d_in, 3h)``, ``w_hid`` is ``(h, 3h)`` and ``bias`` is ``(3h,)``.

        z = sigmoid(x W_z + h U_z + b_z)
        r = sigmoid(x W_r + h U_r + b_r)
        c = tanh(x W_c + (r * h) U_c + b_c)
        h' = (1 - z) * h + z * c

    With ``reverse=True`` the sequence is read from the last step to the
    first and outputs stay aligned with their input positions.
    """
    n, length, d_in = x.shape
    if w_in.shape[0] != d_in:
        raise ValueError(f"gru_sequence: input size {d_in} does not match weight rows {w_in.shape[0]}")
    hdim = w_hid.shape[0]
    if w_in.shape[1] != 3 * hdim or w_hid.shape[1] != 3 * hdim or bias.shape != (3 * hdim,):
        raise ValueError("gru_sequence: inconsistent gate weight shapes")
    steps = range(length - 1, -1, -1) if reverse else range(length)
    u_zr, u_c = w_hid.data[:, : 2 * hdim], w_hid.data[:, 2 * hdim:]
    # time-major buffers keep every per-step slice contiguous
    xw = np.ascontiguousarray((x.data @ w_in.data + bias.data).transpose(1, 0, 2))
    hs = np.empty((length, n, hdim))
    zs = np.empty_like(hs)
    rs = np.empty_like(hs)
    cs = np.empty_like(hs)
    prev = np.empty_like(hs)
    h = np.zeros((n, hdim))
    for t in steps:
        a = xw[t]
        zr = _sigmoid(a[:, : 2 * hdim] + h @ u_zr)
        z, r = zr[:, :hdim], zr[:, hdim:]
        c = np.tanh(a[:, 2 * hdim:] + (r * h) @ u_c)
        prev[t] = h
        h = h + z * (c - h)
        hs[t], zs[t], rs[t], cs[t] = h, z, r, c

    def backward(g):
        g = g.transpose(1, 0, 2)
        dxw = np.empty_like(xw)
        du_zr = np.zeros_like(u_zr)
        du_c = np.zeros_like(u_c)
        dh = np.zeros((n, hdim))
        for t in reversed(steps):
            dh = dh + g[t]
            z, r, c, hp = zs[t], rs[t], cs[t], prev[t]
            da_c = dh * z * (1.0 - c * c)
            dz = dh * (c - hp)
            dh_prev = dh * (1.0 - z)
            du_c += (r * hp).T @ da_c
            drh = da_c @ u_c.T
            dh_prev += drh * r
            da_zr = dxw[t, :, : 2 * hdim]
            da_zr[:, :hdim] = dz * z * (1.0 - z)
            da_zr[:, hdim:] = drh * hp * r * (1.0 - r)
            du_zr += hp.T @ da_zr
            dh_prev += da_zr @ u_zr.T
            dxw[t, :, 2 * hdim:] = da_c
            dh = dh_prev
        flat = dxw.reshape(-1, 3 * hdim)
        gx = (dxw @ w_in.data.T).transpose(1, 0, 2) if x.requires_grad else None
        gw = x.data.transpose(1, 0, 2).reshape(-1, d_in).T @ flat if w_in.requires_grad else None
        gu = np.concatenate([du_zr, du_c], axis=1) if w_hid.requires_grad else None
        gb = flat.sum(axis=0) if bias.requires_grad else None
        return gx, gw, gu, gb

    hs = hs.transpose(1, 0, 2)
    return make_op(hs, (x, w_in, w_hid, bias), backward)


def multi_head_attention(x: Tensor, wq: Tensor, bq: Tensor, wk: Tensor, bk: Tensor, wv: Tensor, bv: Tensor,
                         wo: Tensor, bo: Tensor, heads: int) -> Tensor:
    """Full self-attention over axis 1 of ``x`` (``(n, length, d)``)."""
    n, length, d = x.shape
    if d % heads:
        raise ValueError(f"multi_head_attention: width {d} not divisible by {heads} heads")
    dk = d // heads

    def split(t: Tensor) -> Tensor:
        return transpose(reshape(t, (n, length, heads, dk)), (0, 2, 1, 3))

    q = split(linear(x, wq, bq))
    k = split(linear(x, wk, bk))
    v = split(linear(x, wv, bv))
    ctx = attention(q, k, v)
    ctx = reshape(transpose(ctx, (0, 2, 1, 3)), (n, length, d))
    return linear(ctx, wo, bo)



def attention(q: Tensor, k: Tensor, v: Tensor) -> Tensor:
    """Scaled dot-product attention ``softmax(q k^T / sqrt(d)) v`` over the last two axes."""
    scale = 1.0 / np.sqrt(q.shape[-1])
    qs = q.data * scale
    w = qs @ np.swapaxes(k.data, -1, -2)
    w -= w.max(axis=-1, keepdims=True)
    np.exp(w, out=w)
    w *= 1.0 / w.sum(axis=-1, keepdims=True)
    out = w @ v.data

    def backward(g):
        gv = np.swapaxes(w, -1, -2) @ g
        gs = g @ np.swapaxes(v.data, -1, -2)
        gs -= (g * out).sum(axis=-1, keepdims=True)
        gs *= w
        return (gs @ k.data) * scale, np.swapaxes(gs, -1, -2) @ qs, gv

    return make_op(out, (q, k, v), backward)
