"""Parameterized layers.

Each layer registers its tensors in a shared :class:`ParamStore` under a
dotted prefix when constructed, and keeps direct references for the forward
pass. Layers hold no other state.
"""

from __future__ import annotations

import numpy as np

from . import functional as fn
from .params import ParamStore, uniform_fan_in
from .tensor import Tensor, concat, prelu


class Layer:
    def __init__(self, store: ParamStore, prefix: str, rng: np.random.Generator):
        self.store = store
        self.prefix = prefix
        self.rng = rng

    def weight(self, name: str, shape: tuple[int, ...], fan_in: int) -> Tensor:
        return self.store.add(f"{self.prefix}.{name}", uniform_fan_in(self.rng, shape, fan_in))

    def const(self, name: str, shape: tuple[int, ...], value: float) -> Tensor:
        return self.store.add(f"{self.prefix}.{name}", np.full(shape, value))

    def child(self, name: str) -> tuple[ParamStore, str, np.random.Generator]:
        return self.store, f"{self.prefix}.{name}", self.rng


class Linear(Layer):
    def __init__(self, store, prefix, rng, d_in: int, d_out: int, bias: bool = True):
        super().__init__(store, prefix, rng)
        self.w = self.weight("weight", (d_in, d_out), d_in)
        self.b = self.const("bias", (d_out,), 0.0) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        return fn.linear(x, self.w, self.b)


class PointwiseConv(Linear):
    def __call__(self, x: Tensor) -> Tensor:
        return fn.pointwise_conv(x, self.w, self.b)


class Conv2dCausal(Layer):
    def __init__(self, store, prefix, rng, c_in: int, c_out: int, kernel: tuple[int, int] = (2, 3),
                 dilation_t: int = 1):
        super().__init__(store, prefix, rng)
        k_t, k_f = kernel
        if k_f % 2 == 0:
            raise ValueError(f"frequency kernel size must be odd, got {k_f}")
        self.dilation_t = dilation_t
        self.w = self.weight("weight", (c_out, c_in, k_t, k_f), c_in * k_t * k_f)
        self.b = self.const("bias", (c_out,), 0.0)

    def __call__(self, x: Tensor) -> Tensor:
        return fn.conv2d_causal(x, self.w, self.b, self.dilation_t)


class GatedConv2d(Layer):
    def __init__(self, store, prefix, rng, c_in: int, c_out: int, kernel: tuple[int, int] = (2, 3)):
        super().__init__(store, prefix, rng)
        self.value = Conv2dCausal(*self.child("value"), c_in, c_out, kernel)
        self.gate = Conv2dCausal(*self.child("gate"), c_in, c_out, kernel)

    def __call__(self, x: Tensor) -> Tensor:
        return fn.gated_conv2d(x, self.value.w, self.value.b, self.gate.w, self.gate.b)


class LayerNorm(Layer):
    def __init__(self, store, prefix, rng, dim: int):
        super().__init__(store, prefix, rng)
        self.gain = self.const("gain", (dim,), 1.0)
        self.bias = self.const("bias", (dim,), 0.0)

    def __call__(self, x: Tensor) -> Tensor:
        return fn.layer_norm(x, self.gain, self.bias)


class PReLU(Layer):
    def __init__(self, store, prefix, rng, dim: int, init: float = 0.25):
        super().__init__(store, prefix, rng)
        self.slope = self.const("slope", (dim,), init)

    def __call__(self, x: Tensor) -> Tensor:
        return prelu(x, self.slope)


class DilatedDenseBlock(Layer):
    """Densely connected causal convolutions with time dilations 1, 2, 4, ...

    Layer ``i`` sees the block input concatenated with every earlier layer's
    output; each conv is followed by layer norm and PReLU. The block returns
    the last layer's output, which has the input's channel count.
    """

    def __init__(self, store, prefix, rng, channels: int, depth: int = 4, kernel: tuple[int, int] = (2, 3)):
        super().__init__(store, prefix, rng)
        if depth < 1:
            raise ValueError("dense block depth must be >= 1")
        self.layers = []
        for i in range(depth):
            conv = Conv2dCausal(*self.child(f"layer{i}.conv"), (i + 1) * channels, channels, kernel, 2**i)
            norm = LayerNorm(*self.child(f"layer{i}.norm"), channels)
            act = PReLU(*self.child(f"layer{i}.act"), channels)
            self.layers.append((conv, norm, act))

    def __call__(self, x: Tensor) -> Tensor:
        feats = [x]
        out = x
        for conv, norm, act in self.layers:
            out = act(norm(conv(concat(feats, axis=-1))))
            feats.append(out)
        return out


class GRU(Layer):
    def __init__(self, store, prefix, rng, d_in: int, hidden: int, reverse: bool = False):
        super().__init__(store, prefix, rng)
        self.reverse = reverse
        self.w_in = self.weight("w_in", (d_in, 3 * hidden), d_in)
        self.w_hid = self.weight("w_hid", (hidden, 3 * hidden), hidden)
        self.b = self.const("bias", (3 * hidden,), 0.0)

    def __call__(self, x: Tensor) -> Tensor:
        return fn.gru_sequence(x, self.w_in, self.w_hid, self.b, reverse=self.reverse)


class MultiHeadAttention(Layer):
    def __init__(self, store, prefix, rng, d: int, heads: int):
        super().__init__(store, prefix, rng)
        if d % heads:
            raise ValueError(f"width {d} not divisible by {heads} heads")
        self.heads = heads
        self.q = Linear(*self.child("q"), d, d)
        self.k = Linear(*self.child("k"), d, d)
        self.v = Linear(*self.child("v"), d, d)
        self.out = Linear(*self.child("out"), d, d)

    def __call__(self, x: Tensor) -> Tensor:
        return fn.multi_head_attention(x, self.q.w, self.q.b, self.k.w, self.k.b, self.v.w, self.v.b,
                                       self.out.w, self.out.b, self.heads)


class ImprovedTransformer(Layer):
    """Post-norm transformer layer whose feed-forward part is a bidirectional GRU.

        y   = LN(x + MHA(x))
        out = LN(y + Linear(PReLU(BiGRU(y))))
    """

    def __init__(self, store, prefix, rng, d: int, heads: int, ffn_hidden: int):
        super().__init__(store, prefix, rng)
        self.attn = MultiHeadAttention(*self.child("attn"), d, heads)
        self.norm1 = LayerNorm(*self.child("norm1"), d)
        self.gru_fwd = GRU(*self.child("ffn.gru_fwd"), d, ffn_hidden)
        self.gru_bwd = GRU(*self.child("ffn.gru_bwd"), d, ffn_hidden, reverse=True)
        self.act = PReLU(*self.child("ffn.act"), 2 * ffn_hidden)
        self.proj = Linear(*self.child("ffn.proj"), 2 * ffn_hidden, d)
        self.norm2 = LayerNorm(*self.child("norm2"), d)

    def __call__(self, x: Tensor) -> Tensor:
        y = self.norm1(x + self.attn(x))
        h = concat([self.gru_fwd(y), self.gru_bwd(y)], axis=-1)
        return self.norm2(y + self.proj(self.act(h)))
