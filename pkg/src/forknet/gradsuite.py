"""Finite-difference checks for every differentiable operation and the tiny model.

Each case builds a scalar ``sum(op(inputs) * R)`` with a fixed random
projection ``R`` so that every output element contributes to the check.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterator

import numpy as np

from .loss import LossConfig, multires_loss, power_compress, spec_loss, total_loss
from .model import ForkNet, ForkNetConfig
from .nncore import functional as fn
from .nncore import tensor as tt
from .nncore.gradcheck import GradcheckReport, gradcheck
from .nncore.layers import DilatedDenseBlock, ImprovedTransformer
from .nncore.params import ParamStore
from .nncore.tensor import Tensor
from .spectral import StftConfig, complex_mul_tensor, istft_tensor, stft_tensor

TOLERANCE = 1e-4


@dataclass
class CaseResult:
    name: str
    report: GradcheckReport

    @property
    def error(self) -> float:
        return self.report.max_error

    def passed(self, tol: float = TOLERANCE) -> bool:
        return self.report.passed(tol)


def _projected(out: Tensor, rng: np.random.Generator) -> Callable[[Tensor], Tensor]:
    r = rng.standard_normal(out.shape)
    return lambda y: tt.tsum(tt.mul(y, r))


def _check(op: Callable[..., Tensor], inputs: dict[str, np.ndarray], rng: np.random.Generator,
           max_entries: int | None = 24) -> GradcheckReport:
    tensors = {k: Tensor(v, requires_grad=True) for k, v in inputs.items()}
    proj = _projected(op(**tensors), rng)
    return gradcheck(lambda: proj(op(**tensors)), tensors, max_entries=max_entries, seed=int(rng.integers(2**31)))


def _op_cases(rng: np.random.Generator) -> Iterator[tuple[str, Callable[[], GradcheckReport]]]:
    def n(*shape):
        return rng.standard_normal(shape)

    def pos(*shape):
        return rng.uniform(0.5, 2.0, shape)

    yield "add", lambda: _check(lambda a, b: tt.add(a, b), {"a": n(3, 4), "b": n(4)}, rng)
    yield "sub", lambda: _check(lambda a, b: tt.sub(a, b), {"a": n(3, 1), "b": n(3, 4)}, rng)
    yield "mul", lambda: _check(lambda a, b: tt.mul(a, b), {"a": n(2, 3, 4), "b": n(3, 1)}, rng)
    yield "div", lambda: _check(lambda a, b: tt.div(a, b), {"a": n(3, 4), "b": pos(3, 4)}, rng)
    yield "power", lambda: _check(lambda a: tt.power(a, 1.7), {"a": pos(5)}, rng)
    yield "exp", lambda: _check(lambda a: tt.exp(a), {"a": n(5)}, rng)
    yield "log", lambda: _check(lambda a: tt.log(a), {"a": pos(5)}, rng)
    yield "sqrt", lambda: _check(lambda a: tt.sqrt(a), {"a": pos(5)}, rng)
    yield "sigmoid", lambda: _check(lambda a: tt.sigmoid(a), {"a": n(6)}, rng)
    yield "tanh", lambda: _check(lambda a: tt.tanh(a), {"a": n(6)}, rng)
    yield "relu", lambda: _check(lambda a: tt.relu(a), {"a": n(8)}, rng)
    yield "prelu", lambda: _check(lambda a, s: tt.prelu(a, s), {"a": n(4, 3), "s": n(3)}, rng)
    yield "sum", lambda: _check(lambda a: tt.tsum(a, axis=1), {"a": n(3, 4, 2)}, rng)
    yield "mean", lambda: _check(lambda a: tt.mean(a, axis=(0, 2), keepdims=True), {"a": n(3, 4, 2)}, rng)
    yield "softmax", lambda: _check(lambda a: tt.softmax(a, axis=-1), {"a": n(3, 5)}, rng)
    yield "matmul", lambda: _check(lambda a, b: tt.matmul(a, b), {"a": n(2, 3, 4), "b": n(4, 5)}, rng)
    yield "matmul_batched", lambda: _check(lambda a, b: tt.matmul(a, b), {"a": n(2, 3, 4), "b": n(2, 4, 2)}, rng)
    yield "reshape", lambda: _check(lambda a: tt.reshape(a, (4, 3)), {"a": n(2, 6)}, rng)
    yield "transpose", lambda: _check(lambda a: tt.transpose(a, (2, 0, 1)), {"a": n(2, 3, 4)}, rng)
    yield "getitem", lambda: _check(lambda a: tt.getitem(a, (slice(1, 3), 0)), {"a": n(4, 3)}, rng)
    yield "getitem_advanced", lambda: _check(lambda a: tt.getitem(a, np.array([0, 2, 2])), {"a": n(4, 3)}, rng)
    yield "flip", lambda: _check(lambda a: tt.flip(a, 1), {"a": n(3, 4)}, rng)
    yield "concat", lambda: _check(lambda a, b: tt.concat([a, b], axis=-1), {"a": n(2, 3), "b": n(2, 2)}, rng)
    yield "pad", lambda: _check(lambda a: tt.pad(a, [(1, 0), (0, 2)]), {"a": n(3, 4)}, rng)
    yield "pad_truncate", lambda: _check(lambda a: tt.pad(a, [(0, 0), (1, -2)]), {"a": n(3, 4)}, rng)
    yield "linear", lambda: _check(fn.linear, {"x": n(2, 3, 4), "weight": n(4, 5), "bias": n(5)}, rng)
    yield "pointwise_conv", lambda: _check(fn.pointwise_conv, {"x": n(1, 3, 4, 2), "weight": n(2, 3),
                                                              "bias": n(3)}, rng)
    yield "layer_norm", lambda: _check(fn.layer_norm, {"x": n(3, 5), "gain": n(5), "bias": n(5)}, rng)
    for d in (1, 2):
        yield f"conv2d_causal_d{d}", lambda d=d: _check(
            lambda x, kernel, bias: fn.conv2d_causal(x, kernel, bias, d),
            {"x": n(2, 5, 4, 3), "kernel": n(2, 3, 2, 3), "bias": n(2)}, rng)
    yield "gated_conv2d", lambda: _check(
        lambda x, ka, ba, kg, bg: fn.gated_conv2d(x, ka, ba, kg, bg, 2),
        {"x": n(1, 5, 4, 2), "ka": n(3, 2, 2, 3), "ba": n(3), "kg": n(3, 2, 2, 3), "bg": n(3)}, rng)
    for rev in (False, True):
        yield f"gru_sequence{'_reverse' if rev else ''}", lambda rev=rev: _check(
            lambda x, w_in, w_hid, bias: fn.gru_sequence(x, w_in, w_hid, bias, rev),
            {"x": n(2, 5, 3), "w_in": 0.5 * n(3, 12), "w_hid": 0.5 * n(4, 12), "bias": n(12)}, rng)
    yield "multi_head_attention", lambda: _check(
        lambda x, wq, bq, wk, bk, wv, bv, wo, bo: fn.multi_head_attention(x, wq, bq, wk, bk, wv, bv, wo, bo, 2),
        {"x": n(2, 5, 4), "wq": n(4, 4), "bq": n(4), "wk": n(4, 4), "bk": n(4), "wv": n(4, 4), "bv": n(4),
         "wo": n(4, 4), "bo": n(4)}, rng)

    stft = StftConfig(win_ms=1.0, fft_size=16)
    raw = StftConfig(win_ms=1.0, fft_size=16, remove_dc=False)
    yield "stft", lambda: _check(lambda x: stft_tensor(x, stft), {"x": n(2, 50)}, rng)
    yield "stft_keep_dc", lambda: _check(lambda x: stft_tensor(x, raw), {"x": n(50)}, rng)
    yield "istft", lambda: _check(lambda s: istft_tensor(s, 50, stft), {"s": n(2, 6, 8, 2)}, rng)
    yield "istft_keep_dc", lambda: _check(lambda s: istft_tensor(s, 45, raw), {"s": n(6, 9, 2)}, rng)
    yield "complex_mul", lambda: _check(complex_mul_tensor, {"a": n(2, 3, 4, 2), "b": n(2, 3, 4, 2)}, rng)
    yield "power_compress", lambda: _check(lambda s: power_compress(s, 0.3), {"s": n(3, 4, 2)}, rng)
    yield "spec_loss", lambda: _check(lambda est, ref: spec_loss(est, ref, 0.6),
                                      {"est": n(2, 3, 4, 2), "ref": n(2, 3, 4, 2)}, rng)
    yield "multires_loss", lambda: _check(lambda y, s: multires_loss(y, s, 0.3, (1.0, 2.0)),
                                          {"y": n(2, 60), "s": n(2, 60)}, rng)


def _layer_cases(rng: np.random.Generator) -> Iterator[tuple[str, Callable[[], GradcheckReport]]]:
    def run(build, x_shape):
        store = ParamStore()
        layer = build(store, np.random.default_rng(int(rng.integers(2**31))))
        _randomize(store, rng)
        x = Tensor(rng.standard_normal(x_shape), requires_grad=True)
        tensors = {"input": x, **dict(store.items())}
        proj = _projected(layer(x), rng)
        return gradcheck(lambda: proj(layer(x)), tensors, max_entries=8, seed=int(rng.integers(2**31)))

    yield "dilated_dense_block", lambda: run(lambda s, r: DilatedDenseBlock(s, "dense", r, 3, 4), (1, 9, 5, 3))
    yield "improved_transformer", lambda: run(lambda s, r: ImprovedTransformer(s, "tf", r, 4, 2, 3), (2, 6, 4))


def _randomize(store: ParamStore, rng: np.random.Generator, scale: float = 0.5) -> None:
    """Move every parameter off its structured init (zero biases, unit gains) to avoid kinks."""
    for _, t in store.items():
        t.data = t.data + scale * rng.uniform(-1.0, 1.0, t.shape)


def tiny_gradcheck_config() -> ForkNetConfig:
    """D=8, B=2 ForkNet on a 16-point STFT (F=8 bins)."""
    return ForkNetConfig.tiny(fft_size=16)


def model_case(seed: int = 0, frames: int = 6, max_entries: int = 6) -> GradcheckReport:
    """Total loss of the tiny model w.r.t. every parameter, on a ``frames``-frame input."""
    rng = np.random.default_rng([seed, 99])
    cfg = tiny_gradcheck_config()
    model = ForkNet(cfg, seed)
    _randomize(model.params, rng)
    s = cfg.stft
    n_samples = s.win_size + (frames - 1) * s.hop_size
    noisy = rng.standard_normal((1, n_samples))
    clean = rng.standard_normal((1, n_samples))
    ref = model.spectrum(clean)
    loss_cfg = LossConfig(mr_windows_ms=[1.0, 2.0])

    def loss():
        _, est, wave = model.forward(noisy)
        return total_loss(est, ref, wave, clean, loss_cfg)

    return gradcheck(loss, dict(model.params.items()), max_entries=max_entries, seed=seed)


def run_suite(seed: int = 0, include_model: bool = True) -> Iterator[CaseResult]:
    rng = np.random.default_rng(seed)
    for name, case in list(_op_cases(rng)) + list(_layer_cases(rng)):
        yield CaseResult(name, case())
    if include_model:
        yield CaseResult("forknet_tiny", model_case(seed))
