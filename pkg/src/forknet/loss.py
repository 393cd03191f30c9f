"""Compressed spectral loss, multi-resolution spectrogram loss and their sum.

Spectra are real tensors ``(batch, frames, bins, 2)`` holding (re, im).
Every term is a squared Frobenius norm summed over bins (and resolutions)
and averaged over the batch.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .nncore.tensor import Tensor, as_tensor, make_op, mul, sub, tsum
from .spectral import StftConfig, stft_tensor


@dataclass
class LossConfig:
    c1: float = 0.6
    c2: float = 0.3
    lam: float = 1.0
    mr_windows_ms: list[float] = field(default_factory=lambda: [5.0, 10.0, 20.0, 40.0])
    sample_rate: int = 16000

    def __post_init__(self):
        for name in ("c1", "c2"):
            c = getattr(self, name)
            if not 0 < c <= 1:
                raise ValueError(f"{name} must be in (0, 1], got {c}")
        if self.lam < 0:
            raise ValueError(f"lam must be >= 0, got {self.lam}")
        self.mr_windows_ms = [float(w) for w in self.mr_windows_ms]

    def resolutions(self) -> list[StftConfig]:
        return [StftConfig.for_window(w, self.sample_rate) for w in self.mr_windows_ms]


def power_compress(spec: Tensor, c: float) -> Tensor:
    """Map (re, im) to (|z|^c, |z|^c cos phi, |z|^c sin phi) along a new last axis of size 3.

    Zero-magnitude bins map to zeros with a zero subgradient.
    """
    re, im = spec.data[..., 0], spec.data[..., 1]
    mag = np.hypot(re, im)
    nz = mag > 0
    safe = np.where(nz, mag, 1.0)
    p = np.where(nz, safe**c, 0.0)
    q = np.where(nz, safe ** (c - 1.0), 0.0)
    out = np.stack([p, re * q, im * q], axis=-1)

    def backward(g):
        gp, gre, gim = g[..., 0], g[..., 1], g[..., 2]
        m2 = np.where(nz, safe ** (c - 2.0), 0.0)
        m3 = np.where(nz, safe ** (c - 3.0), 0.0)
        # d p / d re = c m^(c-2) re ; d (re q) / d re = q + (c-1) m^(c-3) re^2 ; etc.
        cross = (c - 1.0) * m3 * re * im
        d_re = gp * c * m2 * re + gre * (q + (c - 1.0) * m3 * re * re) + gim * cross
        d_im = gp * c * m2 * im + gre * cross + gim * (q + (c - 1.0) * m3 * im * im)
        return (np.stack([d_re, d_im], axis=-1),)

    return make_op(out, (spec,), backward)


def _batch(t: Tensor) -> int:
    return t.shape[0] if t.ndim == 4 else 1


def spec_loss(est: Tensor, ref, c1: float = 0.6) -> Tensor:
    """Compressed magnitude error plus compressed complex error, summed over bins.

    ``ref`` is a target spectrum (tensor or array) of the same shape; gradients
    flow into ``est`` only when it requires them.
    """
    est, ref = as_tensor(est), as_tensor(ref)
    if est.shape != ref.shape:
        raise ValueError(f"spec_loss shape mismatch: {est.shape} vs {ref.shape}")
    diff = sub(power_compress(est, c1), power_compress(ref, c1))
    return mul(tsum(mul(diff, diff)), 1.0 / _batch(est))


def multires_loss(y: Tensor, s, c2: float = 0.3, windows_ms=(5.0, 10.0, 20.0, 40.0),
                  sample_rate: int = 16000) -> Tensor:
    """Sum over STFT resolutions of the compressed spectral error between waveforms.

    ``y`` and ``s`` are ``(batch, samples)`` or ``(samples,)``. Each
    resolution uses a Hann window of the given length, 50% hop, an FFT of the
    next power of two and the DC bin removed.
    """
    y, s = as_tensor(y), as_tensor(s)
    if y.shape != s.shape:
        raise ValueError(f"multires_loss length mismatch: {y.shape} vs {s.shape}")
    batch = y.shape[0] if y.ndim == 2 else 1
    total = None
    for w in windows_ms:
        cfg = StftConfig.for_window(w, sample_rate)
        ys = stft_tensor(y, cfg)
        ss = stft_tensor(s, cfg)
        diff = sub(power_compress(ys, c2), power_compress(ss, c2))
        term = tsum(mul(diff, diff))
        total = term if total is None else total + term
    return mul(total, 1.0 / batch)


def total_loss(est_spec: Tensor, ref_spec, est_wave: Tensor, ref_wave, cfg: LossConfig) -> Tensor:
    loss = spec_loss(est_spec, ref_spec, cfg.c1)
    if cfg.lam == 0:
        return loss
    mr = multires_loss(est_wave, ref_wave, cfg.c2, cfg.mr_windows_ms, cfg.sample_rate)
    return loss + mul(mr, cfg.lam)

