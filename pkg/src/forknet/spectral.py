"""STFT / iSTFT, windowing and complex spectrogram utilities.

Framing is causal: frame ``t`` covers samples ``[t*hop, t*hop + win)`` and the
signal is only ever zero-padded at the tail. Array-level functions accept any
leading batch axes; spectra are complex arrays shaped ``(..., frames, bins)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .nncore.tensor import Tensor, make_op

ENVELOPE_FLOOR = 1e-8


@dataclass
class AudioBuffer:
    samples: np.ndarray
    sample_rate: int = 16000

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise ValueError(f"AudioBuffer expects mono samples, got shape {self.samples.shape}")
        if int(self.sample_rate) <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("AudioBuffer samples must be finite")
        self.sample_rate = int(self.sample_rate)

    def __len__(self) -> int:
        return self.samples.size

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate


@dataclass(frozen=True)
class StftConfig:
    win_ms: float = 32.0
    overlap: float = 0.5
    fft_size: int = 512
    remove_dc: bool = True
    sample_rate: int = 16000

    def __post_init__(self):
        samples = self.win_ms * self.sample_rate / 1000
        if abs(samples - round(samples)) > 1e-9 or round(samples) < 2:
            raise ValueError(f"win_ms={self.win_ms} is not a whole number (>= 2) of samples at {self.sample_rate} Hz")
        if self.overlap != 0.5:
            raise ValueError(f"overlap must be 0.5, got {self.overlap}")
        if round(samples) % 2:
            raise ValueError("window length must be even for 50% overlap")
        if self.fft_size < round(samples) or self.fft_size % 2:
            raise ValueError(f"fft_size={self.fft_size} must be even and >= window length {round(samples)}")

    @property
    def win_size(self) -> int:
        return round(self.win_ms * self.sample_rate / 1000)

    @property
    def hop_size(self) -> int:
        return self.win_size // 2

    @property
    def n_bins(self) -> int:
        return self.fft_size // 2 + (0 if self.remove_dc else 1)

    def n_frames(self, n_samples: int) -> int:
        return num_frames(n_samples, self.win_size, self.hop_size)

    @classmethod
    def for_window(cls, win_ms: float, sample_rate: int = 16000) -> "StftConfig":
        """Hann-windowed config whose FFT size is the next power of two >= the window."""
        win = round(win_ms * sample_rate / 1000)
        return cls(win_ms=win_ms, fft_size=1 << max(win - 1, 1).bit_length(), sample_rate=sample_rate)


@dataclass
class ComplexSpectrogram:
    real: np.ndarray
    imag: np.ndarray
    fft_size: int
    win_size: int
    hop_size: int
    dc_removed: bool = True

    def __post_init__(self):
        self.real = np.asarray(self.real, dtype=np.float64)
        self.imag = np.asarray(self.imag, dtype=np.float64)
        if self.real.shape != self.imag.shape:
            raise ValueError(f"real {self.real.shape} and imag {self.imag.shape} differ in shape")
        expect = self.fft_size // 2 + (0 if self.dc_removed else 1)
        if self.real.shape[-1] != expect:
            raise ValueError(f"expected {expect} frequency bins, got {self.real.shape[-1]}")
        if self.hop_size * 2 != self.win_size:
            raise ValueError("hop_size must be win_size / 2")

    @classmethod
    def from_complex(cls, z: np.ndarray, like: "ComplexSpectrogram") -> "ComplexSpectrogram":
        return cls(z.real.copy(), z.imag.copy(), like.fft_size, like.win_size, like.hop_size, like.dc_removed)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.real.shape

    def to_complex(self) -> np.ndarray:
        return self.real + 1j * self.imag


# --------------------------------------------------------------------------- windows


def hann_window(n: int) -> np.ndarray:
    """Periodic Hann window, ``0.5 - 0.5 cos(2 pi k / n)``."""
    if n < 2:
        raise ValueError(f"hann_window needs n >= 2, got {n}")
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def num_frames(n_samples: int, win: int, hop: int) -> int:
    return math.ceil(max(n_samples - win, 0) / hop) + 1


# ----------------------------------------------------------------- array-level core
#
# Frames are assembled from hop-sized segments: with win = r * hop, frame t is
# segments t .. t+r-1 of the tail-padded signal. Overlap-add is the transpose.


def _frame(x: np.ndarray, n_frames: int, win: int, hop: int) -> np.ndarray:
    r = win // hop
    total = (n_frames + r - 1) * hop
    n = x.shape[-1]
    if n < total:
        x = np.concatenate([x, np.zeros(x.shape[:-1] + (total - n,))], axis=-1)
    seg = x[..., :total].reshape(x.shape[:-1] + (n_frames + r - 1, hop))
    return np.concatenate([seg[..., j:j + n_frames, :] for j in range(r)], axis=-1)


def _overlap_add(frames: np.ndarray, win: int, hop: int) -> np.ndarray:
    r = win // hop
    n_frames = frames.shape[-2]
    seg = np.zeros(frames.shape[:-2] + (n_frames + r - 1, hop))
    for j in range(r):
        seg[..., j:j + n_frames, :] += frames[..., j * hop:(j + 1) * hop]
    return seg.reshape(frames.shape[:-2] + (-1,))


def _fit(x: np.ndarray, n: int) -> np.ndarray:
    if x.shape[-1] >= n:
        return x[..., :n]
    return np.concatenate([x, np.zeros(x.shape[:-1] + (n - x.shape[-1],))], axis=-1)


def _first_bin(remove_dc: bool) -> int:
    return 1 if remove_dc else 0


def window_envelope(n_frames: int, win: int, hop: int) -> np.ndarray:
    """Overlap-added squared window, floored to stay invertible at the edges."""
    w2 = hann_window(win) ** 2
    return np.maximum(_overlap_add(np.broadcast_to(w2, (n_frames, win)), win, hop), ENVELOPE_FLOOR)


def stft_array(x: np.ndarray, win: int, hop: int, fft_size: int, remove_dc: bool = True) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] == 0:
        raise ValueError("stft of empty signal")
    frames = _frame(x, num_frames(x.shape[-1], win, hop), win, hop) * hann_window(win)
    return np.fft.rfft(frames, n=fft_size, axis=-1)[..., _first_bin(remove_dc):]


def stft_adjoint(g: np.ndarray, n_samples: int, win: int, hop: int, fft_size: int,
                 remove_dc: bool = True) -> np.ndarray:
    """Transpose of :func:`stft_array` as a real-linear map.

    ``g`` packs the gradients for the real and imaginary parts as
    ``g_re + 1j * g_im``; the result is the gradient w.r.t. the signal.
    """
    lead = g.shape[:-1]
    full = np.zeros(lead + (fft_size,), dtype=np.complex128)
    lo = _first_bin(remove_dc)
    full[..., lo:lo + g.shape[-1]] = g
    frames = (fft_size * np.fft.ifft(full, axis=-1).real)[..., :win] * hann_window(win)
    return _fit(_overlap_add(frames, win, hop), n_samples)


def istft_array(spec: np.ndarray, out_len: int, win: int, hop: int, fft_size: int,
                remove_dc: bool = True) -> np.ndarray:
    n_frames = spec.shape[-2]
    if out_len > n_frames * hop + win:
        raise ValueError(f"out_len {out_len} exceeds what {n_frames} frames can cover")
    if remove_dc:
        spec = np.concatenate([np.zeros(spec.shape[:-1] + (1,), dtype=spec.dtype), spec], axis=-1)
    if spec.shape[-1] != fft_size // 2 + 1:
        raise ValueError(f"spectrum has {spec.shape[-1]} bins, fft_size {fft_size} needs {fft_size // 2 + 1}")
    frames = np.fft.irfft(spec, n=fft_size, axis=-1)[..., :win] * hann_window(win)
    y = _overlap_add(frames, win, hop) / window_envelope(n_frames, win, hop)
    return _fit(y, out_len)


def istft_adjoint(g: np.ndarray, n_frames: int, win: int, hop: int, fft_size: int,
                  remove_dc: bool = True) -> np.ndarray:
    """Transpose of :func:`istft_array`; returns ``g_re + 1j * g_im`` per bin."""
    length = (n_frames - 1) * hop + win
    g = _fit(g, length) / window_envelope(n_frames, win, hop)
    frames = _frame(g, n_frames, win, hop) * hann_window(win)
    r = np.fft.rfft(frames, n=fft_size, axis=-1)
    scale = np.full(fft_size // 2 + 1, 2.0 / fft_size)
    scale[[0, -1]] = 1.0 / fft_size
    out = r.real * scale + 1j * (r.imag * scale)
    # irfft ignores the imaginary parts of the DC and Nyquist bins
    out[..., 0] = out[..., 0].real
    out[..., -1] = out[..., -1].real
    return out[..., _first_bin(remove_dc):]


# ------------------------------------------------------------------- typed front end


def stft(audio: AudioBuffer, cfg: StftConfig) -> ComplexSpectrogram:
    if len(audio) == 0:
        raise ValueError("stft of empty audio")
    if audio.sample_rate != cfg.sample_rate:
        raise ValueError(f"sample_rate: expected {cfg.sample_rate}, got {audio.sample_rate}")
    z = stft_array(audio.samples, cfg.win_size, cfg.hop_size, cfg.fft_size, cfg.remove_dc)
    return ComplexSpectrogram(z.real, z.imag, cfg.fft_size, cfg.win_size, cfg.hop_size, cfg.remove_dc)


def istft(spec: ComplexSpectrogram, out_len: int, sample_rate: int = 16000) -> AudioBuffer:
    expect = spec.fft_size // 2 + (0 if spec.dc_removed else 1)
    if spec.real.ndim != 2 or spec.real.shape[-1] != expect:
        raise ValueError(f"spectrogram shape {spec.real.shape} does not match fft_size={spec.fft_size}")
    y = istft_array(spec.to_complex(), out_len, spec.win_size, spec.hop_size, spec.fft_size, spec.dc_removed)
    return AudioBuffer(y, sample_rate)


def magnitude(spec: ComplexSpectrogram) -> np.ndarray:
    return np.hypot(spec.real, spec.imag)


def phase(spec: ComplexSpectrogram) -> np.ndarray:
    return np.arctan2(spec.imag, spec.real)


def compress(spec: ComplexSpectrogram, c: float) -> ComplexSpectrogram:
    """Raise each bin's magnitude to ``c`` and keep its phase (``0**c == 0``)."""
    if not 0 < c <= 1:
        raise ValueError(f"compression exponent must be in (0, 1], got {c}")
    mag = magnitude(spec)
    scale = np.zeros_like(mag)
    nz = mag > 0
    scale[nz] = mag[nz] ** (c - 1.0)
    return ComplexSpectrogram(spec.real * scale, spec.imag * scale, spec.fft_size, spec.win_size,
                              spec.hop_size, spec.dc_removed)


def complex_mul(a: ComplexSpectrogram, b: ComplexSpectrogram) -> ComplexSpectrogram:
    if a.shape != b.shape:
        raise ValueError(f"complex_mul shape mismatch: {a.shape} vs {b.shape}")
    return ComplexSpectrogram(a.real * b.real - a.imag * b.imag, a.real * b.imag + a.imag * b.real,
                              a.fft_size, a.win_size, a.hop_size, a.dc_removed)


# ------------------------------------------------------------- differentiable wrappers


def stft_tensor(x: Tensor, cfg: StftConfig) -> Tensor:
    """STFT of ``(..., samples)`` as a real tensor ``(..., frames, bins, 2)`` (re, im)."""
    n = x.shape[-1]
    z = stft_array(x.data, cfg.win_size, cfg.hop_size, cfg.fft_size, cfg.remove_dc)

    def backward(g):
        return (stft_adjoint(g[..., 0] + 1j * g[..., 1], n, cfg.win_size, cfg.hop_size, cfg.fft_size,
                             cfg.remove_dc),)

    return make_op(np.stack([z.real, z.imag], axis=-1), (x,), backward)


def istft_tensor(spec: Tensor, out_len: int, cfg: StftConfig) -> Tensor:
    """Inverse of :func:`stft_tensor` for a ``(..., frames, bins, 2)`` tensor."""
    n_frames = spec.shape[-3]
    y = istft_array(spec.data[..., 0] + 1j * spec.data[..., 1], out_len, cfg.win_size, cfg.hop_size,
                    cfg.fft_size, cfg.remove_dc)

    def backward(g):
        z = istft_adjoint(g, n_frames, cfg.win_size, cfg.hop_size, cfg.fft_size, cfg.remove_dc)
        return (np.stack([z.real, z.imag], axis=-1),)

    return make_op(y, (spec,), backward)


def complex_mul_tensor(a: Tensor, b: Tensor) -> Tensor:
    """Bin-wise complex product of two ``(..., 2)`` (re, im) tensors."""
    if a.shape != b.shape:
        raise ValueError(f"complex_mul shape mismatch: {a.shape} vs {b.shape}")
    ar, ai, br, bi = a.data[..., 0], a.data[..., 1], b.data[..., 0], b.data[..., 1]
    out = np.stack([ar * br - ai * bi, ar * bi + ai * br], axis=-1)

    def backward(g):
        gr, gi = g[..., 0], g[..., 1]
        # adjoint of multiplying by w is multiplying by conj(w)
        ga = np.stack([gr * br + gi * bi, gi * br - gr * bi], axis=-1) if a.requires_grad else None
        gb = np.stack([gr * ar + gi * ai, gi * ar - gr * ai], axis=-1) if b.requires_grad else None
        return ga, gb

    return make_op(out, (a, b), backward)
