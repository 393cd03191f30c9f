"""Minimal RIFF/WAVE reader and writer for mono 16 kHz audio."""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .spectral import AudioBuffer

WAVE_FORMAT_PCM = 1
WAVE_FORMAT_IEEE_FLOAT = 3
WAVE_FORMAT_EXTENSIBLE = 0xFFFE


class WavError(ValueError):
    pass


def _chunks(blob: bytes):
    pos = 12
    while pos + 8 <= len(blob):
        cid, size = struct.unpack("<4sI", blob[pos:pos + 8])
        body = blob[pos + 8:pos + 8 + size]
        if len(body) < size:
            raise WavError(f"chunk {cid!r}: truncated ({len(body)} of {size} bytes)")
        yield cid, body
        pos += 8 + size + (size & 1)


def decode(blob: bytes, sample_rate: int = 16000) -> AudioBuffer:
    if len(blob) < 12 or blob[:4] != b"RIFF" or blob[8:12] != b"WAVE":
        raise WavError("container: expected RIFF/WAVE")
    fmt = data = None
    for cid, body in _chunks(blob):
        if cid == b"fmt ":
            fmt = body
        elif cid == b"data":
            data = body
    if fmt is None or len(fmt) < 16:
        raise WavError("fmt: missing or short fmt chunk")
    if data is None:
        raise WavError("data: missing data chunk")
    tag, channels, rate, _, block_align, bits = struct.unpack("<HHIIHH", fmt[:16])
    if tag == WAVE_FORMAT_EXTENSIBLE and len(fmt) >= 26:
        tag = struct.unpack("<H", fmt[24:26])[0]
    if channels != 1:
        raise WavError(f"channels: expected 1, got {channels}")
    if rate != sample_rate:
        raise WavError(f"sample_rate: expected {sample_rate}, got {rate}")
    if tag == WAVE_FORMAT_PCM:
        if bits != 16:
            raise WavError(f"bits_per_sample: expected 16 for PCM, got {bits}")
        dtype, scale = "<i2", 1.0 / 32768.0
    elif tag == WAVE_FORMAT_IEEE_FLOAT:
        if bits != 32:
            raise WavError(f"bits_per_sample: expected 32 for IEEE float, got {bits}")
        dtype, scale = "<f4", 1.0
    else:
        raise WavError(f"audio_format: expected PCM (1) or IEEE float (3), got {tag}")
    width = bits // 8
    if block_align != width:
        raise WavError(f"block_align: expected {width}, got {block_align}")
    usable = len(data) - len(data) % width
    samples = np.frombuffer(data[:usable], dtype=dtype).astype(np.float64) * scale
    if not np.all(np.isfinite(samples)):
        raise WavError("data: non-finite float samples")
    return AudioBuffer(samples, rate)


def encode(audio: AudioBuffer) -> bytes:
    """16-bit PCM, ``round(x * 32768)`` saturated to the int16 range."""
    x = np.asarray(audio.samples, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise WavError("samples: expected finite values")
    pcm = np.clip(np.round(x * 32768.0), -32768, 32767).astype("<i2").tobytes()
    fmt = struct.pack("<HHIIHH", WAVE_FORMAT_PCM, 1, audio.sample_rate, 2 * audio.sample_rate, 2, 16)
    body = b"WAVE" + b"fmt " + struct.pack("<I", len(fmt)) + fmt + b"data" + struct.pack("<I", len(pcm)) + pcm
    if len(pcm) & 1:
        body += b"\x00"
    return b"RIFF" + struct.pack("<I", len(body)) + body


def wav_read(path, sample_rate: int = 16000) -> AudioBuffer:
    try:
        blob = Path(path).read_bytes()
    except OSError as e:
        raise WavError(f"cannot read {path}: {e.strerror}") from None
    return decode(blob, sample_rate)


def wav_write(path, audio: AudioBuffer) -> None:
    Path(path).write_bytes(encode(audio))
