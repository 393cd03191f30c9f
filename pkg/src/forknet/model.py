"""ForkNet: time, real/imaginary and magnitude encoders feeding dual-path blocks
and a complex-ratio-mask decoder.

Internal feature maps are channel-last ``(batch, frames, freq, channels)``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .nncore import functional as fn
from .nncore.layers import (
    GRU,
    DilatedDenseBlock,
    GatedConv2d,
    ImprovedTransformer,
    LayerNorm,
    Linear,
    PointwiseConv,
)
from .nncore.params import ParamStore, uniform_fan_in
from .nncore.tensor import Tensor, concat, no_grad, pad, relu, reshape, transpose
from . import checkpoint
from .spectral import AudioBuffer, StftConfig, complex_mul_tensor, istft_tensor, stft_array


class ConfigError(ValueError):
    """A configuration violates one of the model's structural invariants."""


@dataclass
class ForkNetConfig:
    """Architecture hyperparameters.

    ``mag_channels``, ``ri_channels`` and ``time_channels`` are the widths of
    the three encoders and must sum to ``2 * width``; a zero width drops that
    encoder (the Ref1/Ref2 ablations).
    """

    mag_channels: int = 24
    ri_channels: int = 24
    time_channels: int = 16
    width: int = 32
    blocks: int = 4
    heads: int = 4
    dense_depth: int = 4
    ffn_hidden: int = 64
    time_window: int = 2
    time_stride: int = 1
    seg_chunk: int = 256
    seg_hop: int = 256
    stft: StftConfig = field(default_factory=StftConfig)

    def validate(self) -> None:
        enc = self.mag_channels + self.ri_channels + self.time_channels
        if enc != 2 * self.width:
            raise ConfigError(f"mag_channels + ri_channels + time_channels = {enc} must equal 2 * width = "
                              f"{2 * self.width}")
        if min(self.mag_channels, self.ri_channels, self.time_channels) < 0:
            raise ConfigError("encoder widths must be non-negative")
        if self.ri_channels == 0:
            raise ConfigError("ri_channels must be positive: the mask is applied to the RI encoder's input")
        for name in ("width", "heads", "dense_depth", "ffn_hidden", "time_window"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.blocks < 0:
            raise ConfigError("blocks must be >= 0")
        if self.width % self.heads:
            raise ConfigError(f"width {self.width} must be divisible by heads {self.heads}")
        if self.time_stride != 1:
            raise ConfigError("time_stride must be 1")
        hop, bins = self.stft.hop_size, self.stft.n_bins
        if self.seg_hop != hop or self.seg_chunk != bins:
            raise ConfigError(f"segmentation chunk/hop ({self.seg_chunk}/{self.seg_hop}) must equal the STFT "
                              f"bin count/hop ({bins}/{hop})")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ForkNetConfig":
        d = dict(d)
        stft = d.pop("stft", None)
        cfg = cls(**d)
        if stft is not None:
            cfg.stft = StftConfig(**stft)
        return cfg

    @classmethod
    def base(cls, **kw) -> "ForkNetConfig":
        return cls(**kw)

    @classmethod
    def ref1(cls, **kw) -> "ForkNetConfig":
        """RI encoder only."""
        base = cls(**kw)
        return replace(base, mag_channels=0, ri_channels=2 * base.width, time_channels=0)

    @classmethod
    def ref2(cls, **kw) -> "ForkNetConfig":
        """RI and magnitude encoders, no time-domain encoder."""
        base = cls(**kw)
        return replace(base, mag_channels=base.width, ri_channels=base.width, time_channels=0)

    @classmethod
    def tiny(cls, fft_size: int = 512, **kw) -> "ForkNetConfig":
        """Small network for desk-scale training and gradient checks."""
        sr = 16000
        stft = StftConfig(win_ms=fft_size * 1000 / sr, fft_size=fft_size, sample_rate=sr)
        opts = dict(mag_channels=6, ri_channels=6, time_channels=4, width=8, blocks=2, heads=2,
                    dense_depth=4, ffn_hidden=16, seg_chunk=fft_size // 2, seg_hop=fft_size // 2, stft=stft)
        opts.update(kw)
        return cls(**opts)


class ForkNet:
    def __init__(self, cfg: ForkNetConfig, seed: int = 0):
        cfg.validate()
        self.cfg = cfg
        self.params = ParamStore()
        rng = np.random.default_rng(seed)
        p = self.params
        d = cfg.width
        depth = cfg.dense_depth
        self.mag_proj = self.mag_dense = None
        if cfg.mag_channels:
            self.mag_proj = PointwiseConv(p, "enc.mag.proj", rng, 1, cfg.mag_channels)
            self.mag_dense = DilatedDenseBlock(p, "enc.mag.dense", rng, cfg.mag_channels, depth)
        self.ri_proj = PointwiseConv(p, "enc.ri.proj", rng, 2, cfg.ri_channels)
        self.ri_dense = DilatedDenseBlock(p, "enc.ri.dense", rng, cfg.ri_channels, depth)
        self.time_w = self.time_b = None
        if cfg.time_channels:
            k = cfg.time_window
            self.time_w = p.add("enc.time.conv.weight", uniform_fan_in(rng, (k, cfg.time_channels), k))
            self.time_b = p.add("enc.time.conv.bias", np.zeros(cfg.time_channels))
        self.fuse_in = PointwiseConv(p, "fuse.enc", rng, 2 * d, d)
        self.blocks = []
        for b in range(cfg.blocks):
            pre = f"dpp{b}"
            self.blocks.append((
                GRU(p, f"{pre}.temporal.gru", rng, d, d),
                Linear(p, f"{pre}.temporal.proj", rng, d, d),
                LayerNorm(p, f"{pre}.temporal.norm", rng, d),
                ImprovedTransformer(p, f"{pre}.spectral", rng, d, cfg.heads, cfg.ffn_hidden),
            ))
        self.fuse_out = PointwiseConv(p, "dec.fuse", rng, d, 2 * d)
        self.dec_gate = GatedConv2d(p, "dec.gated", rng, 2 * d, 2 * d)
        self.dec_dense = DilatedDenseBlock(p, "dec.dense", rng, 2 * d, depth)
        self.dec_out = PointwiseConv(p, "dec.out", rng, 2 * d, 2)

    # ----------------------------------------------------------------- stages

    def spectrum(self, x: np.ndarray) -> np.ndarray:
        """Noisy STFT as ``(..., frames, bins, 2)``."""
        s = self.cfg.stft
        z = stft_array(x, s.win_size, s.hop_size, s.fft_size, s.remove_dc)
        return np.stack([z.real, z.imag], axis=-1)

    def mag_encoder(self, mag: Tensor) -> Tensor:
        return self.mag_dense(self.mag_proj(mag))

    def ri_encoder(self, spec: Tensor) -> Tensor:
        return self.ri_dense(self.ri_proj(spec))

    def time_encoder(self, x, n_frames: int) -> Tensor:
        """Causal 1-D conv over samples, ReLU, then cut into frame-aligned chunks.

        Chunk ``t`` holds conv outputs for samples ``[t*hop, t*hop + chunk)``,
        zero-padded or truncated to exactly ``n_frames`` chunks.
        """
        x = x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)
        n = x.shape[-1]
        k = self.cfg.time_window
        if n < self.cfg.stft.win_size:
            raise ValueError(f"time_encoder: {n} samples is shorter than one frame ({self.cfg.stft.win_size})")
        xp = np.concatenate([np.zeros(x.shape[:-1] + (k - 1,)), x], axis=-1)
        taps = np.stack([xp[..., i:i + n] for i in range(k)], axis=-1)
        w = relu(fn.linear(Tensor(taps), self.time_w, self.time_b))
        hop, chunk = self.cfg.seg_hop, self.cfg.seg_chunk
        need = n_frames * hop
        w = pad(w, [(0, 0)] * (w.ndim - 2) + [(0, need - n), (0, 0)])
        return reshape(w, x.shape[:-1] + (n_frames, chunk, self.cfg.time_channels))

    def fuse(self, feats: list[Tensor]) -> Tensor:
        h = concat(feats, axis=-1)
        if h.shape[-1] != 2 * self.cfg.width:
            raise ValueError(f"fuse: got {h.shape[-1]} channels, expected {2 * self.cfg.width}")
        return self.fuse_in(h)

    def dpp_block(self, b: int, r: Tensor) -> Tensor:
        gru, proj, norm, spectral = self.blocks[b]
        nb, nt, nf, d = r.shape
        # sub-band temporal: each frequency bin is a length-T sequence
        seq = reshape(transpose(r, (0, 2, 1, 3)), (nb * nf, nt, d))
        h = transpose(reshape(proj(gru(seq)), (nb, nf, nt, d)), (0, 2, 1, 3))
        u = norm(r + h)
        # intra-frame spectral: each frame is a length-F sequence
        out = spectral(reshape(u, (nb * nt, nf, d)))
        return reshape(out, (nb, nt, nf, d))

    def decoder(self, r: Tensor) -> Tensor:
        return self.dec_out(self.dec_dense(self.dec_gate(self.fuse_out(r))))

    # ---------------------------------------------------------------- end to end

    def forward(self, x: np.ndarray) -> tuple[Tensor, Tensor, Tensor]:
        """Return ``(mask, enhanced_spectrum, enhanced_wave)`` for ``(batch, samples)`` input."""
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        spec = Tensor(self.spectrum(x))
        n_frames = spec.shape[1]
        feats = []
        if self.mag_proj is not None:
            mag = np.hypot(spec.data[..., 0], spec.data[..., 1])[..., None]
            feats.append(self.mag_encoder(Tensor(mag)))
        feats.append(self.ri_encoder(spec))
        if self.time_w is not None:
            feats.append(self.time_encoder(x, n_frames))
        r = self.fuse(feats)
        for b in range(len(self.blocks)):
            r = self.dpp_block(b, r)
        mask = self.decoder(r)
        est = complex_mul_tensor(mask, spec)
        wave = istft_tensor(est, x.shape[-1], self.cfg.stft)
        return mask, est, wave

    def enhance(self, audio: AudioBuffer) -> AudioBuffer:
        if len(audio) == 0:
            raise ValueError("enhance: empty input")
        if audio.sample_rate != self.cfg.stft.sample_rate:
            raise ValueError(f"sample_rate: expected {self.cfg.stft.sample_rate}, got {audio.sample_rate}")
        with no_grad():
            _, _, wave = self.forward(audio.samples[None])
        return AudioBuffer(wave.data[0], audio.sample_rate)

    def enhance_batch(self, x: np.ndarray) -> np.ndarray:
        with no_grad():
            return self.forward(x)[2].data

    def set_identity_mask(self) -> None:
        """Zero the output projection and set its bias to 1+0j, so the mask is identically one."""
        self.dec_out.w.data[...] = 0.0
        self.dec_out.b.data[...] = (1.0, 0.0)


def build(cfg: ForkNetConfig, seed: int = 0) -> tuple[ForkNet, ParamStore]:
    model = ForkNet(cfg, seed)
    return model, model.params


def param_count(params: ParamStore) -> int:
    return params.count()


def param_breakdown(params: ParamStore) -> dict[str, int]:
    """Parameter counts grouped by the first two name components (e.g. ``enc.mag``)."""
    out: dict[str, int] = {}
    for name, t in params.items():
        key = ".".join(name.split(".")[:2])
        out[key] = out.get(key, 0) + t.size
    return out


def save_model(path, model: ForkNet, extra: dict[str, np.ndarray] | None = None, meta: dict | None = None,
               config: dict | None = None) -> None:
    """Write parameters (plus optional extra tensors) and the full config."""
    tensors = model.params.state()
    if extra:
        tensors.update(extra)
    cfg = {"model": model.cfg.to_dict()}
    if config:
        cfg.update(config)
    checkpoint.save(path, cfg, tensors, meta)


def load_model(path) -> tuple[ForkNet, dict, dict[str, np.ndarray], dict]:
    """Return ``(model, config, extra_tensors, meta)`` from a checkpoint file."""
    config, tensors, meta = checkpoint.load(path)
    if "model" not in config:
        raise checkpoint.CheckpointError("checkpoint has no model config")
    try:
        cfg = ForkNetConfig.from_dict(config["model"])
        model = ForkNet(cfg)
    except (TypeError, ValueError) as e:
        raise checkpoint.CheckpointError(f"invalid model config in checkpoint: {e}") from None
    names = set(model.params.names())
    model.params.load_state({n: t for n, t in tensors.items() if n in names})
    extra = {n: t for n, t in tensors.items() if n not in names}
    return model, config, extra, meta
