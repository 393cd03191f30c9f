"""Synthetic dynamic mixing, Adam, gradient clipping and the training loop."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import checkpoint
from .loss import LossConfig, total_loss
from .metrics import si_sdr
from .model import ForkNet, ForkNetConfig
from .nncore.params import ParamStore
from .spectral import AudioBuffer

NOISE_KINDS = ("white", "pink")


class NonFiniteGradient(FloatingPointError):
    """Raised by :meth:`Adam.step` when a gradient holds NaN or inf; no parameter is touched."""


class TrainingDiverged(RuntimeError):
    """Raised when the training loss becomes NaN or infinite."""


@dataclass
class TrainConfig:
    lr: float = 4e-4
    decay: float = 0.98
    clip_norm: float = 5.0
    chunk_s: float = 4.0
    snr_range_db: tuple[float, float] = (-5.0, 20.0)
    epochs: int = 100
    batch_size: int = 2
    seed: int = 0
    utterances_per_epoch: int = 64
    val_utterances: int = 8
    val_dur_s: float = 1.0
    noise_kinds: tuple[str, ...] = NOISE_KINDS
    sample_rate: int = 16000

    def __post_init__(self):
        self.snr_range_db = tuple(float(s) for s in self.snr_range_db)
        self.noise_kinds = tuple(self.noise_kinds)
        self.validate()

    def validate(self) -> None:
        if not self.lr > 0:
            raise ValueError(f"lr must be positive, got {self.lr}")
        if not 0 < self.decay <= 1:
            raise ValueError(f"decay must be in (0, 1], got {self.decay}")
        if not self.clip_norm > 0:
            raise ValueError(f"clip_norm must be positive, got {self.clip_norm}")
        if not self.chunk_s > 0 or not self.val_dur_s > 0:
            raise ValueError("chunk_s and val_dur_s must be positive")
        if len(self.snr_range_db) != 2 or self.snr_range_db[0] > self.snr_range_db[1]:
            raise ValueError(f"snr_range_db must be [low, high] with low <= high, got {self.snr_range_db}")
        for name in ("epochs", "val_utterances"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        for name in ("batch_size", "utterances_per_epoch"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        bad = [k for k in self.noise_kinds if k not in NOISE_KINDS]
        if bad or not self.noise_kinds:
            raise ValueError(f"noise_kinds must be a non-empty subset of {NOISE_KINDS}, got {self.noise_kinds}")

    @property
    def steps_per_epoch(self) -> int:
        return math.ceil(self.utterances_per_epoch / self.batch_size)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["snr_range_db"] = list(self.snr_range_db)
        d["noise_kinds"] = list(self.noise_kinds)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d)


# ------------------------------------------------------------------ synthetic data


@dataclass
class MixtureSample:
    clean: AudioBuffer
    noise: AudioBuffer
    mixture: AudioBuffer
    snr_db: float


def _n_samples(dur_s: float, sample_rate: int) -> int:
    if not dur_s > 0:
        raise ValueError(f"dur_s must be positive, got {dur_s}")
    return max(1, round(dur_s * sample_rate))


def synth_clean(seed, dur_s: float, sample_rate: int = 16000) -> AudioBuffer:
    """Harmonic tone complex with a slow amplitude envelope, peak 0.5."""
    n = _n_samples(dur_s, sample_rate)
    rng = np.random.default_rng(seed)
    t = np.arange(n) / sample_rate
    f0 = rng.uniform(100.0, 300.0)
    n_harm = int(rng.integers(3, 7))
    amps = rng.uniform(0.2, 1.0, n_harm) / np.arange(1, n_harm + 1)
    phases = rng.uniform(0, 2 * np.pi, n_harm)
    x = np.zeros(n)
    for k in range(n_harm):
        x += amps[k] * np.sin(2 * np.pi * f0 * (k + 1) * t + phases[k])
    f_am = rng.uniform(2.0, 8.0)
    depth = rng.uniform(0.5, 0.9)
    env = 1.0 - depth * 0.5 * (1.0 + np.cos(2 * np.pi * f_am * t + rng.uniform(0, 2 * np.pi)))
    x *= env
    return AudioBuffer(0.5 * x / np.max(np.abs(x)), sample_rate)


def synth_noise(seed, dur_s: float, kind: str = "white", sample_rate: int = 16000) -> AudioBuffer:
    """Unit-RMS Gaussian noise; ``pink`` shapes the spectrum by 1/sqrt(f)."""
    if kind not in NOISE_KINDS:
        raise ValueError(f"noise kind must be one of {NOISE_KINDS}, got {kind!r}")
    n = _n_samples(dur_s, sample_rate)
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(n)
    if kind == "pink":
        spec = np.fft.rfft(x)
        f = np.fft.rfftfreq(n)
        gain = np.zeros_like(f)
        gain[1:] = 1.0 / np.sqrt(f[1:])
        x = np.fft.irfft(spec * gain, n)
    rms = np.sqrt(np.mean(x * x))
    return AudioBuffer(x / rms if rms > 0 else x, sample_rate)


def mix_at_snr(clean: AudioBuffer, noise: AudioBuffer, snr_db: float) -> MixtureSample:
    if len(clean) != len(noise):
        raise ValueError(f"mix_at_snr length mismatch: {len(clean)} vs {len(noise)}")
    if clean.sample_rate != noise.sample_rate:
        raise ValueError("mix_at_snr sample rate mismatch")
    p_clean = np.mean(clean.samples**2)
    p_noise = np.mean(noise.samples**2)
    if p_clean <= 0:
        raise ValueError("mix_at_snr: clean signal is silent")
    if p_noise <= 0:
        raise ValueError("mix_at_snr: noise signal is silent")
    scale = np.sqrt(p_clean / (p_noise * 10.0 ** (snr_db / 10.0)))
    z = noise.samples * scale
    sr = clean.sample_rate
    return MixtureSample(clean, AudioBuffer(z, sr), AudioBuffer(clean.samples + z, sr), float(snr_db))


def draw_mixture(key, dur_s: float, snr_range_db, kinds=NOISE_KINDS, sample_rate: int = 16000) -> MixtureSample:
    """Mixture fully determined by ``key`` (anything ``default_rng`` accepts)."""
    rng = np.random.default_rng(key)
    clean_seed, noise_seed = rng.integers(0, 2**63 - 1, size=2)
    kind = kinds[int(rng.integers(len(kinds)))]
    snr = rng.uniform(snr_range_db[0], snr_range_db[1])
    clean = synth_clean(int(clean_seed), dur_s, sample_rate)
    noise = synth_noise(int(noise_seed), dur_s, kind, sample_rate)
    return mix_at_snr(clean, noise, snr)


def training_mixture(cfg: TrainConfig, epoch: int, index: int) -> MixtureSample:
    return draw_mixture([cfg.seed, 0, epoch, index], cfg.chunk_s, cfg.snr_range_db, cfg.noise_kinds, cfg.sample_rate)


def validation_mixture(cfg: TrainConfig, index: int) -> MixtureSample:
    return draw_mixture([cfg.seed, 1, index], cfg.val_dur_s, cfg.snr_range_db, cfg.noise_kinds, cfg.sample_rate)


# ------------------------------------------------------------------ optimisation


def lr_at(epoch: int, cfg: TrainConfig) -> float:
    if epoch < 0:
        raise ValueError(f"epoch must be >= 0, got {epoch}")
    return cfg.lr * cfg.decay ** (epoch // 2)


def global_norm(grads: dict[str, np.ndarray]) -> float:
    # scale by the largest entry first so huge gradients do not overflow the sum of squares
    peak = max((float(np.max(np.abs(g))) for g in grads.values() if g.size), default=0.0)
    if peak == 0 or not math.isfinite(peak):
        return peak
    return peak * float(np.sqrt(sum(float(np.sum((g / peak) ** 2)) for g in grads.values())))


def clip_grad_norm(grads: dict[str, np.ndarray], max_norm: float = 5.0) -> dict[str, np.ndarray]:
    """Rescale all gradients jointly so their global L2 norm is at most ``max_norm``."""
    norm = global_norm(grads)
    if norm <= max_norm:
        return dict(grads)
    scale = max_norm / norm
    return {n: g * scale for n, g in grads.items()}


class Adam:
    def __init__(self, params: ParamStore, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = {n: np.zeros_like(p.data) for n, p in params.items()}
        self.v = {n: np.zeros_like(p.data) for n, p in params.items()}

    def step(self, grads: dict[str, np.ndarray], lr: float) -> None:
        for n, g in grads.items():
            if not np.all(np.isfinite(g)):
                raise NonFiniteGradient(f"non-finite gradient for {n}; step skipped")
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1**self.t
        c2 = 1.0 - b2**self.t
        for n, p in self.params.items():
            g = grads[n]
            m = self.m[n] = b1 * self.m[n] + (1.0 - b1) * g
            v = self.v[n] = b2 * self.v[n] + (1.0 - b2) * g * g
            p.data = p.data - lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def state(self) -> dict[str, np.ndarray]:
        out = {}
        for n in self.m:
            out[f"adam.m.{n}"] = self.m[n]
            out[f"adam.v.{n}"] = self.v[n]
        return out

    def load_state(self, tensors: dict[str, np.ndarray], t: int) -> None:
        for n in self.m:
            self.m[n] = np.array(tensors[f"adam.m.{n}"])
            self.v[n] = np.array(tensors[f"adam.v.{n}"])
        self.t = int(t)


def adam_step(params: ParamStore, grads: dict[str, np.ndarray], t: int, lr: float, opt: Adam | None = None) -> Adam:
    """Functional wrapper: apply step ``t`` (1-based) using ``opt``'s moment state."""
    opt = opt or Adam(params)
    opt.t = t - 1
    opt.step(grads, lr)
    return opt


# ------------------------------------------------------------------ loop


@dataclass
class EpochRecord:
    step: int
    epoch: int
    lr: float
    loss: float
    val_si_sdr: float

    def line(self) -> str:
        return (f"step={self.step} epoch={self.epoch} lr={self.lr:.6g} loss={self.loss:.6f} "
                f"val_si_sdr={self.val_si_sdr:.3f}")


@dataclass
class Trainer:
    """Owns the model, optimiser state and the position within the epoch schedule.

    Training data is a pure function of ``(seed, epoch, index)``, so the
    position plus parameters and Adam moments is all that a resume needs.
    """

    model: ForkNet
    cfg: TrainConfig
    loss_cfg: LossConfig = field(default_factory=LossConfig)
    ckpt_dir: Path | None = None
    log_path: Path | None = None
    echo: Callable[[str], None] | None = None
    epoch: int = 0
    batch: int = 0
    step: int = 0
    best_val: float = -math.inf
    losses: list[float] = field(default_factory=list)
    records: list[EpochRecord] = field(default_factory=list)

    def __post_init__(self):
        self.opt = Adam(self.model.params)
        if self.ckpt_dir is not None:
            self.ckpt_dir = Path(self.ckpt_dir)
            self.ckpt_dir.mkdir(parents=True, exist_ok=True)
        if self.log_path is not None:
            self.log_path = Path(self.log_path)

    # data
    def batch_data(self, epoch: int, batch: int) -> tuple[np.ndarray, np.ndarray]:
        lo = batch * self.cfg.batch_size
        hi = min(lo + self.cfg.batch_size, self.cfg.utterances_per_epoch)
        mixes = [training_mixture(self.cfg, epoch, i) for i in range(lo, hi)]
        noisy = np.stack([m.mixture.samples for m in mixes])
        clean = np.stack([m.clean.samples for m in mixes])
        return noisy, clean

    # one update
    def loss_and_grads(self, noisy: np.ndarray, clean: np.ndarray) -> tuple[float, dict[str, np.ndarray]]:
        params = self.model.params
        params.zero_grad()
        _, est, wave = self.model.forward(noisy)
        ref = self.model.spectrum(clean)
        loss = total_loss(est, ref, wave, clean, self.loss_cfg)
        value = float(loss.data)
        if not math.isfinite(value):
            raise TrainingDiverged(f"loss is {value} at step {self.step} (epoch {self.epoch}, batch {self.batch})")
        loss.backward()
        return value, params.grads()

    def train_step(self, noisy: np.ndarray, clean: np.ndarray, lr: float) -> float:
        value, grads = self.loss_and_grads(noisy, clean)
        self.opt.step(clip_grad_norm(grads, self.cfg.clip_norm), lr)
        self.step += 1
        self.losses.append(value)
        return value

    # evaluation
    def validate(self) -> tuple[float, float]:
        """Mean SI-SDR of ``(noisy, enhanced)`` over the held-out mixtures."""
        if self.cfg.val_utterances == 0:
            return math.nan, math.nan
        return evaluate(self.model, [validation_mixture(self.cfg, i) for i in range(self.cfg.val_utterances)])

    # loop
    def run(self, epochs: int | None = None) -> list[EpochRecord]:
        """Train until ``epochs`` (default ``cfg.epochs``) epochs have completed."""
        target = self.cfg.epochs if epochs is None else epochs
        while self.epoch < target:
            lr = lr_at(self.epoch, self.cfg)
            while self.batch < self.cfg.steps_per_epoch:
                noisy, clean = self.batch_data(self.epoch, self.batch)
                self.train_step(noisy, clean, lr)
                self.batch += 1
            n = self.cfg.steps_per_epoch
            record = EpochRecord(self.step, self.epoch, lr, float(np.mean(self.losses[-n:])), self.validate()[1])
            self.records.append(record)
            self._log(record.line())
            self.epoch += 1
            self.batch = 0
            if self.ckpt_dir is not None:
                self.save(self.ckpt_dir / "latest.ckpt")
                if record.val_si_sdr > self.best_val:
                    self.best_val = record.val_si_sdr
                    self.save(self.ckpt_dir / "best.ckpt")
            elif record.val_si_sdr > self.best_val:
                self.best_val = record.val_si_sdr
        return self.records

    def _log(self, line: str) -> None:
        if self.log_path is not None:
            with open(self.log_path, "a") as f:
                f.write(line + "\n")
        if self.echo is not None:
            self.echo(line)

    # persistence
    def save(self, path) -> None:
        meta = {"epoch": self.epoch, "batch": self.batch, "step": self.step, "adam_t": self.opt.t,
                "best_val": self.best_val}
        tensors = self.model.params.state()
        tensors.update(self.opt.state())
        config = {"model": self.model.cfg.to_dict(), "train": self.cfg.to_dict(), "loss": asdict(self.loss_cfg)}
        checkpoint.save(path, config, tensors, meta)

    @classmethod
    def resume(cls, path, **kw) -> "Trainer":
        config, tensors, meta = checkpoint.load(path)
        try:
            model = ForkNet(ForkNetConfig.from_dict(config["model"]))
            cfg = TrainConfig.from_dict(config["train"])
            loss_cfg = LossConfig(**config["loss"])
        except (KeyError, TypeError, ValueError) as e:
            raise checkpoint.CheckpointError(f"checkpoint is not a training checkpoint: {e}") from None
        model.params.load_state({n: tensors[n] for n in model.params.names()})
        tr = cls(model, cfg, loss_cfg, **kw)
        tr.opt.load_state(tensors, meta["adam_t"])
        tr.epoch, tr.batch, tr.step = meta["epoch"], meta["batch"], meta["step"]
        tr.best_val = meta["best_val"]
        return tr


def interior(x, margin: int) -> np.ndarray:
    """Drop ``margin`` samples at both ends (the region the iSTFT cannot rebuild exactly)."""
    x = x.samples if isinstance(x, AudioBuffer) else np.asarray(x)
    if x.shape[-1] <= 2 * margin:
        raise ValueError(f"signal of {x.shape[-1]} samples has no interior with margin {margin}")
    return x[..., margin:x.shape[-1] - margin]


def evaluate(model: ForkNet, mixtures: list[MixtureSample]) -> tuple[float, float]:
    """Mean SI-SDR in dB of the noisy inputs and of the enhanced outputs.

    Both are scored on the interior ``[win, N - win)``: the first and last
    window of a causal, DC-free resynthesis are divided by a near-zero window
    envelope and are not meaningful even for an identity mask.
    """
    margin = model.cfg.stft.win_size
    noisy, enhanced = [], []
    for m in mixtures:
        ref = interior(m.clean, margin)
        noisy.append(si_sdr(interior(m.mixture, margin), ref))
        enhanced.append(si_sdr(interior(model.enhance(m.mixture), margin), ref))
    return float(np.mean(noisy)), float(np.mean(enhanced))


def overfit(model: ForkNet, sample: MixtureSample, steps: int, lr: float, clip_norm: float = 5.0,
            lr_decay: float = 1.0,
            loss_cfg: LossConfig | None = None, stop: Callable[[int, float], bool] | None = None) -> list[float]:
    """Repeatedly fit one fixed mixture; returns the loss before each update.

    The step size for update ``i`` (0-based) is ``lr * lr_decay**i``.

    ``stop(step, loss)`` is consulted after each update and ends the run early
    when it returns true.
    """
    cfg = TrainConfig(lr=lr, clip_norm=clip_norm, batch_size=1, epochs=0, val_utterances=0)
    tr = Trainer(model, cfg, loss_cfg or LossConfig())
    noisy = sample.mixture.samples[None]
    clean = sample.clean.samples[None]
    for i in range(steps):
        loss = tr.train_step(noisy, clean, lr * lr_decay**i)
        if stop is not None and stop(i + 1, loss):
            break
    return tr.losses
