"""ForkNet: causal speech enhancement with time, real/imaginary and magnitude encoders."""

from .loss import LossConfig, multires_loss, spec_loss, total_loss
from .metrics import si_sdr
from .model import ConfigError, ForkNet, ForkNetConfig, build, load_model, param_count, save_model
from .spectral import AudioBuffer, ComplexSpectrogram, StftConfig, istft, stft
from .training import Adam, MixtureSample, TrainConfig, Trainer, clip_grad_norm, lr_at, mix_at_snr, synth_clean, synth_noise
from .wavio import wav_read, wav_write

__all__ = [
    "Adam", "AudioBuffer", "ComplexSpectrogram", "ConfigError", "ForkNet", "ForkNetConfig", "LossConfig",
    "MixtureSample", "StftConfig", "TrainConfig", "Trainer", "build", "clip_grad_norm", "istft", "load_model",
    "lr_at", "mix_at_snr", "multires_loss", "param_count", "save_model", "si_sdr", "spec_loss", "stft",
    "synth_clean", "synth_noise", "total_loss", "wav_read", "wav_write",
]
