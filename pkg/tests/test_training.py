import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from forknet.checkpoint import CheckpointError
from forknet.model import ForkNet, ForkNetConfig, load_model
from forknet.nncore.params import ParamStore
from forknet.spectral import AudioBuffer
from forknet.training import (Adam, NonFiniteGradient, TrainConfig, Trainer, TrainingDiverged, adam_step,
                              clip_grad_norm, draw_mixture, evaluate, global_norm, interior, lr_at, mix_at_snr,
                              overfit, synth_clean, synth_noise, training_mixture, validation_mixture)


# ------------------------------------------------------------ data


def test_synth_is_deterministic_per_seed():
    assert np.array_equal(synth_clean(3, 0.5).samples, synth_clean(3, 0.5).samples)
    assert not np.array_equal(synth_clean(3, 0.5).samples, synth_clean(4, 0.5).samples)
    for kind in ("white", "pink"):
        assert np.array_equal(synth_noise(9, 0.5, kind).samples, synth_noise(9, 0.5, kind).samples)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32))
def test_clean_peak_is_half(seed):
    x = synth_clean(seed, 0.25).samples
    assert np.max(np.abs(x)) <= 0.5 + 1e-9
    assert abs(np.max(np.abs(x)) - 0.5) < 1e-12


@pytest.mark.parametrize("kind", ["white", "pink"])
def test_noise_is_unit_rms(kind):
    x = synth_noise(1, 1.0, kind).samples
    assert abs(np.sqrt(np.mean(x * x)) - 1) < 1e-12


def periodogram_slope_db_per_octave(x, sr=16000, lo=100.0, hi=4000.0):
    """Least-squares fit of 10 log10 P(f) against log2 f over [lo, hi], Welch averaged."""
    seg = 2048
    w = np.hanning(seg)
    frames = [x[i:i + seg] * w for i in range(0, len(x) - seg + 1, seg // 2)]
    p = np.mean([np.abs(np.fft.rfft(f)) ** 2 for f in frames], axis=0)
    f = np.fft.rfftfreq(seg, 1 / sr)
    band = (f >= lo) & (f <= hi)
    return np.polyfit(np.log2(f[band]), 10 * np.log10(p[band]), 1)[0]


def test_pink_noise_slope():
    slopes = [periodogram_slope_db_per_octave(synth_noise(s, 4.0, "pink").samples) for s in range(3)]
    assert all(abs(s + 3) <= 1 for s in slopes), slopes
    white = periodogram_slope_db_per_octave(synth_noise(0, 4.0, "white").samples)
    assert abs(white) <= 1


def test_mix_at_zero_db_equal_powers():
    m = mix_at_snr(synth_clean(0, 0.5), synth_noise(1, 0.5), 0.0)
    pc, pn = np.mean(m.clean.samples**2), np.mean(m.noise.samples**2)
    assert abs(pc / pn - 1) < 1e-9
    assert np.array_equal(m.mixture.samples, m.clean.samples + m.noise.samples)


def test_mix_at_high_snr_is_clean():
    m = mix_at_snr(synth_clean(0, 0.5), synth_noise(1, 0.5), 100.0)
    err = np.linalg.norm(m.mixture.samples - m.clean.samples) / np.linalg.norm(m.clean.samples)
    assert err < 1e-4


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.floats(-20, 40), st.sampled_from(["white", "pink"]))
def test_mix_measured_snr(seed, snr, kind):
    m = mix_at_snr(synth_clean(seed, 0.1), synth_noise(seed + 1, 0.1, kind), snr)
    got = 10 * np.log10(np.mean(m.clean.samples**2) / np.mean(m.noise.samples**2))
    assert abs(got - snr) < 1e-9


def test_mix_errors():
    c, n = synth_clean(0, 0.1), synth_noise(0, 0.1)
    with pytest.raises(ValueError):
        mix_at_snr(AudioBuffer(np.zeros(1600)), n, 0)
    with pytest.raises(ValueError):
        mix_at_snr(c, AudioBuffer(np.zeros(1600)), 0)
    with pytest.raises(ValueError):
        mix_at_snr(c, synth_noise(0, 0.2), 0)
    with pytest.raises(ValueError):
        synth_clean(0, 0)
    with pytest.raises(ValueError):
        synth_noise(0, 1, "brown")


def test_mixture_streams_are_keyed():
    cfg = TrainConfig(chunk_s=0.1, val_dur_s=0.1)
    a, b = training_mixture(cfg, 0, 0), training_mixture(cfg, 0, 0)
    assert np.array_equal(a.mixture.samples, b.mixture.samples)
    assert not np.array_equal(a.clean.samples, training_mixture(cfg, 1, 0).clean.samples)
    assert not np.array_equal(a.clean.samples, validation_mixture(cfg, 0).clean.samples)
    m = draw_mixture(5, 0.1, (0, 10))
    assert 0 <= m.snr_db <= 10


# ------------------------------------------------------------ optimiser


def one_param_store(value=0.0, shape=(1,)):
    store = ParamStore()
    store.add("w", np.full(shape, value))
    return store


def test_adam_first_step_hand_value():
    store = one_param_store()
    adam_step(store, {"w": np.ones(1)}, 1, 4e-4)
    assert abs(store["w"].data[0] - (-3.99999996e-4)) < 1e-15


def test_adam_zero_gradient_is_noop():
    store = one_param_store(1.5, (3, 2))
    opt = Adam(store)
    opt.step({"w": np.zeros((3, 2))}, 4e-4)
    assert np.array_equal(store["w"].data, np.full((3, 2), 1.5))


def test_adam_identical_runs():
    def run():
        store = one_param_store(0.3, (4,))
        opt = Adam(store)
        rng = np.random.default_rng(0)
        out = []
        for _ in range(20):
            opt.step({"w": rng.standard_normal(4)}, 1e-2)
            out.append(store["w"].data.copy())
        return np.array(out)

    assert np.array_equal(run(), run())


def test_adam_rejects_non_finite_without_touching_state():
    store = one_param_store(1.0, (2,))
    opt = Adam(store)
    with pytest.raises(NonFiniteGradient):
        opt.step({"w": np.array([1.0, np.nan])}, 1e-3)
    assert opt.t == 0 and np.array_equal(store["w"].data, [1.0, 1.0]) and not opt.m["w"].any()


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000), st.floats(1e-6, 4e-4))
def test_clipped_step_keeps_params_finite(seed, lr):
    rng = np.random.default_rng(seed)
    store = one_param_store(0.0, (5,))
    store["w"].data = rng.standard_normal(5) * 1e3
    g = rng.standard_normal(5) * 10 ** rng.uniform(-30, 300)
    Adam(store).step(clip_grad_norm({"w": g}), lr)
    assert np.all(np.isfinite(store["w"].data))


def test_clip_examples():
    g = {"a": np.array([6.0]), "b": np.array([8.0])}
    c = clip_grad_norm(g, 5)
    assert c["a"][0] == 3.0 and c["b"][0] == 4.0 and abs(global_norm(c) - 5) < 1e-12
    g = {"a": np.array([1.8, 2.4])}
    assert np.array_equal(clip_grad_norm(g, 5)["a"], g["a"])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=12))
def test_clip_post_norm_bound(values):
    c = clip_grad_norm({"g": np.array(values)}, 5)
    assert global_norm(c) <= 5 + 1e-9


def test_lr_schedule():
    cfg = TrainConfig()
    assert lr_at(0, cfg) == lr_at(1, cfg) == 4e-4
    assert abs(lr_at(2, cfg) - 3.92e-4) < 1e-18 and lr_at(3, cfg) == lr_at(2, cfg)
    assert abs(lr_at(10, cfg) - 4e-4 * 0.98**5) < 1e-18
    with pytest.raises(ValueError):
        lr_at(-1, cfg)


def test_train_config_round_trip_and_validation():
    cfg = TrainConfig(lr=1e-3, snr_range_db=(0.0, 10.0))
    assert TrainConfig.from_dict(cfg.to_dict()) == cfg
    for kw in (dict(lr=0), dict(batch_size=0), dict(snr_range_db=(5, 1)), dict(noise_kinds=("red",))):
        with pytest.raises(ValueError):
            TrainConfig(**kw).validate()


# ------------------------------------------------------------ loop


def small_cfg(**kw):
    base = dict(chunk_s=0.1, utterances_per_epoch=4, batch_size=2, val_utterances=1, val_dur_s=0.2, epochs=2,
                lr=1e-3)
    base.update(kw)
    return TrainConfig(**base)


def test_trainer_logs_and_checkpoints(tmp_path):
    lines = []
    tr = Trainer(ForkNet(ForkNetConfig.tiny(), 0), small_cfg(), ckpt_dir=tmp_path, log_path=tmp_path / "log",
                 echo=lines.append)
    records = tr.run()
    assert [r.epoch for r in records] == [0, 1] and tr.step == 4
    assert all(math.isfinite(r.loss) for r in records) and all(math.isfinite(x) for x in tr.losses)
    assert (tmp_path / "log").read_text().splitlines() == lines
    assert lines[0].startswith("step=2 epoch=0 lr=0.001 loss=")
    assert (tmp_path / "latest.ckpt").exists() and (tmp_path / "best.ckpt").exists()
    model, config, extra, meta = load_model(tmp_path / "latest.ckpt")
    assert meta["epoch"] == 2 and any(k.startswith("adam.m.") for k in extra)


def test_resume_reproduces_next_steps_bitwise(tmp_path):
    cfg = small_cfg(epochs=2)
    full = Trainer(ForkNet(ForkNetConfig.tiny(), 0), cfg)
    full.run()
    part = Trainer(ForkNet(ForkNetConfig.tiny(), 0), cfg, ckpt_dir=tmp_path)
    part.run(1)
    resumed = Trainer.resume(tmp_path / "latest.ckpt")
    resumed.run()
    assert full.losses[2:] == resumed.losses
    assert all(np.array_equal(full.model.params[n].data, resumed.model.params[n].data) for n in full.model.params)


def test_resume_mid_epoch(tmp_path):
    cfg = small_cfg(epochs=1)
    full = Trainer(ForkNet(ForkNetConfig.tiny(), 0), cfg)
    full.run()
    part = Trainer(ForkNet(ForkNetConfig.tiny(), 0), cfg)
    part.train_step(*part.batch_data(0, 0), lr_at(0, cfg))
    part.batch = 1
    part.save(tmp_path / "mid.ckpt")
    resumed = Trainer.resume(tmp_path / "mid.ckpt")
    resumed.run()
    assert resumed.losses == full.losses[1:]


def test_resume_rejects_plain_model_checkpoint(tmp_path):
    from forknet.model import save_model

    save_model(tmp_path / "m.ckpt", ForkNet(ForkNetConfig.tiny()))
    with pytest.raises(CheckpointError):
        Trainer.resume(tmp_path / "m.ckpt")


def test_nan_loss_halts_with_diagnostic():
    tr = Trainer(ForkNet(ForkNetConfig.tiny(), 0), small_cfg())
    noisy, clean = tr.batch_data(0, 0)
    noisy[0, 10] = np.nan
    with pytest.raises(TrainingDiverged, match="step 0"):
        tr.train_step(noisy, clean, 1e-3)
    assert tr.step == 0


def test_overfit_returns_pre_update_losses_and_stops():
    m = draw_mixture(0, 0.1, (5, 5))
    calls = []
    losses = overfit(ForkNet(ForkNetConfig.tiny(), 0), m, 10, 1e-3,
                     stop=lambda step, loss: calls.append(step) or step == 3)
    assert len(losses) == 3 and calls == [1, 2, 3]


def test_interior_and_evaluate():
    assert interior(np.arange(10), 2).tolist() == [2, 3, 4, 5, 6, 7]
    with pytest.raises(ValueError):
        interior(np.arange(4), 2)
    model = ForkNet(ForkNetConfig.tiny(), 0)
    model.set_identity_mask()
    noisy, enhanced = evaluate(model, [draw_mixture(1, 0.5, (0, 10))])
    assert math.isfinite(noisy) and math.isfinite(enhanced)


def test_clip_huge_gradient_keeps_direction():
    g = {"a": np.array([3e300, 4e300])}
    assert global_norm(g) == pytest.approx(5e300)
    np.testing.assert_allclose(clip_grad_norm(g, 5)["a"], [3.0, 4.0], rtol=1e-12)
