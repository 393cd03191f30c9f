from __future__ import annotations

import numpy as np

from .spectral import AudioBuffer

SI_SDR_CAP_DB = 100.0


def si_sdr(est, ref) -> float:
    """Scale-invariant signal-to-distortion ratio in dB.

    Both signals are mean-removed; the estimate is projected onto the
    reference. Returns ``SI_SDR_CAP_DB`` when the residual energy falls below
    ``1e-20`` of the projected target energy.
    """
    est = np.asarray(est.samples if isinstance(est, AudioBuffer) else est, dtype=np.float64)
    ref = np.asarray(ref.samples if isinstance(ref, AudioBuffer) else ref, dtype=np.float64)
    if est.shape != ref.shape:
        raise ValueError(f"si_sdr length mismatch: {est.shape} vs {ref.shape}")
    est = est - est.mean()
    ref = ref - ref.mean()
    ref_energy = np.dot(ref, ref)
    if ref_energy <= 0:
        raise ValueError("si_sdr: reference is silent")
    target = (np.dot(est, ref) / ref_energy) * ref
    err = est - target
    t2, e2 = np.dot(target, target), np.dot(err, err)
    if t2 == 0:
        return -SI_SDR_CAP_DB
    if e2 < 1e-20 * t2:
        return SI_SDR_CAP_DB
    return float(min(10.0 * np.log10(t2 / e2), SI_SDR_CAP_DB))
