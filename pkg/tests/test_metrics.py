import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from forknet.metrics import SI_SDR_CAP_DB, si_sdr
from forknet.spectral import AudioBuffer


def test_perfect_estimate_is_capped():
    ref = np.random.default_rng(0).standard_normal(1000)
    assert si_sdr(ref, ref) == 100.0
    assert si_sdr(AudioBuffer(ref), AudioBuffer(ref)) == SI_SDR_CAP_DB


def test_scaled_estimate_is_capped():
    ref = np.random.default_rng(1).standard_normal(1000)
    assert si_sdr(2 * ref, ref) == 100.0


def test_orthogonal_noise_ten_db():
    rng = np.random.default_rng(2)
    ref = rng.standard_normal(4000)
    ref -= ref.mean()
    n = rng.standard_normal(4000)
    n -= n.mean()
    # Gram-Schmidt, then scale so |ref|^2 / |n|^2 = 10
    n -= (n @ ref) / (ref @ ref) * ref
    n *= np.sqrt((ref @ ref) / (10 * (n @ n)))
    assert abs(si_sdr(ref + n, ref) - 10.0) < 1e-6


def random_pair(seed, n=500):
    rng = np.random.default_rng(seed)
    ref = rng.standard_normal(n)
    return ref + rng.uniform(0.05, 2.0) * rng.standard_normal(n), ref


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32), st.floats(1e-3, 1e3), st.booleans())
def test_scale_invariance(seed, scale, flip):
    est, ref = random_pair(seed)
    a = scale * (-1 if flip else 1)
    assert abs(si_sdr(a * est, ref) - si_sdr(est, ref)) < 1e-9


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32), st.floats(-10, 10))
def test_offset_invariance(seed, offset):
    est, ref = random_pair(seed)
    assert abs(si_sdr(est + offset, ref) - si_sdr(est, ref)) < 1e-9


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32))
def test_more_noise_lowers_score(seed):
    rng = np.random.default_rng(seed)
    ref, n = rng.standard_normal((2, 500))
    assert si_sdr(ref + 0.1 * n, ref) > si_sdr(ref + 0.5 * n, ref)


def test_errors_and_degenerate():
    with pytest.raises(ValueError):
        si_sdr(np.zeros(3), np.zeros(4))
    with pytest.raises(ValueError):
        si_sdr(np.ones(4), np.zeros(4))
    ref = np.array([1.0, -1.0, 1.0, -1.0])
    assert si_sdr(np.zeros(4), ref) == -100.0
