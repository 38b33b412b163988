import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from mlps_lstbc.channel import (
    ChannelModel,
    LowPass,
    clip,
    clip_amplitude,
    dbm_to_linear,
    draw_fading,
    effective_matrix,
    layer_taps,
    linear_to_dbm,
    lowpass_alpha,
    lowpass_filter,
    lowpass_response,
    transmit,
    transmit_batch,
)
from mlps_lstbc.codec import CodeParams, conv_matrix, modulate
from mlps_lstbc.errors import ConfigError

IDEAL = ChannelModel(clip_level_dbm=None, lpf=None)


def _noiseless(**kw):
    return ChannelModel(**{"clip_level_dbm": None, "lpf": None, **kw})


def test_identity_channel(rng):
    r = transmit([1.0], CodeParams(1, 1), _noiseless(), rng, noise_variance=0.0)
    np.testing.assert_array_equal(r.samples, [1.0])
    assert r.noise_variance == 0.0


def test_two_layer_hand_expansion(rng):
    s1, s2, h1, h2 = 0.7, 1.9, 0.4, 2.5
    r = transmit([s1, s2], CodeParams(2, 2), _noiseless(gains=(h1, h2)), rng, noise_variance=0.0)
    np.testing.assert_allclose(r.samples, [h1 * s1, h1 * s1 + h2 * s2, h2 * s2], atol=1e-15)


@given(st.integers(1, 6), st.integers(1, 6), st.integers(0, 2**32 - 1))
def test_transmit_matches_slot_summation(n, m, seed):
    rng = np.random.default_rng(seed)
    s = rng.uniform(0, 3, n)
    h = rng.uniform(0.1, 2, n)
    r = transmit(s, CodeParams(n, m), _noiseless(), rng, gains=h, noise_variance=0.0).samples
    for t in range(n + m - 1):
        lo, hi = max(0, t - m + 1), min(n - 1, t)
        assert r[t] == pytest.approx(sum(h[i] * s[i] for i in range(lo, hi + 1)), abs=1e-12)


@pytest.mark.parametrize("lpf", [None, LowPass(100e6, 8), LowPass(250e6, 16)])
def test_waveform_and_matrix_paths_agree(lpf, rng):
    for n in range(1, 9):
        for m in range(1, 9):
            code = CodeParams(n, m, slot_duration=1 / (m * 100e6))
            chan = ChannelModel(clip_level_dbm=None, lpf=lpf)
            s = rng.uniform(0, 2, (100, n))
            h = rng.uniform(0.2, 1.5, n)
            a = transmit(s, code, chan, rng, gains=h, noise_variance=0.0).samples
            b = transmit_batch(s, code, chan, rng, gains=h, noise_variance=0.0)
            np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-12)


def test_transmit_dimension_mismatch(rng):
    with pytest.raises(ValueError):
        transmit([1.0, 2.0], CodeParams(3, 2), IDEAL, rng)
    with pytest.raises(ValueError):
        transmit([1.0, 2.0], CodeParams(2, 2), _noiseless(gains=(1.0, 1.0, 1.0)), rng)


def test_clipping_rejects_bipolar_symbols(rng):
    with pytest.raises(ConfigError):
        transmit([1.0, -1.0], CodeParams(2, 2, "BPSK"), ChannelModel(lpf=None), rng)


@given(st.floats(0, 10), st.integers(0, 2**32 - 1))
def test_transmit_is_linear(a, seed):
    rng = np.random.default_rng(seed)
    code = CodeParams(5, 3)
    s = rng.uniform(0, 1, 5)
    r1 = transmit(a * s, code, IDEAL, rng, noise_variance=0.0).samples
    r2 = a * transmit(s, code, IDEAL, rng, noise_variance=0.0).samples
    np.testing.assert_allclose(r1, r2, atol=1e-12)


def test_noise_only_variance(rng):
    chan = ChannelModel(noise_power_dbm=-20.0, clip_level_dbm=None, lpf=None)
    r = transmit_batch(np.zeros((100_000, 4)), CodeParams(4, 4), chan, rng)
    assert np.var(r) == pytest.approx(0.01, rel=0.02)


def test_complex_noise_has_total_variance(rng):
    chan = ChannelModel(noise_power_dbm=0.0, clip_level_dbm=None, lpf=None)
    r = transmit_batch(np.zeros((50_000, 2), dtype=complex), CodeParams(2, 2, "QAM4"), chan, rng)
    assert np.mean(np.abs(r) ** 2) == pytest.approx(1.0, rel=0.02)
    assert np.var(r.real) == pytest.approx(0.5, rel=0.03)


@pytest.mark.parametrize("power_dbm", [0.0, 10.0, 30.0])
def test_snr_accounting(power_dbm, rng):
    code = CodeParams(1, 1)
    chan = ChannelModel(noise_power_dbm=-20.0, clip_level_dbm=None, lpf=None)
    bits = rng.integers(0, 2, 200_000)
    s = modulate(bits, code, dbm_to_linear(power_dbm))
    r = transmit_batch(s, code, chan, rng)
    clean = transmit_batch(s, code, chan, rng, noise_variance=0.0)
    snr = linear_to_dbm(np.mean(clean ** 2) / np.mean((r - clean) ** 2))
    assert snr == pytest.approx(power_dbm + 20.0, abs=0.2)


def test_clip_examples():
    x = np.array([-1.0, 0.0, 3.0, 1e9])
    np.testing.assert_array_equal(clip(x, None), x)
    np.testing.assert_array_equal(clip(x, "none"), x)
    a = clip_amplitude(43.0)
    assert clip(np.array([a]), 43.0)[0] == a
    np.testing.assert_array_equal(clip(x, 43.0), [0.0, 0.0, 3.0, a])


@given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=30), st.floats(-10, 80))
def test_clip_idempotent(vals, level):
    x = np.array(vals)
    once = clip(x, level)
    np.testing.assert_array_equal(clip(once, level), once)


def test_clip_at_60dbm_ook_level_saturates():
    on = math.sqrt(2 * dbm_to_linear(60.0))
    assert clip(np.array([0.0, on]), 43.0)[1] == pytest.approx(clip_amplitude(43.0))


def test_dbm_conversions():
    assert dbm_to_linear(0) == 1.0
    assert dbm_to_linear(-20) == pytest.approx(0.01)
    assert dbm_to_linear(43) == pytest.approx(19952.6, abs=0.05)


@given(st.floats(-100, 100))
def test_dbm_roundtrip(p):
    assert linear_to_dbm(dbm_to_linear(p)) == pytest.approx(p, abs=1e-9)


def test_lowpass_dc_gain():
    y = lowpass_filter(np.full(5000, 3.0), 100e6, 800e6)
    assert y[-1] == pytest.approx(3.0, rel=1e-12)
    assert y[0] == pytest.approx(3.0 * lowpass_alpha(100e6, 800e6))


@pytest.mark.parametrize("fs", [400e6, 800e6, 1.6e9, 4e9, 12.8e9])
def test_lowpass_measured_matches_response(fs):
    b = 100e6
    t = np.arange(200_000) / fs
    y = lowpass_filter(np.sin(2 * np.pi * b * t), b, fs)
    gain_db = 10 * np.log10(np.mean(y[100_000:] ** 2) / 0.5)
    assert gain_db == pytest.approx(20 * np.log10(abs(lowpass_response(b, b, fs))), abs=0.05)


# the single-pole mapping only lands -3 dB at B once fs >> B
@pytest.mark.parametrize("fs", [1.6e9, 4e9, 12.8e9])
def test_lowpass_3db_at_cutoff(fs):
    b = 100e6
    t = np.arange(200_000) / fs
    y = lowpass_filter(np.sin(2 * np.pi * b * t), b, fs)
    gain_db = 10 * np.log10(np.mean(y[100_000:] ** 2) / 0.5)
    assert gain_db == pytest.approx(-3.0, abs=0.2)


def test_lowpass_alpha_monotone_and_limit():
    fs = 1e9
    bs = np.linspace(1e6, fs / 2 * 0.999, 200)
    alphas = [lowpass_alpha(b, fs) for b in bs]
    assert all(x < y for x, y in zip(alphas, alphas[1:]))
    assert alphas[-1] > 0.95


def test_lowpass_rejects_undersampling():
    with pytest.raises(ValueError):
        lowpass_alpha(100e6, 200e6)
    with pytest.raises(ValueError):
        lowpass_filter(np.ones(4), 100e6, 150e6)


def test_layer_taps_without_filter():
    code = CodeParams(3, 4)
    np.testing.assert_array_equal(layer_taps(code, None), np.ones(4))
    np.testing.assert_array_equal(effective_matrix(code), conv_matrix(np.ones(4), 3))


def test_layer_taps_with_filter():
    code = CodeParams(4, 3, slot_duration=1 / 300e6)
    taps = layer_taps(code, LowPass())
    assert taps.shape == (code.span,)
    assert np.all(np.diff(taps[:3]) > 0) and np.all(taps < 1)
    assert not taps.flags.writeable


def test_filter_needs_slot_duration():
    with pytest.raises(ConfigError):
        layer_taps(CodeParams(2, 2), LowPass())


def test_fading_second_moment(rng):
    chan = ChannelModel(fading="RAYLEIGH_MAGNITUDE")
    h = draw_fading(chan, 3, rng, size=1_000_000)
    assert np.all(h >= 0)
    np.testing.assert_allclose(np.mean(h ** 2, axis=0), 1.0, rtol=0.01)


def test_gaussian_magnitude_moment(rng):
    chan = ChannelModel(fading="GAUSSIAN_MAGNITUDE", covariance=((2.0, 0.5), (0.5, 1.0)))
    h = draw_fading(chan, 2, rng, size=400_000)
    np.testing.assert_allclose(np.mean(h ** 2, axis=0), [2.0, 1.0], rtol=0.01)


def test_fading_vanishes_with_covariance(rng):
    eps = 1e-12
    chan = ChannelModel(fading="RAYLEIGH_MAGNITUDE", covariance=tuple(map(tuple, eps * np.eye(3))))
    assert np.max(draw_fading(chan, 3, rng, size=1000)) < 1e-4


def test_fading_deterministic():
    chan = ChannelModel(fading="RAYLEIGH_MAGNITUDE")
    a = draw_fading(chan, 4, np.random.default_rng(7), size=10)
    b = draw_fading(chan, 4, np.random.default_rng(7), size=10)
    np.testing.assert_array_equal(a, b)


def test_fading_rejects_non_pd():
    with pytest.raises(ValueError):
        ChannelModel(fading="RAYLEIGH_MAGNITUDE", covariance=((1.0, 2.0), (2.0, 1.0)))
    with pytest.raises(ValueError):
        draw_fading(ChannelModel(), 2, np.random.default_rng(0))


def test_channel_model_validation():
    with pytest.raises(ValueError):
        ChannelModel(fading="LOGNORMAL")
    with pytest.raises(ValueError):
        ChannelModel(gains=(1.0, float("inf")))
    assert ChannelModel(clip_level_dbm="none").clip_level_dbm is None
