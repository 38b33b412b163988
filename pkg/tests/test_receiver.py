from itertools import product

import numpy as np
import pytest
from hypothesis import given, strategies as st

from mlps_lstbc.analysis import SepParams, sep_qam_zf
from mlps_lstbc.channel import ChannelModel, transmit_batch
from mlps_lstbc.codec import CodeParams, Modulation, conv_matrix, modulate
from mlps_lstbc.errors import InfeasibleConfigError
from mlps_lstbc.receiver import (
    build_zf,
    estimate_gains_blind,
    mlse_detect,
    slice_symbols,
    zf_detect,
    zf_equalize,
)

IDEAL = ChannelModel(clip_level_dbm=None, lpf=None)


def test_zf_single_slot():
    np.testing.assert_array_equal(build_zf(CodeParams(1, 1)).pseudo_inverse, [[1.0]])


def test_zf_two_by_two_exact():
    # (T^T T)^-1 T^T with T = [[1,0],[1,1],[0,1]], worked by hand in thirds
    expect = np.array([[2, 1, -1], [-1, 1, 2]]) / 3
    np.testing.assert_allclose(build_zf(CodeParams(2, 2)).pseudo_inverse, expect, atol=1e-15)


@given(st.integers(1, 32), st.integers(1, 32), st.integers(0, 2**32 - 1))
def test_zf_diagonalizes_effective_channel(n, m, seed):
    h = np.random.default_rng(seed).uniform(0.05, 3.0, n)
    eq = build_zf(CodeParams(n, m))
    got = eq.pseudo_inverse @ (conv_matrix(np.ones(m), n) * h)
    assert np.max(np.abs(got - np.diag(h))) <= 1e-9


@pytest.mark.parametrize("n,m", [(1, 1), (4, 4), (16, 16), (32, 3), (3, 32)])
def test_noise_enhancement_bounds(n, m):
    eq = build_zf(CodeParams(n, m))
    t = conv_matrix(np.ones(m), n)
    np.testing.assert_allclose(eq.noise_enhancement, np.diag(np.linalg.inv(t.T @ t)), rtol=1e-9)
    assert np.all(eq.noise_enhancement >= 1.0 / m - 1e-15)


def test_equalizer_ignores_gains():
    code = CodeParams(6, 4)
    a, b = build_zf(code), build_zf(CodeParams(6, 4))
    assert a.pseudo_inverse.tobytes() == b.pseudo_inverse.tobytes()
    assert not a.pseudo_inverse.flags.writeable


def test_zf_equalize_shape_check():
    with pytest.raises(ValueError):
        zf_equalize(np.zeros(5), build_zf(CodeParams(3, 2)))


@pytest.mark.parametrize("mod", ["OOK", "BPSK", "QAM4", "QAM64"])
def test_zf_noiseless_recovery_unit_gains(mod, rng):
    code = CodeParams(5, 4, mod)
    bits = rng.integers(0, 2, 200 * code.bits_per_codeword)
    s = modulate(bits, code, 2.0)
    r = transmit_batch(s, code, IDEAL, rng, noise_variance=0.0)
    det = zf_detect(r, build_zf(code), code.modulation, 2.0, h_for_slicing=np.ones(5))
    np.testing.assert_array_equal(det.hard_bits.ravel(), bits)
    np.testing.assert_allclose(det.symbol_estimates, s)


def test_zf_noiseless_recovery_random_gains(rng):
    code = CodeParams(7, 3)
    h = rng.uniform(0.1, 2.0, 7)
    bits = rng.integers(0, 2, 500 * 7)
    r = transmit_batch(modulate(bits, code, 1.0), code, IDEAL, rng, gains=h, noise_variance=0.0)
    det = zf_detect(r, build_zf(code), code.modulation, 1.0, h_for_slicing=h)
    np.testing.assert_array_equal(det.hard_bits.ravel(), bits)


def test_zf_blind_high_snr(rng):
    code = CodeParams(4, 4)
    h = np.array([0.5, 1.0, 1.5, 0.8])
    bits = rng.integers(0, 2, 2000 * 4)
    r = transmit_batch(modulate(bits, code, 1.0), code, IDEAL, rng, gains=h, noise_variance=1e-4)
    det = zf_detect(r, build_zf(code), code.modulation, 1.0)
    np.testing.assert_array_equal(det.hard_bits.ravel(), bits)
    est = estimate_gains_blind(zf_equalize(r, build_zf(code)), code.modulation, 1.0)
    np.testing.assert_allclose(est, h, rtol=0.02)


def test_qam_sep_matches_closed_form(rng):
    # post-ZF SNR of 15 dB on subchannel 0
    code = CodeParams(2, 2, "QAM4")
    eq = build_zf(code)
    es = 1.0
    sigma2 = es / (eq.noise_enhancement[0] * 10 ** 1.5)
    trials = 1_000_000
    labels = rng.integers(0, 4, (trials, 2))
    s = code.modulation.points(es)[labels]
    r = transmit_batch(s, code, IDEAL, rng, noise_variance=sigma2)
    det = zf_detect(r, eq, code.modulation, es, h_for_slicing=np.ones(2))
    errs = np.count_nonzero(det.symbol_estimates[:, 0] != s[:, 0])
    p = sep_qam_zf(SepParams.from_channel(np.ones(2), 2, 4, es, sigma2), 0)
    se = np.sqrt(p * (1 - p) / trials)
    assert abs(errs / trials - p) <= 3 * se


def test_post_zf_noise_covariance(rng):
    code = CodeParams(4, 4)
    eq = build_zf(code)
    sigma2 = 0.3
    r = transmit_batch(np.zeros((100_000, 4)), code, IDEAL, rng, noise_variance=sigma2)
    y = zf_equalize(r, eq)
    t = conv_matrix(np.ones(4), 4)
    expect = sigma2 * np.linalg.inv(t.T @ t)
    emp = y.T @ y / y.shape[0]
    assert np.linalg.norm(emp - expect) / np.linalg.norm(expect) <= 0.03


@given(st.floats(0.01, 100.0), st.integers(0, 2**32 - 1))
def test_zf_scale_consistency(c, seed):
    rng = np.random.default_rng(seed)
    code = CodeParams(4, 3)
    eq = build_zf(code)
    h = rng.uniform(0.3, 2, 4)
    r = transmit_batch(modulate(rng.integers(0, 2, 400), code, 1.0), code, IDEAL, rng, gains=h,
                       noise_variance=0.05)
    a = zf_detect(r, eq, code.modulation, 1.0, h_for_slicing=h).hard_bits
    b = zf_detect(c * r, eq, code.modulation, 1.0, h_for_slicing=c * h).hard_bits
    # exact ties can flip under rescaling; random data makes them measure-zero
    assert np.mean(a != b) <= 1e-3


def test_slice_on_constellation_points():
    for mod in (Modulation("OOK"), Modulation("BPSK"), Modulation("QAM", 16)):
        pts = mod.points(2.0)
        got, labels, _ = slice_symbols(pts * 1.5, mod, gain=1.5, avg_power=2.0)
        np.testing.assert_allclose(got, pts)
        np.testing.assert_array_equal(labels, np.arange(mod.order))


def test_slice_ook_midpoint_goes_to_zero():
    mod = Modulation("OOK")
    g, a = 0.7, mod.amplitude(1.0)
    _, labels, bits = slice_symbols(np.array([g * a / 2]), mod, gain=g, avg_power=1.0)
    assert labels[0] == 0 and bits[0] == 0


@given(st.lists(st.floats(-4, 4), min_size=1, max_size=40), st.floats(0.1, 5.0))
def test_slice_is_exhaustive_nearest(vals, g):
    for mod in (Modulation("OOK"), Modulation("BPSK")):
        y = np.array(vals)
        got, _, _ = slice_symbols(y, mod, gain=g)
        best = np.min(np.abs(y[:, None] / g - mod.points()[None, :]), axis=1)
        np.testing.assert_allclose(np.abs(y / g - got), best, atol=1e-12)


def test_slice_rejects_nonpositive_gain():
    with pytest.raises(ValueError):
        slice_symbols(np.ones(2), Modulation("OOK"), gain=0.0)


def test_mlse_memoryless_equals_slicing(rng):
    code = CodeParams(5, 1)
    h = rng.uniform(0.5, 2, 5)
    r = rng.uniform(-1, 3, (300, 5))
    det = mlse_detect(r, h, code, 1.0)
    _, _, bits = slice_symbols(r, code.modulation, gain=h)
    np.testing.assert_array_equal(det.hard_bits, bits)


@pytest.mark.parametrize("m", [2, 3])
def test_mlse_noiseless_recovery(m, rng):
    code = CodeParams(4, m)
    h = rng.uniform(0.3, 2, 4)
    bits = rng.integers(0, 2, 300 * 4)
    s = modulate(bits, code, 1.0)
    r = transmit_batch(s, code, IDEAL, rng, gains=h, noise_variance=0.0)
    det = mlse_detect(r, h, code, 1.0)
    np.testing.assert_array_equal(det.hard_bits.ravel(), bits)
    one = mlse_detect(r[0], h, code, 1.0)
    np.testing.assert_array_equal(one.hard_bits, bits[:4])


def _brute_force_ml(r, h, code, avg_power):
    pts = code.modulation.points(avg_power)
    t = conv_matrix(np.ones(code.m_slots), code.n_layers) * h
    hyps = np.array(list(product(range(pts.size), repeat=code.n_layers)))
    pred = pts[hyps] @ t.T
    best = np.argmin(((r[:, None, :] - pred[None]) ** 2).sum(-1), axis=1)
    return hyps[best]


@pytest.mark.parametrize("m", [2, 3])
def test_mlse_is_exact_ml(m, rng):
    code = CodeParams(4, m)
    h = rng.uniform(0.3, 2, 4)
    s = modulate(rng.integers(0, 2, 3000 * 4), code, 1.0)
    r = transmit_batch(s, code, IDEAL, rng, gains=h, noise_variance=0.3)
    det = mlse_detect(r, h, code, 1.0)
    labels = code.modulation.nearest(det.symbol_estimates, 1.0)
    np.testing.assert_array_equal(labels, _brute_force_ml(r, h, code, 1.0))


def test_mlse_qam_exact_ml(rng):
    code = CodeParams(3, 2, "QAM4")
    h = rng.uniform(0.5, 1.5, 3)
    s = modulate(rng.integers(0, 2, 500 * 6), code, 1.0)
    r = transmit_batch(s, code, IDEAL, rng, gains=h, noise_variance=0.5)
    det = mlse_detect(r, h, code, 1.0)
    pts = code.modulation.points(1.0)
    t = conv_matrix(np.ones(2), 3) * h
    hyps = np.array(list(product(range(4), repeat=3)))
    dist = np.abs(r[:, None, :] - (pts[hyps] @ t.T)[None]) ** 2
    want = pts[hyps[np.argmin(dist.sum(-1), axis=1)]]
    np.testing.assert_allclose(det.symbol_estimates, want)


def test_mlse_state_cap():
    with pytest.raises(InfeasibleConfigError, match="4096"):
        mlse_detect(np.zeros(17), np.ones(4), CodeParams(4, 14), 1.0)
    with pytest.raises(InfeasibleConfigError):
        mlse_detect(np.zeros(7), np.ones(4), CodeParams(4, 4, "QAM256"), 1.0)


@pytest.mark.parametrize("n,m", [(2, 2), (4, 3), (6, 2), (6, 3), (3, 3)])
def test_mlse_not_worse_than_zf(n, m):
    code = CodeParams(n, m)
    eq = build_zf(code)
    for snr_db in (4.0, 8.0, 12.0):
        rng = np.random.default_rng(int(snr_db) * 100 + n * 10 + m)
        h = np.ones(n)
        bits = rng.integers(0, 2, 20_000 * n)
        s = modulate(bits, code, 1.0)
        r = transmit_batch(s, code, IDEAL, rng, noise_variance=10 ** (-snr_db / 10))
        zf = np.mean(zf_detect(r, eq, code.modulation, 1.0, h_for_slicing=h).hard_bits.ravel() != bits)
        ml = np.mean(mlse_detect(r, h, code, 1.0).hard_bits.ravel() != bits)
        tol = 2 * np.hypot(np.sqrt(zf * (1 - zf) / bits.size), np.sqrt(ml * (1 - ml) / bits.size))
        assert ml <= zf + tol


def test_mlse_ber_below_zf_at_10db_per_slot(rng):
    code = CodeParams(4, 3)
    h = np.ones(4)
    bits = rng.integers(0, 2, 100_000 * 4)
    s = modulate(bits, code, 1.0)
    r = transmit_batch(s, code, IDEAL, rng, noise_variance=0.1)
    zf = np.mean(zf_detect(r, build_zf(code), code.modulation, 1.0, h_for_slicing=h).hard_bits.ravel() != bits)
    ml = np.mean(mlse_detect(r, h, code, 1.0).hard_bits.ravel() != bits)
    assert ml <= zf
