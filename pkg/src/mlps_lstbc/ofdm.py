"""DC-biased optical OFDM baseline.

Data occupy subcarriers ``1 .. n_data`` with Hermitian mirrors so the
inverse FFT is real; DC and Nyquist bins are empty and ``n_null`` bins just
below Nyquist are left unused.  ``n_guard`` is the cyclic-prefix length in
samples.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
import numpy as np

from .channel import clip_amplitude, lowpass_response
from .codec import Modulation, bits_to_labels, labels_to_bits
from .errors import FramingError

__all__ = [
    "OfdmParams",
    "spectrum_to_waveform",
    "dco_ofdm_modulate",
    "dco_ofdm_demodulate",
    "butterworth_estimate",
    "signal_scale",
    "papr",
    "papr_ccdf",
    "bipolar_frames",
]


@dataclass(frozen=True)
class OfdmParams:
    n_subcarriers: int = 1024
    n_guard: int = 4
    constellation_size: int = 256
    dc_bias_db: float = 7.0
    n_null: int = 0
    sample_rate_hz: float = 400e6
    unipolar: bool = True  # lower clip at zero intensity

    def __post_init__(self):
        ns = self.n_subcarriers
        if ns < 8 or ns & (ns - 1):
            raise ValueError(f"n_subcarriers must be a power of two >= 8, got {ns}")
        if self.n_guard < 0 or self.n_null < 0:
            raise ValueError("n_guard and n_null must be nonnegative")
        if self.n_data < 1:
            raise ValueError("no data subcarriers left")
        Modulation("QAM", self.constellation_size)

    @property
    def modulation(self) -> Modulation:
        return Modulation("QAM", self.constellation_size)

    @property
    def n_data(self) -> int:
        return self.n_subcarriers // 2 - 1 - self.n_null

    @property
    def frame_len(self) -> int:
        return self.n_subcarriers + self.n_guard

    @property
    def bits_per_frame(self) -> int:
        return self.n_data * self.modulation.bits_per_symbol

    @property
    def ac_fraction(self) -> float:
        """Share of the mean electrical power carried by the AC signal."""
        return 1.0 / (1.0 + 10.0 ** (self.dc_bias_db / 10.0))

    def data_rate(self) -> float:
        return self.sample_rate_hz * self.bits_per_frame / self.frame_len


def signal_scale(params: OfdmParams, avg_power: float) -> float:
    """Gain from unit-energy subcarrier symbols to the emitted AC signal."""
    sigma_x = math.sqrt(avg_power * params.ac_fraction)
    return sigma_x / math.sqrt(2.0 * params.n_data / params.n_subcarriers)


def _hermitian_frames(symbols: np.ndarray, params: OfdmParams) -> np.ndarray:
    ns, nd = params.n_subcarriers, params.n_data
    spectrum = np.zeros(symbols.shape[:-1] + (ns,), dtype=complex)
    spectrum[..., 1:nd + 1] = symbols
    spectrum[..., ns - nd:] = np.conj(symbols[..., ::-1])
    return spectrum


def _bipolar_frames(spectrum: np.ndarray) -> np.ndarray:
    x = np.fft.ifft(spectrum, axis=-1, norm="ortho")
    assert np.max(np.abs(x.imag), initial=0.0) <= 1e-10, "spectrum is not Hermitian"
    return x.real


def spectrum_to_waveform(spectrum, params: OfdmParams, avg_power: float,
                         clip_level_dbm=None) -> np.ndarray:
    """Full-length spectra (frames, Ns) to biased, clipped frames with cyclic prefix."""
    x = _bipolar_frames(np.atleast_2d(spectrum)) * signal_scale(params, avg_power)
    if params.n_guard:
        x = np.concatenate([x[..., -params.n_guard:], x], axis=-1)
    sigma_x = math.sqrt(avg_power * params.ac_fraction)
    x = x + sigma_x * 10.0 ** (params.dc_bias_db / 20.0)
    lo = 0.0 if params.unipolar else -np.inf
    return np.clip(x, lo, clip_amplitude(clip_level_dbm))


def dco_ofdm_modulate(bits, params: OfdmParams, avg_power: float, clip_level_dbm=None) -> np.ndarray:
    """Bits to DCO-OFDM frames of shape (frames, Ns + Ng).

    ``avg_power`` is the mean electrical power of the biased waveform before
    clipping.  Samples are limited to ``[0, A_clip]`` (lower limit only when
    ``params.unipolar``).
    """
    bits = np.asarray(bits).ravel()
    if bits.size == 0 or bits.size % params.bits_per_frame:
        raise FramingError(f"{bits.size} bits do not fill frames of {params.bits_per_frame} bits")
    mod = params.modulation
    labels = bits_to_labels(bits.reshape(-1, params.bits_per_frame), mod.bits_per_symbol)
    spectrum = _hermitian_frames(mod.points(1.0)[labels], params)
    return spectrum_to_waveform(spectrum, params, avg_power, clip_level_dbm)


def butterworth_estimate(params: OfdmParams, bandwidth_hz: float) -> np.ndarray:
    """Per-bin response of the first-order low-pass at the OFDM sample rate."""
    freqs = np.arange(params.n_subcarriers) * params.sample_rate_hz / params.n_subcarriers
    return lowpass_response(freqs, bandwidth_hz, params.sample_rate_hz)


def dco_ofdm_demodulate(waveform, params: OfdmParams, avg_power: float,
                        channel_estimate=None) -> np.ndarray:
    """Strip prefix, FFT, one-tap equalize, slice and Gray-demap to bits."""
    w = np.asarray(waveform, dtype=float)
    if w.ndim == 1:
        if w.size % params.frame_len:
            raise FramingError(f"{w.size} samples are not a whole number of {params.frame_len}-sample frames")
        w = w.reshape(-1, params.frame_len)
    elif w.shape[-1] != params.frame_len:
        raise FramingError(f"frame length {w.shape[-1]} != {params.frame_len}")
    spectrum = np.fft.fft(w[..., params.n_guard:], axis=-1, norm="ortho")
    bins = slice(1, params.n_data + 1)
    eq = signal_scale(params, avg_power)
    if channel_estimate is not None:
        eq = eq * np.asarray(channel_estimate)[bins]
    mod = params.modulation
    labels = mod.nearest(spectrum[..., bins] / eq, 1.0)
    return labels_to_bits(labels, mod.bits_per_symbol).ravel()


def papr(waveform) -> np.ndarray:
    """Peak-to-average power ratio in dB along the last axis."""
    w = np.asarray(waveform, dtype=float)
    if w.shape[-1] == 0:
        raise ValueError("empty frame")
    p = w ** 2
    return (10.0 * np.log10(p.max(axis=-1) / p.mean(axis=-1)))[()]


def papr_ccdf(papr_db, thresholds_db) -> np.ndarray:
    """Fraction of frames whose PAPR exceeds each threshold."""
    papr_db = np.asarray(papr_db).ravel()
    return np.array([np.mean(papr_db > t) for t in np.atleast_1d(thresholds_db)])


def bipolar_frames(bits, params: OfdmParams) -> np.ndarray:
    """Unbiased, unclipped unit-scale time frames without prefix (for PAPR studies)."""
    bits = np.asarray(bits).ravel()
    mod = params.modulation
    labels = bits_to_labels(bits.reshape(-1, params.bits_per_frame), mod.bits_per_symbol)
    return _bipolar_frames(_hermitian_frames(mod.points(1.0)[labels], params))
