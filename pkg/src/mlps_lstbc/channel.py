"""IM/DD channel: LED clipping, first-order low-pass response, flat per-LED gains, AWGN.

Powers are electrical and expressed in dBm-equivalent units, i.e. 0 dBm is a
unit-variance sample (``dbm_to_linear(0) == 1``).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional, Sequence, Union

import numpy as np
from scipy.signal import lfilter

from .codec import CodeParams, conv_matrix
from .errors import ConfigError

__all__ = [
    "FADING_KINDS",
    "LowPass",
    "ChannelModel",
    "ReceivedVector",
    "dbm_to_linear",
    "linear_to_dbm",
    "clip_amplitude",
    "clip",
    "lowpass_alpha",
    "lowpass_filter",
    "lowpass_response",
    "layer_taps",
    "effective_matrix",
    "transmit",
    "transmit_batch",
    "draw_fading",
]

FADING_KINDS = ("FIXED", "RAYLEIGH_MAGNITUDE", "GAUSSIAN_MAGNITUDE")


def dbm_to_linear(p_dbm):
    """10**(p/10); 0 dBm -> 1.0."""
    return np.power(10.0, np.asarray(p_dbm, dtype=float) / 10.0)[()]


def linear_to_dbm(p):
    return (10.0 * np.log10(np.asarray(p, dtype=float)))[()]


def _no_clip(level) -> bool:
    return level is None or (isinstance(level, str) and level.lower() == "none")


def clip_amplitude(clip_level_dbm) -> float:
    """Peak drive amplitude allowed by the LED, or ``inf`` when unclipped."""
    if _no_clip(clip_level_dbm):
        return math.inf
    return math.sqrt(dbm_to_linear(float(clip_level_dbm)))


def clip(signal, clip_level_dbm):
    """Limit intensity amplitudes to ``[0, A_clip]``; ``None``/``"none"`` is identity."""
    if _no_clip(clip_level_dbm):
        return signal
    return np.clip(signal, 0.0, clip_amplitude(clip_level_dbm))


def lowpass_alpha(bandwidth_hz: float, sample_rate: float) -> float:
    if sample_rate <= 2 * bandwidth_hz:
        raise ValueError(
            f"sample rate {sample_rate:g} Hz must exceed twice the bandwidth {bandwidth_hz:g} Hz"
        )
    return 1.0 - math.exp(-2.0 * math.pi * bandwidth_hz / sample_rate)


def lowpass_filter(waveform, bandwidth_hz: float, sample_rate: float, axis: int = -1):
    """First-order IIR low-pass ``y[k] = a x[k] + (1 - a) y[k-1]`` from rest.

    ``a = 1 - exp(-2 pi B / fs)`` places the -3 dB point at ``B`` for
    ``fs >> B`` (impulse-invariant single pole).
    """
    a = lowpass_alpha(bandwidth_hz, sample_rate)
    return lfilter([a], [1.0, a - 1.0], waveform, axis=axis)


def lowpass_response(freqs, bandwidth_hz: float, sample_rate: float):
    """Complex frequency response of :func:`lowpass_filter` at ``freqs`` (Hz)."""
    a = lowpass_alpha(bandwidth_hz, sample_rate)
    z = np.exp(-2j * np.pi * np.asarray(freqs, dtype=float) / sample_rate)
    return a / (1.0 - (1.0 - a) * z)


@dataclass(frozen=True)
class LowPass:
    """LED/front-end response applied per LED on an oversampled waveform."""

    bandwidth_hz: float = 100e6
    samples_per_slot: int = 8

    def __post_init__(self):
        if self.bandwidth_hz <= 0 or self.samples_per_slot < 1:
            raise ValueError("bandwidth_hz must be > 0 and samples_per_slot >= 1")


@dataclass(frozen=True)
class ChannelModel:
    gains: Optional[tuple] = None  # None -> all ones
    noise_power_dbm: float = -20.0
    clip_level_dbm: Optional[float] = 43.0
    lpf: Optional[LowPass] = field(default_factory=LowPass)
    fading: str = "FIXED"
    covariance: Optional[tuple] = None  # None -> identity

    def __post_init__(self):
        if self.gains is not None:
            g = tuple(float(x) for x in np.ravel(self.gains))
            if not all(math.isfinite(x) for x in g):
                raise ValueError("gains must be finite")
            object.__setattr__(self, "gains", g)
        if _no_clip(self.clip_level_dbm):
            object.__setattr__(self, "clip_level_dbm", None)
        fading = self.fading.upper()
        if fading not in FADING_KINDS:
            raise ValueError(f"fading must be one of {FADING_KINDS}, got {self.fading!r}")
        object.__setattr__(self, "fading", fading)
        if self.covariance is not None:
            cov = np.atleast_2d(np.asarray(self.covariance, dtype=float))
            _cholesky(cov)
            object.__setattr__(self, "covariance", tuple(map(tuple, cov.tolist())))
        if not math.isfinite(self.noise_power_dbm):
            raise ValueError("noise power must be finite")

    @property
    def noise_variance(self) -> float:
        return float(dbm_to_linear(self.noise_power_dbm))

    def gain_vector(self, n: int) -> np.ndarray:
        if self.gains is None:
            return np.ones(n)
        if len(self.gains) != n:
            raise ValueError(f"channel has {len(self.gains)} gains, code has {n} layers")
        return np.array(self.gains)

    def covariance_matrix(self, n: int) -> np.ndarray:
        if self.covariance is None:
            return np.eye(n)
        cov = np.array(self.covariance)
        if cov.shape != (n, n):
            raise ValueError(f"covariance shape {cov.shape} does not match {n} layers")
        return cov


@dataclass
class ReceivedVector:
    samples: np.ndarray  # (..., N+M-1)
    noise_variance: float


def _cholesky(cov: np.ndarray) -> np.ndarray:
    if cov.ndim != 2 or cov.shape[0] != cov.shape[1] or not np.allclose(cov, cov.T):
        raise ValueError("covariance must be a symmetric square matrix")
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        raise ValueError("covariance must be positive definite") from None


def _sample_rate(code: CodeParams, lpf: LowPass) -> float:
    if code.slot_duration is None:
        raise ConfigError("low-pass channel needs CodeParams.slot_duration")
    return lpf.samples_per_slot / code.slot_duration


@lru_cache(maxsize=64)
def _layer_taps(n: int, m: int, slot_duration: Optional[float], lpf: Optional[LowPass]) -> np.ndarray:
    span = n + m - 1
    if lpf is None:
        return np.ones(m)
    os_ = lpf.samples_per_slot
    pulse = np.zeros(span * os_)
    pulse[: m * os_] = 1.0
    y = lowpass_filter(pulse, lpf.bandwidth_hz, os_ / slot_duration)
    # integrate-and-dump per slot
    return y.reshape(span, os_).mean(axis=1)


def layer_taps(code: CodeParams, lpf: Optional[LowPass]) -> np.ndarray:
    """Slot samples of one layer's unit pulse as seen by the receiver.

    Without a low-pass this is ``ones(M)``.  With one it is the filtered
    M-slot rectangle, integrated over each slot, out to the end of the
    codeword window (length N+M-1).
    """
    if lpf is not None:
        _sample_rate(code, lpf)
    taps = _layer_taps(code.n_layers, code.m_slots, code.slot_duration, lpf)
    taps.flags.writeable = False
    return taps


def effective_matrix(code: CodeParams, lpf: Optional[LowPass] = None) -> np.ndarray:
    """(N+M-1) x N map from LED drive levels to slot samples (unit gains)."""
    return conv_matrix(layer_taps(code, lpf), code.n_layers)[: code.span]


def _check_drive(s: np.ndarray, code: CodeParams, chan: ChannelModel) -> None:
    if s.shape[-1] != code.n_layers:
        raise ValueError(f"symbol vector has length {s.shape[-1]}, code has {code.n_layers} layers")
    if chan.clip_level_dbm is not None and not code.modulation.unipolar:
        raise ConfigError(
            f"LED clipping applies to unipolar intensity symbols; "
            f"{code.modulation.name} runs in analysis mode and needs clip_level_dbm=None"
        )


def _gains(code: CodeParams, chan: ChannelModel, gains) -> np.ndarray:
    h = chan.gain_vector(code.n_layers) if gains is None else np.asarray(gains, dtype=float)
    if h.shape[-1] != code.n_layers:
        raise ValueError(f"gain vector has length {h.shape[-1]}, code has {code.n_layers} layers")
    return h


def _add_noise(x: np.ndarray, variance: float, rng, is_complex: bool) -> np.ndarray:
    if variance == 0:
        return x
    if is_complex:
        scale = math.sqrt(variance / 2.0)
        return x + scale * (rng.standard_normal(x.shape) + 1j * rng.standard_normal(x.shape))
    return x + math.sqrt(variance) * rng.standard_normal(x.shape)


def transmit(s, code: CodeParams, chan: ChannelModel, rng, gains=None,
             noise_variance: Optional[float] = None) -> ReceivedVector:
    """Send codeword(s) ``s`` (shape (N,) or (K, N)) through the channel.

    Builds each LED's drive waveform explicitly: clipped level over slots
    i..i+M-1, low-pass filtered per LED when configured, scaled by the LED's
    gain, summed at the detector and integrated per slot.  Complex symbols
    get circular noise of total variance ``noise_variance``.
    """
    s = np.asarray(s)
    _check_drive(s, code, chan)
    h = _gains(code, chan, gains)
    var = chan.noise_variance if noise_variance is None else noise_variance
    n, m, span = code.n_layers, code.m_slots, code.span
    x = clip(s, chan.clip_level_dbm) * h
    if chan.lpf is None:
        os_ = 1
    else:
        os_ = chan.lpf.samples_per_slot
        fs = _sample_rate(code, chan.lpf)
        lowpass_alpha(chan.lpf.bandwidth_hz, fs)
    wave = np.zeros(x.shape + (span * os_,), dtype=x.dtype)
    for i in range(n):
        wave[..., i, i * os_:(i + m) * os_] = x[..., i, None]
    if chan.lpf is not None:
        wave = lowpass_filter(wave, chan.lpf.bandwidth_hz, fs, axis=-1)
    detector = wave.sum(axis=-2)
    r = detector.reshape(detector.shape[:-1] + (span, os_)).mean(axis=-1)
    r = _add_noise(r, var, rng, code.modulation.is_complex)
    return ReceivedVector(r, var)


def transmit_batch(s, code: CodeParams, chan: ChannelModel, rng, gains=None,
                   noise_variance: Optional[float] = None) -> np.ndarray:
    """Matrix form of :func:`transmit`: ``effective_matrix @ diag(h) @ clip(s) + n``.

    Linear and per-codeword from rest, so identical to the waveform path;
    used for Monte Carlo throughput.
    """
    s = np.asarray(s)
    _check_drive(s, code, chan)
    h = _gains(code, chan, gains)
    var = chan.noise_variance if noise_variance is None else noise_variance
    t = effective_matrix(code, chan.lpf)
    r = (clip(s, chan.clip_level_dbm) * h) @ t.T
    return _add_noise(r, var, rng, code.modulation.is_complex)


def draw_fading(chan: ChannelModel, n: int, rng, size: Union[int, Sequence[int], None] = None) -> np.ndarray:
    """Draw nonnegative per-LED gains of shape ``size + (n,)``.

    RAYLEIGH_MAGNITUDE: ``|g|`` with ``g`` circular complex Gaussian,
    ``E[g g^H] = Sigma``.  GAUSSIAN_MAGNITUDE: ``|x|`` with ``x ~ N(0, Sigma)``.
    """
    if chan.fading == "FIXED":
        raise ValueError("draw_fading needs a random fading model, channel is FIXED")
    lchol = _cholesky(chan.covariance_matrix(n))
    shape = (() if size is None else tuple(np.atleast_1d(size))) + (n,)
    if chan.fading == "RAYLEIGH_MAGNITUDE":
        w = (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / math.sqrt(2.0)
    else:
        w = rng.standard_normal(shape)
    return np.abs(w @ lchol.T)
