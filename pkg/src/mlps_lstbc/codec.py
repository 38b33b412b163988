"""Layered phase-shift codewords, symbol mapping and rate accounting.

A codeword carries one symbol per layer (LED).  Layer ``i`` holds its symbol
for ``M`` consecutive slots starting at slot ``i``, so ``N`` layers span
``N + M - 1`` slots.  Summing the layers slot by slot gives the banded
convolution form ``conv_matrix(ones(M), N) @ s`` seen by the photodetector.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional, Union

import numpy as np

from .errors import FramingError

__all__ = [
    "Modulation",
    "CodeParams",
    "build_spread_matrix",
    "conv_matrix",
    "modulate",
    "demodulate",
    "bits_to_labels",
    "labels_to_bits",
    "symbol_rate",
    "spectral_efficiency",
    "gross_data_rate",
]


def _binary_to_gray(n: np.ndarray) -> np.ndarray:
    return n ^ (n >> 1)


def _gray_to_binary(g: np.ndarray) -> np.ndarray:
    g = np.array(g, dtype=np.int64, copy=True)
    shift = g >> 1
    while np.any(shift):
        g ^= shift
        shift >>= 1
    return g


@dataclass(frozen=True)
class Modulation:
    """Symbol alphabet: ``OOK``, ``BPSK`` or square ``QAM`` of order D.

    Points are indexed by their Gray label, the integer formed by the
    symbol's bits (MSB first).  For QAM the first half of the label drives
    the in-phase axis and the second half the quadrature axis, each axis a
    Gray-coded PAM.
    """

    kind: str
    order: int = 2

    def __post_init__(self):
        kind = self.kind.upper()
        object.__setattr__(self, "kind", kind)
        if kind in ("OOK", "BPSK"):
            if self.order != 2:
                raise ValueError(f"{kind} is binary, got order {self.order}")
        elif kind == "QAM":
            root = math.isqrt(self.order)
            if self.order < 4 or root * root != self.order or self.order & (self.order - 1):
                raise ValueError(
                    f"square QAM order must be a power of 4 (4, 16, 64, 256, ...), got {self.order}"
                )
        else:
            raise ValueError(f"unknown modulation {self.kind!r}")

    @classmethod
    def parse(cls, text: Union[str, "Modulation"]) -> "Modulation":
        """Accept ``OOK``, ``BPSK``, ``QAM16``, ``16QAM`` or ``SQUARE_QAM(16)``."""
        if isinstance(text, Modulation):
            return text
        t = str(text).strip().upper().replace("-", "").replace("_", "")
        if t in ("OOK", "BPSK"):
            return cls(t)
        m = re.fullmatch(r"(?:SQUAREQAM\((\d+)\)|QAM(\d+)|(\d+)QAM)", t)
        if not m:
            raise ValueError(f"cannot parse modulation {text!r}")
        return cls("QAM", int(next(g for g in m.groups() if g)))

    @property
    def name(self) -> str:
        return f"QAM{self.order}" if self.kind == "QAM" else self.kind

    @property
    def bits_per_symbol(self) -> int:
        return int(math.log2(self.order))

    @property
    def is_complex(self) -> bool:
        return self.kind == "QAM"

    @property
    def unipolar(self) -> bool:
        return self.kind == "OOK"

    def amplitude(self, avg_power: float) -> float:
        """Scale factor giving mean symbol energy ``avg_power`` for equiprobable bits.

        OOK returns the on level A (A**2 / 2 = avg_power), BPSK the antipodal
        level, QAM the half-spacing of the grid.
        """
        if self.kind == "OOK":
            return math.sqrt(2.0 * avg_power)
        if self.kind == "BPSK":
            return math.sqrt(avg_power)
        return math.sqrt(avg_power / (2.0 * (self.order - 1) / 3.0))

    def points(self, avg_power: float = 1.0) -> np.ndarray:
        """Constellation points indexed by Gray label."""
        a = self.amplitude(avg_power)
        if self.kind == "OOK":
            return np.array([0.0, a])
        if self.kind == "BPSK":
            return np.array([-a, a])
        k = self.bits_per_symbol // 2
        side = 1 << k
        labels = np.arange(self.order)
        i_lab, q_lab = labels >> k, labels & (side - 1)
        i_lvl = 2 * _gray_to_binary(i_lab) - (side - 1)
        q_lvl = 2 * _gray_to_binary(q_lab) - (side - 1)
        return a * (i_lvl + 1j * q_lvl)

    def nearest(self, y: np.ndarray, avg_power: float = 1.0) -> np.ndarray:
        """Gray label of the constellation point closest to each ``y``.

        Ties resolve toward the lower level on every axis, so the OOK
        midpoint decides 0.
        """
        y = np.asarray(y)
        a = self.amplitude(avg_power)
        if self.kind == "OOK":
            return (np.real(y) > a / 2).astype(np.int64)
        if self.kind == "BPSK":
            return (np.real(y) > 0).astype(np.int64)
        k = self.bits_per_symbol // 2
        side = 1 << k

        def axis(v):
            # level index = round((v/a + side - 1) / 2), ties to the lower level
            idx = np.ceil((v / a + side - 1) / 2 - 0.5).astype(np.int64)
            return _binary_to_gray(np.clip(idx, 0, side - 1))

        return (axis(np.real(y)) << k) | axis(np.imag(y))


OOK = Modulation("OOK")


@dataclass(frozen=True)
class CodeParams:
    """Code geometry: ``n_layers`` LEDs, each holding a symbol for ``m_slots`` slots."""

    n_layers: int
    m_slots: int
    modulation: Modulation = field(default=OOK)
    slot_duration: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "modulation", Modulation.parse(self.modulation))
        if int(self.n_layers) != self.n_layers or self.n_layers < 1:
            raise ValueError(f"n_layers must be a positive integer, got {self.n_layers}")
        if int(self.m_slots) != self.m_slots or self.m_slots < 1:
            raise ValueError(f"m_slots must be a positive integer, got {self.m_slots}")
        if self.slot_duration is not None and self.slot_duration <= 0:
            raise ValueError("slot_duration must be positive")

    @property
    def span(self) -> int:
        """Codeword length in slots."""
        return self.n_layers + self.m_slots - 1

    @property
    def bits_per_codeword(self) -> int:
        return self.n_layers * self.modulation.bits_per_symbol


def build_spread_matrix(generator, m_slots: int) -> np.ndarray:
    """Return the N x (N+M-1) layered codeword for ``generator``.

    Row ``i`` (0-based) repeats ``generator[i]`` on columns ``i .. i+M-1``.

    >>> build_spread_matrix([2, 3], 2)
    array([[2, 2, 0],
           [0, 3, 3]])
    """
    g = np.asarray(generator)
    if g.ndim != 1 or g.size == 0:
        raise ValueError("generator must be a nonempty 1-D vector")
    if m_slots < 1:
        raise ValueError("m_slots must be >= 1")
    n = g.size
    out = np.zeros((n, n + m_slots - 1), dtype=g.dtype)
    for i in range(n):
        out[i, i:i + m_slots] = g[i]
    return out


def conv_matrix(taps, n_cols: int) -> np.ndarray:
    """Banded Toeplitz matrix of shape (N+M-1, N) with ``taps`` down each column.

    ``conv_matrix(taps, N) @ s`` equals ``np.convolve(taps, s)``.
    """
    t = np.asarray(taps)
    if t.ndim != 1 or t.size == 0:
        raise ValueError("taps must be a nonempty 1-D vector")
    if n_cols < 1:
        raise ValueError("n_cols must be >= 1")
    m = t.size
    out = np.zeros((n_cols + m - 1, n_cols), dtype=np.result_type(t, float))
    for i in range(n_cols):
        out[i:i + m, i] = t
    return out


def bits_to_labels(bits: np.ndarray, bits_per_symbol: int) -> np.ndarray:
    """Pack groups of bits (MSB first) into integer labels along the last axis."""
    bits = np.asarray(bits, dtype=np.int64)
    grouped = bits.reshape(bits.shape[:-1] + (-1, bits_per_symbol))
    weights = 1 << np.arange(bits_per_symbol - 1, -1, -1)
    return grouped @ weights


def labels_to_bits(labels: np.ndarray, bits_per_symbol: int) -> np.ndarray:
    """Inverse of :func:`bits_to_labels`."""
    labels = np.asarray(labels, dtype=np.int64)
    shifts = np.arange(bits_per_symbol - 1, -1, -1)
    bits = (labels[..., None] >> shifts) & 1
    return bits.reshape(labels.shape[:-1] + (-1,)).astype(np.uint8)


def modulate(bits, params: CodeParams, avg_power: float) -> np.ndarray:
    """Map a bit stream to codeword symbol vectors.

    Returns an array of shape (n_codewords, N).  ``avg_power`` is the mean
    electrical energy per symbol for equiprobable bits.
    """
    bits = np.asarray(bits).ravel()
    mod = params.modulation
    per_codeword = params.n_layers * mod.bits_per_symbol
    if bits.size % per_codeword:
        raise FramingError(
            f"{bits.size} bits do not fill whole codewords of {per_codeword} bits"
        )
    labels = bits_to_labels(bits.reshape(-1, per_codeword), mod.bits_per_symbol)
    return mod.points(avg_power)[labels]


def demodulate(symbols, params: CodeParams, avg_power: float) -> np.ndarray:
    """Slice symbol estimates back to a flat bit stream."""
    labels = params.modulation.nearest(np.asarray(symbols), avg_power)
    return labels_to_bits(labels, params.modulation.bits_per_symbol).ravel()


def symbol_rate(params: CodeParams) -> Fraction:
    """Symbols per slot, N / (N + M - 1)."""
    return Fraction(params.n_layers, params.span)


def spectral_efficiency(params: CodeParams) -> Fraction:
    """Received symbols per LED symbol period, MN / (M + N - 1)."""
    return Fraction(params.m_slots * params.n_layers, params.span)


def gross_data_rate(params: CodeParams, baud_per_led: float) -> float:
    """Bit rate in b/s when each LED runs at ``baud_per_led`` symbols/s."""
    return float(spectral_efficiency(params)) * baud_per_led * params.modulation.bits_per_symbol
