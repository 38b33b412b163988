"""Detectors for the layered code: zero-forcing and Viterbi sequence estimation."""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Optional

import numpy as np
from scipy.linalg import qr, solve_triangular

from .codec import CodeParams, Modulation, conv_matrix, labels_to_bits
from .errors import InfeasibleConfigError

__all__ = [
    "MLSE_MAX_STATES",
    "ZfEqualizer",
    "DetectionResult",
    "build_zf",
    "zf_equalize",
    "zf_detect",
    "estimate_gains_blind",
    "slice_symbols",
    "mlse_detect",
    "mlse_states",
]

MLSE_MAX_STATES = 4096
ZF_IDENTITY_TOL = 1e-9


@dataclass(frozen=True)
class ZfEqualizer:
    pseudo_inverse: np.ndarray  # N x (N+M-1)
    n_layers: int
    m_slots: int
    noise_enhancement: np.ndarray  # diag((T^T T)^-1)
    taps: np.ndarray


@dataclass
class DetectionResult:
    symbol_estimates: np.ndarray
    hard_bits: np.ndarray
    per_symbol_metric: Optional[np.ndarray] = None


@lru_cache(maxsize=128)
def _build_zf(n: int, m: int, taps_key: bytes) -> ZfEqualizer:
    taps = np.frombuffer(taps_key, dtype=float)
    t = conv_matrix(taps, n)[: n + m - 1]
    q, r = qr(t, mode="economic")
    r_inv = solve_triangular(r, np.eye(n))
    pinv = r_inv @ q.T
    err = np.abs(pinv @ t - np.eye(n)).max()
    assert err <= ZF_IDENTITY_TOL, f"ZF inverse residual {err:.3g} for N={n}, M={m}"
    for a in (pinv, r_inv, taps):
        a.flags.writeable = False
    nek = np.sum(r_inv ** 2, axis=1)
    nek.flags.writeable = False
    return ZfEqualizer(pinv, n, m, nek, taps)


def build_zf(code: CodeParams, taps=None) -> ZfEqualizer:
    """Left pseudo-inverse of the (N+M-1) x N spreading matrix.

    ``taps`` defaults to ``ones(M)``; pass the receiver-side layer pulse
    (e.g. :func:`~mlps_lstbc.channel.layer_taps` with a low-pass) to invert a
    known LED response.  Depends on the code and pulse only, never on the
    per-LED gains.  Cached per argument set.
    """
    taps = np.ones(code.m_slots) if taps is None else np.asarray(taps, dtype=float)
    if taps.ndim != 1 or taps.size < code.m_slots:
        raise ValueError(f"need at least M={code.m_slots} taps")
    return _build_zf(code.n_layers, code.m_slots, np.ascontiguousarray(taps).tobytes())


def zf_equalize(r, eq: ZfEqualizer) -> np.ndarray:
    r = np.asarray(r)
    span = eq.n_layers + eq.m_slots - 1
    if r.shape[-1] != span:
        raise ValueError(f"received vector has length {r.shape[-1]}, expected {span}")
    return r @ eq.pseudo_inverse.T


def estimate_gains_blind(y, modulation: Modulation, avg_power: float = 1.0) -> np.ndarray:
    """Per-subchannel gain estimates from equalized outputs, no CSIR.

    Binary alphabets use the 90th percentile of ``|y_k|`` as the on/peak
    level, so the OOK threshold lands at half of it.  QAM uses the RMS.
    """
    y = np.atleast_2d(y)
    if modulation.kind == "QAM":
        return np.sqrt(np.mean(np.abs(y) ** 2, axis=0) / avg_power)
    return np.quantile(np.abs(y), 0.9, axis=0) / modulation.amplitude(avg_power)


def slice_symbols(y, modulation: Modulation, gain=1.0, avg_power: float = 1.0):
    """Nearest-point decisions for ``y / gain``.

    Returns ``(points, labels, bits)``.  Ties go to the lower level; the OOK
    midpoint ``gain * A / 2`` decides 0.
    """
    gain = np.asarray(gain, dtype=float)
    if np.any(gain <= 0):
        raise ValueError("slicing gain must be positive")
    labels = modulation.nearest(np.asarray(y) / gain, avg_power)
    points = modulation.points(avg_power)[labels]
    return points, labels, labels_to_bits(labels, modulation.bits_per_symbol)


def zf_detect(r, eq: ZfEqualizer, modulation: Modulation, avg_power: float = 1.0,
              h_for_slicing=None, preamble: int = 256) -> DetectionResult:
    """Zero-force ``r`` (shape (..., N+M-1)) and slice each layer independently.

    With ``h_for_slicing`` the statistic ``y_k / h_k`` is sliced (genie).
    Without it, gains are estimated blindly from the first ``preamble``
    codewords of the batch.  Post-equalizer noise correlation is ignored.
    """
    y = zf_equalize(r, eq)
    if h_for_slicing is None:
        flat = y.reshape(-1, eq.n_layers)
        gain = estimate_gains_blind(flat[:preamble], modulation, avg_power)
        gain = np.maximum(gain, np.finfo(float).tiny)
    else:
        gain = np.asarray(h_for_slicing, dtype=float)
    stat = y / gain
    points, _, bits = slice_symbols(stat, modulation, 1.0, avg_power)
    return DetectionResult(points, bits, stat)


def mlse_states(code: CodeParams) -> int:
    return code.modulation.order ** (code.m_slots - 1)


def mlse_detect(r, h, code: CodeParams, avg_power: float = 1.0, points=None) -> DetectionResult:
    """Viterbi detection over the slot-domain moving-sum channel.

    Slot ``t`` sees ``sum_k h_{t-k} s_{t-k}`` over the ``M`` most recent
    layers, so the trellis state is the last ``M - 1`` symbols.  Symbols
    outside the codeword are known zeros; the search is exact ML over the
    ``N`` symbols.  ``r`` has shape (N+M-1,) or (K, N+M-1); ``h`` (N,) or
    (K, N).  ``points`` overrides the constellation levels (e.g. after LED
    clipping).  ``per_symbol_metric`` holds the survivor path metric.
    """
    mod = code.modulation
    n_states = mlse_states(code)
    if n_states > MLSE_MAX_STATES:
        raise InfeasibleConfigError(
            f"MLSE trellis needs D^(M-1) = {mod.order}^{code.m_slots - 1} = {n_states} states, "
            f"limit is {MLSE_MAX_STATES}"
        )
    r = np.asarray(r)
    single = r.ndim == 1
    r = np.atleast_2d(r)
    n, m, span = code.n_layers, code.m_slots, code.span
    if r.shape[-1] != span:
        raise ValueError(f"received vector has length {r.shape[-1]}, expected {span}")
    k_blocks = r.shape[0]
    h = np.broadcast_to(np.asarray(h, dtype=float), (k_blocks, n))
    pts = mod.points(avg_power) if points is None else np.asarray(points)
    d = pts.size

    if m == 1:
        dist = np.abs(r[:, :, None] - h[:, :, None] * pts) ** 2
        labels = np.argmin(dist, axis=-1)
        metric = np.take_along_axis(dist, labels[..., None], -1)[..., 0].sum(axis=1)
    else:
        s = n_states
        st = np.arange(s)
        # digit j of a state is the symbol j slots back (j = 0 most recent)
        digits = (st[:, None] // d ** np.arange(m - 1)) % d  # (S, M-1)
        prev_vals = pts[digits]  # (S, M-1)
        # predecessors of next state ns: (dropped digit)*D^(M-2) + ns // D, input ns % D
        pred = (np.arange(d)[None, :] * d ** (m - 2) + (st // d)[:, None])  # (S, D)
        u_in = st % d
        pm = np.full((k_blocks, s), np.inf)
        pm[:, 0] = 0.0
        back = np.empty((span, k_blocks, s), dtype=np.int32)
        rows = np.arange(k_blocks)[:, None]
        for t in range(span):
            w = np.zeros((k_blocks, m - 1), dtype=h.dtype)
            for j in range(m - 1):
                idx = t - 1 - j
                if 0 <= idx < n:
                    w[:, j] = h[:, idx]
            past = w @ prev_vals.T  # (K, S)
            if t < n:
                pred_r = past[:, :, None] + h[:, t, None, None] * pts  # (K, S, D)
                branch = np.abs(r[:, t, None, None] - pred_r) ** 2
            else:
                branch = np.full((k_blocks, s, d), np.inf)
                branch[:, :, 0] = np.abs(r[:, t, None] - past) ** 2
            cand = pm[:, pred] + branch[:, pred, u_in[:, None]]  # (K, S, D)
            best = np.argmin(cand, axis=-1)
            pm = np.take_along_axis(cand, best[..., None], -1)[..., 0]
            back[t] = pred[st[None, :], best]
        state = np.argmin(pm, axis=1)
        metric = pm[rows[:, 0], state]
        labels = np.empty((k_blocks, n), dtype=np.int64)
        for t in range(span - 1, -1, -1):
            if t < n:
                labels[:, t] = state % d
            state = back[t][rows[:, 0], state]

    symbols = pts[labels]
    bits = labels_to_bits(labels, mod.bits_per_symbol)
    if single:
        return DetectionResult(symbols[0], bits[0], metric[:1])
    return DetectionResult(symbols, bits, metric)
