"""Error-probability expressions and bound checks for the zero-forcing receiver.

Noise convention: for complex QAM the per-sample noise has total variance
``sigma2`` (``sigma2 / 2`` per real dimension), which makes the Chernoff-type
bound ``(D-1)/D * exp(-a / [P^-1]_kk)`` dominate the exact SEP.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass, field
from typing import Iterable, List, NamedTuple, Optional, Tuple

import numpy as np
from scipy.integrate import quad
from scipy.special import erfc

from .codec import conv_matrix

__all__ = [
    "q_function",
    "craig_q",
    "craig_q2",
    "SepParams",
    "sep_qam_zf",
    "sep_qam_zf_craig",
    "sep_upper_bound",
    "mean_sep_over_subchannels",
    "mean_bound_over_subchannels",
    "AveragedBound",
    "averaged_sep_bound",
    "BoundCheckReport",
    "gram_matrix",
    "check_det_bounds",
    "det_bound_batch",
    "estimate_diversity_order",
]


def q_function(x):
    """Gaussian tail probability Q(x) = P(Z > x)."""
    return 0.5 * erfc(np.asarray(x, dtype=float) / math.sqrt(2.0))[()]


def _craig(x: float, upper: float) -> float:
    x2 = float(x) ** 2

    def integrand(theta):
        s = math.sin(theta)
        return math.exp(-x2 / (2.0 * s * s)) if s > 0 else 0.0

    val, _ = quad(integrand, 0.0, upper, epsabs=1e-15, epsrel=1e-12, limit=200)
    return val / math.pi


def craig_q(x: float) -> float:
    """Q(x) from the finite-range angle integral over [0, pi/2]."""
    if x < 0:
        return 1.0 - _craig(-x, math.pi / 2)
    return _craig(x, math.pi / 2)


def craig_q2(x: float) -> float:
    """Q(x)**2 for x >= 0 from the angle integral over [0, pi/4]."""
    if x < 0:
        raise ValueError("craig_q2 is defined for x >= 0")
    return _craig(x, math.pi / 4)


def gram_matrix(h, m_slots: int, taps=None) -> np.ndarray:
    """P = G^T G for the effective channel G = conv(taps, N) @ diag(h)."""
    h = np.asarray(h, dtype=float)
    taps = np.ones(m_slots) if taps is None else np.asarray(taps, dtype=float)
    g = conv_matrix(taps, h.size)[: h.size + m_slots - 1] * h
    return g.T @ g


@dataclass
class SepParams:
    constellation_size: int
    symbol_energy: float
    noise_variance: float
    gram_matrix: np.ndarray
    _inv_diag: Optional[np.ndarray] = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        d = self.constellation_size
        root = math.isqrt(d)
        if d < 4 or root * root != d:
            raise ValueError(f"constellation size must be a square >= 4, got {d}")
        self.gram_matrix = np.atleast_2d(np.asarray(self.gram_matrix, dtype=float))
        if not np.allclose(self.gram_matrix, self.gram_matrix.T):
            raise ValueError("gram matrix must be symmetric")
        if self.symbol_energy <= 0 or self.noise_variance <= 0:
            raise ValueError("symbol energy and noise variance must be positive")

    @classmethod
    def from_channel(cls, h, m_slots: int, constellation_size: int, symbol_energy: float,
                     noise_variance: float, taps=None) -> "SepParams":
        return cls(constellation_size, symbol_energy, noise_variance, gram_matrix(h, m_slots, taps))

    @property
    def n_layers(self) -> int:
        return self.gram_matrix.shape[0]

    @property
    def snr_coefficient(self) -> float:
        """a = 3 Es / (2 (D - 1) sigma^2)."""
        return 3.0 * self.symbol_energy / (2.0 * (self.constellation_size - 1) * self.noise_variance)

    @property
    def inverse_diagonal(self) -> np.ndarray:
        """[P^-1]_kk; raises if P is not positive definite."""
        if self._inv_diag is None:
            lchol = np.linalg.cholesky(self.gram_matrix)
            linv = np.linalg.inv(lchol)
            self._inv_diag = np.sum(linv ** 2, axis=0)
        return self._inv_diag

    def exponent(self, k: int) -> float:
        if not 0 <= k < self.n_layers:
            raise IndexError(f"subchannel {k} out of range for N={self.n_layers}")
        return self.snr_coefficient / self.inverse_diagonal[k]


def sep_qam_zf(params: SepParams, k: int) -> float:
    """Exact SEP of square D-QAM on ZF subchannel ``k`` (0-based).

    ``4 q Q(x) - 4 q^2 Q(x)^2`` with ``q = 1 - 1/sqrt(D)`` and
    ``x = sqrt(3 Es / ((D-1) sigma^2 [P^-1]_kk))``.
    """
    x = math.sqrt(2.0 * params.exponent(k))
    q = 1.0 - 1.0 / math.sqrt(params.constellation_size)
    qx = float(q_function(x))
    return 4.0 * q * qx - 4.0 * q * q * qx * qx


def sep_qam_zf_craig(params: SepParams, k: int) -> float:
    """Same SEP from the angle-integral form (independent numerical route)."""
    g = params.exponent(k)
    q = 1.0 - 1.0 / math.sqrt(params.constellation_size)

    def f(theta):
        s = math.sin(theta)
        return math.exp(-g / (s * s)) if s > 0 else 0.0

    lo, _ = quad(f, 0.0, math.pi / 4, epsabs=1e-15, epsrel=1e-12)
    hi, _ = quad(f, math.pi / 4, math.pi / 2, epsabs=1e-15, epsrel=1e-12)
    return 4.0 * q / math.pi * (lo / math.sqrt(params.constellation_size) + hi)


def sep_upper_bound(params: SepParams, k: int) -> float:
    """(D-1)/D * exp(-3 Es / (2 (D-1) sigma^2 [P^-1]_kk))."""
    d = params.constellation_size
    return (d - 1) / d * math.exp(-params.exponent(k))


def mean_sep_over_subchannels(params: SepParams) -> float:
    return float(np.mean([sep_qam_zf(params, k) for k in range(params.n_layers)]))


def mean_bound_over_subchannels(params: SepParams) -> float:
    return float(np.mean([sep_upper_bound(params, k) for k in range(params.n_layers)]))


class AveragedBound(NamedTuple):
    value: float  # (D-1)/D * det(I + a C M Sigma)^-1
    asymptote: float  # (D-1)/D * det(C M Sigma)^-1 * a^-N
    ordered: bool  # value <= asymptote


def averaged_sep_bound(a: float, c: float, m_slots: int, sigma, n: int,
                       constellation_size: int = 4) -> AveragedBound:
    """Fading-averaged SEP bound and its high-SNR power-law asymptote."""
    sigma = np.atleast_2d(np.asarray(sigma, dtype=float))
    if sigma.shape != (n, n):
        raise ValueError(f"Sigma must be {n}x{n}")
    try:
        np.linalg.cholesky(sigma)
    except np.linalg.LinAlgError:
        raise ValueError("Sigma must be positive definite") from None
    if not np.allclose(sigma, sigma.T):
        raise ValueError("Sigma must be symmetric")
    d = constellation_size
    lead = (d - 1) / d
    x = c * m_slots * sigma
    _, logdet = np.linalg.slogdet(np.eye(n) + a * x)
    _, logdet_x = np.linalg.slogdet(x)
    value = lead * math.exp(-logdet)
    asymptote = lead * math.exp(-logdet_x - n * math.log(a))
    return AveragedBound(value, asymptote, value <= asymptote * (1 + 1e-12))


@dataclass
class BoundCheckReport:
    n: int
    m: int
    det_p: float
    upper: float  # (M/N)^N ||h||^(2N)
    upper_holds: bool
    homogeneity_rel_error: float  # |det P(2h) / (2^(2N) det P(h)) - 1|
    c_tilde: float  # det P / (M^N prod h_i^2)
    lower_certificate: float  # c_tilde * prod h_i^2 / ||h||^(2N) * M^N ||h||^(2N)
    c_kk: float  # min_k [P^-1]_kk^-1 / ||h||^2
    diag_inverse_entries: List[float]

    def to_dict(self) -> dict:
        return asdict(self)


def _logdet_spd(p: np.ndarray) -> float:
    lchol = np.linalg.cholesky(p)
    return 2.0 * float(np.sum(np.log(np.diag(lchol))))


def check_det_bounds(h, m_slots: int, n: Optional[int] = None) -> BoundCheckReport:
    """Evaluate the computable parts of the determinant bounds for gains ``h``."""
    h = np.asarray(h, dtype=float)
    n = h.size if n is None else n
    if h.shape != (n,):
        raise ValueError(f"h must have length N={n}")
    if np.any(h == 0):
        raise ValueError("all gains must be nonzero")
    p = gram_matrix(h, m_slots)
    logdet = _logdet_spd(p)
    logdet2 = _logdet_spd(gram_matrix(2.0 * h, m_slots))
    norm2 = float(h @ h)
    log_upper = n * math.log(m_slots / n) + n * math.log(norm2)
    log_prod = float(np.sum(np.log(h ** 2)))
    log_c_tilde = logdet - n * math.log(m_slots) - log_prod
    inv_diag = np.sum(np.linalg.inv(np.linalg.cholesky(p)) ** 2, axis=0)
    return BoundCheckReport(
        n=n,
        m=m_slots,
        det_p=math.exp(logdet),
        upper=math.exp(log_upper),
        upper_holds=logdet <= log_upper + 1e-12,
        homogeneity_rel_error=abs(math.expm1(logdet2 - logdet - 2 * n * math.log(2.0))),
        c_tilde=math.exp(log_c_tilde),
        lower_certificate=math.exp(log_c_tilde + log_prod + n * math.log(m_slots)),
        c_kk=float(np.min(1.0 / inv_diag) / norm2),
        diag_inverse_entries=inv_diag.tolist(),
    )


def det_bound_batch(n: int, m_slots: int, count: int, rng) -> dict:
    """Run :func:`check_det_bounds` on ``count`` random positive gain vectors."""
    reports = [check_det_bounds(np.abs(rng.standard_normal(n)) + 1e-3, m_slots) for _ in range(count)]
    return {
        "n": n,
        "m": m_slots,
        "count": count,
        "upper_violations": sum(not r.upper_holds for r in reports),
        "max_upper_ratio": max(r.det_p / r.upper for r in reports),
        "max_homogeneity_rel_error": max(r.homogeneity_rel_error for r in reports),
        "fitted_c_tilde": min(r.c_tilde for r in reports),
        "min_c_kk": min(r.c_kk for r in reports),
    }


def estimate_diversity_order(ber_points: Iterable[Tuple[float, float]]) -> float:
    """Least-squares slope of log10(BER) against SNR in decades (snr_db / 10).

    Points with zero BER are dropped with a warning.
    """
    pts = [(float(s), float(b)) for s, b in ber_points]
    snrs = [s for s, _ in pts]
    if any(b < a for a, b in zip(snrs, snrs[1:])):
        raise ValueError("SNR points must be ascending")
    kept = [(s, b) for s, b in pts if b > 0]
    if len(kept) < len(pts):
        warnings.warn(f"dropped {len(pts) - len(kept)} zero-BER point(s) from slope fit")
    if len(kept) < 3:
        raise ValueError("need at least 3 points with nonzero BER")
    x = np.array([s for s, _ in kept]) / 10.0
    y = np.log10([b for _, b in kept])
    return float(np.polyfit(x, y, 1)[0])
