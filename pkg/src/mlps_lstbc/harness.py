"""Configuration-driven Monte Carlo BER engine.

Every power point draws from its own Philox stream keyed by
``(master_seed, scheme, power)``, so results do not depend on execution
order, worker count, or which other points are in the sweep.
"""
from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import json
import math
import re
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import yaml

from . import channel as ch
from .analysis import estimate_diversity_order
from .codec import CodeParams, gross_data_rate, modulate, spectral_efficiency, symbol_rate
from .errors import ConfigError, InfeasibleConfigError
from .ofdm import OfdmParams, butterworth_estimate, dco_ofdm_demodulate, dco_ofdm_modulate
from .receiver import build_zf, mlse_detect, mlse_states, MLSE_MAX_STATES, zf_detect

__all__ = [
    "FEC_LIMIT",
    "SCHEMES",
    "RECEIVER_MODES",
    "PowerSweep",
    "SimConfig",
    "BerRecord",
    "RateReport",
    "point_rng",
    "simulate_point",
    "run_sweep",
    "run_figure1",
    "run_rate_report",
    "run_diversity",
    "clip_onset_dbm",
    "emit",
    "format_records",
    "read_records",
    "load_config",
    "config_from_dict",
]

FEC_LIMIT = 2e-3
SCHEMES = ("MLPS_LSTBC", "DCO_OFDM")
RECEIVER_MODES = ("ZF_GENIE", "ZF_BLIND", "MLSE")
SCHEMA_VERSION = 1
CSV_COLUMNS = ("scheme", "n", "m", "power_dbm", "snr_db", "bits", "errors", "ber", "stderr", "seed")
_BATCH_BITS = 1 << 15
_OFDM_BATCH_BITS = 1 << 17  # clipping errors are bursty per frame
_BLIND_PREAMBLE = 256


@dataclass(frozen=True)
class PowerSweep:
    start: float = 0.0
    stop: float = 60.0
    step: float = 2.0

    def __post_init__(self):
        if self.start > self.stop:
            raise ConfigError("power sweep start must not exceed stop")
        if self.step <= 0:
            raise ConfigError("power sweep step must be positive")

    def points(self) -> List[float]:
        count = int(math.floor((self.stop - self.start) / self.step + 1e-9)) + 1
        return [round(self.start + i * self.step, 10) for i in range(count)]


@dataclass(frozen=True)
class SimConfig:
    scheme: str = "MLPS_LSTBC"
    code: CodeParams = field(default_factory=lambda: CodeParams(16, 16))
    channel: ch.ChannelModel = field(default_factory=ch.ChannelModel)
    receiver_mode: str = "ZF_GENIE"
    power_sweep_dbm: PowerSweep = field(default_factory=PowerSweep)
    min_bit_errors: int = 100
    max_bits: int = 10_000_000
    master_seed: int = 0
    baud_per_led_hz: float = 100e6
    ofdm: OfdmParams = field(default_factory=OfdmParams)

    def __post_init__(self):
        scheme = self.scheme.upper()
        mode = self.receiver_mode.upper()
        if scheme not in SCHEMES:
            raise ConfigError(f"scheme must be one of {SCHEMES}, got {self.scheme!r}")
        if mode not in RECEIVER_MODES:
            raise ConfigError(f"receiver_mode must be one of {RECEIVER_MODES}, got {self.receiver_mode!r}")
        object.__setattr__(self, "scheme", scheme)
        object.__setattr__(self, "receiver_mode", mode)
        if self.max_bits < 1000:
            raise ConfigError("max_bits must be at least 1000")
        if self.min_bit_errors < 1:
            raise ConfigError("min_bit_errors must be positive")
        if not 0 <= self.master_seed < 2 ** 64:
            raise ConfigError("master_seed must be an unsigned 64-bit integer")
        if self.baud_per_led_hz <= 0:
            raise ConfigError("baud_per_led_hz must be positive")
        if self.code.slot_duration is None:
            object.__setattr__(
                self, "code",
                dataclasses.replace(self.code, slot_duration=1.0 / (self.code.m_slots * self.baud_per_led_hz)),
            )

    def validate(self) -> None:
        """Raise before any simulation if the configuration cannot run."""
        chan, code = self.channel, self.code
        if self.scheme == "DCO_OFDM":
            if chan.fading != "FIXED":
                raise InfeasibleConfigError("DCO-OFDM baseline supports FIXED channels only")
            if chan.lpf is not None:
                ch.lowpass_alpha(chan.lpf.bandwidth_hz, self.ofdm.sample_rate_hz)
            return
        try:
            if chan.fading == "FIXED":
                chan.gain_vector(code.n_layers)
            else:
                chan.covariance_matrix(code.n_layers)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if chan.clip_level_dbm is not None and not code.modulation.unipolar:
            raise ConfigError(f"{code.modulation.name} runs in analysis mode; set clip_level_dbm to none")
        if chan.lpf is not None:
            try:
                ch.layer_taps(code, chan.lpf)
                ch.lowpass_alpha(chan.lpf.bandwidth_hz, chan.lpf.samples_per_slot / code.slot_duration)
            except ValueError as exc:
                raise ConfigError(str(exc)) from None
        if self.receiver_mode == "MLSE":
            if mlse_states(code) > MLSE_MAX_STATES:
                raise InfeasibleConfigError(
                    f"MLSE trellis needs D^(M-1) = {mlse_states(code)} states, limit is {MLSE_MAX_STATES}"
                )
            if chan.lpf is not None:
                raise InfeasibleConfigError("MLSE models the moving-sum channel only; disable lpf")
        if self.receiver_mode == "ZF_BLIND":
            if chan.fading != "FIXED":
                raise InfeasibleConfigError("blind ZF estimates static gains; use FIXED fading")
            if np.any(chan.gain_vector(code.n_layers) <= 0):
                raise InfeasibleConfigError("blind ZF needs positive gains")
        elif chan.fading == "FIXED" and np.any(chan.gain_vector(code.n_layers) <= 0):
            raise InfeasibleConfigError("genie slicing needs positive gains")

    def to_dict(self) -> Dict[str, Any]:
        d = asdict(self)
        d["code"]["modulation"] = self.code.modulation.name
        return d

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass(frozen=True)
class BerRecord:
    scheme: str
    n: int
    m: int
    power_dbm: float
    snr_db: float
    bits_sent: int
    bit_errors: int
    ber: float
    ber_stderr: float
    seed: int
    config_hash: str = ""
    receiver_mode: str = ""


@dataclass(frozen=True)
class RateReport:
    n: int
    m: int
    symbol_rate: Fraction
    spectral_efficiency: Fraction
    gross_data_rate_bps: float
    min_ber: Optional[float]
    best_power_dbm: Optional[float]
    meets_fec: bool

    def to_dict(self) -> Dict[str, Any]:
        d = asdict(self)
        d["symbol_rate"] = str(self.symbol_rate)
        d["spectral_efficiency"] = str(self.spectral_efficiency)
        return d


def point_rng(master_seed: int, scheme: str, power_dbm: float) -> np.random.Generator:
    """Counter-based stream for one sweep point."""
    key = (SCHEMES.index(scheme), int(round(power_dbm * 1000)) + (1 << 31))
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(master_seed, spawn_key=key)))


def clip_onset_dbm(config: SimConfig) -> float:
    """Sweep power at which LED clipping starts to bite.

    OOK: the on level reaches the clip amplitude.  DCO-OFDM: the DC bias
    plus three standard deviations of the AC signal reaches it.
    """
    a_clip = ch.clip_amplitude(config.channel.clip_level_dbm)
    if math.isinf(a_clip):
        return math.inf
    if config.scheme == "DCO_OFDM":
        beta = 10.0 ** (config.ofdm.dc_bias_db / 20.0)
        sigma_x = a_clip / (beta + 3.0)
        return float(ch.linear_to_dbm(sigma_x ** 2 * (1.0 + beta ** 2)))
    mod = config.code.modulation
    per_led = a_clip ** 2 / (2.0 if mod.kind == "OOK" else 1.0)
    return float(ch.linear_to_dbm(per_led * config.code.n_layers))


def _simulate_mlps(config: SimConfig, power_dbm: float, rng) -> Tuple[int, int]:
    code, chan = config.code, config.channel
    mod = code.modulation
    n, bpc = code.n_layers, code.bits_per_codeword
    per_led = float(ch.dbm_to_linear(power_dbm)) / n
    level = 1.0
    if mod.unipolar:
        level = min(1.0, ch.clip_amplitude(chan.clip_level_dbm) / mod.amplitude(per_led))
    eq = build_zf(code, ch.layer_taps(code, chan.lpf))
    fixed = chan.fading == "FIXED"
    h_fixed = chan.gain_vector(n) if fixed else None
    per_batch = max(_BLIND_PREAMBLE, -(-_BATCH_BITS // bpc))
    max_cw = config.max_bits // bpc
    if max_cw < 1:
        raise ConfigError(f"max_bits {config.max_bits} is below one codeword ({bpc} bits)")
    sent = errors = 0
    while sent < max_cw and errors < config.min_bit_errors:
        k = min(per_batch, max_cw - sent)
        bits = rng.integers(0, 2, size=(k, bpc), dtype=np.uint8)
        s = modulate(bits, code, per_led)
        h = h_fixed if fixed else ch.draw_fading(chan, n, rng, size=k)
        r = ch.transmit_batch(s, code, chan, rng, gains=h)
        if config.receiver_mode == "ZF_GENIE":
            det = zf_detect(r, eq, mod, per_led, h_for_slicing=h * level)
        elif config.receiver_mode == "ZF_BLIND":
            det = zf_detect(r, eq, mod, per_led, preamble=_BLIND_PREAMBLE)
        else:
            det = mlse_detect(r, h, code, per_led, points=mod.points(per_led) * level)
        errors += int(np.count_nonzero(det.hard_bits != bits))
        sent += k
    return sent * bpc, errors


def _simulate_ofdm(config: SimConfig, power_dbm: float, rng) -> Tuple[int, int]:
    params, chan = config.ofdm, config.channel
    power = float(ch.dbm_to_linear(power_dbm))
    gain = chan.gain_vector(1)[0] if chan.gains is not None and len(chan.gains) == 1 else 1.0
    est = None
    if chan.lpf is not None:
        est = butterworth_estimate(params, chan.lpf.bandwidth_hz) * gain
    elif gain != 1.0:
        est = np.full(params.n_subcarriers, gain, dtype=complex)
    bpf = params.bits_per_frame
    per_batch = max(1, -(-_OFDM_BATCH_BITS // bpf))
    max_frames = config.max_bits // bpf
    if max_frames < 1:
        raise ConfigError(f"max_bits {config.max_bits} is below one OFDM frame ({bpf} bits)")
    sigma = math.sqrt(chan.noise_variance)
    sent = errors = 0
    while sent < max_frames and errors < config.min_bit_errors:
        k = min(per_batch, max_frames - sent)
        bits = rng.integers(0, 2, size=k * bpf, dtype=np.uint8)
        w = dco_ofdm_modulate(bits, params, power, chan.clip_level_dbm).ravel()
        if chan.lpf is not None:
            w = ch.lowpass_filter(w, chan.lpf.bandwidth_hz, params.sample_rate_hz)
        w = gain * w + sigma * rng.standard_normal(w.shape)
        out = dco_ofdm_demodulate(w, params, power, est)
        errors += int(np.count_nonzero(out != bits))
        sent += k
    return sent * bpf, errors


def simulate_point(config: SimConfig, power_dbm: float) -> BerRecord:
    rng = point_rng(config.master_seed, config.scheme, power_dbm)
    if config.scheme == "DCO_OFDM":
        bits, errors = _simulate_ofdm(config, power_dbm, rng)
        n = m = 1
    else:
        bits, errors = _simulate_mlps(config, power_dbm, rng)
        n, m = config.code.n_layers, config.code.m_slots
    ber = errors / bits
    return BerRecord(
        scheme=config.scheme,
        n=n,
        m=m,
        power_dbm=power_dbm,
        snr_db=round(power_dbm - config.channel.noise_power_dbm, 10),
        bits_sent=bits,
        bit_errors=errors,
        ber=ber,
        ber_stderr=math.sqrt(ber * (1.0 - ber) / bits),
        seed=config.master_seed,
        config_hash=config.config_hash(),
        receiver_mode=config.receiver_mode if config.scheme == "MLPS_LSTBC" else "",
    )


def run_sweep(config: SimConfig, jobs: int = 1) -> List[BerRecord]:
    """One :class:`BerRecord` per power point, in sweep order."""
    config.validate()
    powers = config.power_sweep_dbm.points()
    if jobs > 1 and len(powers) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(simulate_point, [config] * len(powers), powers))
    return [simulate_point(config, p) for p in powers]


def _fec_interval(records: Sequence[BerRecord]) -> Optional[Tuple[float, float]]:
    ok = [r.power_dbm for r in records if r.ber < FEC_LIMIT]
    return (min(ok), max(ok)) if ok else None


def summarize(records: Sequence[BerRecord], onset_dbm: float) -> Dict[str, Any]:
    """Optimum, clip-onset behaviour and FEC interval of one BER curve."""
    best = min(records, key=lambda r: (r.ber, r.power_dbm))
    pre = [r for r in records if r.power_dbm <= onset_dbm]
    post = [r for r in records if r.power_dbm > onset_dbm]
    ref = pre[-1] if pre else None
    # past onset the curve must stop improving: no step down beyond 2 stderr
    floor_or_rise = None
    if len(post) >= 2:
        floor_or_rise = all(
            b.ber >= a.ber - 2.0 * math.hypot(a.ber_stderr, b.ber_stderr) for a, b in zip(post, post[1:])
        )
    worst_post = max((r.ber for r in post), default=None)
    return {
        "scheme": records[0].scheme,
        "n": records[0].n,
        "m": records[0].m,
        "best_power_dbm": best.power_dbm,
        "min_ber": best.ber,
        "clip_onset_dbm": onset_dbm,
        "ber_at_onset": ref.ber if ref else None,
        "max_ber_after_onset": worst_post,
        "floor_or_rise_after_onset": floor_or_rise,
        "degradation_factor": (worst_post / best.ber if best.ber > 0 else math.inf)
        if worst_post is not None else None,
        "fec_interval_dbm": _fec_interval(records),
    }


def run_figure1(mlps: SimConfig, ofdm: SimConfig, jobs: int = 1) -> Dict[str, Any]:
    """Sweep both schemes over a shared channel and power grid and compare."""
    if mlps.scheme != "MLPS_LSTBC" or ofdm.scheme != "DCO_OFDM":
        raise ConfigError("figure1 needs one MLPS_LSTBC and one DCO_OFDM configuration")
    if mlps.power_sweep_dbm != ofdm.power_sweep_dbm:
        raise ConfigError("figure1 configurations must share the power sweep")
    a, b = mlps.channel, ofdm.channel
    if (a.noise_power_dbm, a.clip_level_dbm, a.lpf and a.lpf.bandwidth_hz) != (
        b.noise_power_dbm, b.clip_level_dbm, b.lpf and b.lpf.bandwidth_hz
    ):
        raise ConfigError("figure1 configurations must share noise, clipping and bandwidth")
    rec_m = run_sweep(mlps, jobs)
    rec_o = run_sweep(ofdm, jobs)
    sm = summarize(rec_m, clip_onset_dbm(mlps))
    so = summarize(rec_o, clip_onset_dbm(ofdm))
    return {
        "records": rec_m + rec_o,
        "summary": {
            "mlps": sm,
            "ofdm": so,
            "fec_limit": FEC_LIMIT,
            "mlps_gross_rate_bps": gross_data_rate(mlps.code, mlps.baud_per_led_hz),
            "ofdm_gross_rate_bps": ofdm.ofdm.data_rate(),
        },
    }


def run_rate_report(n_list: Sequence[int], m_list: Sequence[int], config: SimConfig,
                    jobs: int = 1, simulate: bool = True) -> List[RateReport]:
    """Rate accounting plus a BER sweep for each ``(n, m)`` pair (zipped)."""
    if len(n_list) != len(m_list):
        raise ConfigError("n_list and m_list must have equal length")
    out = []
    for n, m in zip(n_list, m_list):
        code = CodeParams(n, m, config.code.modulation)
        cfg = dataclasses.replace(config, code=code)
        if cfg.channel.gains is not None and len(cfg.channel.gains) != n:
            cfg = dataclasses.replace(cfg, channel=dataclasses.replace(cfg.channel, gains=None))
        min_ber = best_p = None
        if simulate:
            recs = run_sweep(cfg, jobs)
            best = min(recs, key=lambda r: (r.ber, r.power_dbm))
            min_ber, best_p = best.ber, best.power_dbm
        out.append(RateReport(
            n=n,
            m=m,
            symbol_rate=symbol_rate(code),
            spectral_efficiency=spectral_efficiency(code),
            gross_data_rate_bps=gross_data_rate(code, config.baud_per_led_hz),
            min_ber=min_ber,
            best_power_dbm=best_p,
            meets_fec=min_ber is not None and min_ber < FEC_LIMIT,
        ))
    return out


def run_diversity(config: SimConfig, fit_snr_db: Tuple[float, float] = (15.0, 25.0),
                  jobs: int = 1) -> Dict[str, Any]:
    """BER against SNR over random gains and the fitted log-log slope."""
    if config.channel.fading == "FIXED":
        raise ConfigError("diversity experiment needs a random fading model")
    recs = run_sweep(config, jobs)
    lo, hi = fit_snr_db
    window = [(r.snr_db, r.ber) for r in recs if lo <= r.snr_db <= hi]
    slope = estimate_diversity_order(window)
    return {"records": recs, "slope": slope, "fit_snr_db": [lo, hi], "nominal_order": config.code.n_layers}


# -- serialization --------------------------------------------------------------


def _fmt(v) -> str:
    return repr(float(v)) if isinstance(v, float) else str(v)


def format_records(records: Sequence[BerRecord], fmt: str) -> str:
    """Render records as CSV (plot-ready columns) or schema-versioned JSON."""
    if not records:
        raise ValueError("no records to write")
    fmt = fmt.lower()
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in records:
            w.writerow([_fmt(v) for v in (r.scheme, r.n, r.m, r.power_dbm, r.snr_db, r.bits_sent,
                                           r.bit_errors, r.ber, r.ber_stderr, r.seed)])
        return buf.getvalue()
    if fmt == "json":
        return json.dumps({"schema_version": SCHEMA_VERSION, "records": [asdict(r) for r in records]},
                          indent=2) + "\n"
    raise ValueError(f"unknown format {fmt!r}")


def emit(records: Sequence[BerRecord], fmt: str, path) -> Path:
    """Write records to ``path``; nothing is created when ``records`` is empty."""
    text = format_records(records, fmt)
    path = Path(path)
    path.write_text(text)
    return path


def read_records(path) -> List[BerRecord]:
    path = Path(path)
    text = path.read_text()
    if text.lstrip().startswith("{"):
        data = json.loads(text)
        if data.get("schema_version") != SCHEMA_VERSION:
            raise ValueError(f"unsupported schema version {data.get('schema_version')}")
        return [BerRecord(**r) for r in data["records"]]
    rows = list(csv.DictReader(io.StringIO(text)))
    return [
        BerRecord(
            scheme=r["scheme"], n=int(r["n"]), m=int(r["m"]), power_dbm=float(r["power_dbm"]),
            snr_db=float(r["snr_db"]), bits_sent=int(r["bits"]), bit_errors=int(r["errors"]),
            ber=float(r["ber"]), ber_stderr=float(r["stderr"]), seed=int(r["seed"]),
        )
        for r in rows
    ]


# -- config files ---------------------------------------------------------------


def _take(d: Dict[str, Any], cls, name: str, convert=None):
    if not isinstance(d, dict):
        raise ConfigError(f"{name} must be a mapping")
    known = {f.name for f in dataclasses.fields(cls) if not f.name.startswith("_")}
    unknown = set(d) - known
    if unknown:
        raise ConfigError(f"unknown {name} key(s): {sorted(unknown)}")
    d = dict(d)
    if convert:
        d = convert(d)
    try:
        return cls(**d)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{name}: {exc}") from None


def _channel(d):
    if d.get("lpf") is not None:
        d["lpf"] = _take(d["lpf"], ch.LowPass, "channel.lpf")
    if d.get("gains") is not None:
        d["gains"] = tuple(d["gains"])
    return d


def config_from_dict(d: Dict[str, Any]) -> SimConfig:
    """Build a :class:`SimConfig` from a mapping keyed by its field names."""

    def convert(top):
        if "code" in top:
            top["code"] = _take(top["code"], CodeParams, "code")
        if "channel" in top:
            top["channel"] = _take(top["channel"], ch.ChannelModel, "channel", _channel)
        if "power_sweep_dbm" in top:
            top["power_sweep_dbm"] = _take(top["power_sweep_dbm"], PowerSweep, "power_sweep_dbm")
        if "ofdm" in top:
            top["ofdm"] = _take(top["ofdm"], OfdmParams, "ofdm")
        return top

    return _take(d or {}, SimConfig, "config", convert)


class _Loader(yaml.SafeLoader):
    """SafeLoader that also reads ``1e8``-style floats (YAML 1.2 syntax)."""


_Loader.add_implicit_resolver(
    "tag:yaml.org,2002:float",
    re.compile(r"^[-+]?(?:\d+\.?\d*|\.\d+)[eE][-+]?\d+$"),
    list("-+0123456789."),
)


def load_config(path) -> Dict[str, Any]:
    """Parse a YAML/JSON config file into a mapping."""
    try:
        data = yaml.load(Path(path).read_text(), Loader=_Loader)
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError("config file must hold a mapping")
    return data
