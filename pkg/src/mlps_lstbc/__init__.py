"""Link-level simulator for layered phase-shift space-time block codes over IM/DD VLC."""
from .codec import CodeParams, Modulation, build_spread_matrix, conv_matrix, demodulate, modulate
from .channel import ChannelModel, LowPass, transmit, transmit_batch
from .receiver import build_zf, mlse_detect, zf_detect
from .harness import SimConfig, run_sweep

__all__ = [
    "CodeParams",
    "Modulation",
    "build_spread_matrix",
    "conv_matrix",
    "modulate",
    "demodulate",
    "ChannelModel",
    "LowPass",
    "transmit",
    "transmit_batch",
    "build_zf",
    "zf_detect",
    "mlse_detect",
    "SimConfig",
    "run_sweep",
]

__version__ = "0.1.0"
