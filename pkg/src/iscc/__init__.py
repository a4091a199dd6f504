"""Joint transmit/receive beamforming for an integrated
sensing-computing-communication uplink.

Modules: `scenario` (configs, channels), `metrics` (closed-form metrics
and the Monte-Carlo oracle), `receivers` (closed-form receive updates),
`wopm` (weighted overall-performance maximization), `ttpm` (QoS-constrained
power minimization), `baselines`, `harness` (seeded experiments), `cli`.
"""

from .metrics import (EmpiricalReport, InterferenceVariant, PerformanceReport,
                      RxBeams, SignalBatch, TxBeams)
from .receivers import ReceiverRule
from .scenario import (ChannelSet, SystemConfig, desk_config,
                       generate_channels, read_config, table3_config,
                       write_config)
from .ttpm import Infeasible, QosSpec

__all__ = [
    "ChannelSet", "EmpiricalReport", "Infeasible", "InterferenceVariant",
    "PerformanceReport", "QosSpec", "ReceiverRule", "RxBeams", "SignalBatch",
    "SystemConfig", "TxBeams", "desk_config", "generate_channels",
    "read_config", "table3_config", "write_config",
]

__version__ = "0.1.0"
