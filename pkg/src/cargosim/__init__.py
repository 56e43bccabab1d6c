"""Trace-driven simulator of NIC-executed critical-region prefetching."""

from .config import ExperimentConfig, load_config, loads_config
from .critical import CriticalConfig, CriticalEngine, CriticalRegion
from .errors import ConfigError
from .lru import BACKEND as LRU_BACKEND
from .memsys import CacheConfig, DramConfig, MemorySystem, PcieConfig
from .metrics import PowerModel, compare, finalize, write_report
from .nic import NicConfig, NicModel
from .regpred import RegPredConfig, RegValuePredictor
from .trace import read_trace, validate_trace, write_trace
from .tracegen import SyntheticWorkloadSpec, WorkloadKind, generate_trace
from .workload import SimConfig, Simulation, WorkloadConfig, run_simulation

__version__ = "0.1.0"

__all__ = [
    "CacheConfig", "ConfigError", "CriticalConfig", "CriticalEngine", "CriticalRegion",
    "DramConfig", "ExperimentConfig", "LRU_BACKEND", "MemorySystem", "NicConfig", "NicModel",
    "PcieConfig", "PowerModel", "RegPredConfig", "RegValuePredictor", "SimConfig", "Simulation",
    "SyntheticWorkloadSpec", "WorkloadConfig", "WorkloadKind", "compare", "finalize",
    "generate_trace", "load_config", "loads_config", "read_trace", "run_simulation",
    "validate_trace", "write_report", "write_trace", "__version__",
]
