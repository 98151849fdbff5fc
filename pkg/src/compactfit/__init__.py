"""Compacting real-time memory allocator with exact fragmentation analysis."""

from .automaton import FULL_PAGE, AutomatonConfig, AutomatonState, StateClass
from .errors import (CompactFitError, ConfigError, ContractError, OutOfMemory, ResourceError, TraceError,
                     UnsupportedSize)
from .heap import AddressingMode, Heap, HeapConfig
from .incremental import CompactionJob, IncrementalClassState, StepOutcome
from .runtime import ConcurrentHeap, DeploymentMode, LockRegime

__version__ = "0.1.0"

__all__ = [
    "FULL_PAGE", "AutomatonConfig", "AutomatonState", "StateClass",
    "CompactFitError", "ConfigError", "ContractError", "OutOfMemory", "ResourceError", "TraceError",
    "UnsupportedSize", "AddressingMode", "Heap", "HeapConfig", "CompactionJob", "IncrementalClassState",
    "StepOutcome", "ConcurrentHeap", "DeploymentMode", "LockRegime",
]
