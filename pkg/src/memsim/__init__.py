"""Transaction-level simulator of an FPGA-based multi-region main-memory
emulator: per-region read/write latency, bandwidth and bit-flip error
emulation behind an AXI4-style bus, driven by a modeled 4-core CPU."""

from .axi_fabric import AxiFabric, Beat, BurstRequest, BusError, ProtocolFault, WriteResponse
from .cpu_model import CACHEABLE, NON_CACHEABLE, AccessMode, CacheConfig, Cpu
from .csr import CsrFile, percent_to_threshold
from .machine import Machine, MachineConfig
from .memory_model import BackingStore, MemTiming, MemoryModel
from .rate_controller import (Counters, Lfsr32, PendingLatencyMap, RateController,
                              RegionConfig, TokenBucket, inject_errors)
from .sim_core import PULSE_NS, Event, PulseTimer, SimulationError, Simulator
from .workloads import (BenchResult, PointerChain, build_pointer_chain,
                        run_error_bench, run_latency_bench, run_throughput_bench)

__version__ = "0.1.0"
