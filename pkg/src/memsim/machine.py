"""Builds one simulated machine: cores, caches, bus fabric, rate
controllers, CSR, and the two memory paths.

Address map (defaults follow the modeled board): CPU-side DRAM at physical
[0, 2 GB); the emulator's FPGA-side store is a 4 GB window at 64 GB. Region
boundaries are offsets inside the FPGA window.

Calibration constants and where they come from:
  - fpga_service_ns 358: unloaded cacheable line fill lands at 400 ns
    (2 l1 + 25 l2 + 358 + 3 beats x 5 ns return cadence).
  - cpu_service_ns 130: the same path on the CPU-side DRAM lands at 160 ns.
  - fpga_wr_service_ns 240: unloaded non-cacheable write round trip, i.e.
    the writeback cost visible on top of a read.
  - stream_gap_ns 160: per-chunk core-side cost of the sequential-throughput
    loop; sets the uncapped saturation point (~455 MB/s with 4 cores).
"""

from dataclasses import dataclass, field

from .axi_fabric import AxiFabric, Beat, BurstRequest, BusError
from .cpu_model import CacheConfig, Cpu
from .csr import CsrFile
from .memory_model import BackingStore, MemTiming, MemoryModel
from .rate_controller import RateController, RegionConfig
from .sim_core import PULSE_NS, PulseTimer, Simulator


@dataclass
class MachineConfig:
    cores: int = 4
    beat_bytes: int = 16
    axi_beat_ns: int = 4
    line_bytes: int = 64
    l1_bytes: int = 32 * 1024
    l1_ways: int = 4
    l1_hit_ns: int = 2
    l2_bytes: int = 1024 * 1024
    l2_ways: int = 16
    l2_hit_ns: int = 25
    read_credits: int = 37
    write_credits: int = 17
    stream_gap_ns: int = 160
    freq_scale: float = 1.0
    cpu_dram_bytes: int = 2 << 30
    cpu_service_ns: int = 130
    cpu_wr_service_ns: int = 130
    cpu_mem_ceiling: int = 17_100_000_000
    fpga_store_bytes: int = 4 << 30
    fpga_base: int = 64 << 30
    fpga_service_ns: int = 358
    fpga_wr_service_ns: int = 240
    fpga_mem_ceiling: int = 3_900_000_000


class MemoryPort:
    """CPU-facing port: resolves physical addresses to the right path."""

    def __init__(self, machine: "Machine"):
        self.m = machine

    def _resolve(self, addr: int, n: int):
        cfg = self.m.cfg
        if 0 <= addr and addr + n <= cfg.cpu_dram_bytes:
            return "cpu", addr
        if cfg.fpga_base <= addr and addr + n <= cfg.fpga_base + cfg.fpga_store_bytes:
            return "fpga", addr - cfg.fpga_base
        raise BusError(f"unmapped physical address {addr:#x}")

    def _burst(self, offset: int, n: int, is_write: bool, txid: int) -> BurstRequest:
        bb = self.m.cfg.beat_bytes
        if n < bb:
            return BurstRequest(offset, 1, is_write, txid, beat_bytes=n)
        if n % bb:
            raise BusError(f"transfer of {n} bytes is not beat-aligned")
        return BurstRequest(offset, n // bb, is_write, txid, beat_bytes=bb)

    def read_bytes(self, addr: int, n: int, txid: int, cb) -> None:
        side, offset = self._resolve(addr, n)
        req = self._burst(offset, n, False, txid)
        if side == "fpga":
            self.m.fabric.issue_read(req, lambda h: cb(h.data(), h.complete_time))
        else:
            def deliver(first, beats, arrivals):
                data = b"".join(b.payload for b in beats)
                self.m.sim.schedule(arrivals[-1], lambda: cb(data, arrivals[-1]))
            self.m.cpu_mem.read_burst(req, deliver)

    def write_bytes(self, addr: int, data: bytes, txid: int, cb) -> None:
        side, offset = self._resolve(addr, len(data))
        req = self._burst(offset, len(data), True, txid)
        bb = req.beat_bytes
        beats = [Beat(bytes(data[i * bb:(i + 1) * bb]), i == req.burst_len - 1, txid)
                 for i in range(req.burst_len)]
        if side == "fpga":
            self.m.fabric.issue_write(req, beats, lambda h: cb(h.complete_time))
        else:
            self.m.cpu_mem.write_burst(req, beats, lambda resp, t: cb(t),
                                       beat_ns=self.m.cfg.axi_beat_ns)


class Machine:
    def __init__(self, cfg: MachineConfig | None = None,
                 regions: list[RegionConfig] | None = None, seed: int = 1):
        self.cfg = cfg = cfg or MachineConfig()
        self.seed = seed
        regions = regions if regions is not None else [RegionConfig(boundary=0)]
        bounds = [r.boundary for r in regions]
        if bounds != sorted(set(bounds)):
            raise ValueError("region boundaries must be strictly increasing")
        if bounds and bounds[-1] >= cfg.fpga_store_bytes:
            raise ValueError("region boundary beyond the FPGA-side store")

        self.sim = Simulator()
        self.pulse_timer = PulseTimer(self.sim, PULSE_NS)

        self.fpga_store = BackingStore(cfg.fpga_store_bytes)
        self.fpga_mem = MemoryModel(
            self.sim, self.fpga_store,
            MemTiming(cfg.fpga_service_ns, cfg.fpga_wr_service_ns, cfg.fpga_mem_ceiling))
        self.controllers = [
            RateController(self.sim, i, region, self.fpga_mem, self.pulse_timer,
                           run_seed=seed, beat_ns=cfg.axi_beat_ns,
                           beat_bytes=cfg.beat_bytes)
            for i, region in enumerate(regions)
        ]
        self.fabric = AxiFabric(self.sim, cfg.fpga_store_bytes)
        self.fabric.attach_regions(self.controllers, bounds)
        self.csr = CsrFile(self.sim, self.fabric, self.controllers)

        self.cpu_store = BackingStore(cfg.cpu_dram_bytes)
        self.cpu_mem = MemoryModel(
            self.sim, self.cpu_store,
            MemTiming(cfg.cpu_service_ns, cfg.cpu_wr_service_ns, cfg.cpu_mem_ceiling))

        self.port = MemoryPort(self)
        self.cpu = Cpu(self.sim, self.port,
                       CacheConfig(cfg.line_bytes, cfg.l1_bytes, cfg.l1_ways, cfg.l1_hit_ns,
                                   cfg.l2_bytes, cfg.l2_ways, cfg.l2_hit_ns),
                       cores=cfg.cores, read_credits=cfg.read_credits,
                       write_credits=cfg.write_credits, freq_scale=cfg.freq_scale)

    # -- address helpers --

    def region_span(self, bank: int):
        """(absolute base, size) of one emulated region."""
        bounds = self.fabric.boundaries
        if not 0 <= bank < len(bounds):
            raise ValueError(f"bank {bank} not configured")
        lo = bounds[bank]
        hi = bounds[bank + 1] if bank + 1 < len(bounds) else self.cfg.fpga_store_bytes
        return self.cfg.fpga_base + lo, hi - lo

    def buffer_base(self, target) -> int:
        if target == "cpu":
            return 0
        kind, bank = target
        if kind != "fpga":
            raise ValueError(f"unknown target {target!r}")
        return self.region_span(bank)[0]

    def store_write(self, addr: int, data: bytes) -> None:
        """Untimed backing-store write (initialization path, not bus traffic)."""
        if addr >= self.cfg.fpga_base:
            self.fpga_store.write(addr - self.cfg.fpga_base, data)
        else:
            self.cpu_store.write(addr, data)

    def store_read(self, addr: int, n: int) -> bytes:
        if addr >= self.cfg.fpga_base:
            return self.fpga_store.read(addr - self.cfg.fpga_base, n)
        return self.cpu_store.read(addr, n)

    def run_until(self, t: int) -> None:
        self.sim.run_until(t)

    def run(self) -> None:
        self.sim.run()
