"""Control and status register file.

Exposes the emulator's configuration surface: region boundaries, per-region
latency / throughput / error-rate parameters, and the statistics counters.
Every setter optionally takes `at=` (a SimTime) so reconfiguration can be
injected into the timeline deterministically; without it the call applies
now. Counters are clear-on-demand (reset_counters), never clear-on-read.

The hardware register map is not normative, only the API is; the documented
layout below (0x100 stride per bank) exists so the register file has stable
addresses to talk about.
"""

from .sim_core import PULSE_NS, Simulator

U32_SPAN = 1 << 32

BANK_STRIDE = 0x100
REG_OFFSETS = {
    "boundary": 0x00,
    "rd_latency_100ns": 0x08,
    "wr_latency_100ns": 0x10,
    "rd_thpt_10mbps": 0x18,
    "wr_thpt_10mbps": 0x20,
    "rd_err_threshold": 0x28,
    "wr_err_threshold": 0x30,
    "rd_bytes": 0x38,
    "wr_bytes": 0x40,
    "rd_bit_errors": 0x48,
    "wr_bit_errors": 0x50,
}


def register_offset(bank: int, name: str) -> int:
    return bank * BANK_STRIDE + REG_OFFSETS[name]


def percent_to_threshold(percent) -> int:
    """Map an error percentage in [0, 100] to the 32-bit threshold (clamped)."""
    if not 0 <= percent <= 100:
        raise ValueError(f"error percentage {percent} outside 0..100")
    return min(U32_SPAN - 1, round(percent / 100 * U32_SPAN))


class CsrFile:
    def __init__(self, sim: Simulator, fabric, controllers):
        self.sim = sim
        self.fabric = fabric
        self.controllers = list(controllers)

    def _controller(self, bank: int):
        if not 0 <= bank < len(self.controllers):
            raise ValueError(f"bank {bank} outside 0..{len(self.controllers) - 1}")
        return self.controllers[bank]

    def _apply(self, at, fn):
        if at is None:
            fn()
        else:
            self.sim.schedule(at, fn)

    # -- setters --

    def set_boundary(self, bank: int, boundary_bytes: int, at=None) -> None:
        ctl = self._controller(bank)
        if boundary_bytes % (1 << 20):
            raise ValueError(f"boundary {boundary_bytes:#x} not 1 MB aligned")

        def fn():
            self.fabric.set_boundary(bank, boundary_bytes)
            ctl.config.boundary = boundary_bytes

        self._apply(at, fn)

    def set_latency(self, bank: int, rd_100ns: int, wr_100ns: int, at=None) -> None:
        ctl = self._controller(bank)
        if rd_100ns < 0 or wr_100ns < 0:
            raise ValueError("latency units must be non-negative")
        self._apply(at, lambda: ctl.set_latency(rd_100ns * PULSE_NS, wr_100ns * PULSE_NS))

    def set_throughput(self, bank: int, rd_10mbps: int, wr_10mbps: int, at=None) -> None:
        ctl = self._controller(bank)
        if rd_10mbps < 0 or wr_10mbps < 0:
            raise ValueError("throughput units must be non-negative")
        self._apply(at, lambda: ctl.set_throughput(rd_10mbps * 10_000_000, wr_10mbps * 10_000_000))

    def set_error_rate(self, bank: int, rd_percent, wr_percent, at=None) -> None:
        """Percentage entry point; stores round(p/100 * 2^32), clamped."""
        self.set_error_threshold(bank, percent_to_threshold(rd_percent),
                                 percent_to_threshold(wr_percent), at=at)

    def set_error_threshold(self, bank: int, rd_threshold: int, wr_threshold: int, at=None) -> None:
        """Raw 32-bit entry point (1/2^32 granularity)."""
        ctl = self._controller(bank)
        for v in (rd_threshold, wr_threshold):
            if not 0 <= v < U32_SPAN:
                raise ValueError(f"threshold {v} outside 0..2^32-1")
        self._apply(at, lambda: ctl.set_error_thresholds(rd_threshold, wr_threshold))

    # -- statistics --

    def get_counters(self, bank: int):
        """(rd_bytes, wr_bytes, rd_bit_errors, wr_bit_errors); read never resets."""
        return self._controller(bank).counters.as_tuple()

    def reset_counters(self, bank: int) -> None:
        c = self._controller(bank).counters
        c.rd_bytes = c.wr_bytes = c.rd_bit_errors = c.wr_bit_errors = 0

    def get_xferred_rd_data_amt(self, bank: int) -> int:
        return self._controller(bank).counters.rd_bytes

    def get_xferred_wr_data_amt(self, bank: int) -> int:
        return self._controller(bank).counters.wr_bytes

    def get_rd_bit_errors(self, bank: int) -> int:
        return self._controller(bank).counters.rd_bit_errors

    def get_wr_bit_errors(self, bank: int) -> int:
        return self._controller(bank).counters.wr_bit_errors

    # Aliases matching the device library's naming.
    SetBoundary = set_boundary
    SetLatency = set_latency
    SetThroughput = set_throughput
    SetErrorRate = set_error_rate
    GetXferredRdDataAmt = get_xferred_rd_data_amt
    GetXferredWrDataAmt = get_xferred_wr_data_amt
    GetRdBitErrors = get_rd_bit_errors
    GetWrBitErrors = get_wr_bit_errors
