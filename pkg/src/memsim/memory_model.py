"""Backing store and the DDR-controller service model behind it.

The controller IP is treated as an opaque pipelined black box: a constant
first-beat latency per direction plus a return-channel byte cadence derived
from an effective bandwidth ceiling. The store is sparse with zero-fill
semantics (never-written bytes read as zero).
"""

from dataclasses import dataclass

from .axi_fabric import Beat, BusError, WriteResponse
from .sim_core import Simulator

PAGE_BYTES = 1 << 16


class BackingStore:
    """Sparse byte store; pages materialize on first write."""

    def __init__(self, size: int):
        self.size = size
        self._pages: dict[int, bytearray] = {}

    def _check(self, offset: int, n: int):
        if offset < 0 or offset + n > self.size:
            raise BusError(f"access [{offset}, {offset + n}) outside store of {self.size} bytes")

    def read(self, offset: int, n: int) -> bytes:
        self._check(offset, n)
        page, off = divmod(offset, PAGE_BYTES)
        if off + n <= PAGE_BYTES:
            data = self._pages.get(page)
            if data is None:
                return bytes(n)
            return bytes(data[off:off + n])
        out = bytearray(n)
        pos = 0
        while pos < n:
            page, off = divmod(offset + pos, PAGE_BYTES)
            take = min(n - pos, PAGE_BYTES - off)
            data = self._pages.get(page)
            if data is not None:
                out[pos:pos + take] = data[off:off + take]
            pos += take
        return bytes(out)

    def write(self, offset: int, data: bytes) -> None:
        n = len(data)
        self._check(offset, n)
        page, off = divmod(offset, PAGE_BYTES)
        if off + n <= PAGE_BYTES:
            buf = self._pages.get(page)
            if buf is None:
                buf = self._pages[page] = bytearray(PAGE_BYTES)
            buf[off:off + n] = data
            return
        pos = 0
        while pos < n:
            page, off = divmod(offset + pos, PAGE_BYTES)
            take = min(n - pos, PAGE_BYTES - off)
            buf = self._pages.get(page)
            if buf is None:
                buf = self._pages[page] = bytearray(PAGE_BYTES)
            buf[off:off + take] = data[pos:pos + take]
            pos += take

    def dump_image(self, path, offset: int = 0, length: int | None = None) -> None:
        """Write a flat binary image of [offset, offset+length) to `path`."""
        if length is None:
            length = self.size - offset
        with open(path, "wb") as f:
            pos = 0
            while pos < length:
                take = min(1 << 20, length - pos)
                f.write(self.read(offset + pos, take))
                pos += take

    def load_image(self, path, offset: int = 0) -> int:
        """Load a flat binary file into the store at `offset`; returns bytes read."""
        total = 0
        with open(path, "rb") as f:
            while True:
                chunk = f.read(1 << 20)
                if not chunk:
                    break
                self.write(offset + total, chunk)
                total += len(chunk)
        return total


@dataclass
class MemTiming:
    """Service constants for one memory path.

    service_ns is the first-beat read latency of the controller+DRAM path;
    wr_service_ns the commit-to-response latency of a write. Both are
    calibration constants (the paper's end-to-end figures constrain only
    their sums with the CPU-side costs). ceiling_bytes_per_s paces the read
    return channel.
    """
    service_ns: int
    wr_service_ns: int
    ceiling_bytes_per_s: int = 3_900_000_000

    def __post_init__(self):
        if self.service_ns <= 0 or self.wr_service_ns <= 0:
            raise ValueError("service latencies must be positive")

    def beat_interval_ns(self, beat_bytes: int) -> int:
        # ceil(bytes / (bytes/s)) in ns; at least 1 so timestamps stay distinct
        return max(1, -(-beat_bytes * 1_000_000_000 // self.ceiling_bytes_per_s))


class MemoryModel:
    """Pipelined constant-latency service in front of a BackingStore.

    Read and write ports are independent (a read never queues behind a
    write), which is what keeps read-only traffic exactly invariant under
    write-side emulation parameters.
    """

    def __init__(self, sim: Simulator, store: BackingStore, timing: MemTiming):
        self.sim = sim
        self.store = store
        self.timing = timing
        self._rd_port_free = 0

    def read_burst(self, req, deliver) -> None:
        """Serve a read; calls deliver(first_arrival, beats, arrivals).

        Data content is snapshotted when the first beat leaves the DRAM,
        i.e. at service completion. Out-of-range requests fault immediately.
        """
        self.store._check(req.address, req.total_bytes)
        cadence = self.timing.beat_interval_ns(req.beat_bytes)
        start = max(self.sim.now + self.timing.service_ns, self._rd_port_free)
        arrivals = [start + i * cadence for i in range(req.burst_len)]
        self._rd_port_free = arrivals[-1] + cadence

        def _serve():
            data = self.store.read(req.address, req.total_bytes)
            bb = req.beat_bytes
            n = req.burst_len
            beats = [Beat(data[i * bb:(i + 1) * bb], i == n - 1, req.txid) for i in range(n)]
            deliver(start, beats, arrivals)

        self.sim.schedule(start, _serve)

    # -- write path, incremental: the rate controller meters out W beats one
    #    by one after throttling and commits each on release --

    def commit_beat(self, req, beat_index: int, payload: bytes) -> None:
        self.store.write(req.address + beat_index * req.beat_bytes, payload)

    def write_response_after(self, req, last_beat_time: int, on_resp) -> None:
        t = last_beat_time + self.timing.wr_service_ns
        self.sim.schedule(t, lambda: on_resp(WriteResponse(req.txid), t))

    # -- whole-burst write: direct CPU-side path with no rate controller --

    def write_burst(self, req, beats, on_resp, beat_ns: int = 0) -> None:
        self.store._check(req.address, req.total_bytes)
        for i, beat in enumerate(beats):
            self.commit_beat(req, i, beat.payload)
        last = self.sim.now + (req.burst_len - 1) * beat_ns
        self.write_response_after(req, last, on_resp)
