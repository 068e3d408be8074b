"""Transaction-level model of the five-channel bus between masters and
per-region rate controllers.

Covers what the protocol semantics require at this level: burst framing,
address routing against the region boundary table, per-ID ordering, and
asynchronous completion handles. VALID/READY wire handshakes are not
modeled.

Ordering rules: completions sharing a transaction ID stay in issue order;
distinct IDs may reorder freely. Within one region the controller's per-ID
FIFO release gives same-ID order; across regions the fabric allows only one
active region per ID per direction and stalls a same-ID request to a
different region until the earlier ones complete (the standard interconnect
rule for avoiding cross-slave same-ID reorder). Read and write IDs are
independent spaces.
"""

from bisect import bisect_right
from collections import deque
from .sim_core import Simulator

DEFAULT_BEAT_BYTES = 16
MAX_BURST_LEN = 256


class BusError(Exception):
    """Simulated bus fault signaled to the master."""


class ProtocolFault(Exception):
    """Internal consistency violation; indicates a model bug, aborts the run."""


class BurstRequest:
    """One AXI burst address phase (plain class with slots; hot path)."""
    __slots__ = ("address", "burst_len", "is_write", "txid", "beat_bytes", "issue_time")

    def __init__(self, address: int, burst_len: int, is_write: bool, txid: int,
                 beat_bytes: int = DEFAULT_BEAT_BYTES, issue_time: int = 0):
        if not 1 <= burst_len <= MAX_BURST_LEN:
            raise ValueError(f"burst_len {burst_len} outside 1..{MAX_BURST_LEN}")
        if address % beat_bytes:
            raise ValueError(f"address {address:#x} not aligned to beat size {beat_bytes}")
        if txid < 0:
            raise ValueError("transaction ID must be non-negative")
        self.address = address
        self.burst_len = burst_len
        self.is_write = is_write
        self.txid = txid
        self.beat_bytes = beat_bytes
        self.issue_time = issue_time   # stamped when the address phase is accepted

    @property
    def total_bytes(self) -> int:
        return self.burst_len * self.beat_bytes

    @property
    def end(self) -> int:
        return self.address + self.burst_len * self.beat_bytes

    def __repr__(self):
        kind = "W" if self.is_write else "R"
        return (f"BurstRequest({kind} addr={self.address:#x} len={self.burst_len}"
                f"x{self.beat_bytes} txid={self.txid})")


class Beat:
    __slots__ = ("payload", "last", "txid")

    def __init__(self, payload: bytes, last: bool, txid: int):
        self.payload = payload
        self.last = last
        self.txid = txid

    def __repr__(self):
        return f"Beat({len(self.payload)}B last={self.last} txid={self.txid})"


class WriteResponse:
    __slots__ = ("txid", "ok")

    def __init__(self, txid: int, ok: bool = True):
        self.txid = txid
        self.ok = ok

    def __repr__(self):
        return f"WriteResponse(txid={self.txid} ok={self.ok})"


class ReadHandle:
    __slots__ = ("req", "beats", "beat_times", "complete_time", "callback")

    def __init__(self, req: BurstRequest, callback=None):
        self.req = req
        self.beats = []
        self.beat_times = []
        self.complete_time = None
        self.callback = callback

    @property
    def done(self) -> bool:
        return self.complete_time is not None

    def data(self) -> bytes:
        return b"".join(b.payload for b in self.beats)


class WriteHandle:
    __slots__ = ("req", "response", "complete_time", "callback")

    def __init__(self, req: BurstRequest, callback=None):
        self.req = req
        self.response = None
        self.complete_time = None
        self.callback = callback

    @property
    def done(self) -> bool:
        return self.complete_time is not None


class _IdState:
    """Per-ID bookkeeping for one direction: active region + stalled queue."""
    __slots__ = ("region", "inflight", "waiting")

    def __init__(self):
        self.region = None
        self.inflight = 0
        self.waiting = deque()


class AxiFabric:
    """Routes bursts to per-region controllers and enforces ID ordering."""

    def __init__(self, sim: Simulator, span_bytes: int):
        self.sim = sim
        self.span_bytes = span_bytes
        self.controllers = []        # rate controllers, one per region
        self.boundaries: list[int] = []
        self._rd_ids: dict[int, _IdState] = {}
        self._wr_ids: dict[int, _IdState] = {}
        self._inflight_spans: dict[int, tuple[int, int]] = {}
        self._span_key = 0

    def attach_regions(self, controllers, boundaries):
        if len(controllers) != len(boundaries):
            raise ValueError("one boundary per region required")
        self.controllers = list(controllers)
        self.boundaries = list(boundaries)

    # -- routing --

    def route(self, address: int) -> int:
        """Region index whose [boundary, next boundary) interval holds address."""
        if not self.boundaries:
            raise BusError("no regions configured")
        if address < self.boundaries[0] or address >= self.span_bytes:
            raise BusError(f"address {address:#x} outside the mapped span")
        return bisect_right(self.boundaries, address) - 1

    def set_boundary(self, bank: int, boundary: int) -> None:
        """Move one region split; rejected if any in-flight burst straddles it."""
        new = list(self.boundaries)
        new[bank] = boundary
        if new != sorted(new) or len(set(new)) != len(new):
            raise ValueError(f"boundary {boundary:#x} for bank {bank} breaks strict ordering")
        for lo, hi in self._inflight_spans.values():
            if lo < boundary < hi:
                raise ValueError(f"in-flight burst [{lo:#x},{hi:#x}) straddles new boundary {boundary:#x}")
        self.boundaries = new

    # -- issue paths --

    def issue_read(self, req: BurstRequest, callback=None) -> ReadHandle:
        if req.is_write:
            raise ValueError("issue_read takes a read request")
        region = self.route(req.address)
        if req.end > self.span_bytes:
            raise BusError(f"burst [{req.address:#x},{req.end:#x}) runs past the span")
        handle = ReadHandle(req, callback=callback)
        self._admit(self._rd_ids, req.txid, region,
                    lambda: self._forward_read(region, req, handle))
        return handle

    def issue_write(self, req: BurstRequest, beats, callback=None) -> WriteHandle:
        if not req.is_write:
            raise ValueError("issue_write takes a write request")
        beats = list(beats)
        if len(beats) != req.burst_len:
            raise ValueError(f"burst_len {req.burst_len} != {len(beats)} beats supplied")
        if not beats[-1].last or any(b.last for b in beats[:-1]):
            raise ValueError("exactly the final beat must carry last=True")
        region = self.route(req.address)
        if req.end > self.span_bytes:
            raise BusError(f"burst [{req.address:#x},{req.end:#x}) runs past the span")
        handle = WriteHandle(req, callback=callback)
        self._admit(self._wr_ids, req.txid, region,
                    lambda: self._forward_write(region, req, beats, handle))
        return handle

    def _admit(self, table, txid, region, forward):
        state = table.get(txid)
        if state is None:
            state = table[txid] = _IdState()
        if state.inflight and state.region != region:
            state.waiting.append((region, forward))
        else:
            state.region = region
            state.inflight += 1
            forward()

    def _release_id(self, table, txid):
        state = table[txid]
        state.inflight -= 1
        if state.inflight:
            return
        while state.waiting:
            region, forward = state.waiting.popleft()
            if state.inflight and state.region != region:
                state.waiting.appendleft((region, forward))
                break
            state.region = region
            state.inflight += 1
            forward()

    def _track_span(self, req):
        key = self._span_key
        self._span_key += 1
        self._inflight_spans[key] = (req.address, req.end)
        return key

    def _forward_read(self, region, req, handle):
        req.issue_time = self.sim.now
        key = self._track_span(req)

        def finish(time):
            if len(handle.beats) != req.burst_len:
                raise ProtocolFault("beat count mismatch at read completion")
            if handle.complete_time is not None:
                raise ProtocolFault("duplicate read completion")
            handle.complete_time = time
            del self._inflight_spans[key]
            self._release_id(self._rd_ids, req.txid)
            if handle.callback is not None:
                handle.callback(handle)

        def deliver(beat, time):
            handle.beats.append(beat)
            handle.beat_times.append(time)
            if beat.last:
                finish(time)

        def deliver_burst(beats, times):
            handle.beats.extend(beats)
            handle.beat_times.extend(times)
            if beats[-1].last:
                finish(times[-1])

        self.controllers[region].on_ar(req, deliver, deliver_burst)

    def _forward_write(self, region, req, beats, handle):
        req.issue_time = self.sim.now
        key = self._track_span(req)

        def respond(resp, time):
            if handle.complete_time is not None:
                raise ProtocolFault("duplicate write response")
            handle.response = resp
            handle.complete_time = time
            del self._inflight_spans[key]
            self._release_id(self._wr_ids, req.txid)
            if handle.callback is not None:
                handle.callback(handle)

        self.controllers[region].on_aw_w(req, beats, respond)
