"""Per-region emulation engine.

For each memory region this inserts read/write latencies, throttles
read/write bandwidth with byte-denominated token buckets refilled on the
100-ns pulse, and injects bit-flip errors from a 32-bit maximal-length LFSR,
independently per direction.

Latency is applied as a hold measured from the data burst's arrival at the
controller, so the inserted delay stacks on top of the actual memory service
time (observed = inserted + base). The latency value is snapshotted when the
address phase arrives, so in-flight bursts are immune to reconfiguration.
"""

from collections import deque
from dataclasses import dataclass

import numpy as np

from .axi_fabric import ProtocolFault, WriteResponse
from .sim_core import PULSE_NS, Simulator

U32 = 0xFFFFFFFF
U64 = (1 << 64) - 1
MB10 = 10_000_000          # throughput granularity, bytes/s
BOUNDARY_ALIGN = 1 << 20   # region starts on 1 MB

# Galois (left-shift) mask for x^32 + x^22 + x^2 + x + 1, a primitive
# polynomial: the state sequence has period 2^32 - 1 and never hits zero.
LFSR_TAPS = 0x00400007


def _splitmix64(x: int):
    x = (x + 0x9E3779B97F4A7C15) & U64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & U64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & U64
    return x, (z ^ (z >> 31)) & U64


def derive_lfsr_seed(run_seed: int, region_index: int, direction: int) -> int:
    """Expand the run seed into one nonzero 32-bit seed per (region, direction)."""
    s = run_seed & U64
    out = 0
    for _ in range(2 * region_index + direction + 1):
        s, out = _splitmix64(s)
    folded = (out ^ (out >> 32)) & U32
    return folded or 1


def _lfsr_step_int(s: int) -> int:
    hi = s >> 31
    s = (s << 1) & U32
    if hi:
        s ^= LFSR_TAPS
    return s


def _mat_apply(mat, s: int) -> int:
    out = 0
    j = 0
    while s:
        if s & 1:
            out ^= mat[j]
        s >>= 1
        j += 1
    return out


def _mat_mul(a, b):
    return [_mat_apply(a, col) for col in b]


class Lfsr32:
    """32-bit Galois LFSR over the pinned primitive polynomial.

    step() is the reference scalar path. draws(n) produces the exact same
    state sequence in bulk (numpy lanes seeded through jump matrices), which
    is what makes per-bit error draws over multi-megabyte buffers feasible.
    skip(n) advances the logical position without materializing draws.
    """

    _STEP = [_lfsr_step_int(1 << j) for j in range(32)]
    _POW2 = [_STEP]                       # _POW2[k] = step matrix ** (2**k)
    _STEP_NP = np.array(_STEP, dtype=np.uint32)
    _BLOCK_K = 512

    def __init__(self, seed: int):
        if not 0 < seed <= U32:
            raise ValueError("LFSR seed must be a nonzero 32-bit value")
        self._state = seed
        self._pending = None      # ndarray of generated-ahead draws
        self._pos = 0
        self._lazy = 0            # skipped steps not yet folded into _state

    @property
    def state(self) -> int:
        self._materialize()
        return self._state

    def _materialize(self) -> None:
        if self._lazy:
            self._state = self._jump(self._state, self._lazy)
            self._lazy = 0

    @classmethod
    def _pow2(cls, k: int):
        while len(cls._POW2) <= k:
            m = cls._POW2[-1]
            cls._POW2.append(_mat_mul(m, m))
        return cls._POW2[k]

    _JUMP_CACHE: dict = {}

    @classmethod
    def _jump_matrix(cls, n: int):
        mat = cls._JUMP_CACHE.get(n)
        if mat is None:
            mat = [1 << j for j in range(32)]
            k = 0
            m = n
            while m:
                if m & 1:
                    mat = _mat_mul(cls._pow2(k), mat)
                m >>= 1
                k += 1
            if len(cls._JUMP_CACHE) < 4096:
                cls._JUMP_CACHE[n] = mat
        return mat

    @classmethod
    def _jump(cls, state: int, n: int) -> int:
        if n == 0:
            return state
        return _mat_apply(cls._jump_matrix(n), state)

    def _pending_left(self) -> int:
        return 0 if self._pending is None else len(self._pending) - self._pos

    def _tail_state(self) -> int:
        if self._pending_left():
            return int(self._pending[-1])
        self._materialize()
        return self._state

    def step(self) -> int:
        if self._pending_left():
            v = int(self._pending[self._pos])
            self._pos += 1
            self._state = v
            if self._pos == len(self._pending):
                self._pending = None
            return v
        self._materialize()
        self._state = _lfsr_step_int(self._state)
        return self._state

    def skip(self, n: int) -> None:
        """Advance exactly n steps without returning draws.

        Deferred: the jump is folded into the register only when a draw or
        the state is next needed, so threshold-zero paths stay cheap.
        """
        left = self._pending_left()
        if n < left:
            self._pos += n
            if n:
                self._state = int(self._pending[self._pos - 1])
            return
        if left:
            self._state = int(self._pending[-1])
            self._pending = None
        self._lazy += n - left

    def draws(self, n: int) -> np.ndarray:
        """Next n states of the sequence as uint32, advancing the register."""
        if n <= 0:
            return np.empty(0, dtype=np.uint32)
        left = self._pending_left()
        if n <= left:
            out = self._pending[self._pos:self._pos + n]
            self._pos += n
            if self._pos == len(self._pending):
                self._pending = None
        else:
            parts = []
            if left:
                parts.append(self._pending[self._pos:])
            block = self._generate(self._tail_state(), n - left)
            need = n - left
            parts.append(block[:need])
            if need < len(block):
                self._pending = block
                self._pos = need
            else:
                self._pending = None
            out = parts[0] if len(parts) == 1 else np.concatenate(parts)
        self._state = int(out[-1])
        return out

    @classmethod
    def _generate(cls, start: int, count: int) -> np.ndarray:
        """At least `count` sequential draws following `start`, lane-parallel."""
        k = cls._BLOCK_K
        lanes = -(-count // k)
        jump_k = cls._pow2(k.bit_length() - 1)
        assert k == 1 << (k.bit_length() - 1)
        starts = np.empty(lanes, dtype=np.uint32)
        s = start
        for j in range(lanes):
            starts[j] = s
            s = _mat_apply(jump_k, s)
        out = np.empty((k, lanes), dtype=np.uint32)
        states = starts
        step_cols = cls._STEP_NP
        one = np.uint32(1)
        for i in range(k):
            acc = np.zeros(lanes, dtype=np.uint32)
            for j in range(32):
                acc ^= ((states >> np.uint32(j)) & one) * step_cols[j]
            states = acc
            out[i] = states
        return out.T.reshape(-1)


def inject_errors(payload: bytes, threshold: int, lfsr: Lfsr32):
    """Flip each payload bit independently when the next LFSR draw < threshold.

    Bit i of byte b consumes draw 8*b + i (LSB first). Always advances the
    register by exactly 8*len(payload) steps. Returns (payload', flip count).
    """
    n_bits = 8 * len(payload)
    if threshold <= 0:
        lfsr.skip(n_bits)
        return payload, 0
    draws = lfsr.draws(n_bits)
    mask = draws < np.uint32(min(threshold, U32))
    flipped = int(np.count_nonzero(mask))
    if not flipped:
        return payload, 0
    flips = np.packbits(mask, bitorder="little")
    out = (np.frombuffer(payload, dtype=np.uint8) ^ flips).tobytes()
    return out, flipped


@dataclass
class RegionConfig:
    """Per-region emulation parameters.

    Latencies are nanoseconds in multiples of 100; bandwidths bytes/s in
    multiples of 10 MB/s with 0 meaning unlimited; error thresholds are
    32-bit values giving a per-bit flip probability of threshold / 2^32.
    """
    boundary: int = 0
    rd_latency_ns: int = 0
    wr_latency_ns: int = 0
    rd_bw: int = 0
    wr_bw: int = 0
    rd_err_threshold: int = 0
    wr_err_threshold: int = 0

    def __post_init__(self):
        if self.boundary % BOUNDARY_ALIGN:
            raise ValueError(f"boundary {self.boundary:#x} not 1 MB aligned")
        for name in ("rd_latency_ns", "wr_latency_ns"):
            v = getattr(self, name)
            if v < 0 or v % PULSE_NS:
                raise ValueError(f"{name}={v} must be a non-negative multiple of {PULSE_NS}")
        for name in ("rd_bw", "wr_bw"):
            v = getattr(self, name)
            if v < 0 or v % MB10:
                raise ValueError(f"{name}={v} must be a non-negative multiple of 10 MB/s")
        for name in ("rd_err_threshold", "wr_err_threshold"):
            v = getattr(self, name)
            if not 0 <= v <= U32:
                raise ValueError(f"{name}={v} outside 0..2^32-1")


@dataclass
class Counters:
    """64-bit saturating per-region statistics."""
    rd_bytes: int = 0
    wr_bytes: int = 0
    rd_bit_errors: int = 0
    wr_bit_errors: int = 0

    def bump(self, name: str, n: int) -> None:
        setattr(self, name, min(U64, getattr(self, name) + n))

    def as_tuple(self):
        return (self.rd_bytes, self.wr_bytes, self.rd_bit_errors, self.wr_bit_errors)


class PendingLatencyMap:
    """Ordered map txid -> FIFO of (delay_ns, burst_len) records."""

    def __init__(self):
        self._fifos: dict[int, deque] = {}

    def append(self, txid: int, delay_ns: int, burst_len: int) -> None:
        self._fifos.setdefault(txid, deque()).append((delay_ns, burst_len))

    def pop(self, txid: int):
        fifo = self._fifos.get(txid)
        if not fifo:
            raise ProtocolFault(f"no pending latency record for txid {txid}")
        rec = fifo.popleft()
        if not fifo:
            del self._fifos[txid]
        return rec

    def outstanding(self) -> int:
        return sum(len(f) for f in self._fifos.values())


class TokenBucket:
    """Byte bucket; tokens only increase on pulses, only decrease on release."""

    def __init__(self, rate_bytes_per_pulse: int, capacity: int):
        self.rate = rate_bytes_per_pulse
        self.capacity = capacity
        self.tokens = capacity     # start full: burstiness stays <= capacity

    def refill(self) -> None:
        self.tokens = min(self.capacity, self.tokens + self.rate)

    def take(self, cost: int) -> bool:
        if self.tokens >= cost:
            self.tokens -= cost
            return True
        return False


def _drop_beat(beat, t):
    pass


class _Job:
    """One data burst queued for release.

    deliver(beat, t) hands over one released beat; deliver_burst, when set,
    takes the remaining (beats, times) in one call on the unthrottled path.
    """
    __slots__ = ("txid", "beats", "arrivals", "hold_until", "next_i",
                 "deliver", "deliver_burst", "on_done")

    def __init__(self, txid, beats, arrivals, hold_until, deliver,
                 on_done=None, deliver_burst=None):
        self.txid = txid
        self.beats = beats
        self.arrivals = arrivals
        self.hold_until = hold_until
        self.next_i = 0
        self.deliver = deliver
        self.deliver_burst = deliver_burst
        self.on_done = on_done


class _ReleaseEngine:
    """Shared release port for one region direction.

    Beats become eligible once their burst's hold has elapsed, their arrival
    time has passed and every earlier burst with the same txid has fully
    released; eligible beats go out oldest-burst-first, paced by the channel
    beat interval and, when a bucket is installed, by token availability.

    Unthrottled, the engine advances a local time cursor and stamps whole
    bursts ahead of the wall event (one kick per burst instead of per beat);
    the channel-busy floor keeps per-ID order intact across those stamps.
    With a bucket it never stamps at or past the next pulse, since refills
    land there and the pulse handler re-kicks.
    """

    def __init__(self, sim: Simulator, beat_ns: int, pulse_ns: int, on_release):
        self.sim = sim
        self.beat_ns = beat_ns
        self.pulse_ns = pulse_ns
        self.on_release = on_release          # fn(time, nbytes)
        self.bucket: TokenBucket | None = None
        self.jobs: list[_Job] = []
        self._by_id: dict[int, deque] = {}
        self.channel_free = 0
        self._kick_at: int | None = None
        self.release_log: list | None = None  # optional [(time, nbytes)]

    def add(self, job: _Job) -> None:
        if not self.jobs and self.bucket is None:
            # idle unthrottled engine: stream straight through
            self.jobs.append(job)
            self._by_id.setdefault(job.txid, deque()).append(job)
            cursor = self.sim.now
            if self.channel_free > cursor:
                cursor = self.channel_free
            te = job.arrivals[0]
            if job.hold_until > te:
                te = job.hold_until
            if te > cursor:
                cursor = te
            self._stream_burst(job, cursor)
            return
        self.jobs.append(job)
        self._by_id.setdefault(job.txid, deque()).append(job)
        self.kick()

    def _schedule_kick(self, t: int) -> None:
        if self._kick_at is None or t < self._kick_at:
            self._kick_at = t
            self.sim.schedule(t, self._kick_event)

    def _kick_event(self) -> None:
        self._kick_at = None
        self.kick()

    def kick(self) -> None:
        now = self.sim.now
        by_id = self._by_id
        cursor = max(now, self.channel_free)
        while True:
            unlimited = self.bucket is None
            if not unlimited:
                next_pulse = (now // self.pulse_ns + 1) * self.pulse_ns
                if cursor >= next_pulse:
                    return          # the pulse handler re-kicks at refill time
            chosen = None
            wake = None
            for job in self.jobs:
                if by_id[job.txid][0] is not job:
                    continue        # per-ID predecessor still releasing
                i = job.next_i
                te = job.arrivals[i]
                if i == 0 and job.hold_until > te:
                    te = job.hold_until
                if te <= cursor:
                    chosen = job
                    break
                if wake is None or te < wake:
                    wake = te
            if chosen is None:
                if wake is None:
                    return
                if unlimited:
                    cursor = wake   # idle gap: jump instead of waking later
                    continue
                self._schedule_kick(wake)
                return
            if unlimited:
                cursor = self._stream_burst(chosen, cursor)
                continue
            cost = len(chosen.beats[chosen.next_i].payload)
            if not self.bucket.take(cost):
                return              # tokens arrive only on pulses
            self._emit_one(chosen, cursor)
            cursor = max(cursor, self.channel_free)

    def _stream_burst(self, job: _Job, cursor: int) -> int:
        """Release every remaining beat of `job` back to back from cursor."""
        beats = job.beats
        arrivals = job.arrivals
        beat_ns = self.beat_ns
        log = self.release_log
        first = job.next_i
        t = cursor
        times = []
        total = 0
        for i in range(first, len(beats)):
            a = arrivals[i]
            if a > t:
                t = a
            times.append(t)
            n = len(beats[i].payload)
            total += n
            if log is not None:
                log.append((t, n))
            t += beat_ns
        self.on_release(times[-1], total)
        job.next_i = len(beats)
        self.channel_free = t
        self._retire(job)
        if job.deliver_burst is not None:
            job.deliver_burst(beats[first:], times)
        else:
            for beat, bt in zip(beats[first:], times):
                job.deliver(beat, bt)
        if job.on_done is not None:
            job.on_done(times[-1])
        return t

    def _emit_one(self, job: _Job, t: int) -> None:
        beat = job.beats[job.next_i]
        job.next_i += 1
        self.channel_free = t + self.beat_ns
        n = len(beat.payload)
        self.on_release(t, n)
        if self.release_log is not None:
            self.release_log.append((t, n))
        done = job.next_i == len(job.beats)
        if done:
            self._retire(job)
        job.deliver(beat, t)
        if done and job.on_done is not None:
            job.on_done(t)

    def _retire(self, job: _Job) -> None:
        self.jobs.remove(job)
        fifo = self._by_id[job.txid]
        fifo.popleft()
        if not fifo:
            del self._by_id[job.txid]


class RateController:
    """Rate controller instance for one memory region."""

    def __init__(self, sim: Simulator, index: int, config: RegionConfig, memory,
                 pulse_timer, run_seed: int = 0, beat_ns: int = 4,
                 beat_bytes: int = 16, pulse_ns: int = PULSE_NS):
        self.sim = sim
        self.index = index
        self.config = config
        self.memory = memory
        self.pulse_timer = pulse_timer
        self.beat_bytes = beat_bytes
        self.pulse_ns = pulse_ns
        self.counters = Counters()
        self.pending_rd = PendingLatencyMap()
        self.pending_wr = PendingLatencyMap()
        self.rd_lfsr = Lfsr32(derive_lfsr_seed(run_seed, index, 0))
        self.wr_lfsr = Lfsr32(derive_lfsr_seed(run_seed, index, 1))
        self.rd_engine = _ReleaseEngine(sim, beat_ns, pulse_ns, self._count_rd)
        self.wr_engine = _ReleaseEngine(sim, beat_ns, pulse_ns, self._count_wr)
        self._pending_rates = None
        self._subscribed = False
        if config.rd_bw or config.wr_bw:
            self.rd_engine.bucket = self._make_bucket(config.rd_bw)
            self.wr_engine.bucket = self._make_bucket(config.wr_bw)
            self._subscribe()

    # -- configuration (driven by the CSR) --

    def set_latency(self, rd_ns: int, wr_ns: int) -> None:
        for v in (rd_ns, wr_ns):
            if v < 0 or v % self.pulse_ns:
                raise ValueError(f"latency {v} must be a non-negative multiple of {self.pulse_ns} ns")
        self.config.rd_latency_ns = rd_ns
        self.config.wr_latency_ns = wr_ns

    def set_throughput(self, rd_bw: int, wr_bw: int) -> None:
        """Queue new bucket rates; they take effect at the next pulse."""
        for v in (rd_bw, wr_bw):
            if v < 0 or v % MB10:
                raise ValueError(f"bandwidth {v} must be a non-negative multiple of 10 MB/s")
        self._pending_rates = (rd_bw, wr_bw)
        self._subscribe()

    def set_error_thresholds(self, rd_thr: int, wr_thr: int) -> None:
        for v in (rd_thr, wr_thr):
            if not 0 <= v <= U32:
                raise ValueError(f"error threshold {v} outside 0..2^32-1")
        self.config.rd_err_threshold = rd_thr
        self.config.wr_err_threshold = wr_thr

    def _make_bucket(self, bw: int):
        if bw == 0:
            return None
        rate = bw * self.pulse_ns // 1_000_000_000
        return TokenBucket(rate, max(self.beat_bytes, rate))

    def _subscribe(self):
        if not self._subscribed:
            self.pulse_timer.subscribe(self.on_pulse)
            self._subscribed = True

    # -- channel handlers --

    def on_ar(self, req, deliver, deliver_burst=None) -> None:
        """AR: snapshot the read latency and forward to memory at once."""
        self.pending_rd.append(req.txid, self.config.rd_latency_ns, req.burst_len)
        self.memory.read_burst(
            req, lambda first, beats, arrivals: self.on_r_burst(
                first, beats, arrivals, deliver, deliver_burst))

    def on_r_burst(self, first_beat_arrival: int, beats, arrivals=None,
                   deliver=None, deliver_burst=None) -> _Job:
        """R data arrived from memory: inject errors, queue for release."""
        txid = beats[0].txid
        delay_ns, burst_len = self.pending_rd.pop(txid)
        if burst_len != len(beats):
            raise ProtocolFault(f"txid {txid}: recorded burst_len {burst_len}, got {len(beats)} beats")
        if arrivals is None:
            arrivals = [first_beat_arrival + i * self.rd_engine.beat_ns for i in range(len(beats))]
        beats = self._inject_read(beats)
        if deliver is None:
            deliver = _drop_beat
        job = _Job(txid, beats, arrivals, first_beat_arrival + delay_ns, deliver,
                   deliver_burst=deliver_burst)
        self.rd_engine.add(job)
        return job

    def on_aw_w(self, req, beats, respond) -> None:
        """AW+W: snapshot the write latency, throttle, commit, then B."""
        self.pending_wr.append(req.txid, self.config.wr_latency_ns, req.burst_len)
        delay_ns, _ = self.pending_wr.pop(req.txid)
        first = self.sim.now
        arrivals = [first + i * self.wr_engine.beat_ns for i in range(len(beats))]
        idx = [0]

        def commit(beat, t):
            i = idx[0]
            idx[0] += 1
            payload, flipped = inject_errors(beat.payload, self.config.wr_err_threshold, self.wr_lfsr)
            if flipped:
                self.counters.bump("wr_bit_errors", flipped)
            self.memory.commit_beat(req, i, payload)

        def commit_burst(tail, times):
            payload = tail[0].payload if len(tail) == 1 else b"".join(b.payload for b in tail)
            payload, flipped = inject_errors(payload, self.config.wr_err_threshold, self.wr_lfsr)
            if flipped:
                self.counters.bump("wr_bit_errors", flipped)
            self.memory.commit_beat(req, idx[0], payload)
            idx[0] += len(tail)

        def finish(last_t):
            self.memory.write_response_after(
                req, last_t, lambda resp, t: respond(self.on_b(resp), t))

        self.wr_engine.add(_Job(req.txid, list(beats), arrivals, first + delay_ns,
                                commit, finish, deliver_burst=commit_burst))

    def on_b(self, resp: WriteResponse) -> WriteResponse:
        """B passes through unchanged with zero added delay."""
        return resp

    def on_pulse(self) -> None:
        """100-ns tick: apply queued rates, refill buckets, release backlog."""
        if self._pending_rates is not None:
            rd_bw, wr_bw = self._pending_rates
            self._pending_rates = None
            self.config.rd_bw = rd_bw
            self.config.wr_bw = wr_bw
            self.rd_engine.bucket = self._make_bucket(rd_bw)
            self.wr_engine.bucket = self._make_bucket(wr_bw)
        any_bucket = False
        if self.rd_engine.bucket is not None:
            self.rd_engine.bucket.refill()
            self.rd_engine.kick()
            any_bucket = True
        if self.wr_engine.bucket is not None:
            self.wr_engine.bucket.refill()
            self.wr_engine.kick()
            any_bucket = True
        if not any_bucket and self._pending_rates is None and self._subscribed:
            self.pulse_timer.unsubscribe(self.on_pulse)
            self._subscribed = False

    # -- internals --

    def _inject_read(self, beats):
        threshold = self.config.rd_err_threshold
        if threshold <= 0:
            self.rd_lfsr.skip(8 * len(beats) * len(beats[0].payload))
            return beats
        from .axi_fabric import Beat
        out = []
        for b in beats:
            payload, flipped = inject_errors(b.payload, threshold, self.rd_lfsr)
            if flipped:
                self.counters.bump("rd_bit_errors", flipped)
            out.append(Beat(payload, b.last, b.txid))
        return out

    def _count_rd(self, t, n):
        c = self.counters
        c.rd_bytes = min(U64, c.rd_bytes + n)

    def _count_wr(self, t, n):
        c = self.counters
        c.wr_bytes = min(U64, c.wr_bytes + n)
