"""Multi-core master model.

Just enough CPU structure to reproduce the microbenchmark behaviors:
per-core set-associative write-back L1s over a shared L2 (write-allocate,
LRU), an asynchronous dirty-line eviction queue whose depth is the write
credit count, bounded outstanding reads, and a non-cacheable mode that
bypasses both levels. Cores issue in order; one instruction stream each.

All completion callbacks fire at the completion's simulated time (the model
schedules them, so sim.now == t inside a callback).
"""

from dataclasses import dataclass, field
from enum import Enum

from .axi_fabric import BusError, ProtocolFault
from .sim_core import Simulator


class AccessMode(Enum):
    CACHEABLE = "cacheable"
    NON_CACHEABLE = "non_cacheable"


CACHEABLE = AccessMode.CACHEABLE
NON_CACHEABLE = AccessMode.NON_CACHEABLE


@dataclass
class CacheConfig:
    """Write-back, write-allocate, LRU at both levels."""
    line_bytes: int = 64
    l1_bytes: int = 32 * 1024
    l1_ways: int = 4
    l1_hit_ns: int = 2
    l2_bytes: int = 1024 * 1024
    l2_ways: int = 16
    l2_hit_ns: int = 25

    def __post_init__(self):
        for name in ("line_bytes", "l1_bytes", "l2_bytes"):
            v = getattr(self, name)
            if v & (v - 1):
                raise ValueError(f"{name}={v} must be a power of two")


@dataclass
class CoreState:
    core_id: int
    read_credits: int = 37
    write_credits: int = 17
    reads_inflight: int = 0
    max_reads_inflight: int = 0


class _Line:
    __slots__ = ("data", "dirty")

    def __init__(self, data: bytearray, dirty: bool):
        self.data = data
        self.dirty = dirty


class SetAssocCache:
    """LRU set-associative cache holding line data, keyed by line address."""

    def __init__(self, total_bytes: int, ways: int, line_bytes: int):
        self.line_bytes = line_bytes
        self.ways = ways
        self.n_sets = total_bytes // (ways * line_bytes)
        if self.n_sets < 1 or total_bytes % (ways * line_bytes):
            raise ValueError("cache geometry does not divide evenly")
        self._sets = [dict() for _ in range(self.n_sets)]

    def _set_for(self, line_addr: int):
        return self._sets[(line_addr // self.line_bytes) % self.n_sets]

    def lookup(self, line_addr: int) -> _Line | None:
        s = self._set_for(line_addr)
        line = s.get(line_addr)
        if line is not None:
            # dict preserves insertion order; re-insert marks most recent
            del s[line_addr]
            s[line_addr] = line
        return line

    def peek(self, line_addr: int) -> _Line | None:
        return self._set_for(line_addr).get(line_addr)

    def insert(self, line_addr: int, data: bytearray, dirty: bool):
        """Install a line; returns (victim_addr, victim_line) or None."""
        s = self._set_for(line_addr)
        victim = None
        if line_addr not in s and len(s) >= self.ways:
            vaddr = next(iter(s))   # least recently used
            victim = (vaddr, s.pop(vaddr))
        s.pop(line_addr, None)
        s[line_addr] = _Line(data, dirty)
        return victim

    def invalidate(self, line_addr: int) -> _Line | None:
        return self._set_for(line_addr).pop(line_addr, None)

    def lines(self):
        for s in self._sets:
            yield from s.items()


class EvictionQueue:
    """Dirty-line write-back FIFO; depth equals the write credit count.

    Entries issue immediately and occupy a slot until the write response
    returns, so the depth bounds outstanding writes. A core stalls on
    allocation only when every slot is busy.
    """

    def __init__(self, sim: Simulator, port, depth: int):
        self.sim = sim
        self.port = port
        self.depth = depth
        self.in_flight = 0
        self.max_in_flight = 0
        self._waiters = []   # (line_addr, data, txid, on_accepted, on_complete)

    def push(self, line_addr: int, data: bytes, txid: int, on_accepted, on_complete=None):
        if self.in_flight < self.depth:
            self._issue(line_addr, data, txid, on_accepted, on_complete)
        else:
            self._waiters.append((line_addr, data, txid, on_accepted, on_complete))

    def _issue(self, line_addr, data, txid, on_accepted, on_complete):
        self.in_flight += 1
        self.max_in_flight = max(self.max_in_flight, self.in_flight)

        def done(t):
            self.in_flight -= 1
            if self._waiters:
                self._issue(*self._waiters.pop(0))
            if on_complete is not None:
                on_complete(t)

        self.port.write_bytes(line_addr, data, txid, done)
        if on_accepted is not None:
            on_accepted()


class Cpu:
    """The modeled cores plus their cache hierarchy and eviction machinery."""

    def __init__(self, sim: Simulator, port, cache: CacheConfig, cores: int = 4,
                 read_credits: int = 37, write_credits: int = 17,
                 freq_scale: float = 1.0, txid_policy=None):
        self.sim = sim
        self.port = port
        self.cache_cfg = cache
        self.cores = [CoreState(i, read_credits, write_credits) for i in range(cores)]
        self.l1 = [SetAssocCache(cache.l1_bytes, cache.l1_ways, cache.line_bytes)
                   for _ in range(cores)]
        self.l2 = SetAssocCache(cache.l2_bytes, cache.l2_ways, cache.line_bytes)
        # default ID policy: txid = core id
        self.txid_of = txid_policy or (lambda core: core)
        self.evict_queue = EvictionQueue(sim, port, write_credits)
        self.set_frequency_scale(freq_scale)

    def set_frequency_scale(self, factor: float) -> None:
        """Scale core-side latencies; memory-side timing is unaffected."""
        if factor <= 0:
            raise ValueError("frequency scale factor must be positive")
        self.freq_scale = factor
        self._l1_ns = self.core_ns(self.cache_cfg.l1_hit_ns)
        self._l12_ns = self._l1_ns + self.core_ns(self.cache_cfg.l2_hit_ns)

    def core_ns(self, ns: int) -> int:
        return max(0, round(ns * self.freq_scale))

    def _at(self, t: int, fn) -> None:
        # normalize: callbacks always run at their logical completion time
        self.sim.schedule(t, fn)

    # -- loads --

    def load(self, core: int, addr: int, mode: AccessMode, on_done, n: int = 8) -> None:
        """Read n bytes; on_done(data, t) fires at completion time t."""
        if mode is NON_CACHEABLE:
            self._credit_take(core)
            self.port.read_bytes(addr, n, self.txid_of(core),
                                 lambda data, t: self._at(t, lambda: self._uncached_done(core, data, t, on_done)))
            return
        cfg = self.cache_cfg
        line_addr = addr & ~(cfg.line_bytes - 1)
        off = addr - line_addr
        if off + n > cfg.line_bytes:
            raise BusError(f"access at {addr:#x} spans a cache line")
        now = self.sim.now
        line = self.l1[core].lookup(line_addr)
        if line is not None:
            t = now + self._l1_ns
            data = bytes(line.data[off:off + n])
            self._at(t, lambda: on_done(data, t))
            return
        t = now + self._l12_ns
        line = self.l2.lookup(line_addr)
        if line is not None:
            self._install_l1(core, line_addr, bytearray(line.data))
            data = bytes(line.data[off:off + n])
            self._at(t, lambda: on_done(data, t))
            return
        self._fill(core, line_addr,
                   lambda data: on_done(bytes(data[off:off + n]), self.sim.now))

    def _uncached_done(self, core, data, t, on_done):
        self._credit_release(core)
        on_done(data, t)

    def _fill(self, core: int, line_addr: int, on_filled) -> None:
        # The AR goes out immediately; the L1+L2 lookup cost that precedes it
        # on real hardware is added on the completion side instead, which is
        # equivalent end to end and saves an event per miss.
        self._credit_take(core)

        def done(data, t):
            def install():
                self._credit_release(core)
                self._install_l2(core, line_addr, bytearray(data),
                                 lambda: (self._install_l1(core, line_addr, bytearray(data)),
                                          on_filled(self.l1[core].peek(line_addr).data)))
            self._at(t + self._l12_ns, install)

        self.port.read_bytes(line_addr, self.cache_cfg.line_bytes, self.txid_of(core), done)

    def _credit_take(self, core: int) -> None:
        st = self.cores[core]
        st.reads_inflight += 1
        if st.reads_inflight > st.read_credits:
            raise ProtocolFault(f"core {core} exceeded {st.read_credits} outstanding reads")
        st.max_reads_inflight = max(st.max_reads_inflight, st.reads_inflight)

    def _credit_release(self, core: int) -> None:
        self.cores[core].reads_inflight -= 1

    # -- stores --

    def store(self, core: int, addr: int, value: bytes, mode: AccessMode, on_done) -> None:
        """Write `value` at addr; on_done(t) fires at completion time t."""
        if mode is NON_CACHEABLE:
            self.port.write_bytes(addr, value, self.txid_of(core),
                                  lambda t: self._at(t, lambda: on_done(t)))
            return
        cfg = self.cache_cfg
        line_addr = addr & ~(cfg.line_bytes - 1)
        off = addr - line_addr
        if off + len(value) > cfg.line_bytes:
            raise BusError(f"store at {addr:#x} spans a cache line")
        now = self.sim.now
        line = self.l1[core].lookup(line_addr)
        if line is not None:
            line.data[off:off + len(value)] = value
            line.dirty = True
            t = now + self._l1_ns
            self._at(t, lambda: on_done(t))
            return
        t = now + self._l12_ns
        l2line = self.l2.lookup(line_addr)
        if l2line is not None:
            self._install_l1(core, line_addr, bytearray(l2line.data))
            new = self.l1[core].peek(line_addr)
            new.data[off:off + len(value)] = value
            new.dirty = True
            self._at(t, lambda: on_done(t))
            return

        def after_fill(_data):
            installed = self.l1[core].peek(line_addr)
            installed.data[off:off + len(value)] = value
            installed.dirty = True
            on_done(self.sim.now)

        self._fill(core, line_addr, after_fill)

    # -- hierarchy plumbing (timing-free; costs are folded into the hit/miss
    #    constants) --

    def _install_l1(self, core: int, line_addr: int, data: bytearray) -> None:
        victim = self.l1[core].insert(line_addr, data, False)
        if victim is None:
            return
        vaddr, vline = victim
        if not vline.dirty:
            return
        l2line = self.l2.peek(vaddr)
        if l2line is None:
            # inclusion is maintained by invalidating L1 on L2 eviction, so a
            # dirty L1 victim always has an L2 slot to merge into
            raise ProtocolFault(f"dirty L1 victim {vaddr:#x} missing from L2")
        l2line.data[:] = vline.data
        l2line.dirty = True

    def _install_l2(self, core: int, line_addr: int, data: bytearray, on_ready) -> None:
        victim = self.l2.insert(line_addr, data, False)
        if victim is None:
            on_ready()
            return
        vaddr, vline = victim
        for l1 in self.l1:
            inv = l1.invalidate(vaddr)
            if inv is not None and inv.dirty:
                vline.data = inv.data
                vline.dirty = True
        if not vline.dirty:
            on_ready()
            return
        self.evict_queue.push(vaddr, bytes(vline.data), self.txid_of(core), on_ready)

    def flush_caches(self, on_done, core: int = 0) -> None:
        """Write every dirty line back to memory; on_done(t) after the last
        response. Test/verification helper, not a timed CPU operation."""
        for l1 in self.l1:
            for addr, line in list(l1.lines()):
                l1.invalidate(addr)
                if line.dirty:
                    l2line = self.l2.peek(addr)
                    if l2line is None:
                        raise ProtocolFault(f"dirty L1 line {addr:#x} missing from L2")
                    l2line.data[:] = line.data
                    l2line.dirty = True
        dirty = [(addr, bytes(line.data)) for addr, line in self.l2.lines() if line.dirty]
        for _, line in self.l2.lines():
            line.dirty = False
        if not dirty:
            self._at(self.sim.now, lambda: on_done(self.sim.now))
            return
        remaining = [len(dirty)]

        def one_done(t):
            remaining[0] -= 1
            if remaining[0] == 0:
                on_done(t)

        for addr, data in dirty:
            self.evict_queue.push(addr, data, self.txid_of(core), None, one_done)

    # -- generator-friendly wrappers: each returns a thunk taking a
    #    continuation k(value) --

    def load_op(self, core, addr, mode=CACHEABLE, n: int = 8):
        return lambda k: self.load(core, addr, mode, lambda data, t: k(data), n=n)

    def store_op(self, core, addr, value, mode=CACHEABLE):
        return lambda k: self.store(core, addr, value, mode, lambda t: k(None))

    def idle_op(self, ns: int, scaled: bool = True):
        delay = self.core_ns(ns) if scaled else ns
        return lambda k: self.sim.after(delay, lambda: k(None))
