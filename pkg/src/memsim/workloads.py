"""Built-in microbenchmarks: pointer-chase latency, multi-thread sequential
throughput, and bit-flip error verification.

Workloads are generators yielding CPU ops; a tiny trampoline drives each one
through the event loop, so "threads" are simulated cores inside the single
deterministic loop.
"""

import random
from dataclasses import dataclass, field

from .cpu_model import CACHEABLE, NON_CACHEABLE
from .machine import Machine

LINE = 64
STAMP = b"\xa5" * 8   # the 8-byte value RW variants write into each chunk


@dataclass
class PointerChain:
    """Hamiltonian-cycle linked list of cache-line chunks."""
    base: int
    size: int
    seed: int
    cycle: list[int] = field(repr=False)   # visit order, chunk indices

    @property
    def count(self) -> int:
        return self.size // LINE

    def next_addresses(self):
        """next-pointer per chunk index, as absolute addresses."""
        n = self.count
        nxt = [0] * n
        for i in range(n):
            nxt[self.cycle[i]] = self.base + LINE * self.cycle[(i + 1) % n]
        return nxt


def build_pointer_chain(size: int, seed: int, base: int = 0) -> PointerChain:
    """Single-cycle random permutation over size/64 chunks, deterministic in seed."""
    if size % LINE or size < 2 * LINE:
        raise ValueError(f"chain size must be a multiple of {LINE} and at least {2 * LINE}")
    rng = random.Random(seed)
    rest = list(range(1, size // LINE))
    rng.shuffle(rest)
    return PointerChain(base, size, seed, [0] + rest)


def install_chain(machine: Machine, chain: PointerChain) -> None:
    """Write the next-pointers into the backing store (untimed init)."""
    for i, nxt in enumerate(chain.next_addresses()):
        machine.store_write(chain.base + LINE * i, nxt.to_bytes(8, "little"))


@dataclass
class BenchResult:
    metric: str
    value: float
    unit: str
    config: dict = field(default_factory=dict)
    extras: dict = field(default_factory=dict)


def run_process(sim, gen) -> dict:
    """Drive a generator of CPU ops; returns a status dict with done flag."""
    status = {"done": False}

    def resume(value=None):
        try:
            op = gen.send(value)
        except StopIteration:
            status["done"] = True
            return
        op(resume)

    resume()
    return status


def _region_snapshot(machine: Machine, bank) -> dict:
    if bank is None:
        return {}
    r = machine.controllers[bank].config
    return {
        "rd_latency_ns": r.rd_latency_ns, "wr_latency_ns": r.wr_latency_ns,
        "rd_bw": r.rd_bw, "wr_bw": r.wr_bw,
        "rd_err_threshold": r.rd_err_threshold, "wr_err_threshold": r.wr_err_threshold,
    }


def run_latency_bench(machine: Machine, size: int, write_each_chunk: bool = False,
                      cacheable: bool = True, laps: int = 3,
                      target=("fpga", 0), seed: int | None = None) -> BenchResult:
    """Average ns per chunk access over `laps`, after one discarded warm lap."""
    seed = machine.seed if seed is None else seed
    base = machine.buffer_base(target)
    if target != "cpu":
        _, span = machine.region_span(target[1])
        if size > span:
            raise ValueError(f"{size}-byte buffer exceeds region of {span} bytes")
    chain = build_pointer_chain(size, seed, base)
    install_chain(machine, chain)
    mode = CACHEABLE if cacheable else NON_CACHEABLE
    cpu = machine.cpu
    marks = {}

    def proc():
        addr = base
        for lap in range(laps + 1):
            if lap == 1:
                marks["t0"] = machine.sim.now
            for _ in range(chain.count):
                data = yield cpu.load_op(0, addr, mode)
                if write_each_chunk:
                    yield cpu.store_op(0, addr + 8, STAMP, mode)
                addr = int.from_bytes(data, "little")
        marks["t1"] = machine.sim.now

    status = run_process(machine.sim, proc())
    machine.run()
    if not status["done"]:
        raise RuntimeError("latency workload did not complete")
    avg = (marks["t1"] - marks["t0"]) / (laps * chain.count)
    bank = None if target == "cpu" else target[1]
    cfg = {"bench": "latency", "size": size, "write_each_chunk": write_each_chunk,
           "cacheable": cacheable, "laps": laps, "target": str(target), "seed": seed}
    cfg.update(_region_snapshot(machine, bank))
    return BenchResult("latency_ns", avg, "ns", cfg)


def run_throughput_bench(machine: Machine, threads: int = 4,
                         per_thread_bytes: int = 1024 * 1024, write: bool = False,
                         cacheable: bool = True, duration_ns: int = 100_000_000,
                         warmup_ns: int = 1_000_000, target=("fpga", 0)) -> list[BenchResult]:
    """Counter-based MB/s per direction over a measured window.

    Each thread streams its private buffer line by line for the duration;
    throughput is the CSR byte-counter delta divided by the window.
    """
    if duration_ns < 10_000_000:
        raise ValueError("throughput measurement needs at least 10 ms simulated")
    if target == "cpu":
        raise ValueError("throughput bench measures the emulated region counters")
    bank = target[1]
    base, span = machine.region_span(bank)
    if threads * per_thread_bytes > span:
        raise ValueError("per-thread buffers exceed the target region")
    if threads > len(machine.cpu.cores):
        raise ValueError(f"{threads} threads on {len(machine.cpu.cores)} cores")
    mode = CACHEABLE if cacheable else NON_CACHEABLE
    cpu = machine.cpu
    gap = machine.cfg.stream_gap_ns
    stop = {"flag": False}

    def worker(core: int, buf_base: int):
        chunks = per_thread_bytes // LINE
        while not stop["flag"]:
            for i in range(chunks):
                if stop["flag"]:
                    return
                addr = buf_base + i * LINE
                yield cpu.load_op(core, addr, mode)
                if write:
                    yield cpu.store_op(core, addr + 8, STAMP, mode)
                yield cpu.idle_op(gap)

    for core in range(threads):
        run_process(machine.sim, worker(core, base + core * per_thread_bytes))

    t0 = machine.sim.now + warmup_ns
    t1 = t0 + duration_ns
    snaps = {}
    machine.sim.schedule(t0, lambda: snaps.update(a=machine.csr.get_counters(bank)))

    def finish():
        snaps.update(b=machine.csr.get_counters(bank))
        stop["flag"] = True

    machine.sim.schedule(t1, finish)
    machine.run_until(t1)
    rd = (snaps["b"][0] - snaps["a"][0]) * 1000.0 / duration_ns
    wr = (snaps["b"][1] - snaps["a"][1]) * 1000.0 / duration_ns
    cfg = {"bench": "throughput", "threads": threads, "per_thread_bytes": per_thread_bytes,
           "write": write, "cacheable": cacheable, "duration_ns": duration_ns,
           "target": str(target), "seed": machine.seed}
    cfg.update(_region_snapshot(machine, bank))
    return [BenchResult("rd_throughput_mbps", rd, "MB/s", cfg),
            BenchResult("wr_throughput_mbps", wr, "MB/s", cfg)]


def run_error_bench(machine: Machine, mode: str = "read_only",
                    size: int = 4 * 1024 * 1024, cacheable: bool = True,
                    target=("fpga", 0)) -> BenchResult:
    """Observed flipped-bit fraction over a zeroed buffer.

    read_only scans a never-written (hence zero) buffer; write_then_read
    first rewrites it with zeros through the CPU, then scans. Counts on-bits
    in every delivered byte and cross-checks against the CSR error counters.
    """
    if mode not in ("read_only", "write_then_read"):
        raise ValueError(f"unknown error bench mode {mode!r}")
    if size % LINE:
        raise ValueError("buffer must be line-aligned")
    bank = None if target == "cpu" else target[1]
    base = machine.buffer_base(target)
    access = CACHEABLE if cacheable else NON_CACHEABLE
    cpu = machine.cpu
    zeros = bytes(8)
    tally = {"ones": 0}

    def proc():
        lines = size // LINE
        if mode == "write_then_read":
            for i in range(lines):
                la = base + i * LINE
                for off in range(0, LINE, 8):
                    yield cpu.store_op(0, la + off, zeros, access)
        ones = 0
        for i in range(lines):
            la = base + i * LINE
            for off in range(0, LINE, 8):
                data = yield cpu.load_op(0, la + off, access)
                ones += int.from_bytes(data, "little").bit_count()
        tally["ones"] = ones

    status = run_process(machine.sim, proc())
    machine.run()
    if not status["done"]:
        raise RuntimeError("error workload did not complete")
    observed = tally["ones"] / (size * 8)
    extras = {}
    if bank is not None:
        c = machine.csr.get_counters(bank)
        extras = {"rd_bit_errors": c[2], "wr_bit_errors": c[3]}
    cfg = {"bench": "error", "mode": mode, "size": size, "cacheable": cacheable,
           "target": str(target), "seed": machine.seed}
    cfg.update(_region_snapshot(machine, bank))
    return BenchResult("error_rate", observed, "fraction", cfg, extras)
