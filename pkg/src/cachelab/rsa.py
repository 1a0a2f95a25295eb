"""Instrumented CRT-RSA victim using fixed-window modular exponentiation.

The exponent is processed in k-bit windows against a precomputed multiplier
table g[1..2^k]. Every nonzero window costs one table load, and that load is
what leaks: the 1024-bit entry spans two cache lines and is re-read word by
word across the long modular multiplication, so an attacker probing the
entry's two sets sees a burst of 16 evictions inside one monitoring epoch.

A scatter-gather variant stores the table interleaved and walks every line of
the table region on every iteration, killing the set-level signal. It is the
negative control for the attack.

All big-integer arithmetic uses Python's native ints; primality testing is
Miller-Rabin with witnesses drawn from the caller's seeded RNG, so key
generation is fully deterministic under a seed.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass

from .cache import CacheConfig
from .trace import TraceRecorder

SUPPORTED_KEY_BITS = (512, 1024, 2048)


@dataclass(frozen=True)
class RsaSecret:
    """CRT key material. d_p and d_q drive the two attacked exponentiations."""

    bits: int
    p: int
    q: int
    n: int
    e: int
    d: int
    d_p: int
    d_q: int
    q_inv: int

    def __post_init__(self):
        assert self.n == self.p * self.q
        assert self.d_p == self.d % (self.p - 1)
        assert self.d_q == self.d % (self.q - 1)


@dataclass(frozen=True)
class WindowSequence:
    """Base-2^k digits of an exponent, most significant first."""

    k: int
    windows: tuple[int, ...]

    def __post_init__(self):
        if not 1 <= self.k <= 8:
            raise ValueError("window width must be in [1, 8]")
        if not self.windows or self.windows[0] == 0:
            raise ValueError("leading window must be nonzero")
        if any(not 0 <= w < (1 << self.k) for w in self.windows):
            raise ValueError("window value out of range")

    def reassemble(self) -> int:
        value = 0
        for w in self.windows:
            value = (value << self.k) | w
        return value


def window_decompose(e: int, k: int) -> WindowSequence:
    """Split an exponent into k-bit windows, most significant (nonzero) first."""
    if e < 1:
        raise ValueError("exponent must be >= 1")
    if not 1 <= k <= 8:
        raise ValueError("window width must be in [1, 8]")
    windows = []
    while e:
        windows.append(e & ((1 << k) - 1))
        e >>= k
    return WindowSequence(k, tuple(reversed(windows)))


@dataclass(frozen=True)
class MultiplierTable:
    """Layout of the precomputed multiplier table g[1..2^k] in victim memory.

    Entry i occupies entry_size_bytes starting at base_address plus
    (i-1) * entry_size_bytes; with the defaults each 1024-bit entry covers two
    consecutive cache lines, so the 16-entry table spans 32 consecutive sets.
    """

    base_address: int = 0
    entry_size_bytes: int = 128
    num_entries: int = 16
    word_size_bytes: int = 8

    def __post_init__(self):
        if self.entry_size_bytes % self.word_size_bytes:
            raise ValueError("entry size must be a multiple of the word size")

    @property
    def words_per_entry(self) -> int:
        return self.entry_size_bytes // self.word_size_bytes

    @property
    def table_bytes(self) -> int:
        return self.entry_size_bytes * self.num_entries

    def entry_byte_range(self, i: int) -> tuple[int, int]:
        if not 1 <= i <= self.num_entries:
            raise ValueError(f"table entry {i} out of range")
        start = self.base_address + (i - 1) * self.entry_size_bytes
        return start, start + self.entry_size_bytes

    def entry_word_addresses(self, i: int) -> list[int]:
        start, _ = self.entry_byte_range(i)
        return [start + j * self.word_size_bytes for j in range(self.words_per_entry)]

    def entry_sets(self, i: int, config: CacheConfig) -> tuple[int, ...]:
        start, end = self.entry_byte_range(i)
        lines = range(start // config.line_size_bytes,
                      (end - 1) // config.line_size_bytes + 1)
        return tuple(line % config.num_sets for line in lines)

    def line_addresses(self, config: CacheConfig) -> list[int]:
        num_lines = -(-self.table_bytes // config.line_size_bytes)
        return [self.base_address + i * config.line_size_bytes for i in range(num_lines)]


def table_for_set(base_set: int, k: int = 4,
                  config: CacheConfig | None = None) -> MultiplierTable:
    cfg = config or CacheConfig()
    return MultiplierTable(base_address=base_set * cfg.line_size_bytes,
                           num_entries=1 << k)


@dataclass(frozen=True)
class ExponentiationTiming:
    """Cycle budget of one window iteration.

    The four squarings are charged up front; the table words are then re-read
    spread across the long multiplication phase, far enough apart that each
    read lands in its own probe interval. Defaults make one iteration exactly
    one monitoring epoch (33 probes x 500 cycles).
    """

    squaring_cycles: int = 500
    multiply_cycles: int = 14500

    def iteration_cycles(self, k: int) -> int:
        return k * self.squaring_cycles + self.multiply_cycles

    def read_offsets(self, k: int, reads: int) -> list[int]:
        head = k * self.squaring_cycles
        return [head + ((2 * j + 1) * self.multiply_cycles) // (2 * reads)
                for j in range(reads)]


def _emit_entry_reads(tracer: TraceRecorder, table: MultiplierTable, entry: int,
                      iter_start: int, offsets: list[int], label: int) -> None:
    for addr, off in zip(table.entry_word_addresses(entry), offsets):
        tracer.emit(addr, label=label, at=iter_start + off)


def mod_exp_fixed_window(a: int, e: int, n: int, k: int = 4,
                         tracer: TraceRecorder | None = None,
                         table: MultiplierTable | None = None,
                         timing: ExponentiationTiming | None = None) -> int:
    """Compute a^e mod n, leaking the table-entry access of each nonzero window."""
    if n <= 1:
        raise ValueError("modulus must be > 1")
    if not 0 < a < n:
        raise ValueError("base must satisfy 0 < a < n")
    seq = window_decompose(e, k)
    table = table or MultiplierTable(num_entries=1 << k)
    timing = timing or ExponentiationTiming()
    if table.num_entries < (1 << k):
        raise ValueError("multiplier table too small for the window width")

    g = [0] * (table.num_entries + 1)
    g[1] = a % n
    for i in range(2, table.num_entries + 1):
        g[i] = g[i - 1] * a % n

    iteration = timing.iteration_cycles(k)
    offsets = timing.read_offsets(k, table.words_per_entry)

    def load_entry(entry: int, position: int) -> None:
        if tracer is not None:
            _emit_entry_reads(tracer, table, entry, tracer.cycle, offsets, position)
            tracer.advance(iteration)

    x = g[seq.windows[0]]
    load_entry(seq.windows[0], 0)
    for position, w in enumerate(seq.windows[1:], start=1):
        iter_start = tracer.cycle if tracer is not None else 0
        for s in range(k):
            x = x * x % n
            if tracer is not None:
                # working state (x and temporaries) lives right after the
                # table, so squaring markers never alias with table sets
                tracer.emit(table.base_address + table.table_bytes,
                            at=iter_start + s * timing.squaring_cycles)
        if w:
            x = g[w] * x % n
            if tracer is not None:
                _emit_entry_reads(tracer, table, w, iter_start, offsets, position)
        if tracer is not None:
            tracer.advance(iteration)
    return x


def mod_exp_scatter_gather(a: int, e: int, n: int, k: int = 4,
                           tracer: TraceRecorder | None = None,
                           table: MultiplierTable | None = None,
                           timing: ExponentiationTiming | None = None) -> int:
    """Hardened variant: every iteration gathers across all table lines.

    The multipliers are stored interleaved, so fetching any entry (including
    the masked fetch for a zero window) touches each cache line of the table
    region exactly once. The per-iteration set footprint is therefore
    independent of the exponent value.
    """
    if n <= 1:
        raise ValueError("modulus must be > 1")
    if not 0 < a < n:
        raise ValueError("base must satisfy 0 < a < n")
    seq = window_decompose(e, k)
    table = table or MultiplierTable(num_entries=1 << k)
    timing = timing or ExponentiationTiming()
    cfg = CacheConfig()

    g = [0] * (table.num_entries + 1)
    g[1] = a % n
    for i in range(2, table.num_entries + 1):
        g[i] = g[i - 1] * a % n

    lines = table.line_addresses(cfg)
    iteration = timing.iteration_cycles(k)
    offsets = timing.read_offsets(k, len(lines))

    def gather(position: int) -> None:
        if tracer is None:
            return
        start = tracer.cycle
        for addr, off in zip(lines, offsets):
            tracer.emit(addr, label=position, at=start + off)
        tracer.advance(iteration)

    x = g[seq.windows[0]]
    gather(0)
    for position, w in enumerate(seq.windows[1:], start=1):
        iter_start = tracer.cycle if tracer is not None else 0
        for s in range(k):
            x = x * x % n
            if tracer is not None:
                tracer.emit(table.base_address + table.table_bytes,
                            at=iter_start + s * timing.squaring_cycles)
        gather(position)
        if w:
            x = g[w] * x % n
    return x


def encrypt(m: int, key: RsaSecret) -> int:
    if not 0 <= m < key.n:
        raise ValueError("message out of range")
    return pow(m, key.e, key.n)


def decrypt_crt(ciphertext: int, key: RsaSecret, k: int = 4,
                tracer: TraceRecorder | None = None,
                table: MultiplierTable | None = None,
                timing: ExponentiationTiming | None = None,
                exp_fn=mod_exp_fixed_window) -> int:
    """RSA decryption via two half-size exponentiations and Garner recombination.

    The trace is the concatenation of the d_p and d_q exponentiation traces.
    """
    if not 0 < ciphertext < key.n:
        raise ValueError("ciphertext out of range")

    def half(mod: int, exp: int) -> int:
        a = ciphertext % mod
        if a == 0:
            return 0
        return exp_fn(a, exp, mod, k, tracer, table, timing)

    m1 = half(key.p, key.d_p)
    m2 = half(key.q, key.d_q)
    h = key.q_inv * (m1 - m2) % key.p
    return m2 + h * key.q


def _is_probable_prime(n: int, rng: random.Random, rounds: int = 40) -> bool:
    if n < 2:
        return False
    for small in (2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37):
        if n % small == 0:
            return n == small
    d, r = n - 1, 0
    while d % 2 == 0:
        d //= 2
        r += 1
    for _ in range(rounds):
        a = rng.randrange(2, n - 1)
        x = pow(a, d, n)
        if x in (1, n - 1):
            continue
        for _ in range(r - 1):
            x = x * x % n
            if x == n - 1:
                break
        else:
            return False
    return True


def _random_prime(bits: int, rng: random.Random) -> int:
    while True:
        candidate = rng.getrandbits(bits) | (3 << (bits - 2)) | 1
        if _is_probable_prime(candidate, rng):
            return candidate


def keygen(bits: int = 2048, rng_seed=0) -> RsaSecret:
    """Deterministic RSA key generation (e = 65537, CRT parameters included)."""
    if bits not in SUPPORTED_KEY_BITS:
        raise ValueError(f"unsupported key size {bits}, expected one of {SUPPORTED_KEY_BITS}")
    rng = random.Random(f"rsa-keygen/{bits}/{rng_seed}")
    e = 65537
    while True:
        p = _random_prime(bits // 2, rng)
        q = _random_prime(bits // 2, rng)
        if p == q:
            continue
        phi = (p - 1) * (q - 1)
        if math.gcd(e, phi) != 1:
            continue
        n = p * q
        if n.bit_length() != bits:
            continue
        d = pow(e, -1, phi)
        return RsaSecret(bits=bits, p=p, q=q, n=n, e=e, d=d,
                         d_p=d % (p - 1), d_q=d % (q - 1), q_inv=pow(q, -1, p))
