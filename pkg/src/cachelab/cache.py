"""Set-associative L1D cache model with LRU replacement and owner-tagged lines.

The model is deliberately small: a flat physical address space, one cache
level, per-set way lists ordered most-recent-first. Lines carry an owner tag
(attacker / victim / OS noise) so that evictions can be attributed exactly,
standing in for per-process performance-counter miss readings on real
hardware. Prime and probe are first-class operations: prime fills a set with
attacker lines, probe re-walks them and returns the exact number that were
evicted since, re-filling the set as a side effect.

A brute-force reference model (`ReferenceLruCache`) is included for oracle
testing; it derives cache contents from the full access history instead of
maintaining an ordered structure.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import IntEnum


class Owner(IntEnum):
    ATTACKER = 0
    VICTIM = 1
    OS_NOISE = 2


class UnprimedSetError(RuntimeError):
    """Probe issued against a set that was never primed."""


@dataclass(frozen=True)
class CacheConfig:
    """Geometry of the simulated data cache (32 KiB, 8-way by default)."""

    line_size_bytes: int = 64
    num_sets: int = 64
    associativity: int = 8

    def __post_init__(self):
        for name in ("line_size_bytes", "num_sets"):
            v = getattr(self, name)
            if v < 1 or v & (v - 1):
                raise ValueError(f"{name} must be a power of two, got {v}")
        if self.associativity < 1:
            raise ValueError("associativity must be positive")

    @property
    def capacity_bytes(self) -> int:
        return self.line_size_bytes * self.num_sets * self.associativity

    @property
    def set_span_bytes(self) -> int:
        """Address stride after which the set mapping repeats (one cache page)."""
        return self.line_size_bytes * self.num_sets


def addr_to_set(address: int, config: CacheConfig) -> int:
    """Map a byte address to its cache set: low address bits select the line."""
    if address < 0:
        raise ValueError("address must be non-negative")
    return (address // config.line_size_bytes) % config.num_sets


def addr_to_tag(address: int, config: CacheConfig) -> int:
    return address // config.line_size_bytes // config.num_sets


@dataclass(frozen=True)
class CacheLineTag:
    """Identity of a cached line within its set, with the owner that loaded it."""

    owner: Owner
    address_tag: int


@dataclass(frozen=True)
class AccessResult:
    hit: bool
    evicted: CacheLineTag | None = None


class LruPolicy:
    """Strict least-recently-used replacement on a most-recent-first way list."""

    def on_hit(self, ways: list[CacheLineTag], index: int) -> None:
        ways.insert(0, ways.pop(index))

    def insert(self, ways: list[CacheLineTag], line: CacheLineTag,
               associativity: int) -> CacheLineTag | None:
        evicted = None
        if len(ways) == associativity:
            evicted = ways.pop()
        ways.insert(0, line)
        return evicted


# Attacker priming buffer: one page per way, far above any victim data so
# address tags never collide.
ATTACKER_BASE = 1 << 30


class CacheState:
    """Mutable cache contents plus per-owner miss counters.

    Each simulation run owns its own instance; nothing here is shared.
    """

    def __init__(self, config: CacheConfig | None = None,
                 policy: LruPolicy | None = None,
                 attacker_base: int = ATTACKER_BASE):
        self.config = config or CacheConfig()
        self.policy = policy or LruPolicy()
        self.sets: list[list[CacheLineTag]] = [[] for _ in range(self.config.num_sets)]
        self.miss_counter_per_owner: dict[Owner, int] = {o: 0 for o in Owner}
        self.attacker_base = attacker_base
        # per-set priming addresses, and whether contents still equal them exactly
        self._primed: dict[int, list[int]] = {}
        self._pristine: list[bool] = [False] * self.config.num_sets

    def access(self, address: int, owner: Owner) -> AccessResult:
        """Load one line; returns hit/miss and the evicted line on a full-set miss."""
        set_index = addr_to_set(address, self.config)
        tag = addr_to_tag(address, self.config)
        ways = self.sets[set_index]
        for i, line in enumerate(ways):
            if line.address_tag == tag:
                self.policy.on_hit(ways, i)
                return AccessResult(hit=True)
        self.miss_counter_per_owner[owner] += 1
        evicted = self.policy.insert(ways, CacheLineTag(owner, tag),
                                     self.config.associativity)
        self._pristine[set_index] = False
        return AccessResult(hit=False, evicted=evicted)

    def priming_addresses(self, set_index: int) -> list[int]:
        cfg = self.config
        return [self.attacker_base + way * cfg.set_span_bytes + set_index * cfg.line_size_bytes
                for way in range(cfg.associativity)]

    def prime(self, set_index: int) -> None:
        """Fill every way of the set with attacker lines (idempotent)."""
        if not 0 <= set_index < self.config.num_sets:
            raise IndexError(f"set index {set_index} out of range")
        addresses = self.priming_addresses(set_index)
        for addr in addresses:
            self.access(addr, Owner.ATTACKER)
        self._primed[set_index] = addresses
        self._pristine[set_index] = True

    def probe(self, set_index: int) -> int:
        """Re-access the priming lines; the miss count is the eviction count.

        Surviving lines are re-touched in recency order before the evicted ones
        are re-loaded, so probe misses always displace foreign lines rather
        than cascading through the attacker's own ways. The set is left fully
        primed again, so probe doubles as the next prime.
        """
        addresses = self._primed.get(set_index)
        if addresses is None:
            raise UnprimedSetError(f"set {set_index} probed before being primed")
        if self._pristine[set_index]:
            # All priming lines present: every access would hit, in recency
            # order, which exactly reverses the way list.
            self.sets[set_index].reverse()
            return 0
        cfg = self.config
        tag_to_addr = {addr_to_tag(a, cfg): a for a in addresses}
        survivors = [tag_to_addr[line.address_tag]
                     for line in self.sets[set_index]
                     if line.address_tag in tag_to_addr]
        missing = [a for a in addresses if a not in survivors]
        evictions = 0
        for addr in survivors + missing:
            if not self.access(addr, Owner.ATTACKER).hit:
                evictions += 1
        self._pristine[set_index] = True
        return evictions

    def validate(self) -> None:
        for ways in self.sets:
            assert len(ways) <= self.config.associativity
            tags = [w.address_tag for w in ways]
            assert len(tags) == len(set(tags)), "duplicate tag within a set"


class ReferenceLruCache:
    """Brute-force LRU reference: contents derived from the access history.

    Keeps, per set, the last-access time of every tag ever seen and applies
    the LRU rule directly (the cached lines are the `associativity` most
    recently used distinct tags). Used as the independent oracle for the fast
    model above.
    """

    def __init__(self, config: CacheConfig | None = None):
        self.config = config or CacheConfig()
        self._clock = 0
        self._last_access: list[dict[int, int]] = [dict() for _ in range(self.config.num_sets)]
        self._log: list[list[tuple[int, int]]] = [[] for _ in range(self.config.num_sets)]
        self._owner_of: list[dict[int, Owner]] = [dict() for _ in range(self.config.num_sets)]
        self.miss_counter_per_owner: dict[Owner, int] = {o: 0 for o in Owner}

    def _contents(self, set_index: int) -> list[int]:
        last = self._last_access[set_index]
        ranked = sorted(last, key=lambda t: last[t], reverse=True)
        return ranked[: self.config.associativity]

    def access(self, address: int, owner: Owner) -> AccessResult:
        set_index = addr_to_set(address, self.config)
        tag = addr_to_tag(address, self.config)
        contents = self._contents(set_index)
        hit = tag in contents
        evicted = None
        if not hit:
            self.miss_counter_per_owner[owner] += 1
            if len(contents) == self.config.associativity:
                loser = contents[-1]
                evicted = CacheLineTag(self._owner_of[set_index][loser], loser)
            self._owner_of[set_index][tag] = owner
        self._last_access[set_index][tag] = self._clock
        self._log[set_index].append((self._clock, tag))
        self._clock += 1
        return AccessResult(hit=hit, evicted=evicted)
