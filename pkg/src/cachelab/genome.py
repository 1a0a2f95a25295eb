"""k-mer hash-index victim and the microsatellite-to-cache-set mapping.

Index construction slides a length-k window over the genome and appends each
position to the bucket of its k-mer (Horner evaluation base 4 over A=0, C=1,
G=2, T=3). The traced access per insertion is the bucket-pointer read at
base + index * entry_size; with 8-byte entries and 64-byte lines, eight
neighbouring k-mers share a cache line and the 256-entry table covers 32
consecutive sets.

A microsatellite streaming past the sliding window produces its k cyclic
rotations over and over, so its cache-set footprint is the footprint of those
rotations. That footprint is what the attacker watches for.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

from .cache import CacheConfig, addr_to_set
from .trace import TraceRecorder

NUCLEOTIDE_CODES = {"A": 0, "C": 1, "G": 2, "T": 3}


def encode_nucleotide(n: str) -> int:
    try:
        return NUCLEOTIDE_CODES[n]
    except KeyError:
        raise ValueError(f"not a nucleotide: {n!r}") from None


def kmer_index(kmer: str) -> int:
    idx = 0
    for ch in kmer:
        idx = 4 * idx + encode_nucleotide(ch)
    return idx


@dataclass(frozen=True)
class GenomeSequence:
    bases: str

    def __post_init__(self):
        bad = set(self.bases) - set(NUCLEOTIDE_CODES)
        if bad:
            raise ValueError(f"invalid bases in genome: {sorted(bad)}")

    def __len__(self) -> int:
        return len(self.bases)


def load_genome(path) -> GenomeSequence:
    """Read a genome from plain text or FASTA ('>' headers skipped, case folded)."""
    parts = []
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line or line.startswith(">"):
            continue
        parts.append(line.upper())
    return GenomeSequence("".join(parts))


@dataclass(frozen=True)
class HashIndexLayout:
    """Placement of the bucket-pointer table in victim memory."""

    k: int = 4
    entry_size_bytes: int = 8
    base_address: int = 0

    @property
    def num_entries(self) -> int:
        return 4 ** self.k

    @property
    def table_bytes(self) -> int:
        return self.num_entries * self.entry_size_bytes

    def entry_address(self, idx: int) -> int:
        if not 0 <= idx < self.num_entries:
            raise ValueError(f"table index {idx} out of range")
        return self.base_address + idx * self.entry_size_bytes

    def entry_set(self, idx: int, config: CacheConfig) -> int:
        return addr_to_set(self.entry_address(idx), config)

    def entries_per_line(self, config: CacheConfig) -> int:
        return config.line_size_bytes // self.entry_size_bytes

    def table_sets(self, config: CacheConfig) -> list[int]:
        num_lines = -(-self.table_bytes // config.line_size_bytes)
        first = self.base_address // config.line_size_bytes
        return [(first + i) % config.num_sets for i in range(num_lines)]


@dataclass(frozen=True)
class Microsatellite:
    """Short tandem repeat: a 2-5 base unit occurring 5 to 50 times in a row."""

    unit: str
    repeat_count: int

    def __post_init__(self):
        if not 2 <= len(self.unit) <= 5:
            raise ValueError("repeat unit must be 2-5 bases")
        bad = set(self.unit) - set(NUCLEOTIDE_CODES)
        if bad:
            raise ValueError(f"invalid bases in unit: {sorted(bad)}")
        if not 5 <= self.repeat_count <= 50:
            raise ValueError("repeat count must be in [5, 50]")

    @property
    def bases(self) -> str:
        return self.unit * self.repeat_count


def rotations(unit: str, k: int) -> list[str]:
    """Distinct length-k k-mers produced when the repeat streams past the window.

    The unit length must divide k (or equal it); the rotations are listed
    starting from the unit's own phase.
    """
    if k % len(unit) != 0 and len(unit) != k:
        raise ValueError(f"unit of length {len(unit)} unsupported for k={k}")
    stream = unit * (k // len(unit) + 2)
    out, seen = [], set()
    for i in range(len(unit)):
        r = stream[i:i + k]
        if r not in seen:
            seen.add(r)
            out.append(r)
    return out


def microsatellite_cache_sets(msat: Microsatellite, layout: HashIndexLayout,
                              config: CacheConfig) -> list[tuple[str, int]]:
    """The k-mers a repeat produces and the cache set of each one's table entry."""
    return [(r, layout.entry_set(kmer_index(r), config))
            for r in rotations(msat.unit, layout.k)]


def unit_set_footprint(unit: str, layout: HashIndexLayout,
                       config: CacheConfig) -> frozenset[int]:
    return frozenset(layout.entry_set(kmer_index(r), config)
                     for r in rotations(unit, layout.k))


def build_index(genome: GenomeSequence, layout: HashIndexLayout | None = None,
                tracer: TraceRecorder | None = None,
                insert_cycles: int = 9000) -> dict[int, list[int]]:
    """Build the k-mer position index, emitting one bucket read per insertion."""
    layout = layout or HashIndexLayout()
    k = layout.k
    if len(genome) < k:
        raise ValueError(f"genome shorter than k={k}")
    index: dict[int, list[int]] = {}
    bases = genome.bases
    # rolling Horner update: shift one base in, mask to k digits
    mask = layout.num_entries // 4
    idx = 0
    for i in range(k - 1):
        idx = 4 * idx + encode_nucleotide(bases[i])
    for pos in range(len(bases) - k + 1):
        idx = (idx % mask) * 4 + encode_nucleotide(bases[pos + k - 1])
        if tracer is not None:
            tracer.emit(layout.entry_address(idx), label=pos)
            tracer.advance(insert_cycles)
        index.setdefault(idx, []).append(pos)
    return index
