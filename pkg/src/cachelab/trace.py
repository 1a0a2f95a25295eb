"""Cycle-stamped access traces emitted by instrumented victims.

The ground-truth label on an event (window position for RSA, genome position
for the indexer) exists only for evaluation; the monitoring engine strips it
before anything reaches the recovery side.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .cache import CacheConfig, addr_to_set


@dataclass(frozen=True)
class AccessEvent:
    cycle: int
    address: int
    ground_truth_label: int | None = None


class TraceRecorder:
    """Access sink handed to a victim; accumulates events and a victim clock."""

    def __init__(self, start_cycle: int = 0):
        self.events: list[AccessEvent] = []
        self.cycle = start_cycle

    def emit(self, address: int, label: int | None = None, at: int | None = None) -> None:
        stamp = self.cycle if at is None else at
        if self.events and stamp < self.events[-1].cycle:
            raise ValueError("access events must carry non-decreasing cycle stamps")
        self.events.append(AccessEvent(stamp, address, label))

    def advance(self, cycles: int) -> None:
        if cycles < 0:
            raise ValueError("cannot advance the clock backwards")
        self.cycle += cycles


@dataclass
class VictimTrace:
    """One victim execution: its events (cycle-ordered) and total duration."""

    events: list[AccessEvent]
    duration_cycles: int
    _columns: tuple[np.ndarray, np.ndarray] | None = field(
        default=None, repr=False, compare=False)

    def __post_init__(self):
        last = -1
        for ev in self.events:
            if ev.cycle < last:
                raise ValueError("trace events out of order")
            last = ev.cycle
        if self.events and self.duration_cycles <= self.events[-1].cycle:
            raise ValueError("duration must cover the last event")

    def columns(self) -> tuple[np.ndarray, np.ndarray]:
        """Events as (cycles, addresses) arrays, cached for repeated filtering."""
        if self._columns is None:
            cycles = np.fromiter((e.cycle for e in self.events), dtype=np.int64,
                                 count=len(self.events))
            addrs = np.fromiter((e.address for e in self.events), dtype=np.int64,
                                count=len(self.events))
            self._columns = (cycles, addrs)
        return self._columns

    def slice(self, start_cycle: int, end_cycle: int) -> "VictimTrace":
        """Rebase the events of [start_cycle, end_cycle) to cycle 0."""
        part = [AccessEvent(e.cycle - start_cycle, e.address, e.ground_truth_label)
                for e in self.events if start_cycle <= e.cycle < end_cycle]
        return VictimTrace(part, end_cycle - start_cycle)


def finish_trace(recorder: TraceRecorder) -> VictimTrace:
    return VictimTrace(recorder.events, recorder.cycle)


def dump_trace_csv(trace: VictimTrace, path) -> None:
    """Debug dump: `cycle,address,label` per event."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["cycle", "address", "label"])
        for ev in trace.events:
            writer.writerow([ev.cycle, ev.address,
                             "" if ev.ground_truth_label is None else ev.ground_truth_label])


def trace_set_footprint(trace: VictimTrace, config: CacheConfig) -> set[int]:
    return {addr_to_set(e.address, config) for e in trace.events}
