"""Prime+Probe monitoring engine over the shared cache model.

One run interleaves a victim's access trace with the attacker's probe loop on
a single cache: the victim's events are applied at their cycle stamps, and
every probe period the attacker probes (and thereby re-primes) each monitored
set, recording exact eviction counts. Probes land on a fixed cycle grid, so a
block of `probes_per_epoch` consecutive probes forms one epoch, sized by
default to one victim exponentiation iteration.

Only a small number of sets is watched per run; a campaign multiplexes the
targets of interest across repeated executions of the identical victim and
aligns the results afterwards.

Noise model: a periodic OS timer fires at `timer_hz` and sprays a burst of
OS-owned lines over random sets (the victim runs uninterrupted otherwise),
and an optional per-probe spurious-eviction probability stands in for the
measurement noise that counter-based probing normally eliminates.

Sets are mutually independent in a set-associative cache, so each run
simulates exactly the monitored sets; probes of quiet intervals are resolved
without walking the ways (the count is provably zero). Eviction counts are
bit-identical to the naive event-by-event interleave.
"""

from __future__ import annotations

import csv
import os
import random
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterable, Iterator, Sequence

import numpy as np

from .cache import CacheConfig, CacheState, Owner
from .config import ConfigError
from .trace import VictimTrace

# OS noise lines live far above victim and attacker address ranges.
OS_NOISE_BASE = 1 << 31

THREADS_ENV_VAR = "CACHELAB_THREADS"


@dataclass(frozen=True)
class NoiseConfig:
    """Residual noise sources once the attacker has isolated its core."""

    timer_hz: int = 100
    timer_burst: int = 8
    spurious_eviction_prob: float = 0.0
    victim_self_pollution_rate: int = 0

    def __post_init__(self):
        if self.timer_hz < 0:
            raise ConfigError("timer_hz must be >= 0 (0 disables the timer)")
        if not 0.0 <= self.spurious_eviction_prob < 1.0:
            raise ConfigError("spurious_eviction_prob must be in [0, 1)")
        if self.timer_burst < 0 or self.victim_self_pollution_rate < 0:
            raise ConfigError("noise magnitudes must be >= 0")


@dataclass(frozen=True)
class MonitorTarget:
    """A named thing to watch: the cache sets backing one table entry."""

    name: str
    sets: tuple[int, ...]

    def __post_init__(self):
        if not self.sets:
            raise ConfigError(f"target {self.name!r} has no sets to monitor")


@dataclass(frozen=True)
class AttackConfig:
    probe_period_cycles: int = 500
    probes_per_epoch: int = 33
    repetitions: int = 15
    cpu_hz: int = 3_300_000_000
    probe_cost_cycles: int = 0
    cache: CacheConfig = field(default_factory=CacheConfig)
    monitored_targets: tuple[MonitorTarget, ...] = ()
    noise: NoiseConfig = field(default_factory=NoiseConfig)

    def __post_init__(self):
        if self.probe_period_cycles <= 0 or self.probes_per_epoch <= 0:
            raise ConfigError("probe period and epoch length must be positive")
        if self.repetitions <= 0:
            raise ConfigError("repetitions must be positive")
        if self.probe_cost_cycles < 0:
            raise ConfigError("probe cost must be >= 0")
        for target in self.monitored_targets:
            for s in target.sets:
                if not 0 <= s < self.cache.num_sets:
                    raise ConfigError(f"monitored set {s} outside [0, {self.cache.num_sets})")

    def effective_period(self, num_sets_monitored: int) -> int:
        """Probe grid spacing once per-set probe cost is charged."""
        return self.probe_period_cycles + self.probe_cost_cycles * num_sets_monitored

    @property
    def cycles_per_epoch(self) -> int:
        return self.probe_period_cycles * self.probes_per_epoch


@dataclass(frozen=True)
class ProbeRecord:
    run_id: str
    epoch: int
    probe: int
    set_index: int
    eviction_count: int


@dataclass
class RunObservation:
    """Eviction counts of one run, stored sparsely (zero-count probes implied).

    `counts` maps each monitored set to a pair of arrays: probe-round indices
    with a nonzero eviction count, and the counts themselves.
    """

    run_id: str
    target: MonitorTarget
    repetition: int
    rounds: int
    probe_period_cycles: int
    probes_per_epoch: int
    counts: dict[int, tuple[np.ndarray, np.ndarray]]

    @property
    def sets(self) -> tuple[int, ...]:
        return self.target.sets

    @property
    def cycles_per_epoch(self) -> int:
        return self.probe_period_cycles * self.probes_per_epoch

    @property
    def epochs(self) -> int:
        return self.rounds // self.probes_per_epoch

    def total_probes(self) -> int:
        return self.rounds * len(self.sets)

    def eviction_counts(self, set_index: int) -> np.ndarray:
        """Dense per-round counts for one set."""
        dense = np.zeros(self.rounds, dtype=np.int64)
        rounds, counts = self.counts[set_index]
        dense[rounds] = counts
        return dense

    def epoch_sums(self, set_index: int) -> np.ndarray:
        """Summed eviction counts per full epoch (partial tail dropped)."""
        p = self.probes_per_epoch
        sums = np.zeros(self.epochs, dtype=np.int64)
        rounds, counts = self.counts[set_index]
        keep = rounds < self.epochs * p
        np.add.at(sums, rounds[keep] // p, counts[keep])
        return sums

    def epoch_activity(self, set_index: int) -> np.ndarray:
        """Boolean per-epoch flag: any eviction observed in the epoch."""
        return self.epoch_sums(set_index) > 0

    def records(self, include_zero: bool = False) -> Iterator[ProbeRecord]:
        p = self.probes_per_epoch
        if include_zero:
            dense = {s: self.eviction_counts(s) for s in self.sets}
            for r in range(self.rounds):
                for s in self.sets:
                    yield ProbeRecord(self.run_id, r // p, r % p, s, int(dense[s][r]))
            return
        merged = sorted((int(r), s, int(c))
                        for s in self.sets
                        for r, c in zip(*self.counts[s]))
        for r, s, c in merged:
            yield ProbeRecord(self.run_id, r // p, r % p, s, c)


def epoch_slice(obs: RunObservation) -> np.ndarray:
    """Per-epoch eviction sums, one column per monitored set."""
    return np.stack([obs.epoch_sums(s) for s in obs.sets], axis=1)


def _timer_events(cfg: AttackConfig, duration: int, rng: random.Random
                  ) -> tuple[list[int], list[int]]:
    """OS timer interrupt bursts: cycle stamps and line addresses."""
    noise = cfg.noise
    if noise.timer_hz == 0 or noise.timer_burst == 0:
        return [], []
    period = cfg.cpu_hz // noise.timer_hz
    cycles, addrs = [], []
    line_counter = 0
    t = rng.randrange(period)
    cache = cfg.cache
    while t < duration:
        for j in range(noise.timer_burst):
            target_set = rng.randrange(cache.num_sets)
            addrs.append(OS_NOISE_BASE
                         + line_counter * cache.set_span_bytes
                         + target_set * cache.line_size_bytes)
            cycles.append(t + j)
            line_counter += 1
        t += period
    return cycles, addrs


def _probe_loop(ev_cycles: np.ndarray, ev_addrs: np.ndarray, ev_owners: np.ndarray,
                duration: int, cfg: AttackConfig, target: MonitorTarget,
                run_seed: str) -> tuple[int, dict[int, tuple[np.ndarray, np.ndarray]]]:
    cache_cfg = cfg.cache
    period = cfg.effective_period(len(target.sets))
    rounds = duration // period
    eps = cfg.noise.spurious_eviction_prob

    ev_sets = (ev_addrs // cache_cfg.line_size_bytes) % cache_cfg.num_sets
    cache = CacheState(cache_cfg)
    out: dict[int, tuple[np.ndarray, np.ndarray]] = {}
    for s in target.sets:
        cache.prime(s)
        mask = ev_sets == s
        cyc = ev_cycles[mask]
        addrs = ev_addrs[mask]
        owners = ev_owners[mask]
        ev_rounds = cyc // period
        in_range = ev_rounds < rounds
        addrs, owners, ev_rounds = addrs[in_range], owners[in_range], ev_rounds[in_range]

        hit_rounds: list[int] = []
        hit_counts: list[int] = []
        if len(ev_rounds):
            boundaries = np.flatnonzero(np.diff(ev_rounds)) + 1
            starts = np.concatenate(([0], boundaries))
            ends = np.concatenate((boundaries, [len(ev_rounds)]))
            for a, b in zip(starts, ends):
                for i in range(a, b):
                    cache.access(int(addrs[i]), Owner(int(owners[i])))
                count = cache.probe(s)
                if count:
                    hit_rounds.append(int(ev_rounds[a]))
                    hit_counts.append(count)

        if eps > 0.0:
            rng = random.Random(f"{run_seed}/spurious/{s}")
            by_round = dict(zip(hit_rounds, hit_counts))
            for r in range(rounds):
                if rng.random() < eps:
                    by_round[r] = min(cache_cfg.associativity, by_round.get(r, 0) + 1)
            items = sorted(by_round.items())
            hit_rounds = [r for r, _ in items]
            hit_counts = [c for _, c in items]

        out[s] = (np.asarray(hit_rounds, dtype=np.int64),
                  np.asarray(hit_counts, dtype=np.int64))
    return rounds, out


def run_once(victim: VictimTrace, cfg: AttackConfig, target: MonitorTarget,
             repetition: int = 1, run_seed: str | int = 0,
             run_id: str | None = None) -> RunObservation:
    """Monitor one victim execution on the target's sets."""
    if victim.duration_cycles <= 0:
        raise ConfigError("victim trace is empty (zero duration)")
    for s in target.sets:
        if not 0 <= s < cfg.cache.num_sets:
            raise ConfigError(f"monitored set {s} out of range")
    seed = str(run_seed)
    rng = random.Random(f"{seed}/timer")
    t_cycles, t_addrs = _timer_events(cfg, victim.duration_cycles, rng)

    v_cycles, v_addrs = victim.columns()
    cycles = np.concatenate((v_cycles, np.asarray(t_cycles, dtype=np.int64)))
    addrs = np.concatenate((v_addrs, np.asarray(t_addrs, dtype=np.int64)))
    owners = np.concatenate((np.full(len(v_cycles), int(Owner.VICTIM), dtype=np.int64),
                             np.full(len(t_cycles), int(Owner.OS_NOISE), dtype=np.int64)))
    order = np.argsort(cycles, kind="stable")
    rounds, counts = _probe_loop(cycles[order], addrs[order], owners[order],
                                 victim.duration_cycles, cfg, target, seed)
    return RunObservation(
        run_id=run_id or f"{target.name}#r{repetition:02d}",
        target=target, repetition=repetition, rounds=rounds,
        probe_period_cycles=cfg.probe_period_cycles,
        probes_per_epoch=cfg.probes_per_epoch, counts=counts)


def max_workers() -> int:
    raw = os.environ.get(THREADS_ENV_VAR, "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise ConfigError(f"{THREADS_ENV_VAR} must be an integer, got {raw!r}") from None


def _campaign_chunk(args) -> list[RunObservation]:
    events, duration, cfg, target, reps, campaign_seed = args
    trace = VictimTrace([], duration)
    trace._columns = events
    out = []
    for rep in reps:
        run_id = f"{target.name}#r{rep:02d}"
        out.append(run_once(trace, cfg, target, rep,
                            run_seed=f"{campaign_seed}/{run_id}", run_id=run_id))
    return out


def run_campaign(victim_factory: Callable[[MonitorTarget], VictimTrace],
                 cfg: AttackConfig, campaign_seed: str | int = 0,
                 workers: int | None = None) -> list[RunObservation]:
    """One full measurement campaign: every target, `repetitions` times each.

    The factory must rebuild the identical victim for every run (same key,
    same genome, replayed inputs); it is called once per target and the trace
    is replayed for each repetition. Runs are independent, so they may execute
    in parallel; assembly order is fixed by (target, repetition) regardless.
    """
    if not cfg.monitored_targets:
        raise ConfigError("no monitored targets configured")
    workers = max_workers() if workers is None else max(1, workers)
    reps = list(range(1, cfg.repetitions + 1))
    chunks = []
    for target in cfg.monitored_targets:
        trace = victim_factory(target)
        chunks.append((trace.columns(), trace.duration_cycles, cfg, target,
                       reps, str(campaign_seed)))
    if workers == 1 or len(chunks) == 1:
        results = [_campaign_chunk(chunk) for chunk in chunks]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_campaign_chunk, chunks))
    return [obs for group in results for obs in group]


def dump_observations_csv(observations: Sequence[RunObservation], path) -> None:
    """Write `run,target,epoch,probe,set,evictions` rows (zero counts omitted)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["run", "target", "epoch", "probe", "set", "evictions"])
        for obs in observations:
            for rec in obs.records():
                writer.writerow([obs.run_id, obs.target.name, rec.epoch,
                                 rec.probe, rec.set_index, rec.eviction_count])
