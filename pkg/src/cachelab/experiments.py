"""Scenario wiring: builds victims, drives campaigns, runs recovery.

Everything here is deterministic under (config, seed): keys, messages,
genomes, noise and the observation streams derive from seeded generators
only.
"""

from __future__ import annotations

import random
from dataclasses import dataclass

from .cache import CacheConfig
from .config import ConfigError
from .engine import AttackConfig, MonitorTarget, NoiseConfig, RunObservation, run_campaign
from .genome import (GenomeSequence, HashIndexLayout, Microsatellite, build_index,
                     microsatellite_cache_sets, rotations)
from .recovery import (RecoveredWindows, RecoveryReport, SatelliteDetection,
                       detect_satellite, recover_exponent, score_key)
from .rsa import (ExponentiationTiming, RsaSecret, decrypt_crt, encrypt, keygen,
                  mod_exp_fixed_window, mod_exp_scatter_gather, table_for_set,
                  window_decompose)
from .trace import AccessEvent, TraceRecorder, VictimTrace, finish_trace

DEFAULTS: dict = {
    "cache.line_size_bytes": 64,
    "cache.num_sets": 64,
    "cache.associativity": 8,
    "attack.probe_period_cycles": 500,
    "attack.probes_per_epoch": 33,
    "attack.cpu_hz": 3_300_000_000,
    "attack.probe_cost_cycles": 0,
    "noise.timer_hz": 100,
    "noise.timer_burst": 8,
    "noise.spurious_eviction_prob": 0.0,
    "noise.victim_self_pollution_rate": 0,
    "rsa.key_bits": 2048,
    "rsa.window_bits": 4,
    "rsa.repetitions": 15,
    "rsa.monitored_multipliers": (1, 2, 3, 4, 5, 6, 7, 8, 9, 10),
    "rsa.table_base_set": 0,
    "rsa.squaring_cycles": 500,
    "rsa.multiply_cycles": 14500,
    "recovery.mark_threshold": 12,
    "recovery.zero_floor": 2,
    "recovery.excluded_sets": (),
    "recovery.density_threshold": 0.5,
    "recovery.window_epochs": 10,
    "genome.k": 4,
    "genome.length": 100_000,
    "genome.repetitions": 20,
    "genome.insert_cycles": 4500,
    "genome.table_base_set": 0,
    "genome.satellite_unit": "ATCG",
    "genome.satellite_repeats": 10,
    "genome.satellite_offset": 25_000,
    "figure.max_columns": 1024,
}

POLLUTION_BASE = 1 << 29


def cache_config(values: dict) -> CacheConfig:
    return CacheConfig(line_size_bytes=values["cache.line_size_bytes"],
                       num_sets=values["cache.num_sets"],
                       associativity=values["cache.associativity"])


def noise_config(values: dict) -> NoiseConfig:
    return NoiseConfig(timer_hz=values["noise.timer_hz"],
                       timer_burst=values["noise.timer_burst"],
                       spurious_eviction_prob=values["noise.spurious_eviction_prob"],
                       victim_self_pollution_rate=values["noise.victim_self_pollution_rate"])


def attack_config(values: dict, repetitions: int,
                  targets: tuple[MonitorTarget, ...]) -> AttackConfig:
    return AttackConfig(probe_period_cycles=values["attack.probe_period_cycles"],
                        probes_per_epoch=values["attack.probes_per_epoch"],
                        repetitions=repetitions,
                        cpu_hz=values["attack.cpu_hz"],
                        probe_cost_cycles=values["attack.probe_cost_cycles"],
                        cache=cache_config(values),
                        monitored_targets=targets,
                        noise=noise_config(values))


def inject_self_pollution(trace: VictimTrace, rate: int, iteration_cycles: int,
                          cfg: CacheConfig, seed: str) -> VictimTrace:
    """Add the victim's unrelated per-iteration data accesses to a trace.

    Each pollution slot is one fixed line in a randomly drawn set, re-touched
    every iteration, so the interference lands in the same sets on every
    replay of the victim.
    """
    if rate <= 0:
        return trace
    rng = random.Random(f"self-pollution/{seed}")
    slots = [rng.randrange(cfg.num_sets) for _ in range(rate)]
    addresses = [POLLUTION_BASE + j * cfg.set_span_bytes + s * cfg.line_size_bytes
                 for j, s in enumerate(slots)]
    extra = [AccessEvent(start + 1 + j, addr)
             for start in range(0, trace.duration_cycles, iteration_cycles)
             for j, addr in enumerate(addresses)]
    merged = sorted(trace.events + extra, key=lambda e: e.cycle)
    return VictimTrace(merged, trace.duration_cycles)


# --- RSA -------------------------------------------------------------------

@dataclass
class RsaOutcome:
    key: RsaSecret
    message: int
    report: RecoveryReport
    recovered: dict[str, RecoveredWindows]
    observations: list[RunObservation]
    targets: tuple[MonitorTarget, ...]
    value_of_target: dict[str, int]
    victim_executions: int
    epochs: dict[str, int]


def rsa_target_name(value: int, half: str) -> str:
    return f"m{value:02d}.{half}"


def run_rsa_experiment(values: dict, seed: int, hardened: bool = False,
                       workers: int | None = None) -> RsaOutcome:
    k = values["rsa.window_bits"]
    cfg_cache = cache_config(values)
    table = table_for_set(values["rsa.table_base_set"], k, cfg_cache)
    timing = ExponentiationTiming(squaring_cycles=values["rsa.squaring_cycles"],
                                  multiply_cycles=values["rsa.multiply_cycles"])
    monitored = tuple(sorted(set(values["rsa.monitored_multipliers"])))
    for v in monitored:
        if not 1 <= v < (1 << k):
            raise ConfigError(f"monitored multiplier {v} outside [1, {(1 << k) - 1}]")

    key = keygen(values["rsa.key_bits"], rng_seed=seed)
    rng = random.Random(f"rsa-message/{seed}")
    message = rng.randrange(1, key.n)
    ciphertext = encrypt(message, key)

    exp_fn = mod_exp_scatter_gather if hardened else mod_exp_fixed_window
    tracer = TraceRecorder()
    plain = decrypt_crt(ciphertext, key, k, tracer, table, timing, exp_fn=exp_fn)
    if plain != message:
        raise RuntimeError("decryption self-check failed")
    full = finish_trace(tracer)

    iteration = timing.iteration_cycles(k)
    wp = len(window_decompose(key.d_p, k).windows)
    wq = len(window_decompose(key.d_q, k).windows)
    boundary = wp * iteration
    halves = {"dp": full.slice(0, boundary),
              "dq": full.slice(boundary, boundary + wq * iteration)}
    rate = values["noise.victim_self_pollution_rate"]
    if rate:
        halves = {h: inject_self_pollution(t, rate, iteration, cfg_cache,
                                           seed=f"{seed}/{h}")
                  for h, t in halves.items()}

    excluded = set(values["recovery.excluded_sets"])
    targets = []
    value_of_target: dict[str, int] = {}
    half_of_target: dict[str, str] = {}
    for v in monitored:
        sets = table.entry_sets(v, cfg_cache)
        if excluded.intersection(sets):
            continue
        for half in ("dp", "dq"):
            name = rsa_target_name(v, half)
            targets.append(MonitorTarget(name, sets))
            value_of_target[name] = v
            half_of_target[name] = half

    cfg = attack_config(values, values["rsa.repetitions"], tuple(targets))
    observations = run_campaign(lambda t: halves[half_of_target[t.name]], cfg,
                                campaign_seed=seed, workers=workers)

    recovered = {}
    for half in ("dp", "dq"):
        group = [o for o in observations if half_of_target[o.target.name] == half]
        recovered[half] = recover_exponent(
            group, value_of=lambda t: value_of_target[t.name],
            threshold=values["recovery.mark_threshold"],
            zero_floor=values["recovery.zero_floor"])
    report = score_key(recovered, key, monitored, k)
    return RsaOutcome(key=key, message=message, report=report, recovered=recovered,
                      observations=observations, targets=tuple(targets),
                      value_of_target=value_of_target,
                      victim_executions=len(observations),
                      epochs={"dp": wp, "dq": wq})


# --- genome ----------------------------------------------------------------

@dataclass
class GenomeOutcome:
    genome: GenomeSequence
    detection: SatelliteDetection
    observations: list[RunObservation]
    rotation_sets: list[tuple[str, int]]
    true_epoch: int | None
    victim_executions: int
    epochs: int


def random_genome(length: int, seed) -> list[str]:
    rng = random.Random(f"genome/{seed}")
    return rng.choices("ACGT", k=length)


def purge_kmers(bases: list[str], kmers: set[str], seed) -> list[str]:
    """Rewrite single bases until none of the given k-mers occurs anywhere."""
    if not kmers:
        return bases
    k = len(next(iter(kmers)))
    rng = random.Random(f"purge/{seed}")
    for _ in range(200):
        text = "".join(bases)
        dirty = False
        for kmer in sorted(kmers):
            start = text.find(kmer)
            while start != -1:
                old = bases[start + k - 1]
                bases[start + k - 1] = rng.choice([b for b in "ACGT" if b != old])
                dirty = True
                start = text.find(kmer, start + 1)
        if not dirty:
            return bases
    raise RuntimeError("could not purge k-mers from genome")


def build_genome(values: dict, seed, embed: bool) -> tuple[GenomeSequence, Microsatellite]:
    length = values["genome.length"]
    msat = Microsatellite(values["genome.satellite_unit"],
                          values["genome.satellite_repeats"])
    bases = random_genome(length, seed)
    if embed:
        offset = values["genome.satellite_offset"]
        repeat = msat.bases
        if not 0 <= offset <= length - len(repeat):
            raise ConfigError("satellite embedding does not fit in the genome")
        bases[offset:offset + len(repeat)] = list(repeat)
    else:
        kmers = set(rotations(msat.unit, values["genome.k"]))
        bases = purge_kmers(bases, kmers, seed)
    return GenomeSequence("".join(bases)), msat


def run_genome_experiment(values: dict, seed: int, embed: bool = True,
                          workers: int | None = None) -> GenomeOutcome:
    cfg_cache = cache_config(values)
    layout = HashIndexLayout(k=values["genome.k"],
                             base_address=values["genome.table_base_set"]
                             * cfg_cache.line_size_bytes)
    genome, msat = build_genome(values, seed, embed)

    tracer = TraceRecorder()
    build_index(genome, layout, tracer, insert_cycles=values["genome.insert_cycles"])
    trace = finish_trace(tracer)

    rotation_sets = microsatellite_cache_sets(msat, layout, cfg_cache)
    targets = tuple(MonitorTarget(kmer, (s,)) for kmer, s in rotation_sets)
    cfg = attack_config(values, values["genome.repetitions"], targets)
    observations = run_campaign(lambda t: trace, cfg, campaign_seed=seed,
                                workers=workers)
    detection = detect_satellite(observations, [kmer for kmer, _ in rotation_sets],
                                 window_epochs=values["recovery.window_epochs"],
                                 density_threshold=values["recovery.density_threshold"])
    true_epoch = None
    if embed:
        true_epoch = (values["genome.satellite_offset"] * values["genome.insert_cycles"]
                      // cfg.cycles_per_epoch)
    return GenomeOutcome(genome=genome, detection=detection,
                         observations=observations, rotation_sets=rotation_sets,
                         true_epoch=true_epoch,
                         victim_executions=len(observations),
                         epochs=observations[0].epochs)
