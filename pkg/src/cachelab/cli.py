"""Experiment runner and reproduction harness.

Runs one scenario end to end, writes deterministic artifacts into the output
directory (config echo, observation CSV, report, figures) and finishes with a
manifest; a missing manifest means the run did not complete.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import random
import sys
from dataclasses import dataclass, field
from itertools import product
from pathlib import Path

from . import experiments
from .cache import CacheConfig, CacheState, LruPolicy, Owner, ReferenceLruCache
from .config import ConfigError, format_config, load_config_file, resolve
from .genome import HashIndexLayout, unit_set_footprint, rotations
from .recovery import FigureDot, emit_figures, mark_candidates
from .rsa import window_decompose

SCENARIOS = ("rsa-attack", "rsa-hardened", "genome-attack", "genome-negative",
             "cache-selftest")

ARTIFACTS = ("config.txt", "observations.csv", "report.json",
             "figure.svg", "figure.csv")


@dataclass(frozen=True)
class ExperimentSpec:
    scenario: str
    seed: int
    out_dir: Path
    overrides: dict[str, str] = field(default_factory=dict)
    config_file: str | None = None

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ConfigError(f"unknown scenario {self.scenario!r}, "
                              f"expected one of {SCENARIOS}")


def resolve_values(spec: ExperimentSpec) -> dict:
    layers = []
    if spec.config_file:
        layers.append(load_config_file(spec.config_file))
    layers.append(spec.overrides)
    return resolve(experiments.DEFAULTS, *layers)


# --- selftest suites ---------------------------------------------------------

@dataclass
class SuiteResult:
    cases: int
    failures: int


@dataclass
class SelftestResult:
    suites: dict[str, SuiteResult]

    @property
    def passed(self) -> bool:
        return all(s.failures == 0 for s in self.suites.values())


def _lru_oracle_suite(rng_seed, cases: int, policy_factory) -> SuiteResult:
    rng = random.Random(f"selftest-lru/{rng_seed}")
    geometries = [CacheConfig(64, 64, 8), CacheConfig(64, 8, 2), CacheConfig(32, 16, 4)]
    failures = 0
    for _ in range(cases):
        cfg = rng.choice(geometries)
        sim = CacheState(cfg, policy=policy_factory())
        ref = ReferenceLruCache(cfg)
        pool = [rng.randrange(4 * cfg.num_sets) * cfg.line_size_bytes
                for _ in range(3 * cfg.associativity)]
        ok = True
        for _ in range(rng.randrange(1, 400)):
            addr = rng.choice(pool)
            owner = Owner(rng.randrange(3))
            if sim.access(addr, owner) != ref.access(addr, owner):
                ok = False
                break
        if ok and sim.miss_counter_per_owner != ref.miss_counter_per_owner:
            ok = False
        failures += not ok
    return SuiteResult(cases, failures)


def _window_roundtrip_suite(rng_seed, cases: int) -> SuiteResult:
    rng = random.Random(f"selftest-window/{rng_seed}")
    failures = 0
    for _ in range(cases):
        e = rng.randrange(1, 1 << 1024)
        k = rng.randint(1, 8)
        failures += window_decompose(e, k).reassemble() != e
    return SuiteResult(cases, failures)


def _rotation_uniqueness_suite() -> SuiteResult:
    layout = HashIndexLayout()
    cfg = CacheConfig()
    units = ["".join(p) for p in product("ACGT", repeat=4)]
    footprints = {u: unit_set_footprint(u, layout, cfg) for u in units}
    failures = 0
    cases = 0
    for i, u in enumerate(units):
        for v in units[i + 1:]:
            cases += 1
            same_class = v in rotations(u, layout.k)
            if (footprints[u] == footprints[v]) != same_class:
                failures += 1
    return SuiteResult(cases, failures)


def selftest(rng_seed=0, lru_cases: int = 300,
             policy_factory=LruPolicy) -> SelftestResult:
    """Quick property sweep: LRU oracle, window round-trip, rotation uniqueness.

    `policy_factory` exists as a fault-injection hook; swapping in a broken
    replacement policy must make the LRU suite fail.
    """
    return SelftestResult({
        "lru_oracle": _lru_oracle_suite(rng_seed, lru_cases, policy_factory),
        "window_roundtrip": _window_roundtrip_suite(rng_seed, 200),
        "rotation_uniqueness": _rotation_uniqueness_suite(),
    })


# --- artifact assembly -------------------------------------------------------

def _rsa_figure_dots(outcome, threshold: int) -> tuple[list[FigureDot], int]:
    order = {t.name: i for i, t in enumerate(outcome.targets)}
    reps = max((o.repetition for o in outcome.observations), default=1)
    dots = []
    x_hi = 0
    for obs in outcome.observations:
        x_hi = max(x_hi, obs.epochs)
        row = order[obs.target.name] * reps + obs.repetition - 1
        for mark in mark_candidates(obs, threshold):
            dots.append(FigureDot(mark.epoch, row, obs.target.name))
    return dots, x_hi


def _genome_figure_dots(outcome, max_columns: int) -> tuple[list[FigureDot], int]:
    epochs = outcome.epochs
    stride = max(1, -(-epochs // max_columns))
    order = {name: i for i, (name, _) in enumerate(outcome.rotation_sets)}
    reps = max((o.repetition for o in outcome.observations), default=1)
    dots = []
    for obs in outcome.observations:
        row = order[obs.target.name] * reps + obs.repetition - 1
        active = {e // stride for s in obs.sets
                  for e in obs.epoch_activity(s).nonzero()[0]}
        dots.extend(FigureDot(int(b), row, obs.target.name) for b in sorted(active))
    return dots, -(-epochs // stride)


def _decisions_json(decisions) -> list:
    return [d if isinstance(d, str) else int(d) for d in decisions]


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _write_manifest(out_dir: Path, names) -> None:
    lines = []
    for name in sorted(names):
        digest = hashlib.sha256((out_dir / name).read_bytes()).hexdigest()
        lines.append(f"{digest}  {name}")
    (out_dir / "manifest.txt").write_text("\n".join(lines) + "\n")


def run(spec: ExperimentSpec) -> int:
    """Execute one scenario and write its artifacts; returns the exit status."""
    try:
        values = resolve_values(spec)
        out = spec.out_dir
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.txt").write_text(
            format_config(values, header=f"scenario = {spec.scenario}\n"
                                         f"seed = {spec.seed}"))

        from .engine import dump_observations_csv
        observations = []
        if spec.scenario in ("rsa-attack", "rsa-hardened"):
            outcome = experiments.run_rsa_experiment(
                values, spec.seed, hardened=spec.scenario == "rsa-hardened")
            observations = outcome.observations
            report = {
                "scenario": spec.scenario,
                "seed": spec.seed,
                "victim_executions": outcome.victim_executions,
                "fraction": outcome.report.fraction,
                "expected_fraction": outcome.report.expected_fraction,
                "zero_window_fraction": outcome.report.zero_window_fraction,
                "recovered_bits": outcome.report.recovered_bits,
                "total_bits": outcome.report.total_bits,
                "monitored_multipliers": list(outcome.report.monitored),
                "epochs": outcome.epochs,
                "per_epoch_decisions": {
                    half: _decisions_json(rec.decisions)
                    for half, rec in outcome.recovered.items()},
            }
            dots, x_hi = _rsa_figure_dots(outcome, values["recovery.mark_threshold"])
            title = f"multiplier access candidates ({spec.scenario}, seed {spec.seed})"
        elif spec.scenario in ("genome-attack", "genome-negative"):
            outcome = experiments.run_genome_experiment(
                values, spec.seed, embed=spec.scenario == "genome-attack")
            observations = outcome.observations
            det = outcome.detection
            report = {
                "scenario": spec.scenario,
                "seed": spec.seed,
                "victim_executions": outcome.victim_executions,
                "detected": det.detected,
                "detection_interval": list(det.interval) if det.interval else None,
                "true_epoch": outcome.true_epoch,
                "epochs": outcome.epochs,
                "rotation_sets": {name: s for name, s in outcome.rotation_sets},
                "max_density": det.max_density,
                "density_threshold": det.density_threshold,
                "window_epochs": det.window_epochs,
            }
            dots, x_hi = _genome_figure_dots(outcome, values["figure.max_columns"])
            title = f"rotation-set activity ({spec.scenario}, seed {spec.seed})"
        else:
            result = selftest(rng_seed=spec.seed)
            report = {
                "scenario": spec.scenario,
                "seed": spec.seed,
                "passed": result.passed,
                "suites": {name: {"cases": s.cases, "failures": s.failures}
                           for name, s in result.suites.items()},
            }
            dots, x_hi = [], 1
            title = f"selftest (seed {spec.seed})"

        dump_observations_csv(observations, out / "observations.csv")
        _write_json(out / "report.json", report)
        emit_figures(dots, out / "figure.svg", out / "figure.csv",
                     title=title, x_max=max(1, x_hi - 1))
        _write_manifest(out, ARTIFACTS)

        if spec.scenario == "cache-selftest":
            for name, suite in report["suites"].items():
                status = "ok" if suite["failures"] == 0 else "FAILED"
                print(f"{name}: {suite['cases']} cases, "
                      f"{suite['failures']} failures [{status}]")
            return 0 if report["passed"] else 1
        return 0
    except (ConfigError, ValueError, OSError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="cachelab",
        description="Cache side-channel laboratory: scenario runner")
    parser.add_argument("--scenario", required=True, choices=SCENARIOS)
    parser.add_argument("--seed", required=True, type=int,
                        help="experiment seed (required for reproducibility)")
    parser.add_argument("--out", type=Path, default=None,
                        help="output directory (default: out/<scenario>-seed<seed>)")
    parser.add_argument("--config", default=None, help="flat key=value config file")
    parser.add_argument("--set", dest="overrides", action="append", default=[],
                        metavar="KEY=VALUE", help="override one config key (repeatable)")
    args = parser.parse_args(argv)

    overrides = {}
    for item in args.overrides:
        if "=" not in item:
            parser.error(f"--set expects KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        overrides[key.strip()] = value.strip()

    out_dir = args.out or Path("out") / f"{args.scenario}-seed{args.seed}"
    try:
        spec = ExperimentSpec(scenario=args.scenario, seed=args.seed,
                              out_dir=out_dir, overrides=overrides,
                              config_file=args.config)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return run(spec)


if __name__ == "__main__":
    sys.exit(main())
