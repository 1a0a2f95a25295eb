"""Turning campaign observations into secrets.

RSA side: an epoch whose eviction sum over a multiplier's two sets reaches
the 16-access signature threshold marks that multiplier as an access
candidate; a value marked by more than half of the repetitions wins the
epoch, an epoch with (almost) no marks anywhere is declared a zero window,
anything else stays unknown. Recovered windows are scored against the true
exponents, with the theoretical expectation (monitored+1)/2^k reported
alongside.

Genome side: the four rotation sets of a repeat unit are monitored
individually; a microsatellite shows up as a stretch of epochs where all
rotation sets are active simultaneously, which a sliding density window
turns into a detection interval. Single-set bursts never trigger.
"""

from __future__ import annotations

import csv
from collections import defaultdict
from dataclasses import dataclass
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .engine import MonitorTarget, RunObservation
from .rsa import RsaSecret, window_decompose

ZERO = "zero"
UNKNOWN = "unknown"

DEFAULT_MARK_THRESHOLD = 12
DEFAULT_ZERO_FLOOR = 2
DEFAULT_DENSITY_THRESHOLD = 0.5
DEFAULT_DENSITY_WINDOW = 10


@dataclass(frozen=True)
class CandidateMark:
    """One epoch in one run that shows the multiplier-access signature."""

    target: int | str
    epoch: int
    strength: int


def mark_candidates(obs: RunObservation, threshold: int = DEFAULT_MARK_THRESHOLD,
                    target_id: int | str | None = None) -> list[CandidateMark]:
    """Epochs whose eviction sum across the target's sets reaches the threshold."""
    tid = obs.target.name if target_id is None else target_id
    sums = np.zeros(obs.epochs, dtype=np.int64)
    for s in obs.sets:
        sums += obs.epoch_sums(s)
    return [CandidateMark(tid, int(e), int(sums[e]))
            for e in np.flatnonzero(sums >= threshold)]


@dataclass(frozen=True)
class RecoveredWindows:
    """Per-epoch window decisions for one exponent, with the vote tallies."""

    decisions: tuple[int | str, ...]
    tallies: tuple[dict[int, int], ...]
    repetitions: int


def vote_windows(marks_by_run: Mapping[tuple[int, int], Sequence[CandidateMark]],
                 t: int, epochs: int,
                 zero_floor: int = DEFAULT_ZERO_FLOOR) -> RecoveredWindows:
    """Majority vote across repetitions, keyed by (multiplier value, repetition).

    A value marked by more than t/2 repetitions wins the epoch. With no
    winner, the epoch is a zero window if at most `zero_floor` marks exist
    across all values and repetitions, otherwise unknown.
    """
    votes: list[dict[int, int]] = [defaultdict(int) for _ in range(epochs)]
    total = [0] * epochs
    for (value, _rep), marks in marks_by_run.items():
        seen = set()
        for mark in marks:
            if not 0 <= mark.epoch < epochs:
                raise ValueError(f"mark epoch {mark.epoch} outside [0, {epochs})")
            if mark.epoch in seen:
                continue
            seen.add(mark.epoch)
            votes[mark.epoch][value] += 1
            total[mark.epoch] += 1
    decisions: list[int | str] = []
    for e in range(epochs):
        winners = [v for v, c in votes[e].items() if 2 * c > t]
        if len(winners) == 1:
            decisions.append(winners[0])
        elif winners:
            decisions.append(UNKNOWN)
        elif total[e] <= zero_floor:
            decisions.append(ZERO)
        else:
            decisions.append(UNKNOWN)
    return RecoveredWindows(tuple(decisions), tuple(dict(v) for v in votes), t)


def recover_exponent(observations: Sequence[RunObservation],
                     value_of: Callable[[MonitorTarget], int],
                     threshold: int = DEFAULT_MARK_THRESHOLD,
                     zero_floor: int = DEFAULT_ZERO_FLOOR) -> RecoveredWindows:
    """Mark and vote over one exponent's campaign observations."""
    if not observations:
        raise ValueError("no observations to recover from")
    epochs = observations[0].epochs
    reps = set()
    marks_by_run: dict[tuple[int, int], list[CandidateMark]] = {}
    for obs in observations:
        if obs.epochs != epochs:
            raise ValueError("inconsistent epoch counts across runs")
        value = value_of(obs.target)
        reps.add(obs.repetition)
        marks_by_run[(value, obs.repetition)] = mark_candidates(obs, threshold, value)
    return vote_windows(marks_by_run, t=len(reps), epochs=epochs,
                        zero_floor=zero_floor)


@dataclass(frozen=True)
class RecoveryReport:
    """Recovered key-bit fraction with per-window detail and the expectation."""

    fraction: float
    expected_fraction: float
    zero_window_fraction: float
    total_bits: int
    recovered_bits: int
    monitored: tuple[int, ...]
    decisions: dict[str, tuple[int | str, ...]]
    correct: dict[str, tuple[bool, ...]]


def score_key(recovered: Mapping[str, RecoveredWindows], truth: RsaSecret,
              monitored: Iterable[int], k: int = 4) -> RecoveryReport:
    """Score recovered windows for both CRT exponents against the true key.

    A window counts as recovered only when the decision equals the ground
    truth (a zero decision matches a zero window); unknowns and windows whose
    value was never monitored contribute nothing.
    """
    truth_windows = {"dp": window_decompose(truth.d_p, k).windows,
                     "dq": window_decompose(truth.d_q, k).windows}
    decisions: dict[str, tuple[int | str, ...]] = {}
    correct: dict[str, tuple[bool, ...]] = {}
    total_windows = 0
    recovered_windows = 0
    zero_windows = 0
    for half, windows in truth_windows.items():
        if half not in recovered:
            raise ValueError(f"missing recovered windows for {half}")
        rec = recovered[half]
        if len(rec.decisions) != len(windows):
            raise ValueError(
                f"window-count mismatch for {half}: "
                f"{len(rec.decisions)} decisions vs {len(windows)} true windows")
        flags = []
        for decision, true_value in zip(rec.decisions, windows):
            if decision == ZERO:
                flags.append(true_value == 0)
            elif isinstance(decision, int):
                flags.append(decision == true_value)
            else:
                flags.append(False)
        decisions[half] = rec.decisions
        correct[half] = tuple(flags)
        total_windows += len(windows)
        recovered_windows += sum(flags)
        zero_windows += sum(1 for w in windows if w == 0)
    monitored = tuple(sorted(set(monitored)))
    return RecoveryReport(
        fraction=recovered_windows / total_windows,
        expected_fraction=(len(monitored) + 1) / (1 << k),
        zero_window_fraction=zero_windows / total_windows,
        total_bits=k * total_windows,
        recovered_bits=k * recovered_windows,
        monitored=monitored,
        decisions=decisions,
        correct=correct)


@dataclass(frozen=True)
class SatelliteDetection:
    detected: bool
    interval: tuple[int, int] | None
    max_density: dict[str, float]
    window_epochs: int
    density_threshold: float


def detect_satellite(observations: Sequence[RunObservation],
                     rotation_names: Sequence[str],
                     window_epochs: int = DEFAULT_DENSITY_WINDOW,
                     density_threshold: float = DEFAULT_DENSITY_THRESHOLD
                     ) -> SatelliteDetection:
    """Declare a microsatellite iff all rotation sets are dense simultaneously.

    Per rotation set, epoch activity is averaged over repetitions and a
    sliding window of `window_epochs` forms the density; detection requires
    every rotation's density to exceed the threshold in the same window.
    """
    by_rotation: dict[str, list[RunObservation]] = defaultdict(list)
    for obs in observations:
        by_rotation[obs.target.name].append(obs)
    missing = [r for r in rotation_names if r not in by_rotation]
    if missing:
        raise ValueError(f"missing rotation set observations: {missing}")

    epochs = observations[0].epochs
    if any(o.epochs != epochs for o in observations):
        raise ValueError("inconsistent epoch counts across runs")
    if epochs < window_epochs:
        return SatelliteDetection(False, None,
                                  {r: 0.0 for r in rotation_names},
                                  window_epochs, density_threshold)
    densities = {}
    kernel = np.ones(window_epochs) / window_epochs
    for rotation in rotation_names:
        group = by_rotation[rotation]
        activity = np.zeros(epochs, dtype=np.float64)
        for obs in group:
            for s in obs.sets:
                activity += obs.epoch_activity(s)
        activity /= len(group)
        densities[rotation] = np.convolve(activity, kernel, mode="valid")
    joint = np.ones(epochs - window_epochs + 1, dtype=bool)
    for rotation in rotation_names:
        joint &= densities[rotation] > density_threshold
    hits = np.flatnonzero(joint)
    interval = None
    if len(hits):
        interval = (int(hits[0]), int(hits[-1]) + window_epochs - 1)
    return SatelliteDetection(
        detected=bool(len(hits)),
        interval=interval,
        max_density={r: float(densities[r].max()) for r in rotation_names},
        window_epochs=window_epochs,
        density_threshold=density_threshold)


# --- figures ---------------------------------------------------------------

PALETTE = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b",
           "#e377c2", "#7f7f7f", "#bcbd22", "#17becf", "#aec7e8", "#ffbb78",
           "#98df8a", "#ff9896", "#c5b0d5", "#c49c94"]


@dataclass(frozen=True)
class FigureDot:
    x: int
    row: int
    series: str


def emit_figures(dots: Sequence[FigureDot], svg_path, csv_path, *,
                 title: str = "", x_label: str = "epoch",
                 y_label: str = "monitoring round",
                 x_max: int | None = None, rows: int | None = None) -> None:
    """Scatter plot (x = epoch, y = repetition row, colour = series) plus CSV.

    Output bytes are a pure function of the inputs; no timestamps, no library
    renderer."""
    series_order: list[str] = []
    for d in dots:
        if d.series not in series_order:
            series_order.append(d.series)
    color = {s: PALETTE[i % len(PALETTE)] for i, s in enumerate(series_order)}

    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["x", "row", "series"])
        for d in sorted(dots, key=lambda d: (d.row, d.x, d.series)):
            writer.writerow([d.x, d.row, d.series])

    x_hi = max([d.x for d in dots], default=0) if x_max is None else x_max
    row_hi = max([d.row for d in dots], default=0) if rows is None else rows - 1
    ml, mt, mb, mr = 60, 30, 40, 140
    plot_w, plot_h = 720, max(120, 3 * (row_hi + 1))
    width, height = ml + plot_w + mr, mt + plot_h + mb

    def x_px(x: int) -> str:
        return f"{ml + (x + 0.5) / (x_hi + 1) * plot_w:.2f}"

    def y_px(row: int) -> str:
        return f"{mt + (row + 0.5) / (row_hi + 1) * plot_h:.2f}"

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<rect x="{ml}" y="{mt}" width="{plot_w}" height="{plot_h}" '
        f'fill="none" stroke="black"/>',
        f'<text x="{ml}" y="{mt - 10}" font-size="13">{title}</text>',
        f'<text x="{ml + plot_w // 2}" y="{height - 12}" font-size="12" '
        f'text-anchor="middle">{x_label}</text>',
        f'<text x="16" y="{mt + plot_h // 2}" font-size="12" text-anchor="middle" '
        f'transform="rotate(-90 16 {mt + plot_h // 2})">{y_label}</text>',
    ]
    for d in dots:
        parts.append(f'<circle cx="{x_px(d.x)}" cy="{y_px(d.row)}" r="1.6" '
                     f'fill="{color[d.series]}"/>')
    for i, s in enumerate(series_order):
        ly = mt + 14 * i
        parts.append(f'<rect x="{ml + plot_w + 10}" y="{ly}" width="10" height="10" '
                     f'fill="{color[s]}"/>')
        parts.append(f'<text x="{ml + plot_w + 24}" y="{ly + 9}" font-size="11">{s}</text>')
    parts.append("</svg>")
    with open(svg_path, "w") as fh:
        fh.write("\n".join(parts) + "\n")
