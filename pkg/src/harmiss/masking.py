"""Simulated sensor outages over the windowed feature rows.

A row of the feature files summarizes one 2.56 s window taken every 1.28 s
from a continuous recording. Consecutive rows sharing (subject, activity)
are treated as one recording, so an outage interval in seconds maps to the
run of rows whose windows overlap it.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import N_FEATURES, OFFICIAL_GROUP_COUNTS, CalibrationError, FeatureGroups, HarDataset, concat

log = logging.getLogger(__name__)

SENSORS = ("Acc", "Gyro", "Both")
ROW_FRACTION_TOLERANCE = 0.01
MAX_CALIBRATION_ROUNDS = 100


@dataclass(frozen=True)
class WindowTiming:
    window_span_s: float = 2.56
    stride_s: float = 1.28
    sample_rate_hz: float = 50.0

    def __post_init__(self):
        if not self.window_span_s > self.stride_s > 0:
            raise ValueError("window timing needs span > stride > 0")

    def sequence_duration(self, seq_len: int) -> float:
        return (seq_len - 1) * self.stride_s + self.window_span_s


@dataclass(frozen=True)
class OutageEvent:
    sensor: str
    duration_s: float
    count: int = 1

    def __post_init__(self):
        if self.sensor not in SENSORS:
            raise ValueError(f"sensor must be one of {SENSORS}, got {self.sensor!r}")
        if not self.duration_s > 0:
            raise ValueError(f"outage duration must be positive, got {self.duration_s}")
        if int(self.count) != self.count or self.count < 1:
            raise ValueError(f"outage count must be a positive integer, got {self.count}")


@dataclass(frozen=True)
class OutageScenario:
    name: str
    events: tuple
    target_row_fraction: float | None = None
    label: str = ""

    def __post_init__(self):
        object.__setattr__(self, "events", tuple(self.events))
        if not self.events:
            raise ValueError(f"scenario {self.name!r} has no events")
        t = self.target_row_fraction
        if t is not None and not 0.0 < t < 1.0:
            raise ValueError(f"target_row_fraction must lie in (0, 1), got {t}")

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "label": self.label,
            "events": [{"sensor": e.sensor, "duration_s": e.duration_s, "count": e.count} for e in self.events],
            "target_row_fraction": self.target_row_fraction,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "OutageScenario":
        events = [OutageEvent(e["sensor"], float(e["duration_s"]), int(e.get("count", 1))) for e in d["events"]]
        return cls(d["name"], events, d.get("target_row_fraction"), d.get("label", ""))


_GROUP_WIDTH = {
    "Acc": OFFICIAL_GROUP_COUNTS[0],
    "Gyro": OFFICIAL_GROUP_COUNTS[1],
    "Both": sum(OFFICIAL_GROUP_COUNTS),
}


def _row_target(cell_fraction: float, sensor: str) -> float:
    # reported percentages are missing-cell fractions; convert to rows
    return round(cell_fraction * N_FEATURES / _GROUP_WIDTH[sensor], 6)


# name -> (label, events, reported missing-cell fraction)
_REFERENCE_SCENARIOS = {
    "S1": ("1s ACC & 1s Gyro (5 intervals)", [OutageEvent("Both", 1.0, 5)], 0.1207),
    "S2": ("5s ACC & 5s Gyro (1 interval)", [OutageEvent("Both", 5.0, 1)], 0.1206),
    "S3": ("5s ACC (2 intervals)", [OutageEvent("Acc", 5.0, 2)], 0.1491),
    "S4": ("5s Gyro (2 intervals)", [OutageEvent("Gyro", 5.0, 2)], 0.0922),
    "S5": ("10s ACC (1 interval)", [OutageEvent("Acc", 10.0, 1)], 0.1491),
    "S6": ("10s Gyro (1 interval)", [OutageEvent("Gyro", 10.0, 1)], 0.0922),
}

REPORTED_CELL_FRACTIONS = {k: v[2] for k, v in _REFERENCE_SCENARIOS.items()}

BUILTIN_SCENARIOS = {
    key: OutageScenario(key, events, _row_target(cells, events[0].sensor), label)
    for key, (label, events, cells) in _REFERENCE_SCENARIOS.items()
}


def get_scenario(name: str) -> OutageScenario:
    try:
        return BUILTIN_SCENARIOS[name]
    except KeyError:
        raise KeyError(f"unknown scenario {name!r}; built-ins are {', '.join(BUILTIN_SCENARIOS)}") from None


def load_scenarios(path) -> list[OutageScenario]:
    """Read scenario definitions from JSON (one object or a list of them)."""
    raw = json.loads(Path(path).read_text())
    if isinstance(raw, dict):
        raw = [raw]
    return [OutageScenario.from_dict(d) for d in raw]


# --------------------------------------------------------------------------
# geometry


def windows_overlapping(outage_start_s, duration_s, timing: WindowTiming, seq_len: int) -> range:
    """Rows of a recording whose window overlaps ``[start, start + duration]``."""
    if duration_s <= 0:
        raise ValueError("duration must be positive")
    end = outage_start_s + duration_s
    i = np.arange(seq_len) * timing.stride_s
    hit = np.flatnonzero((i < end) & (i + timing.window_span_s > outage_start_s))
    if hit.size == 0:
        raise ValueError(
            f"outage [{outage_start_s}, {end}] s overlaps no window of a {seq_len}-row recording"
        )
    return range(int(hit[0]), int(hit[-1]) + 1)


def find_sequences(dataset: HarDataset) -> list[tuple[int, int]]:
    """``(start, stop)`` row ranges of consecutive equal (subject, activity)."""
    n = len(dataset)
    if n == 0:
        return []
    key = dataset.subject_ids * 100 + dataset.activity_labels
    cuts = np.flatnonzero(np.diff(key) != 0) + 1
    bounds = np.concatenate([[0], cuts, [n]])
    return [(int(a), int(b)) for a, b in zip(bounds[:-1], bounds[1:])]


# --------------------------------------------------------------------------
# planning


@dataclass(frozen=True)
class OutageRecord:
    sequence: int
    row_start: int
    row_stop: int
    sensor: str
    start_s: float
    duration_s: float
    round: int


@dataclass(frozen=True, eq=False)
class MaskPlan:
    """Rows blanked per sensor plus the intervals that caused them."""

    n_rows: int
    acc_rows: np.ndarray
    gyro_rows: np.ndarray
    records: tuple = ()
    scenario: str = ""
    seed: int | None = None
    target_row_fraction: float | None = None
    warnings: tuple = ()

    @classmethod
    def empty(cls, n_rows: int) -> "MaskPlan":
        z = np.zeros(n_rows, dtype=bool)
        return cls(n_rows, z, z.copy())

    @property
    def masked_rows(self) -> np.ndarray:
        return self.acc_rows | self.gyro_rows

    @property
    def row_fraction(self) -> float:
        return float(self.masked_rows.mean()) if self.n_rows else 0.0


def _place(rng, seq_len, event, timing):
    total = timing.sequence_duration(seq_len)
    dur = event.duration_s
    warning = None
    slack = total - event.count * dur
    if slack < 0:
        dur = total / event.count
        slack = 0.0
        warning = f"{event.count}x{event.duration_s}s does not fit in {total:.2f}s; shortened to {dur:.2f}s"
    offsets = np.sort(rng.uniform(0.0, slack, size=event.count))
    starts = offsets + np.arange(event.count) * dur
    return [(float(s), dur) for s in starts], warning


def plan_outages(scenario: OutageScenario, dataset: HarDataset, timing: WindowTiming = WindowTiming(),
                 seed: int = 0, tolerance: float = ROW_FRACTION_TOLERANCE) -> MaskPlan:
    """Place the scenario's outages in every recording of ``dataset``.

    Without a target, each recording receives one placement of every event.
    With ``target_row_fraction`` set, recordings are visited in seeded random
    order (and revisited in further rounds if needed) until the fraction of
    rows carrying a blank is as close to the target as the greedy walk gets.

    Raises:
        CalibrationError: the achieved fraction misses the target by more
            than ``tolerance``.
    """
    n = len(dataset)
    rng = np.random.default_rng(seed)
    seqs = find_sequences(dataset)
    acc = np.zeros(n, dtype=bool)
    gyro = np.zeros(n, dtype=bool)
    records, warnings = [], []
    target = scenario.target_row_fraction

    def apply_placement(seq_no, rnd):
        a, b = seqs[seq_no]
        new = []
        for event in scenario.events:
            intervals, warn = _place(rng, b - a, event, timing)
            if warn and rnd == 0:
                warnings.append(f"sequence {seq_no}: {warn}")
            for start, dur in intervals:
                rows = windows_overlapping(start, dur, timing, b - a)
                lo, hi = a + rows.start, a + rows.stop
                new.append((event.sensor, lo, hi))
                records.append(OutageRecord(seq_no, lo, hi, event.sensor, start, dur, rnd))
        return new

    def mark(new):
        added = 0
        for sensor, lo, hi in new:
            before = (acc[lo:hi] | gyro[lo:hi]).sum()
            if sensor in ("Acc", "Both"):
                acc[lo:hi] = True
            if sensor in ("Gyro", "Both"):
                gyro[lo:hi] = True
            added += (acc[lo:hi] | gyro[lo:hi]).sum() - before
        return int(added)

    if target is None or n == 0:
        for s in range(len(seqs)):
            mark(apply_placement(s, 0))
    else:
        masked = 0
        done = False
        for rnd in range(MAX_CALIBRATION_ROUNDS):
            for s in rng.permutation(len(seqs)):
                snapshot = (acc.copy(), gyro.copy(), len(records))
                prev = masked
                masked += mark(apply_placement(int(s), rnd))
                if masked / n >= target:
                    if abs(prev / n - target) < abs(masked / n - target):
                        acc[:], gyro[:] = snapshot[0], snapshot[1]
                        del records[snapshot[2]:]
                        masked = prev
                    done = True
                    break
            if done or masked == n:
                break
        achieved = masked / n
        if abs(achieved - target) > tolerance:
            raise CalibrationError(
                f"scenario {scenario.name}: masked-row fraction {achieved:.4f} misses target "
                f"{target:.4f} by more than {tolerance}"
            )
    for w in warnings:
        log.warning("scenario %s: %s", scenario.name, w)
    return MaskPlan(n, acc, gyro, tuple(records), scenario.name, seed, target, tuple(warnings))


# --------------------------------------------------------------------------
# masked data


@dataclass(frozen=True, eq=False)
class MaskedDataset:
    """A dataset plus a boolean mask of blanked cells (``True`` = missing).

    ``base.features`` keeps the original values; use :meth:`with_nan` or
    :func:`zero_fill` to obtain something a model can consume.
    """

    base: HarDataset
    missing: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.missing, dtype=bool)
        if m.shape != self.base.features.shape:
            raise ValueError(f"mask shape {m.shape} does not match features {self.base.features.shape}")
        object.__setattr__(self, "missing", m)

    @classmethod
    def clean(cls, ds: HarDataset) -> "MaskedDataset":
        return cls(ds, np.zeros(ds.features.shape, dtype=bool))

    def __len__(self):
        return len(self.base)

    def with_nan(self) -> np.ndarray:
        X = self.base.features.copy()
        X[self.missing] = np.nan
        return X

    def take(self, indices) -> "MaskedDataset":
        idx = np.asarray(indices, dtype=np.int64)
        return MaskedDataset(self.base.take(idx), self.missing[idx])

    @property
    def masked_row_fraction(self) -> float:
        return float(self.missing.any(axis=1).mean()) if len(self) else 0.0


def concat_masked(first: MaskedDataset, second: MaskedDataset) -> MaskedDataset:
    return MaskedDataset(concat(first.base, second.base), np.vstack([first.missing, second.missing]))


def apply_mask(plan: MaskPlan, groups: FeatureGroups, dataset: HarDataset) -> MaskedDataset:
    if plan.n_rows != len(dataset):
        raise ValueError(f"plan covers {plan.n_rows} rows, dataset has {len(dataset)}")
    missing = np.zeros(dataset.features.shape, dtype=bool)
    acc_cols = groups.columns_for("Acc")
    gyro_cols = groups.columns_for("Gyro")
    if acc_cols.size:
        missing[np.ix_(np.flatnonzero(plan.acc_rows), acc_cols)] = True
    if gyro_cols.size:
        missing[np.ix_(np.flatnonzero(plan.gyro_rows), gyro_cols)] = True
    return MaskedDataset(dataset, missing)


def missing_cell_fraction(masked: MaskedDataset) -> float:
    m = masked.missing
    return float(m.sum() / m.size) if m.size else 0.0


def zero_fill(masked: MaskedDataset) -> HarDataset:
    X = np.where(masked.missing, 0.0, masked.base.features)
    return masked.base.with_features(X)
