"""PV power series ingestion, preprocessing, splitting, and windowing.

The pipeline is: load raw 5-minute CSVs (gaps become NaN slots), mark
abnormal readings missing, divide by installed capacity, fill gaps with a
natural cubic spline, then split chronologically and carve supervised
windows.  A deterministic synthetic generator provides desk-scale
multi-plant fixtures.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from datetime import datetime, timedelta
from pathlib import Path

import numpy as np
from scipy.interpolate import CubicSpline

from .errors import ConfigError, DataError, EmptySetError, ParseError

STEP_MINUTES = 5
SLOTS_PER_DAY = 24 * 60 // STEP_MINUTES
ABNORMAL_CAPACITY_FACTOR = 1.05  # raw readings above this multiple of capacity are treated as sensor faults


@dataclass(frozen=True)
class PlantManifest:
    plant_id: str
    capacity_mw: float
    lon: float
    lat: float
    timezone: str = "local"

    def __post_init__(self):
        if self.capacity_mw <= 0:
            raise ConfigError(f"plant {self.plant_id}: capacity must be > 0, got {self.capacity_mw}")


# Three-plant default fixture: capacities and coordinates of the reference plants.
DEFAULT_PLANTS = (
    PlantManifest("A", 13.0, 117.25, 32.65),
    PlantManifest("B", 8.0, 117.05, 32.75),
    PlantManifest("C", 8.0, 116.75, 32.85),
)


@dataclass
class TimeSeries:
    """Uniform 5-minute univariate power series; NaN marks a missing slot."""

    plant_id: str
    start: datetime
    values: np.ndarray
    normalized: bool = False

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 1:
            raise DataError("series values must be 1-D")

    def __len__(self):
        return self.values.shape[0]

    def timestamp(self, i: int) -> datetime:
        return self.start + timedelta(minutes=STEP_MINUTES * int(i))

    @property
    def gap_count(self) -> int:
        return int(np.isnan(self.values).sum())


@dataclass
class Segment:
    """Contiguous slice of a preprocessed series.

    `offset` is the absolute index of the first point in the parent
    series, so window provenance survives splitting.
    """

    plant_id: str
    values: np.ndarray
    offset: int
    series_start: datetime

    def __len__(self):
        return self.values.shape[0]

    def timestamp(self, local_i: int) -> datetime:
        return self.series_start + timedelta(minutes=STEP_MINUTES * (self.offset + int(local_i)))


class SplitBundle:
    """Train/val/test segments with read counters for transfer audits.

    Zero-shot runs assert that a target plant's train and val segments were
    never read; the property accessors count accesses to make that cheap.
    """

    def __init__(self, train: Segment, val: Segment, test: Segment):
        self._train = train
        self._val = val
        self._test = test
        self.access_counts = {"train": 0, "val": 0, "test": 0}

    @property
    def train(self) -> Segment:
        self.access_counts["train"] += 1
        return self._train

    @property
    def val(self) -> Segment:
        self.access_counts["val"] += 1
        return self._val

    @property
    def test(self) -> Segment:
        self.access_counts["test"] += 1
        return self._test

    def lengths(self) -> tuple[int, int, int]:
        return len(self._train), len(self._val), len(self._test)


@dataclass
class WindowSet:
    """Ordered (input, target) pairs carved from one split segment."""

    inputs: np.ndarray   # (n, L)
    targets: np.ndarray  # (n, H)
    origins: np.ndarray  # (n,) absolute origin indices in the parent series
    input_len: int
    horizon: int
    plant_id: str
    series_start: datetime

    def __len__(self):
        return self.inputs.shape[0]

    def target_timestamps(self, i: int) -> list[datetime]:
        t0 = int(self.origins[i]) + self.input_len
        return [
            self.series_start + timedelta(minutes=STEP_MINUTES * (t0 + j))
            for j in range(self.horizon)
        ]


# ---------------------------------------------------------------------------
# loading


def load_series(path, manifest: PlantManifest) -> TimeSeries:
    """Parse a `timestamp,power_mw` CSV into a raw series with NaN gaps."""
    path = Path(path)
    rows: list[tuple[datetime, float]] = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        for lineno, row in enumerate(reader, start=1):
            if lineno == 1:
                if [c.strip() for c in row] != ["timestamp", "power_mw"]:
                    raise ParseError(f"expected header 'timestamp,power_mw', got {row!r}", line=lineno)
                continue
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 2:
                raise ParseError(f"expected 2 fields, got {len(row)}", line=lineno)
            try:
                ts = datetime.fromisoformat(row[0].strip())
                power = float(row[1])
            except ValueError as exc:
                raise ParseError(str(exc), line=lineno) from None
            rows.append((ts, power))
    if not rows:
        raise DataError(f"{path}: no data rows")

    step = timedelta(minutes=STEP_MINUTES)
    start = rows[0][0]
    values = [rows[0][1]]
    prev = start
    for ts, power in rows[1:]:
        delta = ts - prev
        if delta <= timedelta(0):
            raise DataError(f"{path}: non-monotonic timestamp {ts.isoformat()} after {prev.isoformat()}")
        missing, rem = divmod(delta, step)
        if rem:
            raise DataError(f"{path}: timestamp {ts.isoformat()} is off the 5-minute grid")
        values.extend([np.nan] * (missing - 1))
        values.append(power)
        prev = ts
    return TimeSeries(manifest.plant_id, start, np.array(values, dtype=np.float64))


def write_series_csv(path, series: TimeSeries, capacity_mw: float | None = None):
    """Write a series as `timestamp,power_mw`; normalized series are rescaled."""
    scale = capacity_mw if (series.normalized and capacity_mw) else 1.0
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.write("timestamp,power_mw\n")
        for i, v in enumerate(series.values):
            if np.isnan(v):
                continue
            fh.write(f"{series.timestamp(i).isoformat()},{v * scale:.9f}\n")


# ---------------------------------------------------------------------------
# preprocessing


def mark_abnormal(series: TimeSeries, manifest: PlantManifest) -> TimeSeries:
    """Mark negative or above-capacity raw readings as missing."""
    if series.normalized:
        raise DataError("abnormal-value screening runs on raw (MW) series")
    values = series.values.copy()
    with np.errstate(invalid="ignore"):
        bad = (values < 0.0) | (values > ABNORMAL_CAPACITY_FACTOR * manifest.capacity_mw)
    values[bad] = np.nan
    return replace(series, values=values)


def normalize_capacity(series: TimeSeries, capacity_mw: float) -> TimeSeries:
    if capacity_mw <= 0:
        raise ConfigError(f"capacity must be > 0, got {capacity_mw}")
    return replace(series, values=series.values / capacity_mw, normalized=True)


def fill_missing_cubic(series: TimeSeries) -> TimeSeries:
    """Fill gaps: natural cubic spline inside, nearest value at the edges.

    Cubic extrapolation is unstable at day/night boundaries, so leading and
    trailing gaps copy the nearest known value instead.  Filled values are
    clipped to >= 0.
    """
    values = series.values
    known = ~np.isnan(values)
    n_known = int(known.sum())
    if n_known < 4:
        raise DataError(f"need at least 4 known points to interpolate, have {n_known}")
    if n_known == len(values):
        return series
    idx = np.arange(len(values), dtype=np.float64)
    xs = idx[known]
    filled = values.copy()
    first, last = int(xs[0]), int(xs[-1])
    interior = ~known.copy()
    interior[: first] = False
    interior[last + 1:] = False
    if interior.any():
        spline = CubicSpline(xs, values[known], bc_type="natural")
        filled[interior] = spline(idx[interior])
    filled[:first] = values[first]
    filled[last + 1:] = values[last]
    filled = np.maximum(filled, 0.0)
    return replace(series, values=filled)


def preprocess(raw: TimeSeries, manifest: PlantManifest) -> TimeSeries:
    """Full cleaning pipeline: screen, normalize, fill, clip to [0, 1]."""
    series = mark_abnormal(raw, manifest)
    series = normalize_capacity(series, manifest.capacity_mw)
    series = fill_missing_cubic(series)
    return replace(series, values=np.clip(series.values, 0.0, 1.0))


# ---------------------------------------------------------------------------
# splitting and windowing


def chronological_split(series: TimeSeries, f_train=0.7, f_val=0.2, f_test=0.1) -> SplitBundle:
    """Order-preserving 70/20/10 split: train earliest, test latest.

    Train and val lengths use the floor rule; test takes the remainder.
    """
    for f in (f_train, f_val, f_test):
        if f <= 0:
            raise ConfigError(f"split fractions must be positive, got {(f_train, f_val, f_test)}")
    if abs(f_train + f_val + f_test - 1.0) > 1e-9:
        raise ConfigError(f"split fractions must sum to 1, got {f_train + f_val + f_test}")
    if series.gap_count:
        raise DataError("split requires a gap-free series; run preprocessing first")
    n = len(series)
    n_train = int(np.floor(f_train * n))
    n_val = int(np.floor(f_val * n))
    cuts = (0, n_train, n_train + n_val, n)
    segments = [
        Segment(series.plant_id, series.values[lo:hi], lo, series.start)
        for lo, hi in zip(cuts[:-1], cuts[1:])
    ]
    return SplitBundle(*segments)


def make_windows(segment: Segment, input_len: int, horizon: int, stride: int = 1) -> WindowSet:
    """Carve (input, target) pairs; trailing points short of a window drop."""
    if input_len < 1 or horizon < 1 or stride < 1:
        raise ConfigError(f"input_len, horizon, stride must be >= 1, got {(input_len, horizon, stride)}")
    n = len(segment)
    total = input_len + horizon
    if total > n:
        raise EmptySetError(f"segment of {n} points cannot fit input {input_len} + horizon {horizon}")
    count = (n - total) // stride + 1
    inputs = np.empty((count, input_len), dtype=np.float64)
    targets = np.empty((count, horizon), dtype=np.float64)
    origins = np.empty(count, dtype=np.int64)
    for i in range(count):
        lo = i * stride
        inputs[i] = segment.values[lo: lo + input_len]
        targets[i] = segment.values[lo + input_len: lo + total]
        origins[i] = segment.offset + lo
    return WindowSet(inputs, targets, origins, input_len, horizon,
                     segment.plant_id, segment.series_start)


def limit_fraction(windows: WindowSet, fraction: float) -> WindowSet:
    """Keep the chronological prefix of ceil(fraction * count) windows."""
    if not 0.0 < fraction <= 1.0:
        raise ConfigError(f"training fraction must be in (0, 1], got {fraction}")
    keep = int(np.ceil(fraction * len(windows)))
    return WindowSet(
        windows.inputs[:keep], windows.targets[:keep], windows.origins[:keep],
        windows.input_len, windows.horizon, windows.plant_id, windows.series_start,
    )


def windows_within(windows: WindowSet, lo: int, hi: int) -> bool:
    """True iff every window (input and target) lies inside [lo, hi)."""
    if len(windows) == 0:
        return True
    span = windows.input_len + windows.horizon
    return bool((windows.origins >= lo).all() and (windows.origins + span <= hi).all())


# ---------------------------------------------------------------------------
# synthetic plants


def synth_plant(seed: int, days: int, capacity_mw: float = 8.0,
                cloud_level: float = 0.4, plant_id: str = "synth",
                start: datetime | None = None) -> TimeSeries:
    """Deterministic synthetic plant: clear-sky bell x season x cloud noise.

    Night slots are exactly zero.  Cloud noise is a multiplicative AR(1)
    process in [1 - cloud_level, 1]; cloud_level 0 gives the smooth
    clear-sky curve.  Values are capacity-normalized and clipped to [0, 1].
    """
    if days < 1:
        raise ConfigError(f"days must be >= 1, got {days}")
    if capacity_mw <= 0:
        raise ConfigError(f"capacity must be > 0, got {capacity_mw}")
    n = days * SLOTS_PER_DAY
    slot = np.arange(n) % SLOTS_PER_DAY
    day = np.arange(n) // SLOTS_PER_DAY
    hour = slot * STEP_MINUTES / 60.0

    bell = np.zeros(n)
    daylight = (hour > 6.0) & (hour < 18.0)
    bell[daylight] = np.sin(np.pi * (hour[daylight] - 6.0) / 12.0) ** 1.5
    season = 0.8 + 0.2 * np.cos(2.0 * np.pi * (day - 172.0) / 365.0)

    rng = np.random.default_rng(seed)
    cloud = np.ones(n)
    if cloud_level > 0.0:
        # cloudiness decorrelates over roughly an hour, with saturation at
        # fully clear / fully overcast spells
        u = np.empty(n)
        u[0] = rng.random()
        draws = rng.random(n - 1)
        for i in range(1, n):
            u[i] = min(1.0, max(0.0, 0.9 * u[i - 1] + 0.35 * (draws[i - 1] - 0.5) + 0.05))
        cloud = 1.0 - cloud_level * u
    values = np.clip(bell * season * cloud, 0.0, 1.0)
    if start is None:
        start = datetime(2006, 1, 1)
    return TimeSeries(plant_id, start, values, normalized=True)
