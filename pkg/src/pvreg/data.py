"""Dataset ingestion, statistics, chronological splitting and windowing.

The expected input is a headered CSV plus a schema describing each column's
role. A deterministic synthetic generator with the same shape is provided so
the pipeline can run without the external dataset.
"""

from __future__ import annotations

import csv
import datetime as dt
import math
from dataclasses import dataclass, field, replace
from fractions import Fraction
from pathlib import Path

import numpy as np
import yaml

from .core import SeededRng

ROLES = ("target", "numeric-feature", "categorical-feature", "timestamp", "ignore")


class DataError(ValueError):
    pass


@dataclass(frozen=True)
class Column:
    name: str
    role: str
    units: str = ""
    categories: tuple[str, ...] | None = None
    format: str | None = None
    onehot_of: str | None = None

    def __post_init__(self):
        if self.role not in ROLES:
            raise DataError(f"column {self.name!r}: unknown role {self.role!r}")
        if self.categories is not None:
            object.__setattr__(self, "categories", tuple(str(c) for c in self.categories))


@dataclass(frozen=True)
class Schema:
    columns: tuple[Column, ...]

    def __post_init__(self):
        object.__setattr__(self, "columns", tuple(self.columns))
        names = [c.name for c in self.columns]
        if len(set(names)) != len(names):
            raise DataError("duplicate column names in schema")
        if sum(c.role == "target" for c in self.columns) != 1:
            raise DataError("schema needs exactly one target column")
        if sum(c.role == "timestamp" for c in self.columns) > 1:
            raise DataError("schema allows at most one timestamp column")

    @property
    def names(self) -> list[str]:
        return [c.name for c in self.columns]

    def column(self, name: str) -> Column:
        for c in self.columns:
            if c.name == name:
                return c
        raise KeyError(name)

    def by_role(self, role: str) -> list[Column]:
        return [c for c in self.columns if c.role == role]

    @property
    def target(self) -> str:
        return self.by_role("target")[0].name

    @property
    def timestamp(self) -> str | None:
        ts = self.by_role("timestamp")
        return ts[0].name if ts else None

    def to_dict(self) -> dict:
        out = []
        for c in self.columns:
            d = {"name": c.name, "role": c.role}
            if c.units:
                d["units"] = c.units
            if c.categories is not None:
                d["categories"] = list(c.categories)
            if c.format:
                d["format"] = c.format
            out.append(d)
        return {"columns": out}

    @classmethod
    def from_dict(cls, d: dict) -> "Schema":
        if not isinstance(d, dict) or "columns" not in d:
            raise DataError("schema must be a mapping with a 'columns' list")
        cols = []
        for entry in d["columns"]:
            unknown = set(entry) - {"name", "role", "units", "categories", "format"}
            if unknown:
                raise DataError(f"unknown schema keys {sorted(unknown)}")
            cols.append(Column(name=str(entry["name"]), role=entry["role"], units=entry.get("units", ""),
                               categories=entry.get("categories"), format=entry.get("format")))
        return cls(tuple(cols))


def load_schema(path) -> Schema:
    with open(path, encoding="utf-8") as fh:
        return Schema.from_dict(yaml.safe_load(fh))


def save_schema(schema: Schema, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        yaml.safe_dump(schema.to_dict(), fh, sort_keys=False)


@dataclass
class SeriesFrame:
    schema: Schema
    data: dict
    timestamps: np.ndarray | None = None
    dropped: int = 0

    @property
    def n(self) -> int:
        return len(next(iter(self.data.values())))

    def __len__(self) -> int:
        return self.n

    def column(self, name: str) -> np.ndarray:
        return self.data[name]

    @property
    def target(self) -> np.ndarray:
        return self.data[self.schema.target]

    def take(self, idx) -> "SeriesFrame":
        idx = np.asarray(idx)
        ts = None if self.timestamps is None else self.timestamps[idx]
        return SeriesFrame(self.schema, {k: v[idx] for k, v in self.data.items()}, ts, self.dropped)

    def numeric_names(self, include_onehot: bool = True) -> list[str]:
        return [c.name for c in self.schema.columns
                if c.role in ("numeric-feature", "target") and (include_onehot or c.onehot_of is None)]


def _parse_time(text: str, fmt: str | None) -> dt.datetime:
    text = text.strip()
    if fmt:
        try:
            return dt.datetime.strptime(text, fmt)
        except ValueError:
            # spreadsheet exports sometimes write digit stamps as floats
            return dt.datetime.strptime(str(int(float(text))), fmt)
    return dt.datetime.fromisoformat(text)


def load_csv(path, schema: Schema) -> SeriesFrame:
    """Read a CSV into a timestamp-sorted frame.

    Rows with a missing or unparseable value in any used column are dropped;
    the count is kept on ``frame.dropped``.
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such dataset: {path}")
    with open(path, newline="", encoding="utf-8-sig") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path} is empty") from None
        if set(header) != set(schema.names) or len(header) != len(schema.names):
            missing = sorted(set(schema.names) - set(header))
            extra = sorted(set(header) - set(schema.names))
            raise DataError(f"header does not match schema (missing {missing}, unexpected {extra})")
        pos = {name: header.index(name) for name in schema.names}
        used = [c for c in schema.columns if c.role != "ignore"]
        cols: dict[str, list] = {c.name: [] for c in used}
        stamps: list = []
        dropped = 0
        for row in reader:
            if not row or all(not cell.strip() for cell in row):
                continue
            try:
                if len(row) != len(header):
                    raise ValueError("wrong field count")
                parsed = {}
                stamp = None
                for c in used:
                    cell = row[pos[c.name]].strip()
                    if cell == "":
                        raise ValueError("missing value")
                    if c.role == "timestamp":
                        stamp = _parse_time(cell, c.format)
                    elif c.role == "categorical-feature":
                        parsed[c.name] = cell
                    else:
                        v = float(cell)
                        if not math.isfinite(v):
                            raise ValueError("non-finite value")
                        parsed[c.name] = v
            except (ValueError, OverflowError):
                dropped += 1
                continue
            for name, v in parsed.items():
                cols[name].append(v)
            stamps.append(stamp)
    if not stamps:
        raise DataError(f"{path}: no usable rows ({dropped} dropped)")

    new_cols = []
    data = {}
    for c in schema.columns:
        if c.role in ("ignore", "timestamp"):
            new_cols.append(c)
            continue
        if c.role == "categorical-feature":
            arr = np.array(cols[c.name], dtype=object)
            vocab = c.categories if c.categories is not None else tuple(sorted(set(arr.tolist())))
            new_cols.append(replace(c, categories=vocab))
        else:
            arr = np.array(cols[c.name], dtype=np.float64)
            new_cols.append(c)
        data[c.name] = arr
    ts = None
    if schema.timestamp is not None:
        ts = np.array(stamps, dtype="datetime64[s]")
        order = np.argsort(ts, kind="stable")
        ts = ts[order]
        data = {k: v[order] for k, v in data.items()}
    return SeriesFrame(Schema(tuple(new_cols)), data, ts, dropped)


def save_csv(frame: SeriesFrame, path) -> None:
    names = [c.name for c in frame.schema.columns if c.role != "ignore"]
    ts_name = frame.schema.timestamp
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(names)
        for i in range(frame.n):
            row = []
            for name in names:
                if name == ts_name:
                    row.append(str(frame.timestamps[i]))
                else:
                    v = frame.data[name][i]
                    row.append(v if isinstance(v, str) else repr(float(v)))
            w.writerow(row)


# -- descriptive statistics -------------------------------------------------

@dataclass(frozen=True)
class ColumnStats:
    mean: float
    median: float
    std: float
    skewness: float
    kurtosis: float


def column_stats(values) -> ColumnStats:
    """Mean, median, sample std (n-1), skewness g1 and excess kurtosis g2.

    Skewness and kurtosis are ``nan`` for a constant column.
    """
    x = np.asarray(values, dtype=np.float64)
    n = x.size
    if n < 2:
        raise DataError("statistics need at least two values")
    mean = float(x.mean())
    d = x - mean
    m2 = float(np.mean(d ** 2))
    std = float(math.sqrt(np.sum(d ** 2) / (n - 1)))
    if m2 == 0.0:
        skew = kurt = math.nan
    else:
        skew = float(np.mean(d ** 3)) / m2 ** 1.5
        kurt = float(np.mean(d ** 4)) / m2 ** 2 - 3.0
    return ColumnStats(mean, float(np.median(x)), std, skew, kurt)


def describe(frame: SeriesFrame) -> dict[str, ColumnStats]:
    return {name: column_stats(frame.data[name]) for name in frame.numeric_names(include_onehot=False)}


# -- splitting --------------------------------------------------------------

def _round_half_up(q: Fraction) -> int:
    return int(math.floor(q + Fraction(1, 2)))


@dataclass(frozen=True)
class SplitPlan:
    test_ratio: float
    n_total: int
    n_train: int
    n_val: int
    n_test: int
    train_idx: np.ndarray = field(repr=False)
    val_idx: np.ndarray = field(repr=False)
    test_idx: np.ndarray = field(repr=False)
    shuffled: bool = False

    def partitions(self) -> dict[str, np.ndarray]:
        return {"train": self.train_idx, "val": self.val_idx, "test": self.test_idx}

    def __str__(self) -> str:
        return f"train {self.n_train}, val {self.n_val}, test {self.n_test}"


def plan_splits(n_total: int, ratio: float, shuffle: bool = False, seed: int = 0) -> SplitPlan:
    """Partition ``n_total`` rows into train / validation / test.

    The test share is ``ratio`` of all rows and the validation share is
    ``ratio`` of what remains, both rounded half up. This rounding reproduces
    the published counts for 21,045 rows at ratios 0.1 to 0.5. Without
    ``shuffle`` the partitions are contiguous: train first, test last.
    """
    if not 0.0 < ratio <= 0.5:
        raise ValueError(f"test ratio must lie in (0, 0.5], got {ratio}")
    if n_total < 10:
        raise ValueError("need at least 10 rows to split")
    r = Fraction(str(ratio))
    n_test = _round_half_up(n_total * r)
    n_val = _round_half_up((n_total - n_test) * r)
    n_train = n_total - n_test - n_val
    order = np.arange(n_total)
    if shuffle:
        order = SeededRng(seed, 0x5917).permutation(n_total)
    tr = np.sort(order[:n_train])
    va = np.sort(order[n_train:n_train + n_val])
    te = np.sort(order[n_train + n_val:])
    return SplitPlan(float(ratio), n_total, n_train, n_val, n_test, tr, va, te, shuffle)


# -- categorical encoding and scaling ---------------------------------------

def encode_categoricals(frame: SeriesFrame) -> SeriesFrame:
    """Replace every categorical column by a one-hot block named ``col=value``."""
    cols, data = [], {}
    for c in frame.schema.columns:
        if c.role != "categorical-feature":
            cols.append(c)
            if c.name in frame.data:
                data[c.name] = frame.data[c.name]
            continue
        vocab = c.categories
        if vocab is None:
            raise DataError(f"categorical column {c.name!r} has no vocabulary")
        values = frame.data[c.name]
        lookup = {v: k for k, v in enumerate(vocab)}
        try:
            codes = np.array([lookup[str(v)] for v in values], dtype=np.int64)
        except KeyError as e:
            raise DataError(f"unknown category {e.args[0]!r} in column {c.name!r}") from None
        for k, cat in enumerate(vocab):
            name = f"{c.name}={cat}"
            cols.append(Column(name, "numeric-feature", onehot_of=c.name))
            data[name] = (codes == k).astype(np.float64)
    return SeriesFrame(Schema(tuple(cols)), data, frame.timestamps, frame.dropped)


@dataclass(frozen=True)
class Scaler:
    means: dict
    stds: dict
    constant: tuple[str, ...]
    target: str

    def inverse_target(self, values):
        return np.asarray(values, dtype=np.float64) * self.stds[self.target] + self.means[self.target]

    def to_dict(self) -> dict:
        return {"means": self.means, "stds": self.stds, "constant": list(self.constant), "target": self.target}


def fit_scaler(frame: SeriesFrame, plan: SplitPlan) -> Scaler:
    """Z-score statistics from the training partition only."""
    if plan.n_train < 1:
        raise DataError("empty training partition")
    idx = plan.train_idx
    means, stds, constant = {}, {}, []
    for name in frame.numeric_names(include_onehot=False):
        col = frame.data[name][idx]
        mu = float(col.mean())
        sd = float(col.std())
        if sd == 0.0:
            if name == frame.schema.target:
                raise DataError("target column is constant on the training partition")
            constant.append(name)
            mu, sd = 0.0, 1.0
        means[name], stds[name] = mu, sd
    return Scaler(means, stds, tuple(constant), frame.schema.target)


def apply_scaler(frame: SeriesFrame, scaler: Scaler) -> SeriesFrame:
    data = dict(frame.data)
    for name, mu in scaler.means.items():
        data[name] = (frame.data[name] - mu) / scaler.stds[name]
    return SeriesFrame(frame.schema, data, frame.timestamps, frame.dropped)


# -- windowing --------------------------------------------------------------

@dataclass
class WindowSet:
    inputs: np.ndarray      # (count, lookback, features)
    targets: np.ndarray     # (count,)
    start: np.ndarray       # first input row of each window
    label_row: np.ndarray   # row whose target is predicted

    def __len__(self) -> int:
        return len(self.targets)


@dataclass
class WindowSplit:
    train: WindowSet
    val: WindowSet
    test: WindowSet
    feature_names: list[str]

    def __getitem__(self, key: str) -> WindowSet:
        return getattr(self, key)


def feature_matrix(frame: SeriesFrame, include_target: bool = True) -> tuple[np.ndarray, list[str]]:
    if frame.schema.by_role("categorical-feature"):
        raise DataError("encode categorical columns before windowing")
    names = [c.name for c in frame.schema.columns if c.role == "numeric-feature"]
    if include_target:
        names.append(frame.schema.target)
    return np.column_stack([frame.data[n] for n in names]).astype(np.float64), names


def _windows(X, y, rows, lookback, horizon):
    starts = rows[: len(rows) - lookback - horizon + 1] if len(rows) else rows
    offs = np.arange(lookback)
    inputs = X[starts[:, None] + offs[None, :]]
    label = starts + lookback + horizon - 1
    return WindowSet(inputs, y[label].copy(), starts, label)


def make_windows(frame: SeriesFrame, plan: SplitPlan, lookback: int = 24, horizon: int = 1,
                 include_target: bool = True) -> WindowSplit:
    """Sliding windows: rows [t, t+L) predict the target at row t+L+H-1.

    For a contiguous plan no window crosses a partition boundary. For a
    shuffled plan windows are cut from the whole series and assigned to the
    partition that owns their label row.
    """
    if lookback < 1 or horizon < 1:
        raise ValueError("lookback and horizon must be >= 1")
    X, names = feature_matrix(frame, include_target)
    y = frame.target.astype(np.float64)
    parts = {}
    if not plan.shuffled:
        for key, idx in plan.partitions().items():
            if len(idx) < lookback + horizon:
                raise DataError(f"{key} partition has {len(idx)} rows; needs more than {lookback + horizon - 1}")
            parts[key] = _windows(X, y, idx, lookback, horizon)
    else:
        full = _windows(X, y, np.arange(frame.n), lookback, horizon)
        for key, idx in plan.partitions().items():
            sel = np.isin(full.label_row, idx)
            if not sel.any():
                raise DataError(f"{key} partition receives no windows")
            parts[key] = WindowSet(full.inputs[sel], full.targets[sel], full.start[sel], full.label_row[sel])
    return WindowSplit(parts["train"], parts["val"], parts["test"], names)


def prepare(frame: SeriesFrame, ratio: float, lookback: int = 24, horizon: int = 1,
            shuffle: bool = False, seed: int = 0):
    """Encode, split, scale (train statistics only) and window a frame."""
    enc = encode_categoricals(frame)
    plan = plan_splits(enc.n, ratio, shuffle=shuffle, seed=seed)
    scaler = fit_scaler(enc, plan)
    windows = make_windows(apply_scaler(enc, scaler), plan, lookback, horizon)
    return windows, scaler, plan


# -- synthetic data ---------------------------------------------------------

SYNTH_LOCATIONS = tuple(f"site{k:02d}" for k in range(1, 13))
SEASONS = ("Winter", "Spring", "Summer", "Fall")


def synth_schema(locations: int = 12) -> Schema:
    locs = SYNTH_LOCATIONS[:locations] if locations <= 12 else tuple(f"site{k:02d}" for k in range(1, locations + 1))
    return Schema((
        Column("Timestamp", "timestamp"),
        Column("Location", "categorical-feature", categories=locs),
        Column("Season", "categorical-feature", categories=SEASONS),
        Column("Latitude", "numeric-feature", "deg"),
        Column("Longitude", "numeric-feature", "deg"),
        Column("Altitude", "numeric-feature", "m"),
        Column("Month", "numeric-feature"),
        Column("Hour", "numeric-feature", "h"),
        Column("Humidity", "numeric-feature", "%"),
        Column("AmbientTemp", "numeric-feature", "C"),
        Column("Wind.Speed", "numeric-feature", "km/h"),
        Column("Visibility", "numeric-feature", "km"),
        Column("Pressure", "numeric-feature", "mbar"),
        Column("Cloud.Ceiling", "numeric-feature", "km"),
        Column("PolyPwr", "target", "W"),
    ))


def synthesize(seed: int = 0, n: int = 21045, locations: int = 12) -> SeriesFrame:
    """Deterministic stand-in for the PV dataset.

    Samples every 15 minutes between 10:00 and 15:45, one site per day in
    rotation. Power follows a diurnal arc scaled by season and cloud cover,
    plus noise, clipped at zero.
    """
    if n < 100:
        raise ValueError("synthesize needs n >= 100")
    if locations < 1:
        raise ValueError("need at least one location")
    rng = SeededRng(seed, 0x5E7)
    site_rng, wx = rng.child(1), rng.child(2)
    schema = synth_schema(locations)
    locs = schema.column("Location").categories
    lat = site_rng.uniform(25.0, 48.0, locations)
    lon = site_rng.uniform(-125.0, -70.0, locations)
    alt = site_rng.uniform(0.0, 1900.0, locations)
    peak = site_rng.uniform(18.5, 24.0, locations)

    i = np.arange(n)
    day, slot = i // 24, i % 24
    hour = 10.0 + slot / 4.0
    start = np.datetime64("2017-05-23T10:00:00", "s")
    stamps = start + (day * 86400 + (slot * 900)).astype("timedelta64[s]")
    doy = (day + 142) % 365
    month = ((stamps.astype("datetime64[M]").astype(np.int64)) % 12 + 1).astype(np.float64)
    season_idx = ((month.astype(int) % 12) // 3)
    site = day % locations

    # daily weather regime plus an intraday AR(1) wobble
    daily = wx.normal(0.0, 1.2, day.max() + 1)[day]
    ar = np.empty(n)
    e = wx.normal(0.0, 0.35, n)
    ar[0] = e[0]
    for t in range(1, n):
        ar[t] = 0.85 * ar[t - 1] + e[t]
    cloud = 1.0 / (1.0 + np.exp(-(daily + ar - 0.4)))

    seasonal = np.cos(2.0 * np.pi * (doy - 172) / 365.0)
    elev = np.sin(np.pi * (hour - 6.0) / 12.0)
    lat_s = lat[site]
    temp = 22.0 + 9.0 * seasonal - 0.25 * (lat_s - 35.0) + 4.0 * elev - 5.0 * cloud + wx.normal(0, 1.5, n)
    humidity = np.clip(45.0 - 1.1 * (temp - 22.0) + 30.0 * cloud + wx.normal(0, 6.0, n), 1.0, 100.0)
    wind = np.abs(wx.normal(10.0, 5.0, n))
    visibility = np.where(cloud > 0.85, np.clip(10.0 - 30.0 * (cloud - 0.85) + wx.normal(0, 1, n), 0.0, 10.0), 10.0)
    pressure = 1013.0 - alt[site] / 9.0 + wx.normal(0.0, 4.0, n)
    ceiling = np.clip(722.0 * (1.0 - cloud) ** 0.5 + wx.normal(0, 20.0, n), 0.0, 722.0)
    geom = (1.0 + 0.2 * seasonal) * np.cos(np.radians(lat_s - 30.0))
    power = peak[site] * elev * geom * (1.0 - 0.7 * cloud) * (1.0 - 0.004 * (temp - 25.0))
    power = np.clip(power + wx.normal(0.0, 1.5, n), 0.0, None)

    data = {
        "Location": np.array([locs[s] for s in site], dtype=object),
        "Season": np.array([SEASONS[s] for s in season_idx], dtype=object),
        "Latitude": lat_s.copy(),
        "Longitude": lon[site],
        "Altitude": alt[site],
        "Month": month,
        "Hour": hour,
        "Humidity": humidity,
        "AmbientTemp": temp,
        "Wind.Speed": wind,
        "Visibility": visibility,
        "Pressure": pressure,
        "Cloud.Ceiling": ceiling,
        "PolyPwr": power,
    }
    return SeriesFrame(schema, data, stamps)


def overfit_frame(seed: int = 0, n: int = 2000, n_noise: int = 8, noise: float = 1.0) -> SeriesFrame:
    """Small, noisy regression set on which a wide network memorises noise.

    The target depends on one smooth input; the other inputs are pure noise
    and the additive target noise dominates, so any fit beyond the smooth
    trend is overfitting.
    """
    if n < 100:
        raise ValueError("n must be >= 100")
    rng = SeededRng(seed, 0x0F17)
    t = np.arange(n)
    driver = np.sin(2.0 * np.pi * t / 50.0) + 0.3 * rng.normal(0.0, 1.0, n)
    cols = [Column("Timestamp", "timestamp"), Column("driver", "numeric-feature")]
    data = {"driver": driver}
    for k in range(n_noise):
        name = f"noise{k}"
        cols.append(Column(name, "numeric-feature"))
        data[name] = rng.normal(0.0, 1.0, n)
    y = np.empty(n)
    y[0] = 0.0
    y[1:] = 0.8 * driver[:-1]
    y += noise * rng.normal(0.0, 1.0, n)
    cols.append(Column("y", "target"))
    data["y"] = y
    stamps = np.datetime64("2020-01-01T00:00:00", "s") + (t * 3600).astype("timedelta64[s]")
    return SeriesFrame(Schema(tuple(cols)), data, stamps)
