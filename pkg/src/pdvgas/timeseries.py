"""Price and storage series: CSV ingestion, normalization, Fourier seasonality, grid conversion."""

from __future__ import annotations

import csv
import datetime as _dt
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

DAILY_KINDS = ("price", "log_price", "storage_daily")
WEEKLY_KINDS = ("raw", "normalized", "periodic", "residual")
DEFAULT_PERIOD = 365.0 / 7.0


class SeriesError(ValueError):
    """Raised for malformed or inconsistent series input."""


@dataclass(frozen=True)
class DailySeries:
    start_date: _dt.date
    values: np.ndarray
    kind: str = "price"

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "values", values)
        if self.kind not in DAILY_KINDS:
            raise SeriesError(f"unknown daily kind {self.kind!r}")
        if values.ndim != 1 or values.size == 0:
            raise SeriesError("daily series must be a non-empty 1-D array")
        if self.kind == "price" and np.any(values <= 0):
            raise SeriesError("prices must be strictly positive")

    def __len__(self):
        return self.values.size

    def dates(self) -> list[_dt.date]:
        return [self.start_date + _dt.timedelta(days=i) for i in range(len(self))]

    def log(self) -> "DailySeries":
        if self.kind != "price":
            raise SeriesError("log() needs a price series")
        return DailySeries(self.start_date, np.log(self.values), "log_price")


@dataclass(frozen=True)
class WeeklySeries:
    start_date: _dt.date
    values: np.ndarray
    kind: str = "raw"

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "values", values)
        if self.kind not in WEEKLY_KINDS:
            raise SeriesError(f"unknown weekly kind {self.kind!r}")
        if values.ndim != 1 or values.size == 0:
            raise SeriesError("weekly series must be a non-empty 1-D array")
        if self.kind == "normalized" and (np.any(values <= 0) or np.any(values > 1)):
            raise SeriesError("normalized storage must lie in (0, 1]")

    def __len__(self):
        return self.values.size

    def dates(self) -> list[_dt.date]:
        return [self.start_date + _dt.timedelta(weeks=i) for i in range(len(self))]


@dataclass(frozen=True)
class SeasonalDecomposition:
    period: float
    harmonics: int
    cosine_coeffs: np.ndarray
    sine_coeffs: np.ndarray
    mean_level: float
    periodic: WeeklySeries = field(repr=False)
    residual: WeeklySeries = field(repr=False)

    def evaluate(self, t_weeks) -> np.ndarray:
        """Fitted periodic curve at (possibly fractional) week offsets from the series start."""
        t = np.asarray(t_weeks, dtype=float)
        k = np.arange(1, self.harmonics + 1)
        phase = 2.0 * np.pi * np.multiply.outer(t, k) / self.period
        return self.mean_level + np.cos(phase) @ self.cosine_coeffs + np.sin(phase) @ self.sine_coeffs

    def daily_periodic(self, n_days: int, offset_days: int = 0) -> DailySeries:
        """Periodic component on a daily grid, evaluated from the fitted harmonics."""
        t = (offset_days + np.arange(n_days)) / 7.0
        start = self.periodic.start_date + _dt.timedelta(days=offset_days)
        return DailySeries(start, self.evaluate(t), "storage_daily")

    def to_json(self) -> dict:
        return {
            "period": self.period,
            "mean": self.mean_level,
            "cos": self.cosine_coeffs.tolist(),
            "sin": self.sine_coeffs.tolist(),
        }

    def save_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2))


def load_csv(path, schema: str) -> DailySeries | WeeklySeries:
    """Read a two-column ``date,value`` CSV with a header row.

    ``schema`` is one of the daily kinds (``price``, ``log_price``,
    ``storage_daily``) or weekly kinds (``raw``, ``normalized``, ...).
    Daily files must have consecutive days, weekly files 7-day spacing.
    """
    path = Path(path)
    if schema not in DAILY_KINDS + WEEKLY_KINDS:
        raise SeriesError(f"unknown schema {schema!r}")
    if not path.exists():
        raise FileNotFoundError(path)
    dates, values = [], []
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise SeriesError(f"{path}: empty file")
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 2:
                raise SeriesError(f"{path}:{lineno}: expected 2 columns, got {len(row)}")
            try:
                d = _dt.date.fromisoformat(row[0].strip())
                v = float(row[1])
            except ValueError as exc:
                raise SeriesError(f"{path}:{lineno}: malformed row {row!r}") from exc
            if dates and d <= dates[-1]:
                raise SeriesError(f"{path}:{lineno}: non-monotone date {d} after {dates[-1]}")
            dates.append(d)
            values.append(v)
    if not dates:
        raise SeriesError(f"{path}: empty file")
    step = 1 if schema in DAILY_KINDS else 7
    for i in range(1, len(dates)):
        if (dates[i] - dates[i - 1]).days != step:
            raise SeriesError(f"{path}:{i + 2}: expected {step}-day spacing")
    cls = DailySeries if schema in DAILY_KINDS else WeeklySeries
    return cls(dates[0], np.array(values), schema)


def write_csv(series: DailySeries | WeeklySeries, path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["date", "value"])
        for d, v in zip(series.dates(), series.values):
            w.writerow([d.isoformat(), repr(float(v))])


def normalize_storage(raw: WeeklySeries, cap: float | str = "auto") -> WeeklySeries:
    if raw.kind != "raw":
        raise SeriesError("normalize_storage expects a raw series")
    v = raw.values
    if np.any(v <= 0):
        raise SeriesError("storage values must be positive")
    vmax = float(v.max())
    if cap == "auto":
        cap = vmax
    cap = float(cap)
    if cap <= 0 or cap < vmax:
        raise SeriesError(f"capacity {cap} below series maximum {vmax}")
    return WeeklySeries(raw.start_date, v / cap, "normalized")


def fourier_fit(normalized: WeeklySeries, period: float = DEFAULT_PERIOD, harmonics: int = 3) -> SeasonalDecomposition:
    """Least-squares fit of a mean plus ``harmonics`` sine/cosine pairs of the given period (weeks)."""
    if normalized.kind != "normalized":
        raise SeriesError("fourier_fit expects a normalized series")
    if harmonics < 1:
        raise SeriesError("harmonics must be >= 1")
    y = normalized.values
    n = y.size
    if n < 2 * harmonics + 1:
        raise SeriesError(f"need at least {2 * harmonics + 1} points for {harmonics} harmonics, got {n}")
    t = np.arange(n, dtype=float)
    phase = 2.0 * np.pi * np.outer(t, np.arange(1, harmonics + 1)) / period
    design = np.hstack([np.ones((n, 1)), np.cos(phase), np.sin(phase)])
    coef, _, rank, _ = np.linalg.lstsq(design, y, rcond=None)
    if rank < design.shape[1]:
        raise SeriesError("rank-deficient Fourier design")
    periodic = design @ coef
    residual = y - periodic
    return SeasonalDecomposition(
        period=float(period),
        harmonics=harmonics,
        cosine_coeffs=coef[1 : harmonics + 1],
        sine_coeffs=coef[harmonics + 1 :],
        mean_level=float(coef[0]),
        periodic=WeeklySeries(normalized.start_date, periodic, "periodic"),
        residual=WeeklySeries(normalized.start_date, residual, "residual"),
    )


def weekly_to_daily(w: WeeklySeries, n_days: int | None = None) -> DailySeries:
    """Step-function conversion: each weekly value held for 7 days."""
    daily = np.repeat(w.values, 7)
    if n_days is not None:
        if n_days > daily.size:
            raise SeriesError(f"{len(w)} weeks cannot cover {n_days} days")
        daily = daily[:n_days]
    return DailySeries(w.start_date, daily, "storage_daily")


def daily_to_weekly_average(d: DailySeries | np.ndarray, kind: str = "residual") -> WeeklySeries:
    """Block averages over consecutive 7-day blocks; a short final block is averaged over its own length."""
    if isinstance(d, DailySeries):
        values, start = d.values, d.start_date
    else:
        values, start = np.asarray(d, dtype=float), _dt.date(1970, 1, 1)
    return WeeklySeries(start, weekly_block_means(values), kind)


def weekly_block_means(values: np.ndarray) -> np.ndarray:
    """Vectorized block means along the last axis (7-day blocks, partial tail)."""
    values = np.asarray(values, dtype=float)
    n = values.shape[-1]
    if n == 0:
        raise SeriesError("empty daily series")
    m = -(-n // 7)
    pad = m * 7 - n
    if pad:
        padded = np.concatenate([values, np.zeros(values.shape[:-1] + (pad,))], axis=-1)
    else:
        padded = values
    sums = padded.reshape(values.shape[:-1] + (m, 7)).sum(axis=-1)
    counts = np.full(m, 7.0)
    counts[-1] = n - 7 * (m - 1)
    return sums / counts
