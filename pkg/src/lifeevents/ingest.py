"""Reading, resampling, normalizing and compliance-filtering participant-days.

File formats
------------
signals CSV : ``participant_id,date,timestamp_s,heart_rate,steps``
surveys CSV : ``participant_id,date,stress,anxiety,pos_affect,neg_affect,atypical,category``
summary CSV : ``participant_id,date`` followed by the columns in ``SUMMARY_KEYS``

Empty fields are missing values. Dates are ISO ``YYYY-MM-DD`` and timestamps are
seconds since local midnight.
"""

from __future__ import annotations

import datetime as dt
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import pandas as pd

SECONDS_PER_DAY = 86400
CHANNELS = ("heart_rate", "steps")
SUMMARY_KEYS = (
    "minutes_fat_burn",
    "minutes_cardio",
    "minutes_out_of_range",
    "minutes_in_bed",
    "minutes_asleep",
    "sleep_efficiency",
    "sleep_start",
    "sleep_end",
)
CATEGORIES = ("positive", "minor_negative", "major_negative")
CATEGORY_CODES = {"pos": "positive", "minor_neg": "minor_negative", "major_neg": "major_negative"}
CODE_FOR_CATEGORY = {v: k for k, v in CATEGORY_CODES.items()}
CONSTRUCTS = ("stress", "anxiety", "positive_affect", "negative_affect")
CONSTRUCT_RANGES = {
    "stress": (1.0, 5.0),
    "anxiety": (1.0, 5.0),
    "positive_affect": (5.0, 25.0),
    "negative_affect": (5.0, 25.0),
}

SIGNAL_HEADER = ["participant_id", "date", "timestamp_s", "heart_rate", "steps"]
SURVEY_HEADER = [
    "participant_id", "date", "stress", "anxiety", "pos_affect", "neg_affect", "atypical", "category",
]
SUMMARY_HEADER = ["participant_id", "date", *SUMMARY_KEYS]

DEFAULT_GRID_SECONDS = 60
DEFAULT_MAX_GAP_SECONDS = 300
DEFAULT_MIN_VALID_HOURS = 5.0


class ValidationError(ValueError):
    """Input data violates a documented format or range."""


@dataclass(frozen=True)
class SignalSample:
    timestamp: float
    heart_rate: float | None = None
    steps: float | None = None


@dataclass
class SurveyEntry:
    stress: float | None
    anxiety: float | None
    positive_affect: float | None
    negative_affect: float | None
    atypical: bool = False
    category: str | None = None

    def __post_init__(self):
        for name in CONSTRUCTS:
            value = getattr(self, name)
            if value is None:
                continue
            lo, hi = CONSTRUCT_RANGES[name]
            if not (lo <= value <= hi):
                raise ValidationError(f"{name}={value} outside [{lo:g}, {hi:g}]")
        if self.category is not None:
            if self.category not in CATEGORIES:
                raise ValidationError(f"unknown category {self.category!r}")
            if not self.atypical:
                raise ValidationError("category given for a non-atypical day")

    def value(self, construct: str) -> float | None:
        return getattr(self, construct)

    def to_dict(self) -> dict:
        return {
            "stress": self.stress,
            "anxiety": self.anxiety,
            "positive_affect": self.positive_affect,
            "negative_affect": self.negative_affect,
            "atypical": self.atypical,
            "category": self.category,
        }


@dataclass
class DayRecord:
    """One participant-day.

    Raw samples are held column-wise (``timestamps``, ``heart_rate``, ``steps``,
    NaN = missing). ``matrix`` is the resampled ``T x 2`` grid once
    :func:`resample_signals` has been applied.
    """

    participant_id: str
    date: dt.date
    timestamps: np.ndarray
    heart_rate: np.ndarray
    steps: np.ndarray
    summary: dict[str, float | None] = field(default_factory=dict)
    survey: SurveyEntry | None = None
    matrix: np.ndarray | None = None

    def __post_init__(self):
        if len(self.timestamps) > 1 and np.any(np.diff(self.timestamps) <= 0):
            raise ValidationError(f"{self.key}: timestamps not strictly increasing")
        bad = set(self.summary) - set(SUMMARY_KEYS)
        if bad:
            raise ValidationError(f"{self.key}: unknown summary keys {sorted(bad)}")

    @property
    def key(self) -> tuple[str, dt.date]:
        return (self.participant_id, self.date)

    @property
    def samples(self) -> list[SignalSample]:
        return [
            SignalSample(float(t), _none_if_nan(h), _none_if_nan(s))
            for t, h, s in zip(self.timestamps, self.heart_rate, self.steps)
        ]

    def to_dict(self) -> dict:
        return {
            "participant_id": self.participant_id,
            "date": self.date.isoformat(),
            "samples": [
                {"timestamp": float(t), "heart_rate": _none_if_nan(h), "steps": _none_if_nan(s)}
                for t, h, s in zip(self.timestamps, self.heart_rate, self.steps)
            ],
            "summary": {k: self.summary[k] for k in SUMMARY_KEYS if k in self.summary},
            "survey": None if self.survey is None else self.survey.to_dict(),
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "DayRecord":
        samples = obj.get("samples", [])
        survey = obj.get("survey")
        return cls(
            participant_id=str(obj["participant_id"]),
            date=dt.date.fromisoformat(obj["date"]),
            timestamps=np.array([s["timestamp"] for s in samples], dtype=float),
            heart_rate=np.array([_nan_if_none(s.get("heart_rate")) for s in samples], dtype=float),
            steps=np.array([_nan_if_none(s.get("steps")) for s in samples], dtype=float),
            summary=dict(obj.get("summary") or {}),
            survey=None if survey is None else SurveyEntry(**survey),
        )


@dataclass
class ComplianceReport:
    dropped_days: int = 0
    dropped_participants: int = 0
    kept_days: int = 0
    kept_participants: int = 0


@dataclass
class Cohort:
    records: list[DayRecord]
    norm_stats: dict[str, tuple[float, float]] | None = None
    grid_seconds: int | None = None
    unmatched_surveys: list[tuple[str, dt.date]] = field(default_factory=list)

    def __len__(self):
        return len(self.records)

    @property
    def participants(self) -> list[str]:
        return sorted({r.participant_id for r in self.records})

    def by_participant(self) -> dict[str, list[DayRecord]]:
        out: dict[str, list[DayRecord]] = {}
        for r in self.records:
            out.setdefault(r.participant_id, []).append(r)
        return out

    def index(self) -> dict[tuple[str, dt.date], int]:
        return {r.key: i for i, r in enumerate(self.records)}

    def to_jsonl(self) -> str:
        return "".join(canonical_json(r.to_dict()) + "\n" for r in self.records)

    @classmethod
    def from_jsonl(cls, text: str) -> "Cohort":
        records = [DayRecord.from_dict(json.loads(line)) for line in text.splitlines() if line.strip()]
        return cls(records=_sorted_records(records))


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def _none_if_nan(x):
    x = float(x)
    return None if math.isnan(x) else x


def _nan_if_none(x):
    return np.nan if x is None else float(x)


def _sorted_records(records: Iterable[DayRecord]) -> list[DayRecord]:
    return sorted(records, key=lambda r: (r.participant_id, r.date))


# --------------------------------------------------------------------------
# CSV parsing
# --------------------------------------------------------------------------

def _read_csv(path, header: Sequence[str]) -> pd.DataFrame:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(str(path))
    if path.stat().st_size == 0:
        return pd.DataFrame({c: pd.Series(dtype=str) for c in header})
    df = pd.read_csv(path, dtype=str, keep_default_na=False, na_filter=False)
    missing = [c for c in header if c not in df.columns]
    if missing:
        raise ValidationError(f"{path}: missing columns {missing}")
    return df


def _numeric(df: pd.DataFrame, col: str, path) -> np.ndarray:
    raw = df[col].str.strip()
    values = pd.to_numeric(raw.replace("", None), errors="coerce").to_numpy(dtype=float)
    bad = np.isnan(values) & (raw != "").to_numpy()
    if bad.any():
        line = int(np.flatnonzero(bad)[0]) + 2
        raise ValidationError(f"{path}:{line}: malformed {col} value {raw.iloc[line - 2]!r}")
    return values


def _dates(df: pd.DataFrame, path) -> np.ndarray:
    uniq = {}
    out = np.empty(len(df), dtype=object)
    for i, s in enumerate(df["date"].to_numpy()):
        d = uniq.get(s)
        if d is None:
            try:
                d = dt.date.fromisoformat(s.strip())
            except ValueError:
                raise ValidationError(f"{path}:{i + 2}: malformed date {s!r}") from None
            uniq[s] = d
        out[i] = d
    return out


def _check_ids(df: pd.DataFrame, path):
    ids = df["participant_id"].str.strip()
    empty = (ids == "").to_numpy()
    if empty.any():
        raise ValidationError(f"{path}:{int(np.flatnonzero(empty)[0]) + 2}: empty participant_id")
    return ids.to_numpy()


def read_signals(path) -> list[DayRecord]:
    """Parse one signals CSV into day records (no survey/summary attached)."""
    df = _read_csv(path, SIGNAL_HEADER)
    if len(df) == 0:
        return []
    ids = _check_ids(df, path)
    dates = _dates(df, path)
    ts = _numeric(df, "timestamp_s", path)
    hr = _numeric(df, "heart_rate", path)
    st = _numeric(df, "steps", path)
    lines = np.arange(len(df)) + 2
    checks = [
        (np.isnan(ts) | (ts < 0) | (ts >= SECONDS_PER_DAY), "timestamp_s outside [0, 86400)"),
        (~np.isnan(hr) & ((hr <= 20) | (hr >= 250)), "heart_rate outside (20, 250)"),
        (~np.isnan(st) & (st < 0), "negative steps"),
    ]
    for bad, msg in checks:
        if bad.any():
            raise ValidationError(f"{path}:{lines[bad][0]}: {msg}")

    date_ord = np.array([d.toordinal() for d in dates])
    order = np.lexsort((ts, date_ord, ids))
    ids, date_ord, ts, hr, st, lines = (a[order] for a in (ids, date_ord, ts, hr, st, lines))
    same_day = (ids[1:] == ids[:-1]) & (date_ord[1:] == date_ord[:-1])
    dup = same_day & (ts[1:] == ts[:-1])
    if dup.any():
        j = int(np.flatnonzero(dup)[0]) + 1
        raise ValidationError(f"{path}:{lines[j]}: duplicate timestamp for ({ids[j]}, "
                              f"{dt.date.fromordinal(int(date_ord[j]))})")
    starts = np.concatenate([[0], np.flatnonzero(~same_day) + 1, [len(ids)]])
    records = []
    for a, b in zip(starts[:-1], starts[1:]):
        records.append(DayRecord(
            participant_id=str(ids[a]),
            date=dt.date.fromordinal(int(date_ord[a])),
            timestamps=ts[a:b].copy(),
            heart_rate=hr[a:b].copy(),
            steps=st[a:b].copy(),
        ))
    return records


def read_surveys(path) -> dict[tuple[str, dt.date], SurveyEntry]:
    df = _read_csv(path, SURVEY_HEADER)
    if len(df) == 0:
        return {}
    ids = _check_ids(df, path)
    dates = _dates(df, path)
    cols = {c: _numeric(df, c, path) for c in ("stress", "anxiety", "pos_affect", "neg_affect")}
    atyp = df["atypical"].str.strip().to_numpy()
    cats = df["category"].str.strip().to_numpy()
    out: dict[tuple[str, dt.date], SurveyEntry] = {}
    for i in range(len(df)):
        line = i + 2
        key = (str(ids[i]), dates[i])
        if key in out:
            raise ValidationError(f"{path}:{line}: duplicate survey for {key[0]} {key[1]}")
        if atyp[i] not in ("0", "1"):
            raise ValidationError(f"{path}:{line}: atypical must be 0 or 1, got {atyp[i]!r}")
        if cats[i] and cats[i] not in CATEGORY_CODES:
            raise ValidationError(f"{path}:{line}: unknown category {cats[i]!r}")
        vals = [None if np.isnan(cols[c][i]) else float(cols[c][i])
                for c in ("stress", "anxiety", "pos_affect", "neg_affect")]
        try:
            out[key] = SurveyEntry(*vals, atypical=atyp[i] == "1",
                                   category=CATEGORY_CODES.get(cats[i]) if cats[i] else None)
        except ValidationError as exc:
            raise ValidationError(f"{path}:{line}: {exc}") from None
    return out


def read_summary(path) -> dict[tuple[str, dt.date], dict[str, float | None]]:
    df = _read_csv(path, SUMMARY_HEADER)
    if len(df) == 0:
        return {}
    ids = _check_ids(df, path)
    dates = _dates(df, path)
    cols = {k: _numeric(df, k, path) for k in SUMMARY_KEYS}
    out = {}
    for i in range(len(df)):
        key = (str(ids[i]), dates[i])
        if key in out:
            raise ValidationError(f"{path}:{i + 2}: duplicate summary for {key[0]} {key[1]}")
        out[key] = {k: _none_if_nan(cols[k][i]) for k in SUMMARY_KEYS}
    return out


def parse_cohort(signal_path, survey_path=None, summary_path=None) -> Cohort:
    """Build a cohort from one or more signal files plus optional survey/summary files.

    ``signal_path`` may be a single path or a sequence of paths. Surveys and
    summaries are joined on ``(participant_id, date)``; survey rows without a
    signal day are listed in ``Cohort.unmatched_surveys``.
    """
    paths = [signal_path] if isinstance(signal_path, (str, Path)) else list(signal_path)
    seen: dict[tuple[str, dt.date], Path] = {}
    records: list[DayRecord] = []
    for p in paths:
        for rec in read_signals(p):
            if rec.key in seen:
                raise ValidationError(f"duplicate day {rec.key[0]} {rec.key[1]} in {seen[rec.key]} and {p}")
            seen[rec.key] = Path(p)
            records.append(rec)
    surveys = read_surveys(survey_path) if survey_path is not None else {}
    summary = read_summary(summary_path) if summary_path is not None else {}
    for rec in records:
        rec.survey = surveys.get(rec.key)
        rec.summary = summary.get(rec.key, {})
    unmatched = sorted(set(surveys) - set(seen))
    return Cohort(records=_sorted_records(records), unmatched_surveys=unmatched)


def write_signals_csv(records: Iterable[DayRecord], path):
    frames = []
    for r in records:
        frames.append(pd.DataFrame({
            "participant_id": r.participant_id,
            "date": r.date.isoformat(),
            "timestamp_s": r.timestamps,
            "heart_rate": r.heart_rate,
            "steps": r.steps,
        }))
    df = pd.concat(frames, ignore_index=True) if frames else pd.DataFrame(columns=SIGNAL_HEADER)
    df.to_csv(path, index=False, na_rep="", float_format="%.6g")


def write_surveys_csv(surveys: dict[tuple[str, dt.date], SurveyEntry], path):
    rows = []
    for (pid, date), s in sorted(surveys.items()):
        rows.append([pid, date.isoformat(), s.stress, s.anxiety, s.positive_affect, s.negative_affect,
                     int(s.atypical), CODE_FOR_CATEGORY.get(s.category, "")])
    pd.DataFrame(rows, columns=SURVEY_HEADER).to_csv(path, index=False, na_rep="", float_format="%.6g")


def write_summary_csv(records: Iterable[DayRecord], path):
    rows = [[r.participant_id, r.date.isoformat(), *[r.summary.get(k) for k in SUMMARY_KEYS]]
            for r in records]
    pd.DataFrame(rows, columns=SUMMARY_HEADER).to_csv(path, index=False, na_rep="", float_format="%.6g")


# --------------------------------------------------------------------------
# Resampling, compliance, normalization
# --------------------------------------------------------------------------

def _fill_short_gaps(values: np.ndarray, observed: np.ndarray, max_cells: int, interpolate: bool):
    """Fill runs of unobserved cells bounded on both sides by observed cells."""
    out = np.where(observed, values, np.nan)
    idx = np.flatnonzero(observed)
    if len(idx) < 2:
        return out
    gaps = np.diff(idx) - 1
    for j in np.flatnonzero((gaps > 0) & (gaps <= max_cells)):
        a, b = idx[j], idx[j + 1]
        if interpolate:
            out[a + 1:b] = np.interp(np.arange(a + 1, b), [a, b], [out[a], out[b]])
        else:
            out[a + 1:b] = 0.0
    return out


def resample_signals(record: DayRecord, grid_seconds: int = DEFAULT_GRID_SECONDS,
                     max_gap_seconds: int = DEFAULT_MAX_GAP_SECONDS) -> np.ndarray:
    """Aggregate raw samples onto a regular grid; returns a ``T x 2`` matrix.

    Heart rate is averaged and steps summed within each cell. Empty runs of at
    most ``max_gap_seconds`` between observed cells are linearly interpolated
    (heart rate) or zero-filled (steps); longer runs stay NaN.
    """
    if SECONDS_PER_DAY % grid_seconds:
        raise ValueError(f"grid_seconds={grid_seconds} does not divide 86400")
    n_cells = SECONDS_PER_DAY // grid_seconds
    max_cells = max_gap_seconds // grid_seconds
    out = np.full((n_cells, 2), np.nan)
    if len(record.timestamps) == 0:
        return out
    cell = (record.timestamps // grid_seconds).astype(np.int64)
    for c, (values, interp) in enumerate(((record.heart_rate, True), (record.steps, False))):
        ok = ~np.isnan(values)
        counts = np.bincount(cell[ok], minlength=n_cells)
        sums = np.bincount(cell[ok], weights=values[ok], minlength=n_cells)
        observed = counts > 0
        agg = np.divide(sums, counts, out=np.zeros(n_cells), where=observed) if interp else sums
        out[:, c] = _fill_short_gaps(agg, observed, max_cells, interp)
    return out


def resample_cohort(cohort: Cohort, grid_seconds: int = DEFAULT_GRID_SECONDS,
                    max_gap_seconds: int = DEFAULT_MAX_GAP_SECONDS) -> Cohort:
    records = [replace(r, matrix=resample_signals(r, grid_seconds, max_gap_seconds)) for r in cohort.records]
    return replace(cohort, records=records, grid_seconds=grid_seconds)


def valid_seconds(record: DayRecord, grid_seconds: int) -> float:
    if record.matrix is None:
        raise ValueError("record has not been resampled")
    return float(np.sum(~np.isnan(record.matrix).any(axis=1))) * grid_seconds


def filter_compliance(cohort: Cohort, min_valid_hours: float = DEFAULT_MIN_VALID_HOURS,
                      min_days: int = 2, min_atypical: int = 1) -> tuple[Cohort, ComplianceReport]:
    """Drop short days, then participants with too few days or no atypical day."""
    if cohort.grid_seconds is None:
        raise ValueError("cohort has not been resampled")
    threshold = min_valid_hours * 3600
    days = [r for r in cohort.records if valid_seconds(r, cohort.grid_seconds) >= threshold]
    report = ComplianceReport(dropped_days=len(cohort.records) - len(days))
    kept = []
    participants = {r.participant_id for r in cohort.records}
    groups: dict[str, list[DayRecord]] = {}
    for r in days:
        groups.setdefault(r.participant_id, []).append(r)
    for pid, recs in groups.items():
        n_atyp = sum(1 for r in recs if r.survey is not None and r.survey.atypical)
        if len(recs) >= min_days and n_atyp >= min_atypical:
            kept.extend(recs)
    kept = _sorted_records(kept)
    report.kept_days = len(kept)
    report.kept_participants = len({r.participant_id for r in kept})
    report.dropped_participants = len(participants) - report.kept_participants
    return replace(cohort, records=kept), report


def norm_stats_for(cohort: Cohort) -> dict[str, tuple[float, float]]:
    mats = [r.matrix for r in cohort.records if r.matrix is not None]
    if not mats:
        raise ValueError("no resampled signals to normalize")
    stacked = np.concatenate(mats, axis=0)
    stats = {}
    for c, name in enumerate(CHANNELS):
        col = stacked[:, c]
        col = col[~np.isnan(col)]
        if col.size == 0:
            raise ValueError(f"channel {name!r} is entirely missing")
        std = float(col.std())
        if not std > 0:
            raise ValueError(f"channel {name!r} has zero variance")
        stats[name] = (float(col.mean()), std)
    return stats


def z_normalize(cohort: Cohort, stats: dict[str, tuple[float, float]] | None = None) -> Cohort:
    """Z-score each channel with cohort-wide statistics over non-missing cells.

    Statistics are recomputed from ``cohort`` unless ``stats`` is given, so
    normalizing twice without passing stats is not idempotent. Pass the
    training cohort's ``norm_stats`` to transform held-out data.
    """
    stats = norm_stats_for(cohort) if stats is None else stats
    mean = np.array([stats[c][0] for c in CHANNELS])
    std = np.array([stats[c][1] for c in CHANNELS])
    records = [replace(r, matrix=(r.matrix - mean) / std) for r in cohort.records]
    return replace(cohort, records=records, norm_stats=dict(stats))
