"""Aggregated-statistics baseline features and mRMR selection."""

from __future__ import annotations

import datetime as dt
import json
from dataclasses import dataclass

import numpy as np
import pandas as pd
from scipy import stats

from .ingest import CHANNELS, SUMMARY_KEYS, Cohort

STAT_NAMES = ("sum", "mean", "median", "variance", "kurtosis", "skewness")
OFFSET_SUFFIX = {-1: "prev", 0: "day", 1: "next"}
CHANNEL_PREFIX = {"heart_rate": "hr", "steps": "steps"}
DEFAULT_N_SELECT = {"hospital": 26, "aerospace": 23}


def aggregate_stats(series) -> np.ndarray:
    """sum, mean, median, sample variance, excess kurtosis, adjusted skewness.

    NaNs are dropped. An empty series gives six NaNs. Skewness needs n >= 3 and
    kurtosis n >= 4; shorter or constant series report 0 for both.
    """
    x = np.asarray(series, dtype=float)
    x = x[~np.isnan(x)]
    n = x.size
    if n == 0:
        return np.full(6, np.nan)
    var = float(x.var(ddof=1)) if n > 1 else 0.0
    constant = bool(np.all(x == x[0]))
    skew = 0.0 if (constant or n < 3) else float(stats.skew(x, bias=False))
    kurt = 0.0 if (constant or n < 4) else float(stats.kurtosis(x, fisher=True, bias=False))
    return np.array([x.sum(), x.mean(), np.median(x), var, kurt, skew])


@dataclass
class FeatureMatrix:
    participants: np.ndarray
    dates: list
    columns: list[str]
    values: np.ndarray

    def __post_init__(self):
        if len(set(self.columns)) != len(self.columns):
            raise ValueError("duplicate column names")
        if self.values.shape != (len(self.dates), len(self.columns)):
            raise ValueError("values shape does not match keys/columns")

    @property
    def keys(self):
        return list(zip(self.participants, self.dates))

    def column_means(self, train_rows) -> np.ndarray:
        """Means over training rows; columns with no training value fall back to 0."""
        sub = self.values[np.asarray(train_rows)]
        ok = ~np.isnan(sub)
        counts = ok.sum(axis=0)
        sums = np.where(ok, sub, 0.0).sum(axis=0)
        return np.divide(sums, counts, out=np.zeros(sub.shape[1]), where=counts > 0)

    def imputed(self, train_rows) -> tuple[np.ndarray, np.ndarray]:
        means = self.column_means(train_rows)
        vals = np.where(np.isnan(self.values), means[None, :], self.values)
        return vals, means

    def to_csv(self, path):
        df = pd.DataFrame(self.values, columns=self.columns)
        df.insert(0, "date", [d.isoformat() for d in self.dates])
        df.insert(0, "participant_id", self.participants)
        df.to_csv(path, index=False, float_format="%.10g", na_rep="")

    @classmethod
    def from_csv(cls, path) -> "FeatureMatrix":
        df = pd.read_csv(path, dtype={"participant_id": str})
        cols = [c for c in df.columns if c not in ("participant_id", "date")]
        return cls(df["participant_id"].to_numpy(), [dt.date.fromisoformat(d) for d in df["date"]],
                   cols, df[cols].to_numpy(dtype=float))


def feature_columns(window_offsets=(-1, 0, 1)) -> list[str]:
    cols = []
    for o in window_offsets:
        suf = OFFSET_SUFFIX.get(o, f"{'m' if o < 0 else 'p'}{abs(o)}")
        for ch in CHANNELS:
            cols += [f"{CHANNEL_PREFIX[ch]}_{s}_{suf}" for s in STAT_NAMES]
        cols += [f"{k}_{suf}" for k in SUMMARY_KEYS]
    return cols


def build_feature_matrix(cohort: Cohort, window_offsets=(-1, 0, 1)) -> FeatureMatrix:
    """Six statistics per signal channel plus static summaries for each offset day.

    Neighbours are calendar days of the same participant; a neighbour absent
    from the cohort leaves its cells missing (impute per training split with
    :meth:`FeatureMatrix.imputed`).
    """
    records = cohort.records
    per_day = np.full((len(records), 2 * 6 + len(SUMMARY_KEYS)), np.nan)
    for i, r in enumerate(records):
        if r.matrix is None:
            raise ValueError(f"{r.key}: record has not been resampled")
        per_day[i, :6] = aggregate_stats(r.matrix[:, 0])
        per_day[i, 6:12] = aggregate_stats(r.matrix[:, 1])
        per_day[i, 12:] = [np.nan if r.summary.get(k) is None else r.summary[k] for k in SUMMARY_KEYS]
    lookup = {r.key: i for i, r in enumerate(records)}
    blocks = []
    for o in window_offsets:
        delta = dt.timedelta(days=o)
        idx = np.array([lookup.get((r.participant_id, r.date + delta), -1) for r in records], dtype=int)
        block = np.full_like(per_day, np.nan)
        block[idx >= 0] = per_day[idx[idx >= 0]]
        blocks.append(block)
    values = np.concatenate(blocks, axis=1) if blocks else np.empty((len(records), 0))
    return FeatureMatrix(
        participants=np.array([r.participant_id for r in records], dtype=object),
        dates=[r.date for r in records],
        columns=feature_columns(window_offsets),
        values=values,
    )


# --------------------------------------------------------------------------
# mutual information and mRMR
# --------------------------------------------------------------------------

def discretize_tertiles(X, train_rows=None) -> np.ndarray:
    """Three levels per column split at mean - std and mean + std of the training rows."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    ref = X if train_rows is None else X[np.asarray(train_rows)]
    mu = ref.mean(axis=0)
    sd = ref.std(axis=0)
    return (X > (mu - sd)).astype(np.int64) + (X > (mu + sd)).astype(np.int64)


def mutual_information(a, b) -> float:
    """Plug-in mutual information (nats) of two discrete label arrays."""
    a = np.asarray(a)
    b = np.asarray(b)
    _, ai = np.unique(a, return_inverse=True)
    _, bi = np.unique(b, return_inverse=True)
    joint = np.zeros((ai.max() + 1, bi.max() + 1))
    np.add.at(joint, (ai, bi), 1.0)
    joint /= joint.sum()
    pa = joint.sum(axis=1, keepdims=True)
    pb = joint.sum(axis=0, keepdims=True)
    nz = joint > 0
    return max(0.0, float(np.sum(joint[nz] * np.log(joint[nz] / (pa @ pb)[nz]))))


@dataclass
class Selection:
    indices: list[int]
    scores: list[float]
    names: list[str]

    def report(self) -> list[dict]:
        return [{"name": n, "rank": r + 1, "score": s} for r, (n, s) in enumerate(zip(self.names, self.scores))]

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.report(), fh, indent=2)


def mrmr_select(X, y, n_select: int, train_rows=None, names=None) -> Selection:
    """Greedy mRMR (difference form) on tertile-discretized columns.

    First pick maximizes MI with ``y``; later picks maximize
    ``MI(f; y) - mean MI(f; s)`` over selected ``s``. Ties go to the lowest index.
    Only ``train_rows`` (default: all rows) are used.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y)
    n_cols = X.shape[1]
    if n_select > n_cols:
        raise ValueError(f"n_select={n_select} exceeds {n_cols} columns")
    if train_rows is not None:
        X, y = X[np.asarray(train_rows)], y[np.asarray(train_rows)]
    D = discretize_tertiles(X)
    relevance = np.array([mutual_information(D[:, j], y) for j in range(n_cols)])
    redundancy = np.zeros(n_cols)
    selected: list[int] = []
    scores: list[float] = []
    remaining = np.ones(n_cols, dtype=bool)
    for step in range(n_select):
        score = relevance - (redundancy / step if step else 0.0)
        score = np.where(remaining, score, -np.inf)
        j = int(np.argmax(score))
        selected.append(j)
        scores.append(float(score[j]))
        remaining[j] = False
        for c in np.flatnonzero(remaining):
            redundancy[c] += mutual_information(D[:, c], D[:, j])
    names = names if names is not None else [str(j) for j in range(n_cols)]
    return Selection(selected, scores, [names[j] for j in selected])
