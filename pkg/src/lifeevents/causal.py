"""Difference-in-differences effects of atypical events on daily self-reports."""

from __future__ import annotations

import datetime as dt
import json
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np
import pandas as pd

from .ingest import CATEGORIES, CONSTRUCTS, Cohort, SurveyEntry

PANEL_COLUMNS = ["participant_id", "date", *CONSTRUCTS, "atypical", "category"]
EFFECT_COLUMNS = ["construct", "category", "offset", "ate", "p_value", "n_treated", "n_null"]
DEFAULT_OFFSETS = (0, 1)
N_BOOT = 10_000
ONE_DAY = dt.timedelta(days=1)


@dataclass
class EventWindow:
    participant: str
    date: dt.date
    category: str | None
    values: dict = field(default_factory=dict)   # offset -> construct value (offset -1 always present)

    def change(self, offset: int) -> float | None:
        v = self.values.get(offset)
        return None if v is None else v - self.values[-1]


@dataclass
class EffectEstimate:
    construct: str
    category: str
    offset: int
    ate: float
    p_value: float
    n_treated: int
    n_null: int


# ----------------------------------------------------------------------
# panel and events
# ----------------------------------------------------------------------

def panel_from_surveys(surveys: dict[tuple[str, dt.date], SurveyEntry]) -> pd.DataFrame:
    rows = [{"participant_id": str(p), "date": d, **{c: getattr(s, c) for c in CONSTRUCTS},
             "atypical": bool(s.atypical), "category": s.category}
            for (p, d), s in surveys.items()]
    df = pd.DataFrame(rows, columns=PANEL_COLUMNS)
    for c in CONSTRUCTS:
        df[c] = pd.to_numeric(df[c], errors="coerce").astype(float)
    return df.sort_values(["participant_id", "date"], kind="stable").reset_index(drop=True)


def panel_from_cohort(cohort: Cohort) -> pd.DataFrame:
    return panel_from_surveys({r.key: r.survey for r in cohort.records if r.survey is not None})


def events_from_panel(panel: pd.DataFrame) -> pd.DataFrame:
    ev = panel.loc[panel["atypical"].astype(bool), ["participant_id", "date", "category"]]
    return ev.sort_values(["participant_id", "date"], kind="stable").reset_index(drop=True)


def exclude_sequential(events: pd.DataFrame) -> tuple[pd.DataFrame, float]:
    """Keep only the first event of each run of consecutive-day events per participant.

    Returns the kept events and the fraction excluded.
    """
    if len(events) == 0:
        return events.copy(), 0.0
    ev = events.sort_values(["participant_id", "date"], kind="stable").reset_index(drop=True)
    prev_p = ev["participant_id"].shift()
    prev_d = ev["date"].shift()
    follows = (ev["participant_id"] == prev_p) & ev["date"].combine(
        prev_d, lambda d, p: isinstance(p, dt.date) and d - p == ONE_DAY)
    kept = ev.loc[~follows.astype(bool)].reset_index(drop=True)
    return kept, float(follows.sum()) / len(ev)


def _lookup(panel: pd.DataFrame, construct: str) -> dict:
    vals = panel[construct].to_numpy(dtype=float)
    return {(p, d): v for p, d, v in zip(panel["participant_id"], panel["date"], vals) if not np.isnan(v)}


def _window(lookup, participant, date, category, offsets):
    prior = lookup.get((participant, date - ONE_DAY))
    if prior is None:
        return None
    values = {-1: prior}
    for o in offsets:
        v = lookup.get((participant, date + dt.timedelta(days=o)))
        if v is not None:
            values[o] = v
    return EventWindow(participant, date, category, values)


def align_event_windows(panel: pd.DataFrame, events: pd.DataFrame, construct: str,
                        offsets=DEFAULT_OFFSETS) -> tuple[list[EventWindow], float]:
    """Windows around each event that has a prior-day value; also the fraction of events kept."""
    lookup = _lookup(panel, construct)
    out = []
    for p, d, c in zip(events["participant_id"], events["date"], events["category"]):
        w = _window(lookup, p, d, c, offsets)
        if w is not None:
            out.append(w)
    coverage = len(out) / len(events) if len(events) else 0.0
    return out, coverage


def build_null_cohort(panel: pd.DataFrame, events: pd.DataFrame, construct: str,
                      offsets=DEFAULT_OFFSETS) -> list[EventWindow]:
    """For every distinct event date, windows of all participants with no event that day.

    A participant counts as event-free on a date when the panel has no atypical
    report for them on that date. Null windows need the prior-day value too.
    """
    lookup = _lookup(panel, construct)
    busy = set(zip(panel.loc[panel["atypical"].astype(bool), "participant_id"],
                   panel.loc[panel["atypical"].astype(bool), "date"]))
    busy |= set(zip(events["participant_id"], events["date"]))
    people = sorted(panel["participant_id"].unique())
    out = []
    for d in sorted(set(events["date"])):
        for p in people:
            if (p, d) in busy:
                continue
            w = _window(lookup, p, d, None, offsets)
            if w is not None:
                out.append(w)
    if not out:
        raise ValueError("no event-free participant-days available for the null cohort")
    return out


# ----------------------------------------------------------------------
# estimation
# ----------------------------------------------------------------------

def _changes(windows, offset):
    return np.array([w.change(offset) for w in windows if w.change(offset) is not None], dtype=float)


def _boot_means(x: np.ndarray, B: int, rng: np.random.Generator, chunk: int = 2_000_000) -> np.ndarray:
    out = np.empty(B)
    per = max(1, chunk // max(x.size, 1))
    for s in range(0, B, per):
        b = min(per, B - s)
        out[s:s + b] = x[rng.integers(0, x.size, size=(b, x.size))].mean(axis=1)
    return out


def bootstrap_p_value(treated_changes, null_changes, n_boot: int = N_BOOT, seed: int = 0) -> float:
    """Two-sided p-value for a zero difference of mean changes.

    Groups are resampled separately; the centred bootstrap distribution of the
    difference is compared with the observed one.
    """
    t = np.asarray(treated_changes, dtype=float)
    n = np.asarray(null_changes, dtype=float)
    obs = t.mean() - n.mean()
    rng = np.random.default_rng(seed)
    dist = _boot_means(t, n_boot, rng) - _boot_means(n, n_boot, rng)
    extreme = np.abs(dist - obs) >= abs(obs) - 1e-12
    return float((1 + extreme.sum()) / (n_boot + 1))


def ate(treated: list[EventWindow], null: list[EventWindow], offset: int, construct: str = "",
        category: str = "all", n_boot: int = N_BOOT, seed: int = 0) -> EffectEstimate:
    """Mean change from the prior day among treated minus the same among null windows."""
    tc = _changes(treated, offset)
    nc = _changes(null, offset)
    if tc.size == 0 or nc.size == 0:
        raise ValueError(f"no {'treated' if tc.size == 0 else 'null'} windows with a value at offset {offset}")
    value = float(tc.mean() - nc.mean())
    p = bootstrap_p_value(tc, nc, n_boot, seed) if n_boot > 0 else float("nan")
    return EffectEstimate(construct, category, offset, value, p, int(tc.size), int(nc.size))


def category_mix(events: pd.DataFrame) -> dict[str, float]:
    cats = events["category"].dropna()
    total = len(cats)
    return {c: (float((cats == c).sum()) / total if total else 0.0) for c in CATEGORIES}


def effects_by_category(panel: pd.DataFrame, events: pd.DataFrame, constructs=CONSTRUCTS,
                        offsets=DEFAULT_OFFSETS, n_boot: int = N_BOOT, seed: int = 0) -> pd.DataFrame:
    """ATE for every construct x category (plus "all") x offset.

    Categories with no usable events are omitted with a warning.
    """
    rows = []
    groups = [("all", events)] + [(c, events[events["category"] == c]) for c in CATEGORIES]
    for ci, construct in enumerate(constructs):
        for gi, (cat, ev) in enumerate(groups):
            if len(ev) == 0:
                warnings.warn(f"no {cat} events; skipped")
                continue
            treated, _ = align_event_windows(panel, ev, construct, offsets)
            try:
                null = build_null_cohort(panel, ev, construct, offsets)
            except ValueError:
                warnings.warn(f"no null windows for {cat}/{construct}; skipped")
                continue
            for oi, off in enumerate(offsets):
                try:
                    est = ate(treated, null, off, construct, cat, n_boot,
                              seed=int(np.random.SeedSequence([seed, ci, gi, oi]).generate_state(1)[0]))
                except ValueError:
                    warnings.warn(f"no {cat} windows for {construct} at offset {off}; skipped")
                    continue
                rows.append(asdict(est))
    return pd.DataFrame(rows, columns=EFFECT_COLUMNS)


def write_effects_csv(effects: pd.DataFrame, path):
    effects[EFFECT_COLUMNS].to_csv(path, index=False, float_format="%.10g")


def effects_series(effects: pd.DataFrame) -> dict:
    """Plot-ready nested dict: construct -> category -> offsets/ate/p_value lists (offset -1 is 0)."""
    out: dict = {}
    for (construct, cat), g in effects.groupby(["construct", "category"], sort=True):
        g = g.sort_values("offset")
        out.setdefault(construct, {})[cat] = {
            "offset": [-1] + g["offset"].astype(int).tolist(),
            "ate": [0.0] + g["ate"].astype(float).tolist(),
            "p_value": [None] + g["p_value"].astype(float).tolist(),
            "n_treated": g["n_treated"].astype(int).tolist(),
        }
    return out


def write_effects_json(effects: pd.DataFrame, path, extra: dict | None = None):
    with open(path, "w") as fh:
        json.dump({"series": effects_series(effects), **(extra or {})}, fh, indent=2, sort_keys=True)
        fh.write("\n")
