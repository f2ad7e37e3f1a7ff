"""Synthetic cohorts with known switching-VAR dynamics, events and survey effects."""

from __future__ import annotations

import datetime as dt
import json
from dataclasses import asdict, dataclass, field, fields

import numpy as np
from numba import njit

from .ingest import (CATEGORIES, CONSTRUCT_RANGES, CONSTRUCTS, SECONDS_PER_DAY, Cohort, DayRecord,
                     SurveyEntry, _sorted_records)

# mean (z units), AR coefficient (same on both channels), noise std
STATE_PRESETS = [
    {"name": "rest", "mean": [-1.0, -0.9], "ar": 0.85, "noise": 0.25},
    {"name": "light", "mean": [0.1, 0.0], "ar": 0.7, "noise": 0.35},
    {"name": "active", "mean": [1.2, 1.4], "ar": 0.6, "noise": 0.4},
    {"name": "sedentary", "mean": [-0.4, -0.6], "ar": 0.9, "noise": 0.2},
    {"name": "agitated", "mean": [0.3, 0.1], "ar": -0.5, "noise": 0.45},
]
HR_LOC, HR_SCALE = 72.0, 12.0
STEPS_LOC, STEPS_SCALE = 40.0, 12.0

DEFAULT_CATEGORY_MIX = {"positive": 210 / 875, "minor_negative": 626 / 875, "major_negative": 39 / 875}
DEFAULT_SHIFT = {"positive": 0.3, "minor_negative": 0.3, "major_negative": 0.45}
DEFAULT_SHIFT_TARGET = {
    "positive": {"active": 0.5, "agitated": 0.5},
    "minor_negative": {"agitated": 0.8, "rest": 0.2},
    "major_negative": {"agitated": 1.0},
}
# construct -> {offset: additive effect}; offsets are days relative to the event
DEFAULT_EFFECTS = {
    "positive": {"positive_affect": {0: 1.5, 1: 0.5}},
    "minor_negative": {"positive_affect": {0: -0.15, 1: -0.42}, "negative_affect": {0: 2.0, 1: 1.0},
                       "stress": {0: 0.6, 1: 0.3}, "anxiety": {0: 0.5, 1: 0.25}},
    "major_negative": {"positive_affect": {0: -2.0, 1: -1.5}, "negative_affect": {0: 3.0, 1: 1.5},
                       "stress": {0: 1.0, 1: 0.5}, "anxiety": {0: 0.8, 1: 0.4}},
}
BASELINE = {"stress": (2.4, 0.6), "anxiety": (2.2, 0.6), "positive_affect": (15.0, 3.0),
            "negative_affect": (9.0, 2.5)}
DEFAULT_CONSTRUCT_NOISE = {"stress": 0.5, "anxiety": 0.5, "positive_affect": 2.0, "negative_affect": 2.0}


@dataclass
class SynthConfig:
    """Cohort shape and generative settings.

    ``base_occupancy`` is the population dwell profile; participants draw their
    own from a Dirichlet with concentration ``person_concentration`` (lower
    means more heterogeneous), and days scatter around that with
    ``day_concentration``. On event days the profile moves a fraction
    ``occupancy_shift[category]`` toward ``shift_target[category]``.
    ``stickiness`` is the extra self-transition mass. ``noise_std`` scales
    emission noise.
    """

    n_participants: int = 150
    n_days: int = 60
    grid_seconds: int = 60
    n_true_states: int = 5
    ar_order: int = 1
    event_rate: float = 0.117
    category_mix: dict = field(default_factory=lambda: dict(DEFAULT_CATEGORY_MIX))
    occupancy_shift: dict = field(default_factory=lambda: dict(DEFAULT_SHIFT))
    shift_target: dict = field(default_factory=lambda: {k: dict(v) for k, v in DEFAULT_SHIFT_TARGET.items()})
    base_occupancy: list = field(default_factory=lambda: [0.3, 0.3, 0.15, 0.2, 0.05])
    person_concentration: float = 15.0
    day_concentration: float = 60.0
    stickiness: float = 0.9
    effect_spec: dict = field(default_factory=lambda: {c: {k: dict(v) for k, v in e.items()}
                                                       for c, e in DEFAULT_EFFECTS.items()})
    construct_noise: dict = field(default_factory=lambda: dict(DEFAULT_CONSTRUCT_NOISE))
    noise_std: float = 1.0
    survey_rate: float = 0.9
    gap_rate: float = 1.0
    nonwear_rate: float = 0.02
    start_date: str = "2024-01-01"
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.event_rate < 1:
            raise ValueError("event_rate must lie in (0, 1)")
        if set(self.category_mix) != set(CATEGORIES) or any(v < 0 for v in self.category_mix.values()):
            raise ValueError(f"category_mix needs non-negative weights for {CATEGORIES}")
        if abs(sum(self.category_mix.values()) - 1) > 1e-9:
            raise ValueError("category_mix must sum to 1")
        if self.n_true_states < 2 or self.n_true_states > len(STATE_PRESETS):
            raise ValueError(f"n_true_states must be in [2, {len(STATE_PRESETS)}]")
        if self.ar_order != 1:
            raise ValueError("the generator supports ar_order = 1 only")
        if self.n_participants < 1 or self.n_days < 1:
            raise ValueError("need at least one participant and one day")
        if SECONDS_PER_DAY % self.grid_seconds:
            raise ValueError("grid_seconds must divide 86400")
        q = np.asarray(self.base_occupancy, dtype=float)
        if q.shape != (self.n_true_states,) or np.any(q <= 0) or abs(q.sum() - 1) > 1e-9:
            raise ValueError("base_occupancy must be positive, sum to 1 and have n_true_states entries")
        for c, s in self.occupancy_shift.items():
            if c not in CATEGORIES or not 0 <= s <= 1:
                raise ValueError("occupancy_shift values must lie in [0, 1] per category")
        if not 0 <= self.stickiness < 1:
            raise ValueError("stickiness must lie in [0, 1)")
        for name in ("person_concentration", "day_concentration", "noise_std"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        for name in ("survey_rate", "gap_rate", "nonwear_rate"):
            if getattr(self, name) < 0 or (name != "gap_rate" and getattr(self, name) > 1):
                raise ValueError(f"{name} out of range")
        # yaml/json give string offsets
        self.effect_spec = {c: {k: {int(o): float(v) for o, v in e.items()} for k, e in spec.items()}
                            for c, spec in self.effect_spec.items()}

    @property
    def state_names(self) -> list[str]:
        return [s["name"] for s in STATE_PRESETS[:self.n_true_states]]

    def target_vector(self, category: str) -> np.ndarray:
        names = self.state_names
        v = np.zeros(self.n_true_states)
        for name, w in self.shift_target.get(category, {}).items():
            if name in names:
                v[names.index(name)] += w
        return v / v.sum() if v.sum() > 0 else np.asarray(self.base_occupancy, dtype=float)

    def emission_params(self):
        """(A, b, noise std) per state for ``x_t = A x_{t-1} + b + e``."""
        pre = STATE_PRESETS[:self.n_true_states]
        A = np.array([p["ar"] * np.eye(2) for p in pre])
        b = np.array([(1 - p["ar"]) * np.asarray(p["mean"]) for p in pre])
        s = np.array([p["noise"] * self.noise_std for p in pre])
        return A, b, s

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, obj):
        names = {f.name for f in fields(cls)}
        unknown = set(obj) - names
        if unknown:
            raise ValueError(f"unknown synth config keys {sorted(unknown)}")
        return cls(**obj)


@dataclass
class GroundTruth:
    participants: list
    dates: list
    states: list              # per day, int8 arrays on the grid
    atypical: np.ndarray
    categories: list
    occupancy: np.ndarray     # configured dwell profile per day
    baselines: dict = field(default_factory=dict)   # participant -> construct -> value
    effects: dict = field(default_factory=dict)     # (participant, date) -> construct -> injected value

    def write_jsonl(self, path):
        with open(path, "w") as fh:
            for i, (p, d) in enumerate(zip(self.participants, self.dates)):
                z = self.states[i]
                row = {"participant_id": p, "date": d.isoformat(), "atypical": bool(self.atypical[i]),
                       "category": self.categories[i], "occupancy": np.round(self.occupancy[i], 10).tolist(),
                       "states": "".join(map(str, z.tolist())) if z.size and z.max() < 10 else z.tolist()}
                eff = self.effects.get((p, d))
                if eff:
                    row["effects"] = eff
                fh.write(json.dumps(row, sort_keys=True, separators=(",", ":")) + "\n")

    @classmethod
    def read_jsonl(cls, path):
        ps, ds, zs, at, cats, occ, effs = [], [], [], [], [], [], {}
        with open(path) as fh:
            for line in fh:
                if not line.strip():
                    continue
                r = json.loads(line)
                p, d = r["participant_id"], dt.date.fromisoformat(r["date"])
                ps.append(p)
                ds.append(d)
                s = r["states"]
                zs.append(np.array([int(c) for c in s] if isinstance(s, str) else s, dtype=np.int8))
                at.append(r["atypical"])
                cats.append(r["category"])
                occ.append(r["occupancy"])
                if "effects" in r:
                    effs[(p, d)] = r["effects"]
        return cls(ps, ds, zs, np.array(at, dtype=bool), cats, np.array(occ), effects=effs)


def sticky_transition(q: np.ndarray, rho: float) -> np.ndarray:
    """Transition matrix whose stationary distribution is exactly ``q``."""
    q = np.asarray(q, dtype=float)
    return rho * np.eye(q.size) + (1 - rho) * np.outer(np.ones(q.size), q)


@njit(cache=True)
def _simulate(P, A, b, s, x0, u, e):
    T = u.shape[0]
    K = P.shape[0]
    z = np.empty(T, dtype=np.int8)
    x = np.empty((T, 2))
    cum = np.empty((K, K))
    for i in range(K):
        acc = 0.0
        for j in range(K):
            acc += P[i, j]
            cum[i, j] = acc
    # initial state from the stationary profile, held in row -1 of cum via P's rows
    k = 0
    prev = x0
    for t in range(T):
        if t == 0:
            k = int(u[0, 1])
        else:
            r = u[t, 0] * cum[k, K - 1]
            j = 0
            while j < K - 1 and r > cum[k, j]:
                j += 1
            k = j
        z[t] = k
        for c in range(2):
            x[t, c] = A[k, c, 0] * prev[0] + A[k, c, 1] * prev[1] + b[k, c] + s[k] * e[t, c]
        prev = x[t]
    return z, x


def _participant_seed(seed: int, index: int, stream: int = 0) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(index), int(stream)]))


def _gap_mask(rng, T, cfg: SynthConfig) -> np.ndarray:
    """True where the wristband recorded nothing."""
    miss = np.zeros(T, dtype=bool)
    if rng.random() < cfg.nonwear_rate:
        start = rng.integers(0, T // 4)
        miss[start:start + int(0.85 * T)] = True
    for _ in range(rng.poisson(cfg.gap_rate)):
        start = rng.integers(0, T)
        miss[start:start + rng.integers(1, max(2, T // 48))] = True
    return miss


def generate_cohort(config: SynthConfig) -> tuple[Cohort, GroundTruth]:
    """Sample signals, summaries and event labels; surveys come from :func:`generate_construct_panel`.

    Each participant uses its own derived random stream, so output does not
    depend on generation order.
    """
    cfg = config
    K = cfg.n_true_states
    T = SECONDS_PER_DAY // cfg.grid_seconds
    A, b, s = cfg.emission_params()
    cats = list(CATEGORIES)
    mix = np.array([cfg.category_mix[c] for c in cats])
    targets = {c: cfg.target_vector(c) for c in cats}
    q0 = np.asarray(cfg.base_occupancy, dtype=float)
    start = dt.date.fromisoformat(cfg.start_date)
    width = len(str(cfg.n_participants - 1))
    records, z_all, atyp, cat_all, occ, ps, ds = [], [], [], [], [], [], []
    ts = np.arange(T, dtype=float) * cfg.grid_seconds
    for i in range(cfg.n_participants):
        pid = f"P{i:0{width}d}"
        rng = _participant_seed(cfg.seed, i)
        q_person = rng.dirichlet(cfg.person_concentration * q0)
        hr_loc = HR_LOC + rng.normal(0, 4)
        x_prev = np.zeros(2)
        for d in range(cfg.n_days):
            date = start + dt.timedelta(days=d)
            event = rng.random() < cfg.event_rate
            cat = cats[rng.choice(len(cats), p=mix)] if event else None
            q_day = rng.dirichlet(cfg.day_concentration * q_person)
            if event:
                shift = cfg.occupancy_shift.get(cat, 0.0)
                q_day = (1 - shift) * q_day + shift * targets[cat]
            P = sticky_transition(q_day, cfg.stickiness)
            u = rng.random((T, 2))
            u[0, 1] = rng.choice(K, p=q_day)
            e = rng.standard_normal((T, 2))
            z, x = _simulate(P, A, b, s, x_prev, u, e)
            x_prev = x[-1].copy()
            miss = _gap_mask(rng, T, cfg)
            hr = np.clip(hr_loc + HR_SCALE * x[:, 0], 35.0, 220.0)
            steps = np.clip(STEPS_LOC + STEPS_SCALE * x[:, 1], 0.0, None)
            occ_time = np.bincount(z, minlength=K) / T
            summary = _summary(rng, occ_time, cfg)
            records.append(DayRecord(pid, date, ts[~miss].copy(), hr[~miss], steps[~miss], summary=summary))
            z_all.append(z)
            atyp.append(event)
            cat_all.append(cat)
            occ.append(q_day)
            ps.append(pid)
            ds.append(date)
    truth = GroundTruth(ps, ds, z_all, np.array(atyp, dtype=bool), cat_all, np.array(occ))
    return Cohort(records=_sorted_records(records)), truth


def _summary(rng, occ_time, cfg: SynthConfig) -> dict:
    """Daily wearable summaries loosely tied to the day's state occupancy."""
    names = cfg.state_names
    frac = dict(zip(names, occ_time))
    in_bed = float(np.clip(rng.normal(450, 45), 180, 720))
    asleep = float(np.clip(in_bed * rng.uniform(0.8, 0.97), 60, in_bed))
    start = float(np.clip(rng.normal(23 * 60, 50), 18 * 60, 27 * 60)) % 1440
    return {
        "minutes_fat_burn": round(1440 * frac.get("light", 0.0) * 0.2 + rng.normal(0, 10), 3),
        "minutes_cardio": round(max(0.0, 1440 * frac.get("active", 0.0) * 0.1 + rng.normal(0, 5)), 3),
        "minutes_out_of_range": round(1440 * (1 - frac.get("active", 0.0) * 0.1) * 0.5 + rng.normal(0, 20), 3),
        "minutes_in_bed": round(in_bed, 3),
        "minutes_asleep": round(asleep, 3),
        "sleep_efficiency": round(100 * asleep / in_bed, 3),
        "sleep_start": round(start, 3),
        "sleep_end": round((start + in_bed) % 1440, 3),
    }


def generate_construct_panel(truth: GroundTruth, config: SynthConfig) -> dict[tuple[str, dt.date], SurveyEntry]:
    """Daily surveys: per-person baseline plus event effects at their offsets plus noise, clipped.

    Surveys are answered with probability ``survey_rate``; event days carry the
    atypical flag and category whenever answered. Also fills
    ``truth.baselines`` and ``truth.effects``.
    """
    cfg = config
    people = sorted(set(truth.participants))
    rows = {}
    for p, d, a, c in zip(truth.participants, truth.dates, truth.atypical, truth.categories):
        rows.setdefault(p, []).append((d, a, c))
    panel = {}
    truth.baselines, truth.effects = {}, {}
    for p in people:
        idx = truth.participants.index(p)
        rng = _participant_seed(cfg.seed, idx, stream=1)
        base = {k: rng.normal(*BASELINE[k]) for k in CONSTRUCTS}
        truth.baselines[p] = base
        days = sorted(rows[p])
        by_date = {d: (a, c) for d, a, c in days}
        for d, a, c in days:
            eff = {k: 0.0 for k in CONSTRUCTS}
            for off in (-1, 0, 1, 2):
                src = by_date.get(d - dt.timedelta(days=off))
                if src is None or not src[0]:
                    continue
                for k, per_off in cfg.effect_spec.get(src[1], {}).items():
                    eff[k] += per_off.get(off, 0.0)
            if any(eff.values()):
                truth.effects[(p, d)] = {k: v for k, v in eff.items() if v}
            noise = {k: rng.normal(0, cfg.construct_noise.get(k, 0.5)) for k in CONSTRUCTS}
            answered = rng.random() < cfg.survey_rate
            if not answered:
                continue
            vals = {}
            for k in CONSTRUCTS:
                lo, hi = CONSTRUCT_RANGES[k]
                vals[k] = float(np.clip(base[k] + eff[k] + noise[k], lo, hi))
            panel[(p, d)] = SurveyEntry(**vals, atypical=bool(a), category=c if a else None)
    return panel


def attach_surveys(cohort: Cohort, surveys: dict) -> Cohort:
    for r in cohort.records:
        r.survey = surveys.get(r.key)
    return cohort


def generate(config: SynthConfig) -> tuple[Cohort, GroundTruth, dict]:
    """Cohort with surveys attached, ground truth and the survey panel."""
    cohort, truth = generate_cohort(config)
    panel = generate_construct_panel(truth, config)
    return attach_surveys(cohort, panel), truth, panel
