import datetime as dt
from pathlib import Path

import numpy as np
import pytest

from lifeevents.ingest import DayRecord, SurveyEntry

D0 = dt.date(2024, 3, 1)


def make_day(pid="A", day=0, hr=None, steps=None, grid=60, survey=None, summary=None):
    """Day with one sample per ``grid`` seconds; ``hr``/``steps`` default to smooth synthetic values."""
    T = 86400 // grid
    ts = np.arange(T, dtype=float) * grid
    hr = 70 + 5 * np.sin(np.arange(T) / 50.0) if hr is None else np.asarray(hr, dtype=float)
    steps = (np.arange(T) % 7).astype(float) if steps is None else np.asarray(steps, dtype=float)
    return DayRecord(pid, D0 + dt.timedelta(days=day), ts[:len(hr)], hr, steps[:len(hr)],
                     summary=summary or {}, survey=survey)


def survey(atypical=False, category=None, stress=2.0, anxiety=2.0, pa=15.0, na=8.0):
    return SurveyEntry(stress, anxiety, pa, na, atypical=atypical, category=category)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ROOT = Path(__file__).resolve().parents[1]
SMALL_CONFIG = ROOT / "configs" / "small.yaml"


@pytest.fixture(scope="session")
def small_runs(tmp_path_factory):
    """Two independent end-to-end runs of the small config (shared by CLI and acceptance tests)."""
    from lifeevents.cli import main

    outs = []
    for name in ("run_a", "run_b"):
        out = tmp_path_factory.mktemp(name)
        code = main(["all", "--config", str(SMALL_CONFIG), "--out", str(out)])
        outs.append((code, out))
    return outs
