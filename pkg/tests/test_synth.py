import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lifeevents import embed, synth
from lifeevents.ingest import CONSTRUCT_RANGES, CONSTRUCTS
from lifeevents.synth import GroundTruth, SynthConfig


def _occupancy(truth, K):
    out = []
    for z in truth.states:
        P, vis = embed.transition_counts(z.astype(np.int64), K)
        out.append(embed.stationary_distribution(P, vis))
    return np.array(out)


def test_same_seed_bit_identical():
    cfg = SynthConfig(n_participants=4, n_days=5, grid_seconds=300, seed=3)
    c1, t1, p1 = synth.generate(cfg)
    c2, t2, p2 = synth.generate(cfg)
    assert c1.to_jsonl() == c2.to_jsonl()
    assert p1 == p2
    assert all(np.array_equal(a, b) for a, b in zip(t1.states, t2.states))
    c3, _, _ = synth.generate(SynthConfig(n_participants=4, n_days=5, grid_seconds=300, seed=4))
    assert c3.to_jsonl() != c1.to_jsonl()


def test_event_rate_and_alignment():
    cfg = SynthConfig(event_rate=0.12, grid_seconds=3600, seed=5)
    cohort, truth, _ = synth.generate(cfg)
    assert len(cohort.records) == 150 * 60 == len(truth.states)
    assert abs(truth.atypical.mean() - 0.12) <= 0.02
    assert [r.key for r in cohort.records] == sorted(zip(truth.participants, truth.dates))


def test_constructs_in_range_and_default_effect():
    cfg = SynthConfig(n_participants=30, n_days=30, grid_seconds=3600, seed=1)
    _, _, panel = synth.generate(cfg)
    for s in panel.values():
        for c in CONSTRUCTS:
            lo, hi = CONSTRUCT_RANGES[c]
            assert lo <= getattr(s, c) <= hi
    assert cfg.effect_spec["minor_negative"]["positive_affect"][1] == -0.42
    assert SynthConfig().event_rate == 0.117 and SynthConfig().n_participants == 150


def test_dwell_proportions_reproduced():
    cfg = SynthConfig(n_participants=20, n_days=20, seed=2)
    _, truth = synth.generate_cohort(cfg)
    occ = _occupancy(truth, cfg.n_true_states)
    # averaged over days the empirical stationary vectors match the configured profiles
    assert np.abs(occ.mean(axis=0) - truth.occupancy.mean(axis=0)).sum() < 0.05
    # without stickiness single 1440-step days are already close
    cfg0 = SynthConfig(n_participants=10, n_days=10, stickiness=0.0, seed=2)
    _, t0 = synth.generate_cohort(cfg0)
    per_day = np.abs(_occupancy(t0, 5) - t0.occupancy).sum(axis=1)
    assert np.median(per_day) < 0.05


def test_event_days_further_from_global_occupancy():
    cfg = SynthConfig(n_participants=30, n_days=30, grid_seconds=300, seed=4)
    _, truth = synth.generate_cohort(cfg)
    K = cfg.n_true_states
    occ = np.array([np.bincount(z, minlength=K) / z.size for z in truth.states]) + 1e-6
    occ /= occ.sum(axis=1, keepdims=True)
    g = occ.mean(axis=0)
    kl = np.sum(occ * np.log(occ / g), axis=1)
    assert kl[truth.atypical].mean() > kl[~truth.atypical].mean()


def test_zero_shift_null():
    cfg = SynthConfig(n_participants=60, n_days=30, grid_seconds=600, event_rate=0.3, seed=6,
                      occupancy_shift={c: 0.0 for c in synth.CATEGORIES})
    _, truth = synth.generate_cohort(cfg)
    K = cfg.n_true_states
    occ = np.array([np.bincount(z, minlength=K) / z.size for z in truth.states])
    ev, non = occ[truth.atypical], occ[~truth.atypical]
    se = np.sqrt(ev.var(axis=0) / len(ev) + non.var(axis=0) / len(non))
    assert np.all(np.abs(ev.mean(axis=0) - non.mean(axis=0)) < 4 * se)


def test_zero_effects_give_indistinguishable_panels():
    zero = {c: {k: {0: 0.0} for k in CONSTRUCTS} for c in synth.CATEGORIES}
    cfg = SynthConfig(n_participants=60, n_days=30, grid_seconds=3600, seed=8, event_rate=0.3, effect_spec=zero)
    _, truth, panel = synth.generate(cfg)
    assert truth.effects == {}
    ev = np.array([s.stress for s in panel.values() if s.atypical])
    non = np.array([s.stress for s in panel.values() if not s.atypical])
    assert abs(ev.mean() - non.mean()) < 4 * np.sqrt(ev.var() / ev.size + non.var() / non.size)


def test_truth_jsonl_round_trip(tmp_path):
    cfg = SynthConfig(n_participants=3, n_days=4, grid_seconds=600, seed=1, event_rate=0.5)
    _, truth, _ = synth.generate(cfg)
    truth.write_jsonl(tmp_path / "truth.jsonl")
    back = GroundTruth.read_jsonl(tmp_path / "truth.jsonl")
    assert back.participants == truth.participants and back.dates == truth.dates
    assert all(np.array_equal(a, b) for a, b in zip(back.states, truth.states))
    np.testing.assert_array_equal(back.atypical, truth.atypical)
    np.testing.assert_allclose(back.occupancy, truth.occupancy, atol=1e-9)
    assert back.effects.keys() == truth.effects.keys()


def test_config_round_trip_and_errors():
    cfg = SynthConfig(n_participants=2)
    assert SynthConfig.from_dict(cfg.to_dict()) == cfg
    bad = [{"event_rate": 0.0}, {"event_rate": 1.0},
           {"category_mix": {"positive": 0.5, "minor_negative": 0.4, "major_negative": 0.2}},
           {"base_occupancy": [0.5, 0.5]}, {"occupancy_shift": {"positive": 1.5}}, {"grid_seconds": 7},
           {"noise_std": 0.0}]
    for kw in bad:
        with pytest.raises(ValueError):
            SynthConfig(**kw)
    with pytest.raises(ValueError, match="unknown"):
        SynthConfig.from_dict({"n_people": 3})


@given(st.lists(st.floats(0.05, 1.0), min_size=2, max_size=6), st.floats(0.0, 0.99))
@settings(max_examples=50, deadline=None)
def test_sticky_transition_keeps_profile(w, rho):
    q = np.array(w) / np.sum(w)
    P = synth.sticky_transition(q, rho)
    np.testing.assert_allclose(P.sum(axis=1), 1.0)
    np.testing.assert_allclose(q @ P, q, atol=1e-12)
