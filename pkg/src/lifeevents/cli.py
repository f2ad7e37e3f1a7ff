"""Command-line pipeline: synth, ingest, fit-hmm, embed, features, train, evaluate, did, report.

Stages talk to each other only through files under ``--out`` (or the config
paths). Exit status: 0 success, 2 configuration or input error, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import datetime as dt
import hashlib
import json
import logging
import sys
import time
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np
import pandas as pd

from . import __version__, causal, embed, features, hmm, ingest
from .classify import TrainedModel, downsample_majority, train
from .config import ConfigError, RunConfig, stage_seed
from .evaluate import MetricsReport, TaskData, make_labels, render_table, run_task
from .synth import generate

log = logging.getLogger("lifeevents")

STAGES = ("synth", "ingest", "fit-hmm", "embed", "features", "train", "evaluate", "did", "report")


class InputError(Exception):
    """Missing or malformed stage input; maps to exit status 2."""


class Layout:
    def __init__(self, cfg: RunConfig, out: str | None):
        if out is None:
            self.data, self.artifacts, self.reports = (Path(p) for p in (cfg.paths.data, cfg.paths.artifacts,
                                                                         cfg.paths.reports))
        else:
            root = Path(out)
            self.data, self.artifacts, self.reports = root / "data", root / "artifacts", root / "reports"

    def __getattr__(self, name):
        table = {
            "signals": ("data", "signals.csv"), "surveys": ("data", "surveys.csv"),
            "summary": ("data", "summary.csv"), "truth": ("data", "truth.jsonl"),
            "cohort": ("artifacts", "cohort.npz"), "compliance": ("artifacts", "compliance.json"),
            "model": ("artifacts", "hmm_model.json"), "embeddings": ("artifacts", "embeddings.csv"),
            "features": ("artifacts", "features.csv"), "classifier": ("artifacts", "classifier.json"),
            "effects_csv": ("reports", "effects.csv"), "effects_json": ("reports", "effects.json"),
        }
        if name not in table:
            raise AttributeError(name)
        where, fname = table[name]
        return getattr(self, where) / fname

    def manifest(self, stage):
        return self.artifacts / "manifests" / f"{stage}.json"


def _need(*paths: Path):
    for p in paths:
        if not p.exists():
            raise InputError(f"missing input file: {p}")


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _meta(cfg: RunConfig) -> dict:
    return {"config_hash": cfg.config_hash(), "version": __version__}


def _write_manifest(lay: Layout, cfg: RunConfig, stage: str, outputs: list[Path]):
    path = lay.manifest(stage)
    path.parent.mkdir(parents=True, exist_ok=True)
    body = {"stage": stage, **_meta(cfg), "outputs": {p.name: _sha256(p) for p in outputs}}
    path.write_text(json.dumps(body, indent=2, sort_keys=True) + "\n")


def _write_json(path: Path, obj):
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


# ----------------------------------------------------------------------
# processed cohort container
# ----------------------------------------------------------------------

def _save_cohort(path: Path, cohort: ingest.Cohort, cfg: RunConfig):
    recs = cohort.records
    np.savez(
        path,
        participants=np.array([r.participant_id for r in recs]),
        dates=np.array([r.date.isoformat() for r in recs]),
        matrix=np.stack([r.matrix for r in recs]).astype(np.float32),
        summary=np.array([[np.nan if r.summary.get(k) is None else r.summary[k] for k in ingest.SUMMARY_KEYS]
                          for r in recs], dtype=float).reshape(len(recs), len(ingest.SUMMARY_KEYS)),
        norm_mean=np.array([cohort.norm_stats[c][0] for c in ingest.CHANNELS]),
        norm_std=np.array([cohort.norm_stats[c][1] for c in ingest.CHANNELS]),
        grid_seconds=np.array(cohort.grid_seconds),
        surveys=np.array([json.dumps(None if r.survey is None else r.survey.to_dict(), sort_keys=True)
                          for r in recs]),
        config_hash=np.array(cfg.config_hash()),
    )


def _load_cohort(path: Path) -> tuple[ingest.Cohort, np.ndarray]:
    """Records carrying the raw-scale grid plus the z-scored grids, ``(n, T, 2)``."""
    _need(path)
    with np.load(path) as z:
        pids, dates, mats = z["participants"], z["dates"], z["matrix"].astype(float)
        summ, surveys = z["summary"], z["surveys"]
        mean, std, grid = z["norm_mean"], z["norm_std"], int(z["grid_seconds"])
    empty = np.empty(0)
    recs = []
    for i in range(len(pids)):
        sv = json.loads(str(surveys[i]))
        recs.append(ingest.DayRecord(
            str(pids[i]), dt.date.fromisoformat(str(dates[i])), empty, empty, empty,
            summary={k: (None if np.isnan(v) else float(v)) for k, v in zip(ingest.SUMMARY_KEYS, summ[i])},
            survey=None if sv is None else ingest.SurveyEntry(**sv), matrix=mats[i]))
    stats = {c: (float(m), float(s)) for c, m, s in zip(ingest.CHANNELS, mean, std)}
    cohort = ingest.Cohort(recs, norm_stats=stats, grid_seconds=grid)
    return cohort, (mats - mean) / std


def _keys(cohort):
    return [f"{r.participant_id}|{r.date.isoformat()}" for r in cohort.records]


# ----------------------------------------------------------------------
# stages
# ----------------------------------------------------------------------

def stage_synth(cfg, lay, threads):
    lay.data.mkdir(parents=True, exist_ok=True)
    cohort, truth, panel = generate(cfg.synth_config())
    ingest.write_signals_csv(cohort.records, lay.signals)
    ingest.write_surveys_csv(panel, lay.surveys)
    ingest.write_summary_csv(cohort.records, lay.summary)
    truth.write_jsonl(lay.truth)
    _write_manifest(lay, cfg, "synth", [lay.signals, lay.surveys, lay.summary, lay.truth])
    log.info("synth: %d days, %d surveys", len(cohort.records), len(panel))


def stage_ingest(cfg, lay, threads):
    _need(lay.signals)
    s = cfg.ingest
    cohort = ingest.parse_cohort(lay.signals, lay.surveys if lay.surveys.exists() else None,
                                 lay.summary if lay.summary.exists() else None)
    cohort = ingest.resample_cohort(cohort, s.grid_seconds, s.max_gap_seconds)
    cohort, report = ingest.filter_compliance(cohort, s.min_valid_hours, s.min_days, s.min_atypical)
    if not cohort.records:
        raise InputError("no participant passed the compliance filter")
    cohort = replace(cohort, norm_stats=ingest.norm_stats_for(cohort))
    lay.artifacts.mkdir(parents=True, exist_ok=True)
    _save_cohort(lay.cohort, cohort, cfg)
    _write_json(lay.compliance, {**asdict(report), "norm_stats": cohort.norm_stats,
                                 "unmatched_surveys": len(cohort.unmatched_surveys), "meta": _meta(cfg)})
    _write_manifest(lay, cfg, "ingest", [lay.cohort, lay.compliance])
    log.info("ingest: kept %d days of %d participants", report.kept_days, report.kept_participants)


def stage_fit_hmm(cfg, lay, threads):
    cohort, z = _load_cohort(lay.cohort)
    model = hmm.fit(list(z), cfg.hmm_config(), keys=_keys(cohort))
    obj = model.to_dict()
    obj["meta"] = _meta(cfg)
    lay.model.write_text(json.dumps(obj, sort_keys=True))
    _write_manifest(lay, cfg, "fit-hmm", [lay.model])
    log.info("fit-hmm: %d states, log p = %.1f", model.K, model.log_prob)


def stage_embed(cfg, lay, threads):
    _need(lay.model)
    cohort, z = _load_cohort(lay.cohort)
    model = hmm.HmmModel.load(lay.model)
    # every day is decoded with the shared transition matrix so that fitted and
    # unfitted days are treated alike
    pi = np.full((len(z), model.K), np.nan)
    for i, seq in enumerate(z):
        path = hmm.decode(model, seq)
        P, visited = embed.transition_counts(path, model.K)
        if visited.any():
            pi[i] = embed.stationary_distribution(P, visited)
    pids = [r.participant_id for r in cohort.records]
    dates = [r.date for r in cohort.records]
    # next/centroid slots use every day; evaluation recomputes centroids per training fold
    X, _ = embed.embedding_features(pids, dates, pi, np.ones(len(pids), dtype=bool))
    K = model.K
    embed.write_embeddings_csv(lay.embeddings, pids, dates, pi, X[:, K:2 * K], X[:, 2 * K:])
    _write_manifest(lay, cfg, "embed", [lay.embeddings])


def stage_features(cfg, lay, threads):
    cohort, _ = _load_cohort(lay.cohort)
    fm = features.build_feature_matrix(cohort)
    fm.to_csv(lay.features)
    _write_manifest(lay, cfg, "features", [lay.features])


def _task_data(cfg, lay, families, target):
    cohort, _ = _load_cohort(lay.cohort)
    pids = [r.participant_id for r in cohort.records]
    dates = [r.date for r in cohort.records]
    fm = pi = None
    if "aggregated" in families:
        _need(lay.features)
        fm = features.FeatureMatrix.from_csv(lay.features)
    if "embedding" in families:
        _need(lay.embeddings)
        ep, ed, pi = embed.read_embeddings_csv(lay.embeddings)
        if list(ep) != pids or list(ed) != dates:
            raise InputError(f"{lay.embeddings} rows do not match {lay.cohort}")
    if fm is not None and (list(fm.participants) != pids or fm.dates != dates):
        raise InputError(f"{lay.features} rows do not match {lay.cohort}")
    return TaskData(pids, dates, make_labels(cohort, target), features=fm, pi_day=pi)


def stage_evaluate(cfg, lay, threads):
    lay.reports.mkdir(parents=True, exist_ok=True)
    tasks = cfg.eval_tasks()
    outputs = []
    cache = {}
    for t in tasks:
        fam = t.task.feature_family
        key = (t.task.target, fam)
        if key not in cache:
            cache[key] = _task_data(cfg, lay, {fam}, t.task.target)
        rep = run_task(cache[key], t.task, t.classifier, threads=threads)
        rep.meta = {**_meta(cfg), "name": t.name}
        path = lay.reports / f"metrics_{t.task.split_mode}_{t.name}.json"
        rep.to_json(path)
        outputs.append(path)
        log.info("evaluate %s/%s: AUC %.3f F1 %.3f", t.task.split_mode, t.name, rep.mean["roc_auc"], rep.mean["f1"])
    _write_manifest(lay, cfg, "evaluate", outputs)


def stage_train(cfg, lay, threads):
    name = cfg.train["task"]
    t = next(t for t in cfg.eval_tasks(split_mode="random") if t.name == name)
    data = _task_data(cfg, lay, {t.task.feature_family}, t.task.target)
    rows = np.flatnonzero(~np.isnan(data.labels))
    if t.task.feature_family == "aggregated":
        vals, means = data.features.imputed(rows)
        X = vals
    else:
        mask = np.zeros(len(data.labels), dtype=bool)
        mask[rows] = True
        X, _ = embed.embedding_features(data.participants, data.dates, data.pi_day, mask)
    Xb, yb = downsample_majority(X[rows], data.labels[rows], stage_seed(cfg.seed, "train"))
    extra = {}
    if t.task.feature_family == "aggregated":
        sel = features.mrmr_select(Xb, yb, min(t.task.n_select, Xb.shape[1]), names=data.features.columns)
        Xb = Xb[:, sel.indices]
        extra = {"selected": sel.report(), "impute_means": means.tolist()}
    model = train(t.classifier, Xb, yb)
    obj = {**model.to_dict(), "task": asdict(t.task), "meta": _meta(cfg), **extra}
    lay.classifier.write_text(json.dumps(obj, sort_keys=True))
    TrainedModel.from_dict(obj)  # round-trip check
    _write_manifest(lay, cfg, "train", [lay.classifier])


def stage_did(cfg, lay, threads):
    _need(lay.surveys)
    panel = causal.panel_from_surveys(ingest.read_surveys(lay.surveys))
    events, excluded = causal.exclude_sequential(causal.events_from_panel(panel))
    offsets = tuple(int(o) for o in cfg.did.get("offsets", [0, 1]))
    effects = causal.effects_by_category(panel, events, offsets=offsets,
                                         n_boot=int(cfg.did.get("n_boot", causal.N_BOOT)),
                                         seed=stage_seed(cfg.seed, "did"))
    coverage = {c: causal.align_event_windows(panel, events, c, offsets)[1] for c in ingest.CONSTRUCTS}
    lay.reports.mkdir(parents=True, exist_ok=True)
    causal.write_effects_csv(effects, lay.effects_csv)
    causal.write_effects_json(effects, lay.effects_json, {
        "category_mix": causal.category_mix(events), "sequential_excluded": excluded,
        "coverage": coverage, "meta": _meta(cfg)})
    _write_manifest(lay, cfg, "did", [lay.effects_csv, lay.effects_json])


def stage_report(cfg, lay, threads):
    want = cfg.config_hash()
    manifests = sorted((lay.artifacts / "manifests").glob("*.json"))
    if not manifests:
        raise InputError(f"no stage manifests under {lay.artifacts / 'manifests'}")
    for m in manifests:
        got = json.loads(m.read_text()).get("config_hash")
        if got != want:
            raise ConfigError(f"{m} was produced with config hash {got[:12]}..., current config is {want[:12]}...")
    lay.reports.mkdir(parents=True, exist_ok=True)
    written = []
    titles = {"random": f"Atypical-event detection, random {cfg.k_folds}-fold cross-validation",
              "by_user": f"Atypical-event detection, user held-out {cfg.k_folds}-fold cross-validation"}
    for mode in cfg.split_modes:
        reps = {}
        for t in cfg.eval_tasks(split_mode=mode):
            p = lay.reports / f"metrics_{mode}_{t.name}.json"
            if not p.exists():
                continue
            rep = MetricsReport.from_json(p)
            if rep.meta.get("config_hash") != want:
                raise ConfigError(f"{p} does not match the current config hash")
            reps[t.name.capitalize()] = rep
        if reps:
            out = lay.reports / f"table_{mode}.txt"
            out.write_text(render_table(reps, titles.get(mode, mode)))
            written.append(out)
            sys.stdout.write(out.read_text() + "\n")
    if lay.effects_csv.exists():
        eff = pd.read_csv(lay.effects_csv)
        for scope, cats in (("overall", ["all"]), ("by_category", list(ingest.CATEGORIES))):
            sub = eff[eff["category"].isin(cats)]
            out = lay.reports / f"effects_{scope}.json"
            _write_json(out, {"series": causal.effects_series(sub), "meta": _meta(cfg)})
            written.append(out)
    if not written:
        raise InputError("nothing to report: run evaluate or did first")
    _write_manifest(lay, cfg, "report", written)


HANDLERS = {
    "synth": stage_synth, "ingest": stage_ingest, "fit-hmm": stage_fit_hmm, "embed": stage_embed,
    "features": stage_features, "train": stage_train, "evaluate": stage_evaluate, "did": stage_did,
    "report": stage_report,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lifeevents", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"lifeevents {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name in STAGES + ("all",):
        sp = sub.add_parser(name, help="run every stage in order" if name == "all" else f"run the {name} stage")
        sp.add_argument("--config", help="YAML run configuration (built-in defaults if omitted)")
        sp.add_argument("--seed", type=int, help="override the global seed")
        sp.add_argument("--threads", type=int, default=1, help="worker threads (results do not depend on it)")
        sp.add_argument("--out", help="root directory for data/, artifacts/ and reports/")
        sp.add_argument("-v", "--verbose", action="store_true")
    return p


def _configure(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig.from_dict({"seed": 0})
    if args.seed is not None:
        cfg.seed = args.seed
    if args.threads < 1:
        raise ConfigError("--threads must be >= 1")
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s", stream=sys.stderr)
    try:
        cfg = _configure(args)
        lay = Layout(cfg, args.out)
        if args.threads > 1:
            import numba
            numba.set_num_threads(min(args.threads, numba.config.NUMBA_NUM_THREADS))
        stages = list(STAGES) if args.command == "all" else [args.command]
        for stage in stages:
            t0 = time.perf_counter()
            HANDLERS[stage](cfg, lay, args.threads)
            log.info("%s finished in %.1f s", stage, time.perf_counter() - t0)
    except (ConfigError, InputError, ingest.ValidationError, FileNotFoundError) as exc:
        print(f"lifeevents: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001
        print(f"lifeevents: runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
