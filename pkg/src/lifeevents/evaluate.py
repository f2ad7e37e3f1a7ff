"""Cross-validation harness, detection metrics and task assembly."""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.stats import rankdata

from . import embed as emb
from .classify import ClassifierSpec, downsample_majority, predict_scores, train
from .features import DEFAULT_N_SELECT, FeatureMatrix, mrmr_select
from .ingest import Cohort

TARGETS = ("atypical", "good_day", "bad_day")
FAMILIES = ("aggregated", "embedding")
SPLIT_MODES = ("random", "by_user")
THRESHOLD = 0.5


@dataclass
class TaskSpec:
    target: str = "atypical"
    feature_family: str = "embedding"
    split_mode: str = "random"
    k_folds: int = 10
    seed: int = 0
    n_select: int = DEFAULT_N_SELECT["hospital"]

    def __post_init__(self):
        if self.target not in TARGETS:
            raise ValueError(f"target must be one of {TARGETS}")
        if self.feature_family not in FAMILIES:
            raise ValueError(f"feature_family must be one of {FAMILIES}")
        if self.split_mode not in SPLIT_MODES:
            raise ValueError(f"split_mode must be one of {SPLIT_MODES}")
        if self.k_folds < 2:
            raise ValueError("k_folds must be >= 2")
        if self.n_select < 1:
            raise ValueError("n_select must be >= 1")


def derive_seed(*parts: int) -> int:
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1)[0])


# ----------------------------------------------------------------------
# labels and splits
# ----------------------------------------------------------------------

def make_labels(cohort: Cohort, target: str) -> np.ndarray:
    """0/1 per record, NaN for days without a survey."""
    if target not in TARGETS:
        raise ValueError(f"unknown target {target!r}")
    out = np.full(len(cohort.records), np.nan)
    has_category = False
    for i, r in enumerate(cohort.records):
        s = r.survey
        if s is None:
            continue
        has_category |= s.category is not None
        if target == "atypical":
            out[i] = float(s.atypical)
        elif target == "good_day":
            out[i] = float(s.category == "positive")
        else:
            out[i] = float(s.category in ("minor_negative", "major_negative"))
    if target != "atypical" and not has_category:
        raise ValueError(f"target {target!r} needs event categories but none are present")
    return out


def kfold_splits(labels, k: int, mode: str = "random", seed: int = 0, groups=None):
    """Disjoint, exhaustive (train, test) index pairs.

    ``random`` deals label-stratified shuffled rows round-robin into folds;
    ``by_user`` deals shuffled participants (``groups``) instead.
    """
    labels = np.asarray(labels)
    n = labels.shape[0]
    rng = np.random.default_rng(seed)
    fold = np.empty(n, dtype=np.int64)
    if mode == "random":
        if k > n:
            raise ValueError(f"k={k} exceeds {n} rows")
        order = np.concatenate([rng.permutation(np.flatnonzero(labels == c)) for c in np.unique(labels)])
        fold[order] = np.arange(n) % k
    elif mode == "by_user":
        if groups is None:
            raise ValueError("by_user splits need participant groups")
        groups = np.asarray(groups).astype(str)
        users = np.unique(groups)
        if k > users.size:
            raise ValueError(f"k={k} exceeds the {users.size} participants available")
        assign = dict(zip(rng.permutation(users), np.arange(users.size) % k))
        fold = np.array([assign[g] for g in groups], dtype=np.int64)
    else:
        raise ValueError(f"unknown split mode {mode!r}")
    idx = np.arange(n)
    return [(idx[fold != f], idx[fold == f]) for f in range(k)]


# ----------------------------------------------------------------------
# metrics
# ----------------------------------------------------------------------

def roc_auc(scores, labels) -> float:
    """Mann-Whitney AUC with midranks, so ties count one half."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels)
    pos = labels == 1
    n1 = int(pos.sum())
    n0 = int((labels == 0).sum())
    if n1 == 0 or n0 == 0:
        raise ValueError("roc_auc needs both classes")
    ranks = rankdata(scores)
    return float((ranks[pos].sum() - n1 * (n1 + 1) / 2) / (n1 * n0))


def binary_metrics(pred, labels) -> tuple[float, float]:
    """(F1, precision); both are 0 when undefined."""
    pred = np.asarray(pred).astype(bool)
    labels = np.asarray(labels).astype(bool)
    tp = float(np.sum(pred & labels))
    fp = float(np.sum(pred & ~labels))
    fn = float(np.sum(~pred & labels))
    precision = tp / (tp + fp) if tp + fp > 0 else 0.0
    recall = tp / (tp + fn) if tp + fn > 0 else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return f1, precision


# ----------------------------------------------------------------------
# task inputs and per-fold preparation
# ----------------------------------------------------------------------

@dataclass
class TaskData:
    """Row-aligned inputs. ``labels`` has NaN where no survey exists."""

    participants: np.ndarray
    dates: list
    labels: np.ndarray
    features: FeatureMatrix | None = None
    pi_day: np.ndarray | None = None

    def __post_init__(self):
        self.participants = np.asarray(self.participants).astype(str)
        self.labels = np.asarray(self.labels, dtype=float)
        n = len(self.participants)
        if len(self.dates) != n or self.labels.shape != (n,):
            raise ValueError("participants, dates and labels must align")
        if self.features is not None and self.features.values.shape[0] != n:
            raise ValueError("feature matrix rows must align with labels")
        if self.pi_day is not None and np.asarray(self.pi_day).shape[0] != n:
            raise ValueError("embedding rows must align with labels")


@dataclass
class FoldData:
    X_train: np.ndarray
    y_train: np.ndarray
    X_test: np.ndarray
    y_test: np.ndarray
    stats: dict


def prepare_fold(data: TaskData, train_rows, test_rows, spec: TaskSpec, fold: int) -> FoldData:
    """Training-only statistics, then the balanced training set and the test set.

    ``stats`` holds everything learned from the training rows (imputation means,
    selected columns, centroids) so leakage can be checked directly.
    """
    train_rows = np.asarray(train_rows)
    test_rows = np.asarray(test_rows)
    y = data.labels
    stats: dict = {}
    if spec.feature_family == "aggregated":
        if data.features is None:
            raise ValueError("aggregated task needs a feature matrix")
        vals, means = data.features.imputed(train_rows)
        Xtr, ytr = downsample_majority(vals[train_rows], y[train_rows], derive_seed(spec.seed, fold, 1))
        n_select = min(spec.n_select, vals.shape[1])
        sel = mrmr_select(Xtr, ytr, n_select, names=data.features.columns)
        stats.update(impute_means=means, selected=sel.indices)
        cols = np.asarray(sel.indices)
        return FoldData(Xtr[:, cols], ytr, vals[test_rows][:, cols], y[test_rows], stats)
    if data.pi_day is None:
        raise ValueError("embedding task needs day embeddings")
    mask = np.zeros(len(y), dtype=bool)
    mask[train_rows] = True
    X, cold = emb.embedding_features(data.participants, data.dates, data.pi_day, mask)
    cents, glob = emb.centroids(data.participants, data.pi_day, mask)
    stats.update(centroids=cents, global_centroid=glob, cold_start=int(cold[test_rows].sum()))
    Xtr, ytr = downsample_majority(X[train_rows], y[train_rows], derive_seed(spec.seed, fold, 1))
    return FoldData(Xtr, ytr, X[test_rows], y[test_rows], stats)


# ----------------------------------------------------------------------
# reports
# ----------------------------------------------------------------------

@dataclass
class MetricsReport:
    task: dict
    classifier: dict
    folds: list = field(default_factory=list)
    mean: dict = field(default_factory=dict)
    random: dict = field(default_factory=dict)
    n_rows: int = 0
    positive_rate: float = 0.0
    meta: dict = field(default_factory=dict)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, obj):
        return cls(**obj)

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def from_json(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def render_table(reports: dict, title: str = "") -> str:
    """Plain-text table with a Random row followed by one row per named report."""
    if not reports:
        return title
    first = next(iter(reports.values()))
    rows = [("Random", first.random)] + [(name, r.mean) for name, r in reports.items()]
    lines = [title] if title else []
    lines.append(f"{'':<12}{'ROC-AUC':>9}{'F1':>7}{'Precision':>11}")
    for name, m in rows:
        lines.append(f"{name:<12}{m['roc_auc']:>9.2f}{m['f1']:>7.2f}{m['precision']:>11.2f}")
    return "\n".join(lines) + "\n"


def _run_fold(data, spec, clf, rows, f, tr, te):
    fd = prepare_fold(data, rows[tr], rows[te], spec, f)
    model = train(ClassifierSpec(clf.kind, clf.params, derive_seed(clf.seed, spec.seed, f)), fd.X_train,
                  fd.y_train)
    s = predict_scores(model, fd.X_test)
    f1, prec = binary_metrics(s >= THRESHOLD, fd.y_test)
    auc = roc_auc(s, fd.y_test) if 0 < fd.y_test.sum() < fd.y_test.size else float("nan")
    return {"fold": f, "roc_auc": auc, "f1": f1, "precision": prec, "n_test": int(te.size),
            "n_positive": int(fd.y_test.sum()), "n_train": int(fd.y_train.size)}


def run_task(data: TaskData, spec: TaskSpec, clf: ClassifierSpec, threads: int = 1) -> MetricsReport:
    rows = np.flatnonzero(~np.isnan(data.labels))
    y = data.labels[rows]
    if np.unique(y).size < 2:
        raise ValueError("labeled rows must contain both classes")
    splits = kfold_splits(y, spec.k_folds, spec.split_mode, spec.seed, groups=data.participants[rows])
    jobs = [(f, tr, te) for f, (tr, te) in enumerate(splits)]
    if threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            folds = list(ex.map(lambda j: _run_fold(data, spec, clf, rows, *j), jobs))
    else:
        folds = [_run_fold(data, spec, clf, rows, *j) for j in jobs]
    mean = {m: float(np.nanmean([f[m] for f in folds])) for m in ("roc_auc", "f1", "precision")}
    rate = float(y.mean())
    return MetricsReport(task=asdict(spec), classifier=clf.to_dict(), folds=folds, mean=mean,
                         random={"roc_auc": 0.5, "f1": rate, "precision": rate},
                         n_rows=int(rows.size), positive_rate=rate)
