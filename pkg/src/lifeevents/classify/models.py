"""Learners: logistic regression, linear SVM, forests, AdaBoost, MLP.

Every learner exposes ``fit(X, y, rng)``, ``decision(X)`` returning scores in
[0, 1], and ``to_params`` / ``from_params`` for JSON round trips.
"""

from __future__ import annotations

import numpy as np
from numba import njit
from scipy.special import expit

from ._tree import apply_tree, build_tree


class Standardizer:
    def __init__(self, mean=None, scale=None):
        self.mean = None if mean is None else np.asarray(mean, dtype=float)
        self.scale = None if scale is None else np.asarray(scale, dtype=float)

    def fit(self, X):
        self.mean = X.mean(axis=0)
        sd = X.std(axis=0)
        self.scale = np.where(sd > 0, sd, 1.0)
        return self

    def __call__(self, X):
        return (X - self.mean) / self.scale

    def to_params(self):
        return {"mean": self.mean.tolist(), "scale": self.scale.tolist()}


# ----------------------------------------------------------------------
# logistic regression
# ----------------------------------------------------------------------

def logistic_loss(w, b, X, y, C):
    """``0.5 |w|^2 + C * sum log-loss``; intercept unpenalized."""
    z = X @ w + b
    return 0.5 * w @ w + C * np.sum(np.logaddexp(0.0, z) - y * z)


def logistic_grad(w, b, X, y, C):
    r = expit(X @ w + b) - y
    return np.concatenate([w + C * (X.T @ r), [C * r.sum()]])


class LogisticRegression:
    def __init__(self, C=1.0, max_iter=100, tol=1e-10):
        self.C, self.max_iter, self.tol = C, max_iter, tol

    def fit(self, X, y, rng=None):
        self.std = Standardizer().fit(X)
        Xs = self.std(X)
        n, d = Xs.shape
        A = np.hstack([Xs, np.ones((n, 1))])
        reg = np.eye(d + 1)
        reg[d, d] = 0.0
        theta = np.zeros(d + 1)
        obj = logistic_loss(theta[:d], theta[d], Xs, y, self.C)
        for _ in range(self.max_iter):
            g = logistic_grad(theta[:d], theta[d], Xs, y, self.C)
            if np.abs(g).max() < self.tol:
                break
            p = expit(A @ theta)
            H = reg + self.C * (A.T * (p * (1 - p))) @ A + 1e-12 * np.eye(d + 1)
            step = np.linalg.solve(H, g)
            # backtracking keeps Newton monotone on badly scaled data
            t = 1.0
            while True:
                cand = theta - t * step
                new = logistic_loss(cand[:d], cand[d], Xs, y, self.C)
                if new <= obj or t < 1e-8:
                    break
                t *= 0.5
            theta, obj = cand, new
        self.coef, self.intercept = theta[:d], float(theta[d])
        return self

    def linear(self, X):
        return self.std(X) @ self.coef + self.intercept

    def decision(self, X):
        return expit(self.linear(X))

    def to_params(self):
        return {"standardize": self.std.to_params(), "coef": self.coef.tolist(), "intercept": self.intercept}

    @classmethod
    def from_params(cls, p, **hyper):
        m = cls(**hyper)
        m.std = Standardizer(**p["standardize"])
        m.coef, m.intercept = np.asarray(p["coef"]), float(p["intercept"])
        return m


# ----------------------------------------------------------------------
# linear SVM (averaged Pegasos)
# ----------------------------------------------------------------------

@njit(cache=True)
def _pegasos(A, ys, lam, order, avg_from):
    n, d = A.shape
    w = np.zeros(d)
    avg = np.zeros(d)
    n_avg = 0
    radius = 1.0 / np.sqrt(lam)
    for t in range(1, order.size + 1):
        i = order[t - 1]
        eta = 1.0 / (lam * t)
        margin = ys[i] * (A[i] @ w)
        w *= 1.0 - eta * lam
        if margin < 1.0:
            w += eta * ys[i] * A[i]
        norm = np.sqrt(w @ w)
        if norm > radius:
            w *= radius / norm
        if t >= avg_from:
            avg += w
            n_avg += 1
    return avg / n_avg


class LinearSVM:
    """Hinge loss with L2 penalty ``lambda = 1 / (C n)``, solved by averaged Pegasos.

    The bias rides along as a constant input column. Scores are
    ``sigmoid(decision)`` so 0.5 is the margin boundary.
    """

    def __init__(self, C=1.0, epochs=100):
        self.C, self.epochs = C, epochs

    def fit(self, X, y, rng):
        self.std = Standardizer().fit(X)
        A = np.hstack([self.std(X), np.ones((X.shape[0], 1))])
        n = A.shape[0]
        order = np.concatenate([rng.permutation(n) for _ in range(self.epochs)]).astype(np.int64)
        lam = 1.0 / (self.C * n)
        w = _pegasos(A, 2.0 * y - 1.0, lam, order, order.size // 2)
        self.coef, self.intercept = w[:-1], float(w[-1])
        return self

    def linear(self, X):
        return self.std(X) @ self.coef + self.intercept

    def decision(self, X):
        return expit(self.linear(X))

    to_params = LogisticRegression.to_params
    from_params = classmethod(LogisticRegression.from_params.__func__)


# ----------------------------------------------------------------------
# trees
# ----------------------------------------------------------------------

def _pack(tree):
    f, t, l, r, v = tree
    return {"feature": f.tolist(), "threshold": t.tolist(), "left": l.tolist(), "right": r.tolist(),
            "value": v.tolist()}


def _unpack(p):
    return (np.asarray(p["feature"], dtype=np.int64), np.asarray(p["threshold"], dtype=float),
            np.asarray(p["left"], dtype=np.int64), np.asarray(p["right"], dtype=np.int64),
            np.asarray(p["value"], dtype=float))


class Forest:
    """Bagged gini trees (random forest) or full-sample random-threshold trees (extra trees).

    The score is the fraction of trees voting positive.
    """

    def __init__(self, n_trees=100, max_depth=10, max_features="sqrt", min_samples_split=2, extra=False):
        self.n_trees, self.max_depth = n_trees, max_depth
        self.max_features, self.min_samples_split, self.extra = max_features, min_samples_split, extra

    def _n_features(self, d):
        if self.max_features == "sqrt":
            return max(1, int(np.sqrt(d)))
        return int(min(d, self.max_features))

    def fit(self, X, y, rng):
        n, d = X.shape
        mf = self._n_features(d)
        seeds = rng.integers(0, 2**31 - 1, size=self.n_trees)
        self.trees = []
        yi = y.astype(np.float64)
        Xc = np.ascontiguousarray(X, dtype=float)
        for s in seeds:
            tr = np.random.default_rng(s)
            if self.extra:
                w = np.ones(n)
            else:
                w = np.bincount(tr.integers(0, n, size=n), minlength=n).astype(float)
            self.trees.append(build_tree(Xc, yi, w, self.max_depth, mf, self.min_samples_split,
                                         self.extra, int(tr.integers(0, 2**31 - 1))))
        return self

    def decision(self, X):
        Xc = np.ascontiguousarray(X, dtype=float)
        votes = np.zeros(X.shape[0])
        for t in self.trees:
            votes += apply_tree(Xc, *t) > 0.5
        return votes / len(self.trees)

    def to_params(self):
        return {"trees": [_pack(t) for t in self.trees]}

    @classmethod
    def from_params(cls, p, **hyper):
        m = cls(**hyper)
        m.trees = [_unpack(t) for t in p["trees"]]
        return m


class AdaBoost:
    """Two-class SAMME over depth-1 trees; the score is the weighted positive vote fraction."""

    def __init__(self, n_estimators=100, learning_rate=1.0):
        self.n_estimators, self.learning_rate = n_estimators, learning_rate

    def fit(self, X, y, rng):
        n, d = X.shape
        Xc = np.ascontiguousarray(X, dtype=float)
        yi = y.astype(np.float64)
        w = np.full(n, 1.0 / n)
        self.stumps, self.alphas = [], []
        for _ in range(self.n_estimators):
            stump = build_tree(Xc, yi, w, 1, d, 2, False, int(rng.integers(0, 2**31 - 1)))
            pred = apply_tree(Xc, *stump) > 0.5
            wrong = pred != (y > 0.5)
            err = w[wrong].sum() / w.sum()
            if err >= 0.5:
                if not self.stumps:
                    self.stumps.append(stump)
                    self.alphas.append(1.0)
                break
            err = max(err, 1e-10)
            alpha = self.learning_rate * np.log((1 - err) / err)
            self.stumps.append(stump)
            self.alphas.append(float(alpha))
            if err <= 1e-10:
                break
            w = w * np.exp(alpha * wrong)
            w /= w.sum()
        return self

    def decision(self, X):
        Xc = np.ascontiguousarray(X, dtype=float)
        a = np.asarray(self.alphas)
        votes = np.array([apply_tree(Xc, *s) > 0.5 for s in self.stumps], dtype=float)
        return a @ votes / a.sum()

    def to_params(self):
        return {"stumps": [_pack(s) for s in self.stumps], "alphas": list(self.alphas)}

    @classmethod
    def from_params(cls, p, **hyper):
        m = cls(**hyper)
        m.stumps = [_unpack(s) for s in p["stumps"]]
        m.alphas = list(p["alphas"])
        return m


# ----------------------------------------------------------------------
# multilayer perceptron
# ----------------------------------------------------------------------

class MLP:
    """Three ReLU hidden layers of width ``n_features`` and a sigmoid output.

    Mini-batch Adam on cross-entropy with a small L2 penalty; stops early when
    the epoch loss has not improved by ``tol`` for ``patience`` epochs.
    """

    def __init__(self, n_layers=3, width=None, epochs=200, batch_size=200, lr=1e-3, l2=1e-4,
                 tol=1e-4, patience=10):
        self.n_layers, self.width, self.epochs, self.batch_size = n_layers, width, epochs, batch_size
        self.lr, self.l2, self.tol, self.patience = lr, l2, tol, patience

    def _forward(self, A):
        acts = [A]
        for W, b in zip(self.W[:-1], self.b[:-1]):
            A = np.maximum(A @ W + b, 0.0)
            acts.append(A)
        return acts, (A @ self.W[-1] + self.b[-1])[:, 0]

    def fit(self, X, y, rng):
        self.std = Standardizer().fit(X)
        Xs = self.std(X)
        n, d = Xs.shape
        h = self.width or d
        sizes = [d] + [h] * self.n_layers + [1]
        self.W = [rng.normal(0, np.sqrt(2.0 / a), size=(a, b)) for a, b in zip(sizes[:-1], sizes[1:])]
        self.b = [np.zeros(b) for b in sizes[1:]]
        params = self.W + self.b
        m = [np.zeros_like(p) for p in params]
        v = [np.zeros_like(p) for p in params]
        b1, b2, eps = 0.9, 0.999, 1e-8
        step = 0
        best, stall = np.inf, 0
        bs = min(self.batch_size, n)
        L = len(self.W)
        for _ in range(self.epochs):
            perm = rng.permutation(n)
            total = 0.0
            for s in range(0, n, bs):
                idx = perm[s:s + bs]
                acts, z = self._forward(Xs[idx])
                yb = y[idx]
                total += np.sum(np.logaddexp(0.0, z) - yb * z)
                delta = ((expit(z) - yb) / idx.size)[:, None]
                gW, gb = [None] * L, [None] * L
                for k in range(L - 1, -1, -1):
                    gW[k] = acts[k].T @ delta + self.l2 * self.W[k] / idx.size
                    gb[k] = delta.sum(axis=0)
                    if k:
                        delta = (delta @ self.W[k].T) * (acts[k] > 0)
                step += 1
                for j, g in enumerate(gW + gb):
                    m[j] = b1 * m[j] + (1 - b1) * g
                    v[j] = b2 * v[j] + (1 - b2) * g * g
                    mh = m[j] / (1 - b1 ** step)
                    vh = v[j] / (1 - b2 ** step)
                    params[j] -= self.lr * mh / (np.sqrt(vh) + eps)
            total /= n
            if total < best - self.tol:
                best, stall = total, 0
            else:
                stall += 1
                if stall >= self.patience:
                    break
        return self

    def decision(self, X):
        return expit(self._forward(self.std(X))[1])

    def to_params(self):
        return {"standardize": self.std.to_params(), "W": [w.tolist() for w in self.W],
                "b": [b.tolist() for b in self.b]}

    @classmethod
    def from_params(cls, p, **hyper):
        m = cls(**hyper)
        m.std = Standardizer(**p["standardize"])
        m.W = [np.asarray(w, dtype=float) for w in p["W"]]
        m.b = [np.asarray(b, dtype=float) for b in p["b"]]
        return m
