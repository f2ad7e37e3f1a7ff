"""Independent reference computations used by several test modules."""

import itertools

import numpy as np
from scipy import linalg
from scipy.special import logsumexp
from scipy.stats import multivariate_normal


def random_model(rng, K, d=2, r=1, n_seq=1):
    from lifeevents.hmm import HmmModel

    coefs = rng.normal(0, 0.5, size=(K, d, r * d))
    bias = rng.normal(0, 1, size=(K, d))
    sig = []
    for _ in range(K):
        A = rng.normal(size=(d, d))
        sig.append(A @ A.T + 0.3 * np.eye(d))
    P = rng.dirichlet(np.ones(K), size=K)
    return HmmModel(coefs, bias, np.array(sig), np.ones((n_seq, K), dtype=bool),
                    np.broadcast_to(P, (n_seq, K, K)).copy(), keys=[str(i) for i in range(n_seq)])


def emission_table(model, seq):
    """(T - r, K) Gaussian log-densities computed with scipy, one step at a time."""
    r, K = model.ar_order, model.K
    rows = []
    for t in range(r, seq.shape[0]):
        x = np.concatenate([seq[t - j] for j in range(1, r + 1)])
        rows.append([multivariate_normal(model.coefs[k] @ x + model.bias[k], model.sigma[k]).logpdf(seq[t])
                     for k in range(K)])
    return np.array(rows)


def brute_force_loglik(ll, P, pi0):
    T, K = ll.shape
    terms = []
    for path in itertools.product(range(K), repeat=T):
        lp = np.log(pi0[path[0]]) + ll[0, path[0]]
        for t in range(1, T):
            lp += np.log(P[path[t - 1], path[t]]) + ll[t, path[t]]
        terms.append(lp)
    return float(logsumexp(terms))


def brute_force_viterbi(ll, P, pi0):
    T, K = ll.shape
    best, arg = -np.inf, None
    for path in itertools.product(range(K), repeat=T):
        lp = np.log(pi0[path[0]]) + ll[0, path[0]]
        for t in range(1, T):
            lp += np.log(P[path[t - 1], path[t]]) + ll[t, path[t]]
        if lp > best:
            best, arg = lp, path
    return np.array(arg)


def path_posterior_marginals(ll, P, pi0):
    T, K = ll.shape
    out = np.zeros((T, K))
    paths, lps = [], []
    for path in itertools.product(range(K), repeat=T):
        lp = np.log(pi0[path[0]]) + ll[0, path[0]]
        for t in range(1, T):
            lp += np.log(P[path[t - 1], path[t]]) + ll[t, path[t]]
        paths.append(path)
        lps.append(lp)
    w = np.exp(np.array(lps) - logsumexp(lps))
    for path, wi in zip(paths, w):
        out[np.arange(T), path] += wi
    return out


def stationary_by_solve(P):
    """Solve pi (P - I) = 0 with sum(pi) = 1 as a least-squares linear system."""
    K = P.shape[0]
    A = np.vstack([(P - np.eye(K)).T, np.ones((1, K))])
    b = np.zeros(K + 1)
    b[-1] = 1.0
    return linalg.lstsq(A, b)[0]


def brute_force_mrmr(D, y, n_select):
    """Greedy MID mRMR with sklearn's plug-in MI on already-discretized columns."""
    from sklearn.metrics import mutual_info_score

    n = D.shape[1]
    rel = [mutual_info_score(y, D[:, j]) for j in range(n)]
    chosen = []
    for _ in range(n_select):
        best, arg = -np.inf, None
        for j in range(n):
            if j in chosen:
                continue
            red = np.mean([mutual_info_score(D[:, j], D[:, s]) for s in chosen]) if chosen else 0.0
            score = rel[j] - red
            if score > best + 1e-12:
                best, arg = score, j
        chosen.append(arg)
    return chosen


def pairwise_auc(scores, labels):
    pos = [s for s, l in zip(scores, labels) if l == 1]
    neg = [s for s, l in zip(scores, labels) if l == 0]
    total = sum(1.0 if p > q else 0.5 if p == q else 0.0 for p in pos for q in neg)
    return total / (len(pos) * len(neg))
