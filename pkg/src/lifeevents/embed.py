"""Day embeddings: stationary distributions of per-day empirical transition matrices."""

from __future__ import annotations

import datetime as dt

import numpy as np
import pandas as pd
from scipy.sparse.csgraph import connected_components

SMOOTHING = 1e-6


class ConvergenceError(RuntimeError):
    def __init__(self, iterations: int, change: float):
        super().__init__(f"power iteration did not converge after {iterations} iterations "
                         f"(last L1 change {change:.3e})")
        self.iterations = iterations


def transition_count_matrix(states, K: int, missing=None) -> np.ndarray:
    """Raw ``K x K`` transition counts over consecutive non-missing steps."""
    z = np.asarray(states, dtype=np.int64)
    if z.size and (z.min() < 0 or z.max() >= K):
        raise ValueError(f"state ids must lie in [0, {K})")
    ok = np.ones(len(z), dtype=bool) if missing is None else ~np.asarray(missing, dtype=bool)
    pair = ok[1:] & ok[:-1]
    counts = np.zeros((K, K))
    np.add.at(counts, (z[:-1][pair], z[1:][pair]), 1.0)
    return counts


def normalize_counts(counts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    rows = counts.sum(axis=1)
    visited = rows > 0
    P = np.zeros_like(counts, dtype=float)
    P[visited] = counts[visited] / rows[visited, None]
    return P, visited


def transition_counts(seq, K: int, missing=None) -> tuple[np.ndarray, np.ndarray]:
    """Row-normalized transition matrix and the mask of visited (outgoing) states.

    ``seq`` is either a state-id array or an object with ``states``/``missing``
    attributes. Rows of unvisited states are zero.
    """
    if hasattr(seq, "states"):
        states, missing = seq.states, seq.missing
    else:
        states = seq
    if len(states) < 2:
        raise ValueError("need at least two steps to count transitions")
    return normalize_counts(transition_count_matrix(states, K, missing))


def _needs_smoothing(P: np.ndarray) -> bool:
    """True when the chain has more than one closed communicating class."""
    n, labels = connected_components(P > 0, directed=True, connection="strong")
    if n == 1:
        return False
    closed = 0
    for c in range(n):
        members = labels == c
        if not (P[np.ix_(members, ~members)] > 0).any():
            closed += 1
    return closed > 1


def stationary_distribution(P, visited=None, tol: float = 1e-12, max_iter: int = 100_000) -> np.ndarray:
    """Dominant left eigenvector of the visited sub-chain, zero elsewhere.

    Iterates on the lazy chain ``(I + P) / 2``, which has the same stationary
    vector and is aperiodic. Chains with several closed classes get
    ``SMOOTHING`` uniform mass first so the answer is unique. Visited rows with
    no mass inside the visited set restart uniformly. Each step squares
    the iteration matrix, so ``max_iter`` bounds the number of squarings.
    """
    P = np.asarray(P, dtype=float)
    K = P.shape[0]
    visited = np.ones(K, dtype=bool) if visited is None else np.asarray(visited, dtype=bool)
    out = np.zeros(K)
    idx = np.flatnonzero(visited)
    if idx.size == 0:
        raise ValueError("no visited states")
    if np.any(P[idx].sum(axis=1) <= 0):
        raise ValueError("visited states must have outgoing mass")
    Q = P[np.ix_(idx, idx)]
    n = idx.size
    sums = Q.sum(axis=1, keepdims=True)
    # a state whose only exits lead to unvisited states (e.g. the day's last
    # state) restarts uniformly within the visited set
    Q = np.where(sums > 0, Q / np.where(sums > 0, sums, 1.0), 1.0 / n)
    if _needs_smoothing(Q):
        Q = (1 - SMOOTHING) * Q + SMOOTHING / n
    Q = 0.5 * (np.eye(n) + Q)
    pi = np.full(n, 1.0 / n)
    change = np.inf
    for it in range(1, max_iter + 1):
        nxt = pi @ Q
        nxt /= nxt.sum()
        change = np.abs(nxt - pi).sum()
        pi = nxt
        if change < tol:
            break
        Q = Q @ Q
        Q /= Q.sum(axis=1, keepdims=True)
    else:
        raise ConvergenceError(max_iter, change)
    out[idx] = pi
    return out / out.sum()


def day_embedding(seq, K: int) -> np.ndarray:
    P, visited = transition_counts(seq, K)
    if not visited.any():
        return np.full(K, np.nan)
    return stationary_distribution(P, visited)


def person_centroid(embeddings: np.ndarray) -> np.ndarray:
    emb = np.asarray(embeddings, dtype=float)
    if emb.ndim != 2 or emb.shape[0] == 0:
        raise ValueError("need at least one training embedding")
    return emb.mean(axis=0)


def centroids(participants, embeddings: np.ndarray, train_mask) -> tuple[dict[str, np.ndarray], np.ndarray]:
    """Per-participant centroids over training rows plus the global training centroid.

    Rows whose embedding is NaN (no observed transitions) are skipped.
    """
    participants = np.asarray(participants)
    emb = np.asarray(embeddings, dtype=float)
    ok = np.asarray(train_mask, dtype=bool) & ~np.isnan(emb).any(axis=1)
    if not ok.any():
        raise ValueError("no training embeddings")
    glob = emb[ok].mean(axis=0)
    out = {}
    for pid in np.unique(participants[ok]):
        out[str(pid)] = person_centroid(emb[ok & (participants == pid)])
    return out, glob


def embed_day(pi_day, pi_next, centroid) -> np.ndarray:
    """Concatenate ``[pi_day, pi_next, centroid]``; a missing next day uses the centroid."""
    pi_day = np.asarray(pi_day, dtype=float)
    centroid = np.asarray(centroid, dtype=float)
    K = pi_day.shape[0]
    if centroid.shape != (K,):
        raise ValueError(f"centroid length {centroid.shape} does not match K={K}")
    if pi_next is None or np.isnan(np.asarray(pi_next, dtype=float)).any():
        pi_next = centroid
    pi_next = np.asarray(pi_next, dtype=float)
    if pi_next.shape != (K,):
        raise ValueError(f"next-day embedding length {pi_next.shape} does not match K={K}")
    return np.concatenate([pi_day, pi_next, centroid])


def next_day_index(participants, dates) -> np.ndarray:
    """Row index of each row's next calendar day for the same participant, or -1."""
    lookup = {(str(p), d): i for i, (p, d) in enumerate(zip(participants, dates))}
    one = dt.timedelta(days=1)
    return np.array([lookup.get((str(p), d + one), -1) for p, d in zip(participants, dates)], dtype=int)


def embedding_features(participants, dates, pi_day: np.ndarray, train_mask) -> tuple[np.ndarray, np.ndarray]:
    """Feature rows ``[pi_day, pi_next, centroid]`` using training-only centroids.

    Returns the ``(n, 3K)`` matrix and a flag marking rows that fell back to the
    global centroid (participant absent from training).
    """
    participants = np.asarray(participants).astype(str)
    pi_day = np.asarray(pi_day, dtype=float)
    n, K = pi_day.shape
    cents, glob = centroids(participants, pi_day, train_mask)
    nxt = next_day_index(participants, dates)
    X = np.empty((n, 3 * K))
    cold = np.zeros(n, dtype=bool)
    for i in range(n):
        c = cents.get(participants[i])
        if c is None:
            c, cold[i] = glob, True
        day = pi_day[i] if not np.isnan(pi_day[i]).any() else c
        X[i] = embed_day(day, pi_day[nxt[i]] if nxt[i] >= 0 else None, c)
    return X, cold


def write_embeddings_csv(path, participants, dates, pi_day, pi_next=None, centroid_rows=None):
    """Long-format CSV: ``participant_id,date,slot,state_0..state_{K-1}``."""
    pi_day = np.asarray(pi_day, dtype=float)
    K = pi_day.shape[1]
    cols = [f"state_{k}" for k in range(K)]
    frames = []
    for slot, mat in (("day", pi_day), ("next", pi_next), ("centroid", centroid_rows)):
        if mat is None:
            continue
        df = pd.DataFrame(np.asarray(mat, dtype=float), columns=cols)
        df.insert(0, "slot", slot)
        df.insert(0, "date", [d.isoformat() for d in dates])
        df.insert(0, "participant_id", list(participants))
        frames.append(df)
    out = pd.concat(frames, ignore_index=True)
    order = {"day": 0, "next": 1, "centroid": 2}
    out = out.sort_values(["participant_id", "date", "slot"], key=lambda s: s.map(order) if s.name == "slot" else s,
                          kind="stable")
    out.to_csv(path, index=False, float_format="%.10g", na_rep="")


def read_embeddings_csv(path):
    df = pd.read_csv(path, dtype={"participant_id": str})
    day = df[df["slot"] == "day"]
    cols = [c for c in df.columns if c.startswith("state_")]
    return (day["participant_id"].to_numpy(), [dt.date.fromisoformat(d) for d in day["date"]],
            day[cols].to_numpy(dtype=float))
