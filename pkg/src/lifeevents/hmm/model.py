"""Shared-state switching VAR model: parameters, decoding, likelihood, simulation."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import _kernels

MODEL_VERSION = "lifeevents-hmm/1"
LOG_2PI = np.log(2 * np.pi)


@dataclass
class HmmConfig:
    """Sampler settings.

    ``alpha`` is the feature (IBP) mass, ``kappa`` the sticky self-transition
    bias and ``gamma`` the transition concentration. ``prior_scale`` and
    ``prior_strength`` set the matrix-normal inverse-Wishart emission prior.
    ``max_sequences`` optionally fits on a seeded subsample of the days.
    """

    ar_order: int = 1
    alpha: float = 1.0
    kappa: float = 10.0
    gamma: float = 1.0
    prior_scale: float = 0.5
    prior_strength: float = 1.0
    n_iterations: int = 500
    burn_in: int = 250
    seed: int = 0
    max_states: int = 200
    init_states: int = 1
    birth_window: int = 40
    max_sequences: int | None = None

    def __post_init__(self):
        if self.ar_order < 1:
            raise ValueError("ar_order must be >= 1")
        for name in ("alpha", "kappa", "gamma", "prior_scale", "prior_strength"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not self.n_iterations > self.burn_in >= 0:
            raise ValueError("need n_iterations > burn_in >= 0")
        if self.max_states < 1 or self.init_states < 1 or self.init_states > self.max_states:
            raise ValueError("need 1 <= init_states <= max_states")

    @classmethod
    def from_dict(cls, obj: dict) -> "HmmConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(obj) - names
        if unknown:
            raise ValueError(f"unknown hmm config keys {sorted(unknown)}")
        return cls(**obj)


@dataclass
class StateSequence:
    key: str
    states: np.ndarray
    missing: np.ndarray


@dataclass
class HmmModel:
    """Global state library plus per-sequence feature sets and transition matrices.

    ``coefs[k]`` is ``(d, r*d)`` holding ``[A_1 ... A_r]``; ``bias[k]`` is the
    intercept; ``sigma[k]`` the noise covariance. ``features[i]`` marks the
    states sequence ``i`` may use and ``transitions[i]`` is row-stochastic over
    those states (zero elsewhere).
    """

    coefs: np.ndarray
    bias: np.ndarray
    sigma: np.ndarray
    features: np.ndarray
    transitions: np.ndarray
    keys: list[str] = field(default_factory=list)
    config: HmmConfig = field(default_factory=HmmConfig)
    log_prob: float = float("nan")
    trace: list[float] = field(default_factory=list)

    def __post_init__(self):
        self.coefs = np.asarray(self.coefs, dtype=float)
        self.bias = np.asarray(self.bias, dtype=float)
        self.sigma = np.asarray(self.sigma, dtype=float)
        self.features = np.asarray(self.features, dtype=bool).reshape(-1, self.K)
        self.transitions = np.asarray(self.transitions, dtype=float).reshape(-1, self.K, self.K)
        if self.coefs.ndim != 3 or self.coefs.shape[2] % self.coefs.shape[1]:
            raise ValueError("coefs must have shape (K, d, r*d)")
        if len(self.keys) not in (0, self.features.shape[0]):
            raise ValueError("keys must align with per-sequence parameters")
        self._index = {k: i for i, k in enumerate(self.keys)}

    @property
    def K(self) -> int:
        return self.coefs.shape[0]

    @property
    def dim(self) -> int:
        return self.coefs.shape[1]

    @property
    def ar_order(self) -> int:
        return self.coefs.shape[2] // self.coefs.shape[1]

    @property
    def weights(self) -> np.ndarray:
        """Full regression matrices ``[A_1 ... A_r, b]`` of shape ``(K, d, r*d + 1)``."""
        return np.concatenate([self.coefs, self.bias[:, :, None]], axis=2)

    def global_transition(self) -> np.ndarray:
        """Transition matrix for sequences the model was not fitted on.

        Average of the fitted per-sequence rows over the sequences where each
        state is active, blended with 1% uniform mass so any state is reachable.
        """
        K = self.K
        if self.transitions.shape[0] == 0:
            return np.full((K, K), 1.0 / K)
        num = self.transitions.sum(axis=0)
        den = self.features.sum(axis=0)[:, None]
        P = np.divide(num, den, out=np.full((K, K), 1.0 / K), where=den > 0)
        P = 0.99 * P / P.sum(axis=1, keepdims=True) + 0.01 / K
        return P / P.sum(axis=1, keepdims=True)

    def sequence_params(self, key=None) -> tuple[np.ndarray, np.ndarray]:
        """(active state ids, transition matrix over them) for ``key`` or the global fallback."""
        if key is not None and key in self._index:
            i = self._index[key]
            active = np.flatnonzero(self.features[i])
            P = self.transitions[i][np.ix_(active, active)]
            return active, P / P.sum(axis=1, keepdims=True)
        return np.arange(self.K), self.global_transition()

    # ------------------------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "version": MODEL_VERSION,
            "K": self.K,
            "dim": self.dim,
            "ar_order": self.ar_order,
            "states": [
                {"A": self.coefs[k].tolist(), "b": self.bias[k].tolist(), "Sigma": self.sigma[k].tolist()}
                for k in range(self.K)
            ],
            "sequences": [
                {"key": key, "features": np.flatnonzero(self.features[i]).tolist(),
                 "transitions": self.transitions[i].tolist()}
                for i, key in enumerate(self.keys)
            ],
            "config": asdict(self.config),
            "log_prob": self.log_prob,
            "trace": list(self.trace),
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "HmmModel":
        if obj.get("version") != MODEL_VERSION:
            raise ValueError(f"unsupported model version {obj.get('version')!r}")
        K = obj["K"]
        states = obj["states"]
        seqs = obj["sequences"]
        features = np.zeros((len(seqs), K), dtype=bool)
        for i, s in enumerate(seqs):
            features[i, s["features"]] = True
        return cls(
            coefs=np.array([s["A"] for s in states]),
            bias=np.array([s["b"] for s in states]),
            sigma=np.array([s["Sigma"] for s in states]),
            features=features,
            transitions=np.array([s["transitions"] for s in seqs]).reshape(len(seqs), K, K),
            keys=[s["key"] for s in seqs],
            config=HmmConfig.from_dict(obj["config"]),
            log_prob=obj.get("log_prob", float("nan")),
            trace=list(obj.get("trace", [])),
        )

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, sort_keys=True)

    @classmethod
    def load(cls, path) -> "HmmModel":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


# ----------------------------------------------------------------------
# design matrices and emission densities
# ----------------------------------------------------------------------

def lagged(sequence: np.ndarray, ar_order: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Targets ``Y`` (T-r, d), regressors ``X`` (T-r, r*d+1) and the missing-step mask.

    A step is missing if its target or any lag has a NaN; NaNs are zeroed.
    """
    seq = np.asarray(sequence, dtype=float)
    if seq.ndim == 1:
        seq = seq[:, None]
    T, d = seq.shape
    r = ar_order
    if T <= r:
        raise ValueError(f"sequence of length {T} is too short for AR order {r}")
    Y = seq[r:]
    lags = [seq[r - j: T - j] for j in range(1, r + 1)]
    X = np.concatenate(lags + [np.ones((T - r, 1))], axis=1)
    missing = np.isnan(Y).any(axis=1) | np.isnan(X).any(axis=1)
    return np.nan_to_num(Y), np.nan_to_num(X), missing


def emission_loglik(weights, sigma, Y, X, missing) -> np.ndarray:
    """Per-step Gaussian log-densities, ``(n, K)``; missing rows are 0."""
    L = np.linalg.cholesky(sigma)
    logdet = 2 * np.log(np.diagonal(L, axis1=1, axis2=2)).sum(axis=1)
    out = _kernels.gaussian_resid_loglik(np.ascontiguousarray(Y, dtype=float), np.ascontiguousarray(X, dtype=float),
                                         np.ascontiguousarray(weights, dtype=float), np.linalg.inv(L), logdet)
    out[missing] = 0.0
    return out


def _check(model: HmmModel, sequence):
    seq = np.asarray(sequence, dtype=float)
    if seq.ndim == 1:
        seq = seq[:, None]
    if seq.shape[1] != model.dim:
        raise ValueError(f"sequence has {seq.shape[1]} channels, model expects {model.dim}")
    if seq.shape[0] < model.ar_order + 1:
        raise ValueError(f"sequence length {seq.shape[0]} < ar_order + 1 = {model.ar_order + 1}")
    return seq


def log_likelihood(model: HmmModel, sequence, key=None) -> float:
    """Marginal log-likelihood by the scaled forward algorithm.

    The first ``ar_order`` observations are conditioned on; the initial state
    distribution is uniform over the sequence's active states.
    """
    seq = _check(model, sequence)
    Y, X, miss = lagged(seq, model.ar_order)
    active, P = model.sequence_params(key)
    ll = emission_loglik(model.weights[active], model.sigma[active], Y, X, miss)
    pi0 = np.full(len(active), 1.0 / len(active))
    return float(_kernels.forward_loglik(ll, np.ascontiguousarray(P), pi0))


def decode(model: HmmModel, sequence, key=None) -> StateSequence:
    """Most probable state path (Viterbi), in global state ids."""
    seq = _check(model, sequence)
    Y, X, miss = lagged(seq, model.ar_order)
    active, P = model.sequence_params(key)
    ll = emission_loglik(model.weights[active], model.sigma[active], Y, X, miss)
    with np.errstate(divide="ignore"):
        logP = np.log(P)
    logpi0 = np.full(len(active), -np.log(len(active)))
    path = _kernels.viterbi(ll, np.ascontiguousarray(logP), logpi0)
    return StateSequence(key="" if key is None else str(key), states=active[path], missing=miss)


def sample_sequence(model: HmmModel, length: int, seed: int, key=None, initial=None,
                    return_states: bool = False):
    """Roll out the switching VAR process for ``length`` steps.

    The first ``ar_order`` rows are ``initial`` (zeros by default).
    """
    r, d = model.ar_order, model.dim
    if length <= r:
        raise ValueError("length must exceed ar_order")
    rng = np.random.default_rng(seed)
    active, P = model.sequence_params(key)
    W = model.weights
    chol = np.array([_psd_sqrt(S) for S in model.sigma])
    out = np.zeros((length, d))
    if initial is not None:
        out[:r] = np.asarray(initial, dtype=float).reshape(r, d)
    states = np.empty(length - r, dtype=np.int64)
    z = rng.integers(len(active))
    for t in range(r, length):
        if t > r:
            z = rng.choice(len(active), p=P[z])
        k = active[z]
        states[t - r] = k
        x = np.concatenate([out[t - j] for j in range(1, r + 1)] + [np.ones(1)])
        out[t] = W[k] @ x + chol[k] @ rng.standard_normal(d)
    return (out, states) if return_states else out


def _psd_sqrt(S):
    vals, vecs = np.linalg.eigh(0.5 * (S + S.T))
    return vecs * np.sqrt(np.clip(vals, 0.0, None))
