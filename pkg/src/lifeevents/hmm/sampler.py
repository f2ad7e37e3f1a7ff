"""MCMC for the beta-process autoregressive HMM.

One sweep:

1. per sequence, Metropolis flips of shared features with the state path
   marginalized out (forward algorithm), one swap proposal exchanging an
   active shared feature for a similar inactive one, then one birth/death
   proposal for a feature unique to that sequence;
2. drop global states no sequence uses;
3. block-sample each state path (forward filtering, backward sampling);
4. sample transition weights given transition counts;
5. sample each state's VAR parameters from its MNIW posterior.

The sample with the highest joint log-probability is returned.
"""

from __future__ import annotations

import logging
from collections import Counter

import numpy as np
from scipy.cluster.vq import kmeans2
from scipy.special import gammaln

from . import _kernels
from .mniw import default_prior, sufficient_stats
from .model import HmmConfig, HmmModel, emission_loglik, lagged

log = logging.getLogger(__name__)


def fit(sequences, config: HmmConfig | None = None, keys=None) -> HmmModel:
    """Fit the shared-state model to a list of ``(T_i, d)`` arrays (NaN = missing)."""
    config = config or HmmConfig()
    keys = [str(i) for i in range(len(sequences))] if keys is None else [str(k) for k in keys]
    if len(keys) != len(sequences):
        raise ValueError("keys and sequences differ in length")
    r = config.ar_order
    usable = [i for i, s in enumerate(sequences) if np.asarray(s).shape[0] > r]
    if not usable:
        raise ValueError(f"no sequence longer than ar_order={r}")
    rng = np.random.default_rng(config.seed)
    if config.max_sequences is not None and len(usable) > config.max_sequences:
        usable = sorted(rng.choice(usable, size=config.max_sequences, replace=False).tolist())
    seqs = [np.asarray(sequences[i], dtype=float) for i in usable]
    sampler = _Sampler(seqs, config, rng)
    return sampler.run([keys[i] for i in usable])


class _Sampler:
    def __init__(self, seqs, config: HmmConfig, rng: np.random.Generator):
        self.cfg = config
        self.rng = rng
        parts = [lagged(s if s.ndim == 2 else s[:, None], config.ar_order) for s in seqs]
        self.Y = np.concatenate([p[0] for p in parts])
        self.X = np.concatenate([p[1] for p in parts])
        self.miss = np.concatenate([p[2] for p in parts])
        self.obs = ~self.miss
        lengths = [p[0].shape[0] for p in parts]
        self.off = np.concatenate([[0], np.cumsum(lengths)])
        self.N = len(seqs)
        self.d = self.Y.shape[1]
        self.p = self.X.shape[1]
        self.prior = default_prior(self.d, config.ar_order, config.prior_scale, config.prior_strength)
        self._init_state()

    # ------------------------------------------------------------------ helpers
    def _sl(self, i):
        return slice(self.off[i], self.off[i + 1])

    @property
    def K(self):
        return self.W.shape[0]

    def _shape(self, K):
        return self.cfg.gamma + self.cfg.kappa * np.eye(K)

    def _trans(self, eta, active):
        P = eta[np.ix_(active, active)]
        return P / P.sum(axis=1, keepdims=True)

    def _marginal(self, i, active, ll=None, eta=None):
        ll = self.LL[self._sl(i)][:, active] if ll is None else ll
        P = self._trans(self.eta[i] if eta is None else eta, active)
        pi0 = np.full(len(active), 1.0 / len(active))
        return _kernels.forward_loglik(np.ascontiguousarray(ll), P, pi0)

    def _emissions(self, W, Sigma):
        return emission_loglik(W, Sigma, self.Y, self.X, self.miss)

    # ------------------------------------------------------------------ init
    def _init_state(self):
        cfg, rng = self.cfg, self.rng
        K0 = cfg.init_states
        n = self.Y.shape[0]
        z = np.zeros(n, dtype=np.int64)
        if K0 > 1 and self.obs.sum() > K0:
            obs_rows = np.concatenate([self.Y, self.X[:, :self.d]], axis=1)[self.obs]
            _, labels = kmeans2(obs_rows, K0, minit="++", seed=rng)
            z[self.obs] = labels
            # carry labels forward over missing steps
            idx = np.where(self.obs, np.arange(n), 0)
            np.maximum.accumulate(idx, out=idx)
            z = z[idx]
        self.z = z
        self.W = np.zeros((K0, self.d, self.p))
        self.Sigma = np.tile(np.eye(self.d), (K0, 1, 1))
        self.F = np.zeros((self.N, K0), dtype=bool)
        for i in range(self.N):
            used = np.unique(z[self._sl(i)])
            self.F[i, used] = True
        self._sample_emissions()
        self.LL = self._emissions(self.W, self.Sigma)
        self.eta = self.rng.gamma(np.broadcast_to(self._shape(K0), (self.N, K0, K0)))
        self._sample_transitions()
        self._gc()

    # ------------------------------------------------------------------ moves
    def _flip_shared(self, i, cur):
        N = self.N
        m = self.F.sum(axis=0) - self.F[i]
        for k in np.flatnonzero(m > 0):
            f = self.F[i].copy()
            f[k] = not f[k]
            if not f.any():
                continue
            p_on = m[k] / N
            log_prior = np.log(p_on) - np.log1p(-p_on)
            if not f[k]:
                log_prior = -log_prior
            new = self._marginal(i, np.flatnonzero(f))
            if np.log(self.rng.random()) < new - cur + log_prior:
                self.F[i] = f
                cur = new
        return cur

    def _similarity(self, n_rows=20000):
        """exp(-mean |log-lik difference|) between states over a fixed row subsample."""
        rows = np.flatnonzero(self.obs)
        if rows.size > n_rows:
            rows = rows[:: rows.size // n_rows]
        LL = self.LL[rows]
        D = np.abs(LL[:, :, None] - LL[:, None, :]).mean(axis=0)
        return np.exp(-D)

    def _swap(self, i, cur, sim):
        m = self.F.sum(axis=0) - self.F[i]
        on = np.flatnonzero(self.F[i] & (m > 0))
        off = np.flatnonzero(~self.F[i] & (m > 0))
        if on.size == 0 or off.size == 0:
            return cur
        rng = self.rng
        k = on[rng.integers(on.size)]
        w = sim[k, off]
        j = off[_choice(w / w.sum(), rng.random())]
        off_rev = np.append(off[off != j], k)
        q_fwd = sim[k, j] / w.sum()
        q_rev = sim[j, k] / sim[j, off_rev].sum()
        N = self.N
        log_prior = (np.log(m[j]) - np.log(N - m[j])) + (np.log(N - m[k]) - np.log(m[k]))
        f = self.F[i].copy()
        f[k], f[j] = False, True
        # exchanging the two states' weights is an involution that leaves their prior unchanged
        perm = np.arange(self.K)
        perm[k], perm[j] = j, k
        eta = self.eta[i][np.ix_(perm, perm)]
        new = self._marginal(i, np.flatnonzero(f), eta=eta)
        if np.log(rng.random()) < new - cur + log_prior + np.log(q_rev) - np.log(q_fwd):
            self.F[i] = f
            self.eta[i] = eta
            return new
        return cur

    def _window_posterior(self, i):
        sl = self._sl(i)
        T = sl.stop - sl.start
        w = min(self.cfg.birth_window, T)
        s = sl.start + int(self.rng.integers(0, T - w + 1))
        rows = np.arange(s, s + w)
        rows = rows[self.obs[rows]]
        if rows.size < self.p + self.d:
            return None
        return self.prior.posterior(*sufficient_stats(self.Y[rows], self.X[rows]))

    def _birth_death(self, i, cur):
        cfg, rng = self.cfg, self.rng
        m_other = self.F.sum(axis=0) - self.F[i]
        unique = np.flatnonzero(self.F[i] & (m_other == 0))
        n = len(unique)
        lam = cfg.alpha / self.N
        if n == 0 or rng.random() < 0.5:
            if self.K >= cfg.max_states:
                return cur
            post = self._window_posterior(i)
            if post is None:
                return cur
            Wn, Sn = post.sample(rng)
            log_q = post.logpdf(Wn, Sn)
            log_p = self.prior.logpdf(Wn, Sn)
            K = self.K
            sl = self._sl(i)
            ll_new = emission_loglik(Wn[None], Sn[None], self.Y[sl], self.X[sl], self.miss[sl])
            eta = np.empty((K + 1, K + 1))
            eta[:K, :K] = self.eta[i]
            shape = self._shape(K + 1)
            eta[K, :] = rng.gamma(shape[K, :])
            eta[:K, K] = rng.gamma(shape[:K, K])
            active = np.flatnonzero(self.F[i])
            ll = np.concatenate([self.LL[sl][:, active], ll_new], axis=1)
            new = self._marginal(i, np.append(active, K), ll=ll, eta=eta)
            p_fwd = 1.0 if n == 0 else 0.5
            p_rev = 0.5 / (n + 1)
            log_acc = new - cur + np.log(lam / (n + 1)) + np.log(p_rev / p_fwd) + log_p - log_q
            if np.log(rng.random()) < log_acc:
                self._add_state(i, Wn, Sn, eta)
                return new
            return cur
        k = unique[rng.integers(n)]
        f = self.F[i].copy()
        f[k] = False
        if not f.any():
            return cur
        post = self._window_posterior(i)
        if post is None:
            return cur
        log_q = post.logpdf(self.W[k], self.Sigma[k])
        log_p = self.prior.logpdf(self.W[k], self.Sigma[k])
        new = self._marginal(i, np.flatnonzero(f))
        p_rev = 1.0 if n == 1 else 0.5
        p_fwd = 0.5 / n
        log_acc = new - cur + np.log(n / lam) + np.log(p_rev / p_fwd) + log_q - log_p
        if np.log(rng.random()) < log_acc:
            self.F[i] = f
            return new
        return cur

    def _add_state(self, i, Wn, Sn, eta_i):
        K = self.K
        self.W = np.concatenate([self.W, Wn[None]])
        self.Sigma = np.concatenate([self.Sigma, Sn[None]])
        self.LL = np.concatenate([self.LL, self._emissions(Wn[None], Sn[None])], axis=1)
        F = np.zeros((self.N, K + 1), dtype=bool)
        F[:, :K] = self.F
        F[i, K] = True
        self.F = F
        shape = self._shape(K + 1)
        eta = np.empty((self.N, K + 1, K + 1))
        eta[:, :K, :K] = self.eta
        eta[:, K, :] = self.rng.gamma(np.broadcast_to(shape[K, :], (self.N, K + 1)))
        eta[:, :K, K] = self.rng.gamma(np.broadcast_to(shape[:K, K], (self.N, K)))
        eta[i] = eta_i
        self.eta = eta

    def _gc(self):
        keep = self.F.any(axis=0)
        if keep.all():
            return
        remap = np.cumsum(keep) - 1
        self.W, self.Sigma = self.W[keep], self.Sigma[keep]
        self.LL = self.LL[:, keep]
        self.F = self.F[:, keep]
        self.eta = self.eta[:, keep][:, :, keep]
        ok = keep[self.z]
        self.z = np.where(ok, remap[self.z], 0)

    # ------------------------------------------------------------------ Gibbs blocks
    def _sample_states(self):
        for i in range(self.N):
            sl = self._sl(i)
            active = np.flatnonzero(self.F[i])
            ll = np.ascontiguousarray(self.LL[sl][:, active])
            P = self._trans(self.eta[i], active)
            pi0 = np.full(len(active), 1.0 / len(active))
            u = self.rng.random(sl.stop - sl.start)
            self.z[sl] = active[_kernels.forward_backward_sample(ll, P, pi0, u)]

    def _counts(self, i):
        return _kernels.transition_counts(self.z[self._sl(i)], self.K)

    def _sample_transitions(self):
        K = self.K
        shape = self._shape(K)
        for i in range(self.N):
            active = np.flatnonzero(self.F[i])
            G = self.rng.gamma(shape + self._counts(i))
            block = G[np.ix_(active, active)]
            C = self.rng.gamma(shape[np.ix_(active, active)].sum(axis=1))
            G[np.ix_(active, active)] = block / block.sum(axis=1, keepdims=True) * C[:, None]
            self.eta[i] = G

    def _sample_emissions(self):
        for k in range(self.K):
            rows = self.obs & (self.z == k)
            post = self.prior.posterior(*sufficient_stats(self.Y[rows], self.X[rows]))
            self.W[k], self.Sigma[k] = post.sample(self.rng)

    # ------------------------------------------------------------------ scoring
    def log_joint(self) -> float:
        cfg = self.cfg
        n = self.Y.shape[0]
        total = float(self.LL[np.arange(n), self.z][self.obs].sum())
        K = self.K
        shape = self._shape(K)
        for i in range(self.N):
            active = np.flatnonzero(self.F[i])
            P = self._trans(self.eta[i], active)
            pos = np.full(K, -1)
            pos[active] = np.arange(len(active))
            zi = pos[self.z[self._sl(i)]]
            total += -np.log(len(active)) + float(np.log(P[zi[:-1], zi[1:]]).sum())
            a = shape[np.ix_(active, active)]
            total += float(np.sum(gammaln(a.sum(axis=1)) - gammaln(a).sum(axis=1)
                                  + ((a - 1) * np.log(P)).sum(axis=1)))
        total += sum(self.prior.logpdf(self.W[k], self.Sigma[k]) for k in range(K))
        total += ibp_log_prob(self.F, cfg.alpha)
        return total

    def snapshot(self, keys, log_prob, trace) -> HmmModel:
        K = self.K
        trans = np.zeros((self.N, K, K))
        for i in range(self.N):
            active = np.flatnonzero(self.F[i])
            trans[i][np.ix_(active, active)] = self._trans(self.eta[i], active)
        return HmmModel(
            coefs=self.W[:, :, :-1].copy(),
            bias=self.W[:, :, -1].copy(),
            sigma=self.Sigma.copy(),
            features=self.F.copy(),
            transitions=trans,
            keys=list(keys),
            config=self.cfg,
            log_prob=log_prob,
            trace=list(trace),
        )

    # ------------------------------------------------------------------ driver
    def run(self, keys) -> HmmModel:
        cfg = self.cfg
        lp = self.log_joint()
        trace = [lp]
        best_lp, best = lp, self.snapshot(keys, lp, [])
        for it in range(cfg.n_iterations):
            sim = self._similarity()
            for i in range(self.N):
                cur = self._marginal(i, np.flatnonzero(self.F[i]))
                cur = self._flip_shared(i, cur)
                if sim.shape[0] == self.K:
                    cur = self._swap(i, cur, sim)
                self._birth_death(i, cur)
            self._gc()
            self._sample_states()
            self._sample_transitions()
            self._sample_emissions()
            self.LL = self._emissions(self.W, self.Sigma)
            lp = self.log_joint()
            trace.append(lp)
            if it >= cfg.burn_in and lp > best_lp:
                best_lp, best = lp, self.snapshot(keys, lp, [])
            if it % 25 == 0:
                log.debug("iteration %d: K=%d log_joint=%.2f", it, self.K, lp)
        best.trace = trace
        return best


def _choice(p, u):
    idx = int(np.searchsorted(np.cumsum(p), u * p.sum(), side="right"))
    return min(idx, len(p) - 1)


def ibp_log_prob(F: np.ndarray, alpha: float) -> float:
    """Log-probability of a binary feature matrix under the Indian buffet process."""
    N = F.shape[0]
    m = F.sum(axis=0)
    F = F[:, m > 0]
    m = m[m > 0]
    K = F.shape[1]
    harmonic = float(np.sum(1.0 / np.arange(1, N + 1)))
    histories = Counter(F[:, k].tobytes() for k in range(K))
    out = K * np.log(alpha) - sum(gammaln(c + 1) for c in histories.values()) - alpha * harmonic
    out += float(np.sum(gammaln(N - m + 1) + gammaln(m) - gammaln(N + 1)))
    return float(out)
