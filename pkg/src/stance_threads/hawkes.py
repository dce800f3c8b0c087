"""Multivariate Hawkes process over stance labels, with a multinomial text model.

Intensity of label ``y`` in thread ``m`` at time ``t``::

    lambda_y(t) = mu[y] + sum_{l: m_l = m, t_l < t} alpha[y_l, y] * kappa(t - t_l)
    kappa(dt)   = omega * exp(-omega * dt)

Rows of ``alpha`` index the exciting label, columns the excited one.  Each
thread is observed on ``[0, T_m]`` and threads never excite each other, so the
log-likelihood is a sum over threads of text, event and compensator terms.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy import optimize, sparse

from .errors import EmptyHistory, NegativeDelta, NonFiniteLikelihood, OptimizationDiverged
from .features import tokenize
from .thread_model import N_LABELS, ConversationThread, StanceLabel, chronological_order

DEFAULT_OMEGA = 0.1
_FLOOR = 1e-10


@dataclass
class ThreadEvents:
    thread_id: str
    times: np.ndarray          # (n,) non-decreasing, seconds from thread start
    labels: np.ndarray         # (n,) int label indices
    words: sparse.csr_matrix   # (n, V) token counts
    horizon: float
    tweet_ids: tuple[str, ...] = ()

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.labels = np.asarray(self.labels, dtype=int)
        if not sparse.issparse(self.words):
            self.words = sparse.csr_matrix(np.asarray(self.words, dtype=float))
        else:
            self.words = sparse.csr_matrix(self.words, dtype=float)
        n = self.times.shape[0]
        if self.labels.shape != (n,) or self.words.shape[0] != n:
            raise ValueError("times, labels and words must have the same length")
        if n and (np.any(np.diff(self.times) < 0) or self.times[0] < 0 or self.times[-1] > self.horizon):
            raise ValueError("event times must be non-decreasing within [0, horizon]")

    def __len__(self) -> int:
        return self.times.shape[0]


@dataclass
class EventHistory:
    threads: list[ThreadEvents]
    vocabulary: tuple[str, ...] = ()

    @property
    def n_events(self) -> int:
        return sum(len(th) for th in self.threads)

    @property
    def vocab_size(self) -> int:
        if self.threads:
            return self.threads[0].words.shape[1]
        return len(self.vocabulary)

    def word_counts_by_label(self) -> np.ndarray:
        out = np.zeros((N_LABELS, self.vocab_size))
        for th in self.threads:
            if len(th):
                onehot = sparse.csr_matrix(
                    (np.ones(len(th)), (th.labels, np.arange(len(th)))), shape=(N_LABELS, len(th))
                )
                out += (onehot @ th.words).toarray()
        return out


def thread_events(
    thread: ConversationThread,
    vocabulary: Sequence[str],
    labels: dict[str, StanceLabel] | None = None,
) -> ThreadEvents:
    """Chronologically ordered events of ``thread``; times start at 0, horizon = last event."""
    index = {w: i for i, w in enumerate(vocabulary)}
    order = chronological_order(thread)
    t0 = thread.tweets[order[0]].timestamp
    rows, cols, vals = [], [], []
    for r, tid in enumerate(order):
        for tok in tokenize(thread.tweets[tid].text):
            c = index.get(tok)
            if c is not None:
                rows.append(r)
                cols.append(c)
                vals.append(1.0)
    words = sparse.csr_matrix((vals, (rows, cols)), shape=(len(order), len(vocabulary)))
    times = np.array([thread.tweets[tid].timestamp - t0 for tid in order], dtype=float)
    if labels is None:
        labs = [thread.tweets[tid].label for tid in order]
        if any(l is None for l in labs):
            labs = [int(l) if l is not None else 0 for l in labs]
    else:
        labs = [labels[tid] for tid in order]
    return ThreadEvents(
        thread_id=thread.thread_id,
        times=times,
        labels=np.array([int(l) for l in labs]),
        words=words,
        horizon=float(times[-1]),
        tweet_ids=tuple(order),
    )


def history_from_threads(threads: Iterable[ConversationThread], vocabulary: Sequence[str]) -> EventHistory:
    return EventHistory([thread_events(th, vocabulary) for th in threads], tuple(vocabulary))


@dataclass
class HawkesParams:
    mu: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray
    omega: float = DEFAULT_OMEGA
    vocabulary: tuple[str, ...] = field(default=())

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=float)
        self.alpha = np.asarray(self.alpha, dtype=float)
        self.beta = np.asarray(self.beta, dtype=float)
        if self.mu.shape != (N_LABELS,) or self.alpha.shape != (N_LABELS, N_LABELS):
            raise ValueError("mu must have shape (4,) and alpha (4, 4)")
        if self.beta.ndim != 2 or self.beta.shape[0] != N_LABELS:
            raise ValueError("beta must have shape (4, V)")
        if np.any(self.mu < 0) or np.any(self.alpha < 0):
            raise ValueError("mu and alpha must be non-negative")
        if not self.omega > 0:
            raise ValueError("omega must be positive")
        if np.any(self.beta < 0) or not np.allclose(self.beta.sum(axis=1), 1.0, atol=1e-9, rtol=0):
            raise ValueError("beta rows must be probability vectors")

    def replace(self, **kw) -> "HawkesParams":
        d = dict(mu=self.mu, alpha=self.alpha, beta=self.beta, omega=self.omega, vocabulary=self.vocabulary)
        d.update(kw)
        return HawkesParams(**d)

    def to_json(self) -> str:
        return json.dumps({
            "mu": self.mu.tolist(),
            "alpha": self.alpha.tolist(),
            "omega": self.omega,
            "vocabulary": list(self.vocabulary),
            "beta": self.beta.tolist(),
        })

    @classmethod
    def from_json(cls, text: str) -> "HawkesParams":
        d = json.loads(text)
        return cls(mu=d["mu"], alpha=d["alpha"], beta=d["beta"], omega=d["omega"],
                   vocabulary=tuple(d.get("vocabulary", ())))


def kernel(dt, omega: float = DEFAULT_OMEGA):
    dt_arr = np.asarray(dt, dtype=float)
    if np.any(dt_arr < 0):
        raise NegativeDelta(f"kernel evaluated at negative delay {dt}")
    out = omega * np.exp(-omega * dt_arr)
    return float(out) if out.ndim == 0 else out


def _excitation(times: np.ndarray, labels: np.ndarray, omega: float) -> np.ndarray:
    """B[n, y'] = sum over strictly earlier events l with label y' of kappa(t_n - t_l)."""
    dt = times[:, None] - times[None, :]
    earlier = dt > 0
    K = np.where(earlier, omega * np.exp(-omega * np.where(earlier, dt, 0.0)), 0.0)
    onehot = np.zeros((times.shape[0], N_LABELS))
    onehot[np.arange(times.shape[0]), labels] = 1.0
    return K @ onehot


def intensity(y: int, t: float, events: ThreadEvents, params: HawkesParams) -> float:
    """Intensity of label ``y`` at time ``t`` given the events of one thread."""
    prior = events.times < t
    if not np.any(prior):
        return float(params.mu[y])
    dt = t - events.times[prior]
    contrib = params.alpha[events.labels[prior], y] * kernel(dt, params.omega)
    return float(params.mu[y] + np.sum(contrib))


def history_intensity(y: int, m: str, t: float, history: EventHistory, params: HawkesParams) -> float:
    for th in history.threads:
        if th.thread_id == m:
            return intensity(y, t, th, params)
    return float(params.mu[y])


def _survival(events: ThreadEvents, omega: float) -> np.ndarray:
    return 1.0 - np.exp(-omega * (events.horizon - events.times))


def compensator(events: ThreadEvents, params: HawkesParams) -> float:
    """Integral over [0, T] of the total intensity, summed over labels."""
    g = _survival(events, params.omega)
    return float(params.mu.sum() * events.horizon + np.sum(g * params.alpha[events.labels].sum(axis=1)))


def text_log_likelihood(words: sparse.csr_matrix, beta: np.ndarray) -> np.ndarray:
    """(n, 4) matrix of log p(W_n | y) under the per-label multinomials."""
    with np.errstate(divide="ignore"):
        logb = np.log(beta)
    if words.nnz == 0:
        return np.zeros((words.shape[0], N_LABELS))
    # avoid 0 * -inf for words absent from a tweet
    logb = np.where(np.isfinite(logb), logb, -1e300)
    return np.asarray(words @ logb.T)


def log_likelihood(history: EventHistory, params: HawkesParams, include_text: bool = True) -> float:
    total = 0.0
    for th in history.threads:
        total += _thread_loglik(th, params, include_text)
    return total


def _thread_loglik(th: ThreadEvents, params: HawkesParams, include_text: bool) -> float:
    n = len(th)
    ll = -compensator(th, params)
    if n == 0:
        return ll
    B = _excitation(th.times, th.labels, params.omega)
    lam = params.mu[th.labels] + np.einsum("nk,nk->n", B, params.alpha[:, th.labels].T)
    if np.any(lam <= 0):
        raise NonFiniteLikelihood("zero intensity at an observed event")
    ll += float(np.sum(np.log(lam)))
    if include_text:
        ll += float(np.sum(text_log_likelihood(th.words, params.beta)[np.arange(n), th.labels]))
    return ll


def _loglik_and_grad(history: EventHistory, mu: np.ndarray, alpha: np.ndarray, omega: float,
                     cache: list | None = None):
    """Temporal part of the log-likelihood and its gradient in (mu, alpha)."""
    ll = 0.0
    g_mu = np.zeros(N_LABELS)
    g_alpha = np.zeros((N_LABELS, N_LABELS))
    for i, th in enumerate(history.threads):
        if cache is not None and cache[i] is not None:
            B, survival = cache[i]
        else:
            B = _excitation(th.times, th.labels, omega)
            survival = _survival(th, omega)
            if cache is not None:
                cache[i] = (B, survival)
        labels = th.labels
        lam = mu[labels] + np.einsum("nk,nk->n", B, alpha[:, labels].T)
        if np.any(lam <= 0):
            return -np.inf, g_mu, g_alpha
        ll += np.sum(np.log(lam)) - mu.sum() * th.horizon - np.sum(survival * alpha[labels].sum(axis=1))
        inv = 1.0 / lam
        np.add.at(g_mu, labels, inv)
        g_mu -= th.horizon
        # d/d alpha[y', y]: sum over events n with y_n = y of B[n, y'] / lam_n
        weighted = B * inv[:, None]
        for y in range(N_LABELS):
            sel = labels == y
            if np.any(sel):
                g_alpha[:, y] += weighted[sel].sum(axis=0)
        s_by_label = np.bincount(labels, weights=survival, minlength=N_LABELS)
        g_alpha -= s_by_label[:, None]
    return ll, g_mu, g_alpha


def fit_beta(history: EventHistory) -> np.ndarray:
    counts = history.word_counts_by_label()
    V = counts.shape[1]
    if V == 0:
        raise ValueError("cannot fit a text model over an empty vocabulary")
    return (counts + 1.0) / (counts.sum(axis=1, keepdims=True) + V)


def fit_approx(history: EventHistory, omega: float = DEFAULT_OMEGA) -> HawkesParams:
    """Closed-form moment estimator used as the cheap fit and as the gradient-fit initializer.

    Every non-initial event is attributed to the latest earlier event of its
    thread; base rates come from thread-initial events over total observed time
    and excitations from the resulting label-transition ratios (the kernel
    integrates to one, so an expected offspring count is an ``alpha`` entry).
    """
    threads = [th for th in history.threads if len(th)]
    if not threads:
        raise EmptyHistory("no events to fit")
    total_time = sum(th.horizon for th in history.threads)
    initial = np.zeros(N_LABELS)
    trans = np.zeros((N_LABELS, N_LABELS))
    n_label = np.zeros(N_LABELS)
    for th in threads:
        initial[th.labels[0]] += 1
        np.add.at(n_label, th.labels, 1)
        np.add.at(trans, (th.labels[:-1], th.labels[1:]), 1)
    mu = initial / total_time if total_time > 0 else initial.copy()
    with np.errstate(invalid="ignore", divide="ignore"):
        alpha = np.where(n_label[:, None] > 0, trans / n_label[:, None], 0.0)
    return HawkesParams(mu=mu, alpha=alpha, beta=fit_beta(history), omega=omega,
                        vocabulary=history.vocabulary)


def fit_grad(
    history: EventHistory,
    init: HawkesParams | None = None,
    max_iter: int = 500,
    tol: float = 1e-6,
) -> HawkesParams:
    """Maximize the exact log-likelihood over (mu, alpha) with L-BFGS in log-space.

    ``omega`` and ``beta`` stay fixed (the text term does not depend on mu or
    alpha).  The returned parameters never have lower likelihood than ``init``.
    """
    if init is None:
        init = fit_approx(history)
    omega = init.omega
    cache: list = [None] * len(history.threads)

    def unpack(z):
        return np.exp(z[:N_LABELS]), np.exp(z[N_LABELS:]).reshape(N_LABELS, N_LABELS)

    def objective(z):
        mu, alpha = unpack(z)
        ll, g_mu, g_alpha = _loglik_and_grad(history, mu, alpha, omega, cache)
        if not np.isfinite(ll):
            return np.inf, np.zeros_like(z)
        grad = np.concatenate([g_mu * mu, (g_alpha * alpha).ravel()])
        return -ll, -grad

    z0 = np.log(np.concatenate([np.maximum(init.mu, _FLOOR), np.maximum(init.alpha, _FLOOR).ravel()]))
    init_ll, *_ = _loglik_and_grad(history, init.mu, init.alpha, omega, cache)
    start_ll = -objective(z0)[0]
    if not np.isfinite(start_ll):
        raise OptimizationDiverged("log-likelihood is not finite at the initial point")
    res = optimize.minimize(objective, z0, jac=True, method="L-BFGS-B",
                            options={"maxiter": max_iter, "gtol": tol})
    if not np.isfinite(res.fun):
        raise OptimizationDiverged(f"non-finite objective after optimization: {res.message}")
    mu, alpha = unpack(res.x)
    if -res.fun < init_ll:
        return init
    return init.replace(mu=mu, alpha=alpha)


# -- decoding -----------------------------------------------------------------

def label_scores(
    events: ThreadEvents, n: int, assigned: Sequence[int], params: HawkesParams,
    text_ll: np.ndarray | None = None,
) -> np.ndarray:
    """Greedy objective of each label for event ``n`` given labels assigned to events before it."""
    if text_ll is None:
        text_ll = text_log_likelihood(events.words[n], params.beta)[0]
    t = events.times[n]
    lam = params.mu.copy()
    prior = np.flatnonzero(events.times[:n] < t)
    if prior.size:
        k = kernel(t - events.times[prior], params.omega)
        lam = lam + k @ params.alpha[np.asarray(assigned)[prior]]
    with np.errstate(divide="ignore"):
        log_lam = np.log(lam)
    survival = 1.0 - math.exp(-params.omega * (events.horizon - t))
    return text_ll + log_lam - params.alpha.sum(axis=1) * survival


def predict_events(params: HawkesParams, events: ThreadEvents) -> list[int]:
    text_ll = text_log_likelihood(events.words, params.beta)
    assigned: list[int] = []
    for n in range(len(events)):
        scores = label_scores(events, n, assigned, params, text_ll[n])
        assigned.append(int(np.argmax(scores)))
    return assigned


def predict_greedy(params: HawkesParams, thread: ConversationThread) -> dict[str, StanceLabel]:
    events = thread_events(thread, params.vocabulary, labels={t: StanceLabel.SUPPORT for t in thread.tweets})
    labels = predict_events(params, events)
    return {tid: StanceLabel(y) for tid, y in zip(events.tweet_ids, labels)}


# -- simulation ---------------------------------------------------------------

def simulate(
    params: HawkesParams,
    n_threads: int,
    horizon: float,
    seed: int | None = None,
    words_per_event: int = 10,
) -> EventHistory:
    """Ogata thinning.  Intensities only decay between events, so the current
    total intensity bounds the future one until the next acceptance."""
    rng = np.random.default_rng(seed)
    V = params.beta.shape[1]
    threads = []
    for m in range(n_threads):
        times: list[float] = []
        labels: list[int] = []
        excite = np.zeros(N_LABELS)   # sum alpha[y_l, :] * kappa(t - t_l) at time t
        t = 0.0
        while True:
            bound = params.mu.sum() + excite.sum()
            if bound <= 0:
                break
            step = rng.exponential(1.0 / bound)
            t_new = t + step
            if t_new > horizon:
                break
            excite = excite * math.exp(-params.omega * step)
            t = t_new
            lam = params.mu + excite
            total = lam.sum()
            if rng.uniform() * bound <= total:
                y = int(rng.choice(N_LABELS, p=lam / total))
                times.append(t)
                labels.append(y)
                excite = excite + params.alpha[y] * params.omega
        words = np.zeros((len(times), V))
        for i, y in enumerate(labels):
            words[i] = rng.multinomial(words_per_event, params.beta[y])
        threads.append(ThreadEvents(
            thread_id=f"sim-{m}",
            times=np.array(times),
            labels=np.array(labels, dtype=int),
            words=sparse.csr_matrix(words.reshape(len(times), V)),
            horizon=float(horizon),
        ))
    return EventHistory(threads, params.vocabulary)
