"""Class-weighted multinomial logistic regression, the per-tweet counterpart of the CRF."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy import optimize
from scipy.special import log_softmax, softmax

from .errors import DimensionMismatch, OptimizationDiverged, ZeroCount
from .thread_model import LABELS, N_LABELS, StanceLabel

K = N_LABELS


@dataclass
class MaxEntModel:
    weights: np.ndarray
    bias: np.ndarray
    feature_layout: list = field(default_factory=list)

    @property
    def dim(self) -> int:
        return self.weights.shape[1]

    def to_json(self) -> str:
        return json.dumps({"feature_layout": self.feature_layout,
                           "node_weights": self.weights.tolist(),
                           "node_bias": self.bias.tolist()})

    @classmethod
    def from_json(cls, text: str) -> "MaxEntModel":
        d = json.loads(text)
        return cls(np.array(d["node_weights"], dtype=float).reshape(K, -1),
                   np.array(d["node_bias"], dtype=float), d.get("feature_layout", []))


def predict_proba(x: np.ndarray, model: MaxEntModel) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != model.dim:
        raise DimensionMismatch(f"feature width {x.shape[-1]} != model width {model.dim}")
    return softmax(x @ model.weights.T + model.bias, axis=-1)


def predict(x: np.ndarray, model: MaxEntModel) -> np.ndarray:
    return np.argmax(predict_proba(x, model), axis=-1)


def category_weights(counts: Mapping[StanceLabel, int] | Sequence[int]) -> np.ndarray:
    """Inverse-frequency weights ``N / (4 * count_c)`` in canonical label order."""
    if isinstance(counts, Mapping):
        counts = [counts.get(lab, 0) for lab in LABELS]
    counts = np.asarray(counts, dtype=float)
    if counts.shape != (K,):
        raise ValueError("need one count per label")
    if np.any(counts <= 0):
        missing = [LABELS[i].key for i in np.flatnonzero(counts <= 0)]
        raise ZeroCount(f"no training examples for {missing}")
    return counts.sum() / (K * counts)


def nll_and_gradient(theta: np.ndarray, X: np.ndarray, y: np.ndarray, sample_w: np.ndarray, l2: float):
    """Weighted NLL with an L2 penalty on the weight matrix (bias unpenalized).

    ``theta`` packs ``[W.ravel(), b]``.
    """
    dim = X.shape[1]
    W = theta[:K * dim].reshape(K, dim)
    b = theta[K * dim:]
    logp = log_softmax(X @ W.T + b, axis=1)
    n = X.shape[0]
    loss = -float(np.sum(sample_w * logp[np.arange(n), y])) + 0.5 * l2 * float(np.sum(W * W))
    resid = np.exp(logp)
    resid[np.arange(n), y] -= 1.0
    resid *= sample_w[:, None]
    gW = resid.T @ X + l2 * W
    gb = resid.sum(axis=0)
    return loss, np.concatenate([gW.ravel(), gb])


def train(
    X: np.ndarray,
    y: Sequence[int],
    weights: np.ndarray | None = None,
    l2: float = 1.0,
    max_iter: int = 500,
    tol: float = 1e-8,
    feature_layout=None,
    init: np.ndarray | None = None,
) -> MaxEntModel:
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=int)
    w_cls = np.ones(K) if weights is None else np.asarray(weights, dtype=float)
    sample_w = w_cls[y]
    dim = X.shape[1]
    theta0 = np.zeros(K * dim + K) if init is None else np.asarray(init, dtype=float)

    def objective(theta):
        loss, grad = nll_and_gradient(theta, X, y, sample_w, l2)
        if not np.isfinite(loss):
            raise OptimizationDiverged("non-finite MaxEnt objective")
        return loss, grad

    res = optimize.minimize(objective, theta0, jac=True, method="L-BFGS-B",
                            options={"maxiter": max_iter, "gtol": tol})
    W = res.x[:K * dim].reshape(K, dim).copy()
    b = res.x[K * dim:].copy()
    return MaxEntModel(W, b, list(feature_layout or []))


def objective_value(model: MaxEntModel, X, y, weights=None, l2: float = 1.0) -> float:
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=int)
    w_cls = np.ones(K) if weights is None else np.asarray(weights, dtype=float)
    theta = np.concatenate([model.weights.ravel(), model.bias])
    return nll_and_gradient(theta, X, y, w_cls[y], l2)[0]
