"""Branch-level LSTM classifier implemented in numpy.

Each branch of a thread is a sequence of per-tweet feature vectors.  The
network is a stack of LSTM layers followed by ReLU feed-forward layers and a
per-timestep softmax over the four labels.  Tweets repeated across branches
are masked out of the loss so each tweet counts once.

Gate order inside the fused weight matrices is (input, forget, output, candidate).
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.special import expit, log_softmax

from .errors import EmptyMask, NonFiniteLoss, ShapeMismatch
from .thread_model import N_LABELS

K = N_LABELS


@dataclass(frozen=True)
class ModelConfig:
    lstm_units: tuple[int, ...] = (100,)
    dense_units: tuple[int, ...] = (100,)
    dropout: float = 0.0
    l2: float = 0.0

    def __post_init__(self):
        if not self.lstm_units:
            raise ValueError("need at least one LSTM layer")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")
        if self.l2 < 0:
            raise ValueError("l2 must be non-negative")


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 32
    max_epochs: int = 50
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    patience: int = 5

    def __post_init__(self):
        if self.learning_rate < 0 or self.batch_size < 1 or self.max_epochs < 0 or self.patience < 1:
            raise ValueError("invalid training configuration")


@dataclass
class BranchData:
    """Inputs (T, d), gold labels (T,) and loss mask (T,) for one branch."""
    inputs: np.ndarray
    labels: np.ndarray
    mask: np.ndarray
    ids: tuple[str, ...] = ()


class BranchLstmModel:
    def __init__(self, input_dim: int, config: ModelConfig, params: dict[str, np.ndarray]):
        self.input_dim = input_dim
        self.config = config
        self.params = params

    @classmethod
    def init(cls, input_dim: int, config: ModelConfig = ModelConfig(), seed: int = 0) -> "BranchLstmModel":
        rng = np.random.default_rng(seed)

        def glorot(fan_in, fan_out, shape):
            s = math.sqrt(6.0 / (fan_in + fan_out))
            return rng.uniform(-s, s, size=shape)

        params = {}
        size = input_dim
        for l, h in enumerate(config.lstm_units):
            params[f"lstm{l}.Wx"] = glorot(size, 4 * h, (size, 4 * h))
            params[f"lstm{l}.Wh"] = glorot(h, 4 * h, (h, 4 * h))
            params[f"lstm{l}.b"] = np.zeros(4 * h)
            size = h
        for l, u in enumerate(config.dense_units):
            params[f"dense{l}.W"] = glorot(size, u, (size, u))
            params[f"dense{l}.b"] = np.zeros(u)
            size = u
        params["out.W"] = glorot(size, K, (size, K))
        params["out.b"] = np.zeros(K)
        return cls(input_dim, config, params)

    @classmethod
    def zeros_like(cls, other: "BranchLstmModel") -> "BranchLstmModel":
        return cls(other.input_dim, other.config, {k: np.zeros_like(v) for k, v in other.params.items()})

    def copy(self) -> "BranchLstmModel":
        return BranchLstmModel(self.input_dim, self.config, {k: v.copy() for k, v in self.params.items()})

    @staticmethod
    def is_weight(name: str) -> bool:
        return not name.endswith(".b")

    def to_json(self) -> str:
        cfg = asdict(self.config)
        return json.dumps({
            "input_dim": self.input_dim,
            "config": cfg,
            "shapes": {k: list(v.shape) for k, v in self.params.items()},
            "weights": {k: v.ravel().tolist() for k, v in self.params.items()},
        })

    @classmethod
    def from_json(cls, text: str) -> "BranchLstmModel":
        d = json.loads(text)
        cfg = d["config"]
        config = ModelConfig(tuple(cfg["lstm_units"]), tuple(cfg["dense_units"]), cfg["dropout"], cfg["l2"])
        params = {k: np.array(v, dtype=float).reshape(d["shapes"][k]) for k, v in d["weights"].items()}
        return cls(d["input_dim"], config, params)


# -- forward / backward ---------------------------------------------------------

def _dropout_masks(model: BranchLstmModel, n_rows: int, rng: np.random.Generator) -> list[np.ndarray]:
    p = model.config.dropout
    sizes = [model.config.lstm_units[-1], *model.config.dense_units]
    return [(rng.uniform(size=(n_rows, s)) >= p) / (1.0 - p) for s in sizes]


def _forward(model: BranchLstmModel, X: np.ndarray, train_mode: bool, seed: int | None):
    """X: (B, T, d).  Returns logits (B, T, K) and the cache for backprop."""
    if X.ndim != 3 or X.shape[2] != model.input_dim:
        raise ShapeMismatch(f"expected inputs (B, T, {model.input_dim}), got {X.shape}")
    B, T, _ = X.shape
    P = model.params
    layer_in = X
    lstm_caches = []
    for l, h in enumerate(model.config.lstm_units):
        Wx, Wh, b = P[f"lstm{l}.Wx"], P[f"lstm{l}.Wh"], P[f"lstm{l}.b"]
        xz = layer_in @ Wx + b          # (B, T, 4h)
        hs = np.zeros((B, T + 1, h))
        cs = np.zeros((B, T + 1, h))
        gates = np.empty((B, T, 4 * h))
        for t in range(T):
            z = xz[:, t] + hs[:, t] @ Wh
            i = expit(z[:, :h])
            f = expit(z[:, h:2 * h])
            o = expit(z[:, 2 * h:3 * h])
            g = np.tanh(z[:, 3 * h:])
            cs[:, t + 1] = f * cs[:, t] + i * g
            hs[:, t + 1] = o * np.tanh(cs[:, t + 1])
            gates[:, t] = np.concatenate([i, f, o, g], axis=1)
        lstm_caches.append((layer_in, hs, cs, gates))
        layer_in = hs[:, 1:]

    a = layer_in.reshape(B * T, -1)
    masks = None
    if train_mode and model.config.dropout > 0:
        masks = _dropout_masks(model, B * T, np.random.default_rng(seed))
    dense_caches = []
    n_dense = len(model.config.dense_units)
    for l in range(n_dense + 1):
        a_in = a * masks[l] if masks is not None else a
        W, b = (P[f"dense{l}.W"], P[f"dense{l}.b"]) if l < n_dense else (P["out.W"], P["out.b"])
        z = a_in @ W + b
        dense_caches.append((a_in, z))
        a = np.maximum(z, 0.0) if l < n_dense else z
    logits = a.reshape(B, T, K)
    return logits, (lstm_caches, dense_caches, masks)


def forward(inputs: np.ndarray, model: BranchLstmModel, train_mode: bool = False, seed: int | None = None) -> np.ndarray:
    """Per-timestep label probabilities for one branch (T, d) or a padded batch (B, T, d)."""
    X = np.asarray(inputs, dtype=float)
    single = X.ndim == 2
    if single:
        X = X[None]
    if X.shape[1] < 1:
        raise ShapeMismatch("sequence must have at least one timestep")
    logits, _ = _forward(model, X, train_mode, seed)
    probs = np.exp(log_softmax(logits, axis=-1))
    return probs[0] if single else probs


def regularizer(model: BranchLstmModel, l2: float | None = None) -> float:
    l2 = model.config.l2 if l2 is None else l2
    return 0.5 * l2 * sum(float(np.sum(v * v)) for k, v in model.params.items() if model.is_weight(k))


def masked_loss(probs: np.ndarray, gold: Sequence[int], mask: Sequence[int], model: BranchLstmModel,
                l2: float | None = None) -> float:
    """Mean cross-entropy over masked-in positions plus the L2 penalty."""
    probs = np.asarray(probs, dtype=float)
    gold = np.asarray(gold, dtype=int)
    mask = np.asarray(mask, dtype=float)
    if probs.shape[:-1] != gold.shape or gold.shape != mask.shape:
        raise ShapeMismatch("probabilities, labels and mask must align")
    active = mask.sum()
    if active == 0:
        raise EmptyMask("mask selects no position")
    picked = np.take_along_axis(probs, gold[..., None], axis=-1)[..., 0]
    with np.errstate(divide="ignore"):
        nll = -np.log(picked)
    nll = np.where(mask > 0, nll, 0.0)
    return float(nll.sum() / active) + regularizer(model, l2)


def pad_batch(batch: Sequence[BranchData], input_dim: int):
    T = max(len(b.labels) for b in batch)
    X = np.zeros((len(batch), T, input_dim))
    Y = np.zeros((len(batch), T), dtype=int)
    M = np.zeros((len(batch), T))
    for i, b in enumerate(batch):
        n = len(b.labels)
        X[i, :n] = b.inputs
        Y[i, :n] = b.labels
        M[i, :n] = b.mask
    return X, Y, M


def loss_and_gradient(model: BranchLstmModel, X: np.ndarray, Y: np.ndarray, M: np.ndarray,
                      train_mode: bool = False, seed: int | None = None,
                      normalizer: float | None = None):
    """Masked loss and exact gradient for a padded batch.

    The data term is divided by ``normalizer`` (default: the number of active
    positions).  A batch with no active position contributes only the penalty.
    """
    logits, (lstm_caches, dense_caches, masks) = _forward(model, X, train_mode, seed)
    B, T, _ = logits.shape
    P = model.params
    cfg = model.config
    logp = log_softmax(logits, axis=-1)
    active = M.sum() if normalizer is None else normalizer
    grads = {k: np.zeros_like(v) for k, v in P.items()}
    loss = regularizer(model)
    for k, v in P.items():
        if model.is_weight(k):
            grads[k] += cfg.l2 * v
    if active == 0:
        return loss, grads

    picked = np.take_along_axis(logp, Y[..., None], axis=-1)[..., 0]
    loss += float(-(picked * M).sum() / active)

    d = np.exp(logp)
    d[np.arange(B)[:, None], np.arange(T)[None, :], Y] -= 1.0
    d *= (M / active)[..., None]
    d = d.reshape(B * T, K)

    n_dense = len(cfg.dense_units)
    for l in range(n_dense, -1, -1):
        a_in, z = dense_caches[l]
        if l < n_dense:
            d = d * (z > 0)
            wname, bname = f"dense{l}.W", f"dense{l}.b"
        else:
            wname, bname = "out.W", "out.b"
        grads[wname] += a_in.T @ d
        grads[bname] += d.sum(axis=0)
        d = d @ P[wname].T
        if masks is not None:
            d = d * masks[l]
    dH = d.reshape(B, T, -1)

    for l in range(len(cfg.lstm_units) - 1, -1, -1):
        layer_in, hs, cs, gates = lstm_caches[l]
        h = cfg.lstm_units[l]
        Wx, Wh = P[f"lstm{l}.Wx"], P[f"lstm{l}.Wh"]
        dz_all = np.empty((B, T, 4 * h))
        dh_next = np.zeros((B, h))
        dc_next = np.zeros((B, h))
        for t in range(T - 1, -1, -1):
            i, f, o, g = (gates[:, t, k * h:(k + 1) * h] for k in range(4))
            tanh_c = np.tanh(cs[:, t + 1])
            dh = dH[:, t] + dh_next
            dc = dc_next + dh * o * (1.0 - tanh_c ** 2)
            dz = np.concatenate([
                dc * g * i * (1.0 - i),
                dc * cs[:, t] * f * (1.0 - f),
                dh * tanh_c * o * (1.0 - o),
                dc * i * (1.0 - g ** 2),
            ], axis=1)
            dz_all[:, t] = dz
            dh_next = dz @ Wh.T
            dc_next = dc * f
        grads[f"lstm{l}.Wx"] += np.einsum("btd,btk->dk", layer_in, dz_all)
        grads[f"lstm{l}.Wh"] += np.einsum("btd,btk->dk", hs[:, :-1], dz_all)
        grads[f"lstm{l}.b"] += dz_all.sum(axis=(0, 1))
        dH = dz_all @ Wx.T
    return loss, grads


def gradient(model: BranchLstmModel, batch: Sequence[BranchData], train_mode: bool = False,
             seed: int | None = None) -> dict[str, np.ndarray]:
    X, Y, M = pad_batch(batch, model.input_dim)
    return loss_and_gradient(model, X, Y, M, train_mode, seed)[1]


# -- training -----------------------------------------------------------------

def dataset_loss(model: BranchLstmModel, data: Sequence[BranchData], batch_size: int = 64) -> float:
    total, active = 0.0, 0.0
    for start in range(0, len(data), batch_size):
        X, Y, M = pad_batch(data[start:start + batch_size], model.input_dim)
        logits, _ = _forward(model, X, False, None)
        logp = log_softmax(logits, axis=-1)
        picked = np.take_along_axis(logp, Y[..., None], axis=-1)[..., 0]
        total -= float((picked * M).sum())
        active += M.sum()
    if active == 0:
        raise EmptyMask("no active positions")
    return total / active + regularizer(model)


def train(
    data: Sequence[BranchData],
    model: BranchLstmModel,
    config: TrainConfig = TrainConfig(),
    dev: Sequence[BranchData] | None = None,
    on_epoch: Callable[[int, float, float | None], None] | None = None,
) -> BranchLstmModel:
    """Adam over seeded shuffled mini-batches; early stopping on dev loss when ``dev`` is given."""
    model = model.copy()
    if not data:
        return model
    rng = np.random.default_rng(config.seed)
    m = {k: np.zeros_like(v) for k, v in model.params.items()}
    v = {k: np.zeros_like(p) for k, p in model.params.items()}
    step = 0
    best, best_loss, bad_epochs = model.copy(), math.inf, 0
    for epoch in range(config.max_epochs):
        order = rng.permutation(len(data))
        epoch_loss = 0.0
        for start in range(0, len(order), config.batch_size):
            batch = [data[i] for i in order[start:start + config.batch_size]]
            X, Y, M = pad_batch(batch, model.input_dim)
            loss, grads = loss_and_gradient(model, X, Y, M, train_mode=True,
                                            seed=int(rng.integers(2 ** 31)))
            if not np.isfinite(loss):
                raise NonFiniteLoss(f"non-finite loss at epoch {epoch}")
            epoch_loss += loss * len(batch)
            step += 1
            lr = config.learning_rate * math.sqrt(1 - config.beta2 ** step) / (1 - config.beta1 ** step)
            for k, p in model.params.items():
                m[k] = config.beta1 * m[k] + (1 - config.beta1) * grads[k]
                v[k] = config.beta2 * v[k] + (1 - config.beta2) * grads[k] ** 2
                p -= lr * m[k] / (np.sqrt(v[k]) + config.eps)
        dev_loss = dataset_loss(model, dev) if dev else None
        if on_epoch is not None:
            on_epoch(epoch, epoch_loss / len(data), dev_loss)
        if dev_loss is not None:
            if dev_loss < best_loss:
                best, best_loss, bad_epochs = model.copy(), dev_loss, 0
            else:
                bad_epochs += 1
                if bad_epochs >= config.patience:
                    return best
    return best if dev else model


def predict_branches(model: BranchLstmModel, data: Sequence[BranchData]) -> dict[str, int]:
    """Label for each tweet id, taken from its mask-1 occurrence."""
    out: dict[str, int] = {}
    for br in data:
        probs = forward(br.inputs, model)
        labels = np.argmax(probs, axis=-1)
        for tid, bit, y in zip(br.ids, br.mask, labels):
            if bit and tid not in out:
                out[tid] = int(y)
    return out


# -- hyperparameter search ------------------------------------------------------

@dataclass(frozen=True)
class HyperSearchSpace:
    lstm_layers: tuple[int, ...] = (1, 2)
    lstm_units: tuple[int, ...] = (50, 100, 200)
    dense_layers: tuple[int, ...] = (1, 2)
    dense_units: tuple[int, ...] = (50, 100, 200)
    dropout: tuple[float, float] = (0.0, 0.5)
    l2: tuple[float, float] = (1e-6, 1e-2)                # log-uniform
    batch_size: tuple[int, ...] = (16, 32, 64)
    learning_rate: tuple[float, float] = (1e-4, 1e-2)     # log-uniform
    max_epochs: tuple[int, ...] = (30,)
    budget: int = 10
    dev_event: str = "ottawashooting"

    def __post_init__(self):
        if self.budget < 1:
            raise ValueError("budget must be >= 1")
        for name in ("lstm_layers", "lstm_units", "dense_layers", "dense_units", "batch_size", "max_epochs"):
            if not getattr(self, name):
                raise ValueError(f"empty search range {name}")

    def sample(self, rng: np.random.Generator, seed: int) -> tuple[ModelConfig, TrainConfig]:
        def log_uniform(lo, hi):
            return float(math.exp(rng.uniform(math.log(lo), math.log(hi))))

        n_lstm = int(rng.choice(self.lstm_layers))
        n_dense = int(rng.choice(self.dense_layers))
        model_cfg = ModelConfig(
            lstm_units=tuple(int(rng.choice(self.lstm_units)) for _ in range(n_lstm)),
            dense_units=tuple(int(rng.choice(self.dense_units)) for _ in range(n_dense)),
            dropout=float(rng.uniform(*self.dropout)),
            l2=log_uniform(*self.l2),
        )
        train_cfg = TrainConfig(
            learning_rate=log_uniform(*self.learning_rate),
            batch_size=int(rng.choice(self.batch_size)),
            max_epochs=int(rng.choice(self.max_epochs)),
            seed=seed,
        )
        return model_cfg, train_cfg


@dataclass
class Trial:
    index: int
    model_config: ModelConfig
    train_config: TrainConfig
    dev_loss: float
    dev_macro_f1: float

    def to_json(self) -> str:
        return json.dumps({"trial": self.index, "model_config": asdict(self.model_config),
                           "train_config": asdict(self.train_config),
                           "dev_loss": self.dev_loss, "dev_macro_f1": self.dev_macro_f1})


@dataclass
class SearchResult:
    model_config: ModelConfig
    train_config: TrainConfig
    model: BranchLstmModel
    trials: list[Trial] = field(default_factory=list)

    def trial_log(self) -> str:
        return "".join(t.to_json() + "\n" for t in self.trials)


def hyper_search(space: HyperSearchSpace, train_data: Sequence[BranchData], dev_data: Sequence[BranchData],
                 seed: int = 0) -> SearchResult:
    """Seeded random search; the best trial maximizes dev macro-F1 (ties: lower dev loss, then earlier)."""
    from .metrics import macro_f1

    if not train_data or not dev_data:
        raise ValueError("hyper_search needs non-empty training and development data")
    input_dim = train_data[0].inputs.shape[1]
    rng = np.random.default_rng(seed)
    gold = {tid: int(y) for br in dev_data for tid, bit, y in zip(br.ids, br.mask, br.labels) if bit}
    trials, best = [], None
    for index in range(space.budget):
        trial_seed = int(rng.integers(2 ** 31))
        model_cfg, train_cfg = space.sample(rng, trial_seed)
        model = train(train_data, BranchLstmModel.init(input_dim, model_cfg, trial_seed), train_cfg, dev=dev_data)
        pred = predict_branches(model, dev_data)
        ids = sorted(gold)
        f1 = macro_f1([gold[t] for t in ids], [pred[t] for t in ids])
        trial = Trial(index, model_cfg, train_cfg, dataset_loss(model, dev_data), f1)
        trials.append(trial)
        if best is None or (f1, -trial.dev_loss) > (best[0].dev_macro_f1, -best[0].dev_loss):
            best = (trial, model)
    return SearchResult(best[0].model_config, best[0].train_config, best[1], trials)
