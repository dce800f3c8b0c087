"""Classifier adapters used by the cross-validation harness.

Every adapter is fitted on training threads through a :class:`FoldContext`,
which owns all fold-level state derived from training data (vocabulary,
POS tagset, class weights, feature scaling).  Nothing in a context is ever
computed from test threads.
"""
from __future__ import annotations

import heapq
from dataclasses import dataclass, field
from typing import Callable, Protocol, Sequence

import numpy as np

from . import branch_lstm, crf, hawkes, maxent
from .errors import ConfigError, MalformedInput
from .features import (
    FeatureConfig,
    FeatureGroup,
    FeatureResources,
    assemble_thread,
    build_tagset,
    build_vocabulary,
)
from .thread_model import ConversationThread, StanceLabel, extract_branches

DEFAULT_DEV_EVENT = "ottawashooting"
FALLBACK_DEV_EVENT = "ferguson"


def require_labels(threads: Sequence[ConversationThread]) -> None:
    for th in threads:
        for tw in th:
            if tw.label is None:
                raise MalformedInput(f"tweet {tw.id!r} in thread {th.thread_id!r} has no stance label")


def causal_order(thread: ConversationThread) -> list[str]:
    """Tweets by (timestamp, id), except that a reply never precedes its parent."""
    order = []
    heap = [(thread.root.timestamp, thread.root_id)]
    while heap:
        _, tid = heapq.heappop(heap)
        order.append(tid)
        for child in thread.children[tid]:
            heapq.heappush(heap, (thread.tweets[child].timestamp, child))
    return order


@dataclass
class Standardizer:
    mean: np.ndarray
    scale: np.ndarray

    @classmethod
    def fit(cls, X: np.ndarray) -> "Standardizer":
        mean = X.mean(axis=0)
        scale = X.std(axis=0)
        scale[scale == 0] = 1.0
        return cls(mean, scale)

    @classmethod
    def identity(cls, dim: int) -> "Standardizer":
        return cls(np.zeros(dim), np.ones(dim))

    def __call__(self, X: np.ndarray) -> np.ndarray:
        return (X - self.mean) / self.scale


@dataclass
class FoldContext:
    config: FeatureConfig
    resources: FeatureResources
    weights: np.ndarray
    train_events: tuple[str, ...]
    scaler: Standardizer | None = None
    seed: int = 0
    _cache: dict = field(default_factory=dict, repr=False)

    @classmethod
    def build(
        cls,
        train_threads: Sequence[ConversationThread],
        config: FeatureConfig,
        provider=None,
        swear_words=None,
        seed: int = 0,
        scale: bool = True,
        vocab_min_count: int = 1,
    ) -> "FoldContext":
        require_labels(train_threads)
        needs_vocab = FeatureGroup.HF in config.groups
        resources = FeatureResources(
            provider=provider,
            tagset=build_tagset(train_threads),
            swear_words=swear_words,
            vocabulary=build_vocabulary(train_threads, vocab_min_count) if needs_vocab else None,
        )
        counts = [0] * 4
        for th in train_threads:
            for tw in th:
                counts[int(tw.label)] += 1
        ctx = cls(config, resources, maxent.category_weights(counts),
                  tuple(sorted({th.event for th in train_threads})), seed=seed)
        if scale:
            X = np.vstack([ctx.raw_features(th)[1] for th in train_threads])
            ctx.scaler = Standardizer.fit(X)
        return ctx

    def raw_features(self, thread: ConversationThread) -> tuple[list[str], np.ndarray]:
        key = thread.thread_id
        if key not in self._cache:
            vecs = assemble_thread(thread, self.config, self.resources)
            ids = list(vecs)
            self._cache[key] = (ids, np.vstack([vecs[t].values for t in ids]), vecs[ids[0]].layout)
        ids, X, _ = self._cache[key]
        return ids, X

    def features(self, thread: ConversationThread) -> dict[str, np.ndarray]:
        ids, X = self.raw_features(thread)
        if self.scaler is not None:
            X = self.scaler(X)
        return dict(zip(ids, X))

    def layout(self, thread: ConversationThread) -> list:
        self.raw_features(thread)
        return [e.__dict__ for e in self._cache[thread.thread_id][2]]


class StanceClassifier(Protocol):
    def fit(self, threads: Sequence[ConversationThread], ctx: FoldContext) -> "StanceClassifier": ...

    def predict(self, thread: ConversationThread) -> dict[str, StanceLabel]: ...


# -- adapters ---------------------------------------------------------------------

class MaxEntClassifier:
    def __init__(self, l2: float = 1.0, max_iter: int = 500, weighted: bool = True):
        self.l2, self.max_iter, self.weighted = l2, max_iter, weighted

    def fit(self, threads, ctx):
        self.ctx = ctx
        rows, labels = [], []
        for th in threads:
            feats = ctx.features(th)
            for tw in th:
                rows.append(feats[tw.id])
                labels.append(int(tw.label))
        self.model = maxent.train(np.vstack(rows), labels, ctx.weights if self.weighted else None,
                                  l2=self.l2, max_iter=self.max_iter,
                                  feature_layout=ctx.layout(threads[0]))
        return self

    def predict(self, thread):
        feats = self.ctx.features(thread)
        ids = list(feats)
        pred = maxent.predict(np.vstack([feats[t] for t in ids]), self.model)
        return {t: StanceLabel(int(y)) for t, y in zip(ids, pred)}


class CrfClassifier:
    def __init__(self, topology: str = "chain", l2: float = 1.0, max_iter: int = 200,
                 weighted: bool = True, causal: bool = True, freeze_transition: bool = False):
        self.topology = crf.Topology(topology)
        self.l2, self.max_iter, self.weighted, self.causal = l2, max_iter, weighted, causal
        self.freeze_transition = freeze_transition

    def instances(self, thread: ConversationThread, ctx: FoldContext, labelled: bool = True) -> list[crf.Instance]:
        feats = ctx.features(thread)
        if self.topology is crf.Topology.CHAIN:
            out = []
            for br in extract_branches(thread):
                labels = [int(thread.tweets[t].label) for t in br.tweet_ids] if labelled else None
                out.append(crf.Instance.chain([feats[t] for t in br.tweet_ids], labels, br.tweet_ids))
            return out
        order = causal_order(thread)
        pos = {t: i for i, t in enumerate(order)}
        parents = np.array([pos[thread.tweets[t].parent_id] if thread.tweets[t].parent_id else -1
                            for t in order])
        labels = np.array([int(thread.tweets[t].label) for t in order]) if labelled else None
        return [crf.Instance(np.vstack([feats[t] for t in order]), parents, labels, tuple(order))]

    def fit(self, threads, ctx):
        self.ctx = ctx
        insts = [inst for th in threads for inst in self.instances(th, ctx)]
        cfg = crf.CrfTrainConfig(l2=self.l2, max_iter=self.max_iter, topology=self.topology,
                                 freeze_transition=self.freeze_transition)
        self.model = crf.train(insts, cfg, ctx.weights if self.weighted else None,
                               feature_layout=ctx.layout(threads[0]))
        return self

    def predict(self, thread):
        out: dict[str, StanceLabel] = {}
        for inst in self.instances(thread, self.ctx, labelled=False):
            labels = crf.decode(self.model, inst, causal=self.causal)
            for tid, y in zip(inst.ids, labels):
                out.setdefault(tid, StanceLabel(int(y)))   # first branch containing the tweet wins
        return out


def branch_data(thread: ConversationThread, feats: dict[str, np.ndarray], labelled: bool = True):
    out = []
    for br in extract_branches(thread):
        labels = [int(thread.tweets[t].label) if labelled else 0 for t in br.tweet_ids]
        out.append(branch_lstm.BranchData(np.vstack([feats[t] for t in br.tweet_ids]),
                                          np.array(labels), np.array(br.novelty_mask, dtype=float),
                                          br.tweet_ids))
    return out


def pick_dev_event(train_events: Sequence[str], preferred: str = DEFAULT_DEV_EVENT) -> str:
    for candidate in (preferred, FALLBACK_DEV_EVENT):
        if candidate in train_events:
            return candidate
    return sorted(train_events)[0]


class LstmClassifier:
    def __init__(self, lstm_units=(100,), dense_units=(100,), dropout: float = 0.0, l2: float = 0.0,
                 learning_rate: float = 1e-3, batch_size: int = 32, max_epochs: int = 30,
                 search_budget: int = 0, dev_event: str = DEFAULT_DEV_EVENT, search_space: dict | None = None):
        self.model_config = branch_lstm.ModelConfig(tuple(lstm_units), tuple(dense_units), dropout, l2)
        self.train_kw = dict(learning_rate=learning_rate, batch_size=batch_size, max_epochs=max_epochs)
        self.search_budget = search_budget
        self.dev_event = dev_event
        self.search_space = search_space or {}
        self.trials: list = []
        self.chosen_dev_event: str | None = None

    def fit(self, threads, ctx):
        self.ctx = ctx
        data = [b for th in threads for b in branch_data(th, ctx.features(th))]
        dim = data[0].inputs.shape[1]
        model_cfg = self.model_config
        train_cfg = branch_lstm.TrainConfig(seed=ctx.seed, **self.train_kw)
        if self.search_budget > 0 and len(ctx.train_events) > 1:
            dev = pick_dev_event(ctx.train_events, self.dev_event)
            self.chosen_dev_event = dev
            tr = [b for th in threads if th.event != dev for b in branch_data(th, ctx.features(th))]
            dv = [b for th in threads if th.event == dev for b in branch_data(th, ctx.features(th))]
            space = branch_lstm.HyperSearchSpace(budget=self.search_budget, dev_event=dev, **self.search_space)
            result = branch_lstm.hyper_search(space, tr, dv, seed=ctx.seed)
            self.trials = result.trials
            model_cfg, train_cfg = result.model_config, result.train_config
        init = branch_lstm.BranchLstmModel.init(dim, model_cfg, seed=train_cfg.seed)
        self.model = branch_lstm.train(data, init, train_cfg)
        return self

    def predict(self, thread):
        pred = branch_lstm.predict_branches(self.model, branch_data(thread, self.ctx.features(thread), False))
        return {t: StanceLabel(y) for t, y in pred.items()}


class HawkesClassifier:
    def __init__(self, method: str = "approx", max_iter: int = 500, vocab_min_count: int = 1):
        if method not in ("approx", "grad"):
            raise ConfigError(f"unknown Hawkes fitting method {method!r}")
        self.method, self.max_iter, self.vocab_min_count = method, max_iter, vocab_min_count

    def fit(self, threads, ctx):
        vocab = ctx.resources.vocabulary
        if vocab is None:
            vocab = build_vocabulary(threads, self.vocab_min_count)
        history = hawkes.history_from_threads(threads, vocab)
        params = hawkes.fit_approx(history)
        if self.method == "grad":
            params = hawkes.fit_grad(history, params, max_iter=self.max_iter)
        self.params = params
        return self

    def predict(self, thread):
        return hawkes.predict_greedy(self.params, thread)


REGISTRY: dict[str, Callable[..., StanceClassifier]] = {
    "maxent": MaxEntClassifier,
    "crf-linear": lambda **kw: CrfClassifier(topology="chain", **kw),
    "crf-tree": lambda **kw: CrfClassifier(topology="tree", **kw),
    "lstm": LstmClassifier,
    "hawkes-approx": lambda **kw: HawkesClassifier(method="approx", **kw),
    "hawkes-grad": lambda **kw: HawkesClassifier(method="grad", **kw),
}


def register(name: str, factory: Callable[..., StanceClassifier]) -> None:
    """Add an extra per-tweet or sequential model to the harness."""
    REGISTRY[name] = factory


def make_classifier(name: str, params: dict | None = None) -> StanceClassifier:
    if name not in REGISTRY:
        raise ConfigError(f"unknown classifier {name!r}; choose from {sorted(REGISTRY)}")
    try:
        return REGISTRY[name](**(params or {}))
    except TypeError as exc:
        raise ConfigError(f"bad parameters for {name}: {exc}") from None
