"""Leave-one-event-out evaluation, result breakdowns and report (de)serialization."""
from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from . import metrics
from .errors import FoldFailure, TooFewEvents, UnknownFeature
from .features import EmbeddingProvider, FeatureConfig, FeatureResources, assemble_thread
from .pipeline import FoldContext, make_classifier, require_labels
from .thread_model import LABELS, Dataset, StanceLabel, depth_of

log = logging.getLogger(__name__)

DEPTH_BUCKETS = ("0", "1", "2", "3", "4", "5+")


@dataclass(frozen=True)
class FoldSpec:
    test_event: str
    train_events: tuple[str, ...]
    dev_event: str | None = None

    def __post_init__(self):
        if self.test_event in self.train_events:
            raise ValueError("test event cannot be a training event")
        if self.dev_event is not None and self.dev_event == self.test_event:
            raise ValueError("dev event cannot be the test event")


def make_folds(dataset: Dataset) -> list[FoldSpec]:
    events = sorted(dataset.events)
    if len(events) < 2:
        raise TooFewEvents(f"leave-one-event-out needs at least two events, got {len(events)}")
    return [FoldSpec(e, tuple(x for x in events if x != e)) for e in events]


def depth_bucket(depth: int) -> str:
    return str(depth) if depth < 5 else "5+"


@dataclass(frozen=True)
class Prediction:
    event: str
    thread_id: str
    tweet_id: str
    depth: int
    gold: StanceLabel
    pred: StanceLabel


@dataclass
class EvalReport:
    classifier: str
    features: str
    seed: int
    folds: list[FoldSpec]
    predictions: list[Prediction]
    extra: dict = field(default_factory=dict)

    # -- derived views --
    def gold(self, preds: Iterable[Prediction] | None = None) -> list[int]:
        return [int(p.gold) for p in (self.predictions if preds is None else preds)]

    def pred(self, preds: Iterable[Prediction] | None = None) -> list[int]:
        return [int(p.pred) for p in (self.predictions if preds is None else preds)]

    @property
    def macro_f1(self) -> float:
        return metrics.macro_f1(self.gold(), self.pred())

    def per_class(self) -> dict[str, dict[str, float]]:
        prf = metrics.per_class_prf(self.gold(), self.pred())
        return {lab.key: {"precision": float(p), "recall": float(r), "f1": float(f)}
                for lab, (p, r, f) in zip(LABELS, prf)}

    def confusion(self) -> np.ndarray:
        return metrics.confusion(self.gold(), self.pred())

    def breakdown(self, axis: str) -> list[dict]:
        return breakdown(self, axis)

    def to_dict(self) -> dict:
        return {
            "classifier": self.classifier,
            "features": self.features,
            "seed": self.seed,
            "macro_f1": self.macro_f1,
            "per_class": self.per_class(),
            "confusion": self.confusion().tolist(),
            "per_event": breakdown(self, "event"),
            "per_depth": breakdown(self, "depth"),
            "folds": [asdict(f) for f in self.folds],
            "predictions": [
                {"event": p.event, "thread_id": p.thread_id, "tweet_id": p.tweet_id, "depth": p.depth,
                 "gold": p.gold.key, "pred": p.pred.key}
                for p in self.predictions
            ],
            **self.extra,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        known = {"classifier", "features", "seed", "macro_f1", "per_class", "confusion", "per_event",
                 "per_depth", "folds", "predictions"}
        return cls(
            classifier=d["classifier"],
            features=d["features"],
            seed=d["seed"],
            folds=[FoldSpec(f["test_event"], tuple(f["train_events"]), f.get("dev_event")) for f in d["folds"]],
            predictions=[Prediction(p["event"], p["thread_id"], p["tweet_id"], p["depth"],
                                    StanceLabel.parse(p["gold"]), StanceLabel.parse(p["pred"]))
                         for p in d["predictions"]],
            extra={k: v for k, v in d.items() if k not in known},
        )

    @classmethod
    def load(cls, path: str | Path) -> "EvalReport":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json() + "\n", encoding="utf-8")


def breakdown(report: EvalReport, axis: str) -> list[dict]:
    """Macro-F1 per test event or per depth bucket (0, 1, 2, 3, 4, 5+)."""
    axis = axis.lower()
    groups: dict[str, list[Prediction]] = {}
    if axis == "event":
        for p in report.predictions:
            groups.setdefault(p.event, []).append(p)
        keys = sorted(groups)
    elif axis == "depth":
        for p in report.predictions:
            groups.setdefault(depth_bucket(p.depth), []).append(p)
        keys = list(DEPTH_BUCKETS)
    else:
        raise ValueError(f"unknown breakdown axis {axis!r}")
    rows = []
    for key in keys:
        preds = groups.get(key, [])
        f1 = metrics.macro_f1(report.gold(preds), report.pred(preds)) if preds else None
        rows.append({axis: key, "count": len(preds), "macro_f1": f1})
    return rows


def rows_to_csv(rows: Sequence[dict], columns: Sequence[str] | None = None) -> str:
    buf = io.StringIO()
    columns = list(columns or (rows[0].keys() if rows else []))
    writer = csv.DictWriter(buf, fieldnames=columns, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: ("" if row.get(k) is None else row.get(k)) for k in columns})
    return buf.getvalue()


def confusion_csv(matrix: np.ndarray) -> str:
    rows = [{"gold": lab.key, **{p.key: repr(float(v)) for p, v in zip(LABELS, row)}}
            for lab, row in zip(LABELS, matrix)]
    return rows_to_csv(rows, ["gold", *[lab.key for lab in LABELS]])


def feature_distributions(
    dataset: Dataset,
    names: Sequence[str],
    config: FeatureConfig | None = None,
    resources: FeatureResources | None = None,
) -> dict[str, dict[str, list[float]]]:
    """Per-label samples of scalar features, for external plotting."""
    config = config or FeatureConfig.parse("LF234+ST+SO")
    resources = resources or FeatureResources()
    out = {name: {lab.key: [] for lab in LABELS} for name in names}
    for th in dataset.threads:
        vecs = assemble_thread(th, config, resources)
        for tw in th:
            if tw.label is None:
                continue
            fv = vecs[tw.id]
            for name in names:
                try:
                    values = fv.get(name)
                except KeyError:
                    raise UnknownFeature(f"feature {name!r} is not produced by configuration {config}") from None
                if values.shape != (1,):
                    raise UnknownFeature(f"feature {name!r} is not scalar")
                out[name][tw.label.key].append(float(values[0]))
    return out


def distributions_to_csv(dist: dict[str, dict[str, list[float]]]) -> str:
    rows = [{"feature": name, "label": label, "value": repr(v)}
            for name, per_label in dist.items() for label, values in per_label.items() for v in values]
    return rows_to_csv(rows, ["feature", "label", "value"])


def distributions_from_csv(text: str) -> dict[str, dict[str, list[float]]]:
    out: dict[str, dict[str, list[float]]] = {}
    for row in csv.DictReader(io.StringIO(text)):
        per = out.setdefault(row["feature"], {lab.key: [] for lab in LABELS})
        per[row["label"]].append(float(row["value"]))
    return out


@dataclass
class ClassifierSpec:
    name: str
    params: dict = field(default_factory=dict)


def run_experiment(
    dataset: Dataset,
    spec: ClassifierSpec,
    config: FeatureConfig,
    seed: int = 0,
    provider: EmbeddingProvider | Callable[[str], EmbeddingProvider] | None = None,
    swear_words: frozenset[str] | None = None,
    scale: bool = True,
    vocab_min_count: int = 1,
    folds: Sequence[FoldSpec] | None = None,
    on_fold: Callable[[FoldSpec, FoldContext], None] | None = None,
) -> EvalReport:
    """Leave-one-event-out run.  ``provider`` may be a callable mapping the test
    event to fold-specific embeddings."""
    require_labels(dataset.threads)
    folds = list(folds) if folds is not None else make_folds(dataset)
    is_hawkes = spec.name.startswith("hawkes")
    predictions: list[Prediction] = []
    fold_info: list[FoldSpec] = []
    trial_logs = {}
    for fold in folds:
        train = [th for th in dataset.threads if th.event in fold.train_events]
        test = [th for th in dataset.threads if th.event == fold.test_event]
        try:
            fold_provider = provider(fold.test_event) if callable(provider) else provider
            ctx = FoldContext.build(train, config, fold_provider, swear_words, seed=seed,
                                    scale=scale and not is_hawkes, vocab_min_count=vocab_min_count)
            if on_fold is not None:
                on_fold(fold, ctx)
            model = make_classifier(spec.name, spec.params).fit(train, ctx)
            for th in test:
                pred = model.predict(th)
                for tw in th:
                    predictions.append(Prediction(th.event, th.thread_id, tw.id, depth_of(th, tw.id),
                                                  tw.label, pred[tw.id]))
        except Exception as exc:   # noqa: BLE001 - re-raised with fold identity
            raise FoldFailure(fold.test_event, exc) from exc
        dev = getattr(model, "chosen_dev_event", None)
        fold_info.append(FoldSpec(fold.test_event, fold.train_events, dev))
        if getattr(model, "trials", None):
            trial_logs[fold.test_event] = [json.loads(t.to_json()) for t in model.trials]
        log.info("fold %s: %d test tweets", fold.test_event, sum(len(th) for th in test))
    extra = {"trials": trial_logs} if trial_logs else {}
    return EvalReport(spec.name, str(config), seed, fold_info, predictions, extra)


def compare(report_a: EvalReport, report_b: EvalReport) -> metrics.McNemarResult:
    """McNemar test over the tweets both reports predicted (gold labels must agree)."""
    a = {p.tweet_id: p for p in report_a.predictions}
    b = {p.tweet_id: p for p in report_b.predictions}
    shared = sorted(set(a) & set(b))
    for tid in shared:
        if a[tid].gold != b[tid].gold:
            raise ValueError(f"reports disagree on the gold label of tweet {tid!r}")
    return metrics.mcnemar([a[t].gold for t in shared], [a[t].pred for t in shared],
                           [b[t].pred for t in shared])
