"""Command-line entry point: ``ingest``, ``run``, ``report`` and ``compare``.

Exit codes: 0 success, 1 runtime/configuration failure, 2 input or schema failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from collections import Counter
from dataclasses import dataclass, field, fields
from pathlib import Path

from . import evaluation
from .errors import ConfigError, FoldFailure, InputError, StanceError
from .features import EmbeddingProvider, FeatureConfig, FeatureGroup, load_swear_words
from .pheme import convert_pheme
from .pipeline import REGISTRY
from .thread_model import LABELS, Dataset, load_dataset, load_thread, save_dataset

SEED_ENV = "STANCE_THREADS_SEED"


@dataclass
class ExperimentConfig:
    dataset: str
    classifier: str
    features: str
    output: str = "report.json"
    embeddings: str | None = None          # may contain "{event}" for per-fold files
    swear_words: str | None = None
    seed: int = 0
    scale: bool = True
    vocab_min_count: int = 1
    hyperparameters: dict = field(default_factory=dict)
    feature_distributions: list = field(default_factory=list)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown configuration keys {sorted(unknown)}")
        missing = {"dataset", "classifier", "features"} - set(d)
        if missing:
            raise ConfigError(f"missing configuration keys {sorted(missing)}")
        return cls(**d)

    def validate(self) -> FeatureConfig:
        if self.classifier not in REGISTRY:
            raise ConfigError(f"unknown classifier {self.classifier!r}; choose from {sorted(REGISTRY)}")
        feats = FeatureConfig.parse(self.features)
        if self.classifier.startswith("hawkes") and FeatureGroup.HF not in feats.groups:
            raise ConfigError(f"{self.classifier} requires the HF feature group")
        if not self.classifier.startswith("hawkes") and not (feats.groups - {FeatureGroup.HF}):
            raise ConfigError(f"{self.classifier} needs at least one non-HF feature group")
        if not Path(self.dataset).exists():
            raise ConfigError(f"dataset path {self.dataset} does not exist")
        if self.embeddings and "{event}" not in self.embeddings and not Path(self.embeddings).exists():
            raise ConfigError(f"embeddings file {self.embeddings} does not exist")
        if self.swear_words and not Path(self.swear_words).exists():
            raise ConfigError(f"swear-word list {self.swear_words} does not exist")
        return feats

    def params(self) -> dict:
        block = self.hyperparameters.get(self.classifier, {})
        if not isinstance(block, dict):
            raise ConfigError("hyperparameter blocks must be JSON objects")
        return block


def _error(kind: str, message: str, code: int) -> int:
    print(json.dumps({"error": kind, "message": message}), file=sys.stderr)
    return code


def _summary(dataset: Dataset) -> str:
    lines = ["event,threads,tweets," + ",".join(lab.key for lab in LABELS) + ",unlabelled"]
    totals = Counter()
    for event in sorted(dataset.events):
        threads = dataset.by_event(event)
        counts = Counter(tw.label for th in threads for tw in th)
        n = sum(len(th) for th in threads)
        totals.update(counts)
        totals["threads"] += len(threads)
        totals["tweets"] += n
        lines.append(",".join([event, str(len(threads)), str(n)] + [str(counts[lab]) for lab in LABELS]
                              + [str(counts[None])]))
    lines.append(",".join(["total", str(totals["threads"]), str(totals["tweets"])]
                          + [str(totals[lab]) for lab in LABELS] + [str(totals[None])]))
    return "\n".join(lines)


def cmd_ingest(args) -> int:
    src = Path(args.input)
    if not src.is_dir():
        return _error("InputError", f"{src} is not a directory", 2)
    failures: list[tuple[str, str]] = []
    if args.format == "pheme":
        result = convert_pheme(src, args.annotations)
        dataset, failures = result.dataset, result.failures
    else:
        threads = []
        for path in sorted(src.rglob("*.json")):
            try:
                threads.append(load_thread(path))
            except (InputError, UnicodeDecodeError) as exc:
                failures.append((str(path), f"{type(exc).__name__}: {exc}"))
        try:
            dataset = Dataset.from_threads(threads)
        except InputError as exc:
            return _error("InputError", str(exc), 2)
    save_dataset(dataset, args.output)
    print(_summary(dataset))
    for path, msg in failures:
        print(f"{path}: {msg}", file=sys.stderr)
    return 2 if failures else 0


def _load_config(args) -> ExperimentConfig:
    try:
        raw = json.loads(Path(args.config).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {args.config}: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    cfg = ExperimentConfig.from_dict(raw)
    for name in ("classifier", "features", "output", "dataset", "embeddings"):
        value = getattr(args, name, None)
        if value is not None:
            setattr(cfg, name, value)
    if args.seed is not None:
        cfg.seed = args.seed
    if os.environ.get(SEED_ENV):
        try:
            cfg.seed = int(os.environ[SEED_ENV])
        except ValueError:
            raise ConfigError(f"{SEED_ENV} must be an integer") from None
    return cfg


def cmd_run(args) -> int:
    try:
        cfg = _load_config(args)
        feats = cfg.validate()
        swear = load_swear_words(cfg.swear_words)
        provider = None
        if cfg.embeddings:
            if "{event}" in cfg.embeddings:
                template = cfg.embeddings
                provider = lambda event: EmbeddingProvider.load(template.format(event=event))  # noqa: E731
            else:
                provider = EmbeddingProvider.load(cfg.embeddings)
    except StanceError as exc:
        return _error(type(exc).__name__, str(exc), 1)
    try:
        dataset = load_dataset(cfg.dataset)
    except InputError as exc:
        return _error(type(exc).__name__, str(exc), 2)
    try:
        report = evaluation.run_experiment(
            dataset, evaluation.ClassifierSpec(cfg.classifier, cfg.params()), feats, seed=cfg.seed,
            provider=provider, swear_words=swear, scale=cfg.scale, vocab_min_count=cfg.vocab_min_count)
        if cfg.feature_distributions:
            from .features import FeatureResources

            res = FeatureResources(provider=provider if isinstance(provider, EmbeddingProvider) else None,
                                   swear_words=swear)
            dist_cfg = FeatureConfig.parse("LF1234+R+ST+SO" if res.provider else "LF234+ST+SO")
            report.extra["feature_distributions"] = evaluation.feature_distributions(
                dataset, cfg.feature_distributions, dist_cfg, res)
    except FoldFailure as exc:
        return _error("FoldFailure", str(exc), 1)
    except StanceError as exc:
        return _error(type(exc).__name__, str(exc), 1)
    Path(cfg.output).parent.mkdir(parents=True, exist_ok=True)
    report.save(cfg.output)
    print(f"macro_f1={report.macro_f1:.6f}")
    return 0


def cmd_report(args) -> int:
    try:
        report = evaluation.EvalReport.load(args.report)
    except (OSError, KeyError, ValueError) as exc:
        return _error("InputError", f"cannot read report: {exc}", 2)
    if args.view == "confusion":
        if not report.predictions:
            return _error("MissingViewData", "report has no predictions", 1)
        sys.stdout.write(evaluation.confusion_csv(report.confusion()))
    elif args.view in ("events", "depth"):
        if not report.predictions:
            return _error("MissingViewData", "report has no predictions", 1)
        axis = "event" if args.view == "events" else "depth"
        sys.stdout.write(evaluation.rows_to_csv(report.breakdown(axis), [axis, "count", "macro_f1"]))
    elif args.view == "features":
        dist = report.extra.get("feature_distributions")
        if not dist:
            return _error("MissingViewData", "report carries no feature distributions", 1)
        sys.stdout.write(evaluation.distributions_to_csv(dist))
    return 0


def cmd_compare(args) -> int:
    try:
        a = evaluation.EvalReport.load(args.report_a)
        b = evaluation.EvalReport.load(args.report_b)
        result = evaluation.compare(a, b)
    except (OSError, KeyError, ValueError) as exc:
        return _error("InputError", str(exc), 2)
    print(json.dumps({"a": a.classifier, "b": b.classifier, **result.to_dict()}))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stance-threads", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="convert threads to the canonical JSON schema")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--format", choices=("canonical", "pheme"), default="canonical")
    p.add_argument("--annotations", help="PHEME annotation file (default: look under INPUT)")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("run", help="leave-one-event-out experiment from a JSON config")
    p.add_argument("config")
    p.add_argument("--output")
    p.add_argument("--seed", type=int)
    p.add_argument("--classifier")
    p.add_argument("--features")
    p.add_argument("--dataset")
    p.add_argument("--embeddings")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("report", help="render a breakdown of a saved report as CSV")
    p.add_argument("report")
    p.add_argument("--view", choices=("confusion", "events", "depth", "features"), required=True)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("compare", help="McNemar test between two saved reports")
    p.add_argument("report_a")
    p.add_argument("report_b")
    p.set_defaults(func=cmd_compare)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
