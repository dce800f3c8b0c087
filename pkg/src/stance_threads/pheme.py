"""Adapter from the published PHEME directory layout to canonical threads.

Expected layout (both the original release and the RumourEval re-release
use variants of it)::

    <root>/<event>/[rumours/]<thread_id>/source-tweet[s]/<id>.json
    <root>/<event>/[rumours/]<thread_id>/(reactions|replies)/<id>.json

Tweet files are raw Twitter API objects.  Stance labels come from an
annotation file, either a JSON object ``{tweet_id: label}`` or JSON lines
carrying ``tweetid`` plus a label under ``label``/``stance`` or the PHEME
annotation-scheme keys (``support`` for sources,
``responsetype-vs-source`` for replies).
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path

from .errors import InputError, MalformedInput
from .thread_model import ConversationThread, Dataset, StanceLabel, Tweet

_SOURCE_DIRS = ("source-tweet", "source-tweets")
_REPLY_DIRS = ("reactions", "replies")

_SCHEME_LABELS = {
    # responsetype-vs-source
    "agreed": StanceLabel.SUPPORT,
    "disagreed": StanceLabel.DENY,
    "appeal-for-more-information": StanceLabel.QUERY,
    "comment": StanceLabel.COMMENT,
    # source-tweet "support" field
    "supporting": StanceLabel.SUPPORT,
    "denying": StanceLabel.DENY,
    "underspecified": StanceLabel.COMMENT,
}


@dataclass
class AdapterResult:
    dataset: Dataset
    failures: list[tuple[str, str]] = field(default_factory=list)


def _parse_label(value) -> StanceLabel | None:
    if value is None:
        return None
    key = str(value).strip().lower()
    if key in _SCHEME_LABELS:
        return _SCHEME_LABELS[key]
    try:
        return StanceLabel.parse(key)
    except MalformedInput:
        return None


def load_annotations(path: str | Path) -> dict[str, StanceLabel]:
    text = Path(path).read_text(encoding="utf-8").strip()
    if not text:
        return {}
    records = []
    try:
        doc = json.loads(text)
    except json.JSONDecodeError:
        doc = None
    if isinstance(doc, dict):
        if all(not isinstance(v, dict) for v in doc.values()):
            return {str(k): lab for k, v in doc.items() if (lab := _parse_label(v)) is not None}
        records = [doc]
    elif isinstance(doc, list):
        records = doc
    else:
        for line in text.splitlines():
            line = line.strip()
            if line and not line.startswith("#"):
                records.append(json.loads(line))
    out = {}
    for rec in records:
        tid = rec.get("tweetid", rec.get("tweet_id", rec.get("id")))
        if tid is None:
            continue
        raw = None
        for key in ("label", "stance", "responsetype-vs-source", "support"):
            if rec.get(key) is not None:
                raw = rec[key]
                break
        lab = _parse_label(raw)
        if lab is not None:
            out[str(tid)] = lab
    return out


def _timestamp(obj: dict) -> int:
    if "timestamp_ms" in obj:
        return int(obj["timestamp_ms"]) // 1000
    created = obj.get("created_at")
    if created is None:
        raise MalformedInput("tweet has no created_at")
    return int(datetime.strptime(created, "%a %b %d %H:%M:%S %z %Y").timestamp())


def tweet_from_api(obj: dict, labels: dict[str, StanceLabel], is_source: bool) -> Tweet:
    tid = str(obj.get("id_str") or obj["id"])
    parent = None if is_source else obj.get("in_reply_to_status_id_str")
    if not is_source and parent is None and obj.get("in_reply_to_status_id") is not None:
        parent = str(obj["in_reply_to_status_id"])
    user = obj.get("user") or {}
    urls = (obj.get("entities") or {}).get("urls") or []
    media = (obj.get("entities") or {}).get("media") or []
    return Tweet(
        id=tid,
        parent_id=parent,
        author_id=str(user.get("id_str") or user.get("id") or ""),
        text=obj.get("text") or obj.get("full_text") or "",
        timestamp=_timestamp(obj),
        favourites=int(obj.get("favorite_count") or 0),
        retweets=int(obj.get("retweet_count") or 0),
        pos_tags=None,
        label=labels.get(tid),
        url_entity=bool(urls or media),
    )


def _read_dir(directory: Path) -> list[dict]:
    return [json.loads(p.read_text(encoding="utf-8")) for p in sorted(directory.glob("*.json"))]


def _thread_dirs(event_dir: Path):
    for candidate in sorted(event_dir.rglob("*")):
        if candidate.is_dir() and any((candidate / d).is_dir() for d in _SOURCE_DIRS):
            yield candidate


def convert_pheme(root: str | Path, annotations: str | Path | None = None) -> AdapterResult:
    root = Path(root)
    if annotations is None:
        found = sorted(root.glob("annotations*.json")) + sorted(root.glob("annotations/*.json"))
        labels: dict[str, StanceLabel] = {}
        for path in found:
            labels.update(load_annotations(path))
    else:
        labels = load_annotations(annotations)

    threads = []
    failures = []
    for event_dir in sorted(p for p in root.iterdir() if p.is_dir() and p.name != "annotations"):
        event = event_dir.name.replace("-all-rnr-threads", "")
        for tdir in _thread_dirs(event_dir):
            try:
                src_dir = next(tdir / d for d in _SOURCE_DIRS if (tdir / d).is_dir())
                sources = _read_dir(src_dir)
                if len(sources) != 1:
                    raise MalformedInput(f"expected one source tweet, found {len(sources)}")
                tweets = [tweet_from_api(sources[0], labels, is_source=True)]
                for d in _REPLY_DIRS:
                    if (tdir / d).is_dir():
                        tweets.extend(tweet_from_api(o, labels, False) for o in _read_dir(tdir / d))
                threads.append(ConversationThread.from_tweets(event, tdir.name, tweets))
            except (InputError, KeyError, ValueError, json.JSONDecodeError) as exc:
                failures.append((str(tdir), f"{type(exc).__name__}: {exc}"))
    return AdapterResult(Dataset.from_threads(threads), failures)
