"""Conversation threads: parsing, validation and structural decomposition.

A thread is a rooted tree of tweets.  Child order is the order in which
replies appear in the input document, and every traversal in this module
follows it so that branch enumeration (and therefore the novelty masks used
by the sequence models) is reproducible.
"""
from __future__ import annotations

import enum
import json
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Mapping, Sequence

from .errors import CycleDetected, MalformedInput, MultipleRoots, OrphanTweet, UnknownId


class StanceLabel(enum.IntEnum):
    SUPPORT = 0
    DENY = 1
    QUERY = 2
    COMMENT = 3

    @classmethod
    def parse(cls, value: str | int | "StanceLabel") -> "StanceLabel":
        if isinstance(value, StanceLabel):
            return value
        if isinstance(value, int) and not isinstance(value, bool):
            return cls(value)
        if isinstance(value, str):
            try:
                return cls[value.strip().upper()]
            except KeyError:
                pass
        raise MalformedInput(f"unknown stance label {value!r}")

    @property
    def key(self) -> str:
        return self.name.lower()


LABELS: tuple[StanceLabel, ...] = tuple(StanceLabel)
N_LABELS = len(LABELS)


@dataclass(frozen=True)
class Tweet:
    id: str
    parent_id: str | None
    author_id: str
    text: str
    timestamp: int
    favourites: int = 0
    retweets: int = 0
    pos_tags: tuple[str, ...] | None = None
    label: StanceLabel | None = None
    # set by ingestion when the platform reported a URL entity not visible in the text
    url_entity: bool = False

    def to_dict(self) -> dict:
        out = {
            "id": self.id,
            "parent_id": self.parent_id,
            "author_id": self.author_id,
            "text": self.text,
            "timestamp": self.timestamp,
            "favourites": self.favourites,
            "retweets": self.retweets,
            "pos_tags": list(self.pos_tags) if self.pos_tags is not None else None,
            "label": self.label.key if self.label is not None else None,
        }
        if self.url_entity:
            out["url_entity"] = True
        return out


_REQUIRED = {
    "id": str,
    "author_id": str,
    "text": str,
    "timestamp": int,
}


def _tweet_from_dict(raw: Mapping) -> Tweet:
    if not isinstance(raw, Mapping):
        raise MalformedInput(f"tweet entry must be an object, got {type(raw).__name__}")
    for key, typ in _REQUIRED.items():
        if key not in raw:
            raise MalformedInput(f"tweet is missing required field {key!r}")
        value = raw[key]
        if typ is int and (isinstance(value, bool) or not isinstance(value, int)):
            raise MalformedInput(f"field {key!r} must be an integer, got {value!r}")
        if typ is str and not isinstance(value, str):
            raise MalformedInput(f"field {key!r} must be a string, got {value!r}")
    parent = raw.get("parent_id")
    if parent is not None and not isinstance(parent, str):
        raise MalformedInput(f"parent_id must be a string or null, got {parent!r}")
    counts = {}
    for key in ("favourites", "retweets"):
        value = raw.get(key, 0)
        if isinstance(value, bool) or not isinstance(value, int) or value < 0:
            raise MalformedInput(f"field {key!r} must be a non-negative integer, got {value!r}")
        counts[key] = value
    tags = raw.get("pos_tags")
    if tags is not None:
        if not isinstance(tags, list) or not all(isinstance(t, str) for t in tags):
            raise MalformedInput("pos_tags must be a list of strings or null")
        tags = tuple(tags)
    label = raw.get("label")
    if label is not None:
        if not isinstance(label, str):
            raise MalformedInput(f"label must be a string or null, got {label!r}")
        label = StanceLabel.parse(label)
    return Tweet(
        id=raw["id"],
        parent_id=parent,
        author_id=raw["author_id"],
        text=raw["text"],
        timestamp=raw["timestamp"],
        favourites=counts["favourites"],
        retweets=counts["retweets"],
        pos_tags=tags,
        label=label,
        url_entity=bool(raw.get("url_entity", False)),
    )


@dataclass(frozen=True)
class ConversationThread:
    event: str
    thread_id: str
    tweets: Mapping[str, Tweet]
    children: Mapping[str, tuple[str, ...]]
    root_id: str
    _depth: Mapping[str, int] = field(repr=False, compare=False)

    @classmethod
    def from_tweets(cls, event: str, thread_id: str, tweets: Iterable[Tweet]) -> "ConversationThread":
        by_id: dict[str, Tweet] = {}
        for tw in tweets:
            if tw.id in by_id:
                raise MalformedInput(f"duplicate tweet id {tw.id!r} in thread {thread_id!r}")
            by_id[tw.id] = tw
        if not by_id:
            raise MalformedInput(f"thread {thread_id!r} has no tweets")

        roots = [tw.id for tw in by_id.values() if tw.parent_id is None]
        for tw in by_id.values():
            if tw.parent_id is not None and tw.parent_id not in by_id:
                raise OrphanTweet(f"tweet {tw.id!r} replies to unknown parent {tw.parent_id!r}")
        if len(roots) > 1:
            raise MultipleRoots(f"thread {thread_id!r} has {len(roots)} roots: {roots}")
        if not roots:
            raise CycleDetected(f"thread {thread_id!r} has no root; parent links form a cycle")

        children: dict[str, list[str]] = {tid: [] for tid in by_id}
        for tw in by_id.values():
            if tw.parent_id is not None:
                children[tw.parent_id].append(tw.id)

        root = roots[0]
        depth = {root: 0}
        stack = [root]
        while stack:
            node = stack.pop()
            for child in children[node]:
                depth[child] = depth[node] + 1
                stack.append(child)
        if len(depth) != len(by_id):
            missing = sorted(set(by_id) - set(depth))
            raise CycleDetected(f"tweets {missing} are unreachable from the root (cycle)")

        return cls(
            event=event,
            thread_id=thread_id,
            tweets=by_id,
            children={k: tuple(v) for k, v in children.items()},
            root_id=root,
            _depth=depth,
        )

    @property
    def root(self) -> Tweet:
        return self.tweets[self.root_id]

    def __len__(self) -> int:
        return len(self.tweets)

    def __iter__(self) -> Iterator[Tweet]:
        return iter(self.tweets.values())

    def parent(self, tweet_id: str) -> Tweet | None:
        pid = self[tweet_id].parent_id
        return None if pid is None else self.tweets[pid]

    def __getitem__(self, tweet_id: str) -> Tweet:
        try:
            return self.tweets[tweet_id]
        except KeyError:
            raise UnknownId(tweet_id) from None

    def is_leaf(self, tweet_id: str) -> bool:
        return not self.children[tweet_id]

    def preorder(self) -> list[str]:
        """Depth-first pre-order in child order; parents precede children."""
        out = []
        stack = [self.root_id]
        while stack:
            node = stack.pop()
            out.append(node)
            stack.extend(reversed(self.children[node]))
        return out

    def to_dict(self) -> dict:
        return {
            "event": self.event,
            "thread_id": self.thread_id,
            "tweets": [tw.to_dict() for tw in self.tweets.values()],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), ensure_ascii=False, indent=1)


@dataclass(frozen=True)
class Branch:
    tweet_ids: tuple[str, ...]
    novelty_mask: tuple[int, ...]

    def __len__(self) -> int:
        return len(self.tweet_ids)


@dataclass(frozen=True)
class Dataset:
    threads: tuple[ConversationThread, ...]
    events: frozenset[str]

    def __post_init__(self):
        seen = set()
        for th in self.threads:
            if th.event not in self.events:
                raise MalformedInput(f"thread {th.thread_id!r} has unlisted event {th.event!r}")
            if th.thread_id in seen:
                raise MalformedInput(f"duplicate thread id {th.thread_id!r}")
            seen.add(th.thread_id)

    @classmethod
    def from_threads(cls, threads: Iterable[ConversationThread]) -> "Dataset":
        threads = tuple(threads)
        return cls(threads=threads, events=frozenset(th.event for th in threads))

    def by_event(self, event: str) -> list[ConversationThread]:
        return [th for th in self.threads if th.event == event]

    def label_counts(self) -> Counter:
        return Counter(tw.label for th in self.threads for tw in th if tw.label is not None)

    def __len__(self) -> int:
        return len(self.threads)


def thread_from_dict(raw: Mapping) -> ConversationThread:
    if not isinstance(raw, Mapping):
        raise MalformedInput("thread document must be a JSON object")
    for key in ("event", "thread_id", "tweets"):
        if key not in raw:
            raise MalformedInput(f"thread document is missing {key!r}")
    if not isinstance(raw["event"], str) or not isinstance(raw["thread_id"], str):
        raise MalformedInput("event and thread_id must be strings")
    if not isinstance(raw["tweets"], list):
        raise MalformedInput("tweets must be a list")
    tweets = [_tweet_from_dict(t) for t in raw["tweets"]]
    return ConversationThread.from_tweets(raw["event"], raw["thread_id"], tweets)


def parse_thread(raw: str | bytes) -> ConversationThread:
    try:
        doc = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise MalformedInput(f"invalid JSON: {exc}") from None
    return thread_from_dict(doc)


def serialize_thread(thread: ConversationThread) -> str:
    return thread.to_json()


def depth_of(thread: ConversationThread, tweet_id: str) -> int:
    try:
        return thread._depth[tweet_id]
    except KeyError:
        raise UnknownId(tweet_id) from None


def extract_branches(thread: ConversationThread) -> list[Branch]:
    paths: list[tuple[str, ...]] = []
    stack: list[tuple[str, tuple[str, ...]]] = [(thread.root_id, (thread.root_id,))]
    while stack:
        node, path = stack.pop()
        kids = thread.children[node]
        if not kids:
            paths.append(path)
        for child in reversed(kids):
            stack.append((child, path + (child,)))

    seen: set[str] = set()
    branches = []
    for path in paths:
        mask = []
        for tid in path:
            mask.append(0 if tid in seen else 1)
            seen.add(tid)
        branches.append(Branch(tweet_ids=path, novelty_mask=tuple(mask)))
    return branches


def novelty_mask_check(branches: Sequence[Branch], n_tweets: int | None = None) -> bool:
    """True iff every tweet is marked novel exactly once across ``branches``.

    ``n_tweets`` defaults to the number of distinct ids in the branches.
    """
    ids = {tid for br in branches for tid in br.tweet_ids}
    if n_tweets is None:
        n_tweets = len(ids)
    marked = Counter(
        tid for br in branches for tid, bit in zip(br.tweet_ids, br.novelty_mask) if bit
    )
    total = sum(marked.values())
    return total == n_tweets and len(ids) == n_tweets and all(marked[t] == 1 for t in ids)


def chronological_order(thread: ConversationThread) -> list[str]:
    return sorted(thread.tweets, key=lambda tid: (thread.tweets[tid].timestamp, tid))


def load_thread(path: str | Path) -> ConversationThread:
    return parse_thread(Path(path).read_text(encoding="utf-8"))


def load_dataset(directory: str | Path) -> Dataset:
    """Load every ``*.json`` thread document under ``directory`` (sorted by path)."""
    files = sorted(Path(directory).rglob("*.json"))
    return Dataset.from_threads(load_thread(p) for p in files)


def save_dataset(dataset: Dataset, directory: str | Path) -> list[Path]:
    out_dir = Path(directory)
    written = []
    for th in dataset.threads:
        target = out_dir / th.event / f"{th.thread_id}.json"
        target.parent.mkdir(parents=True, exist_ok=True)
        target.write_text(th.to_json() + "\n", encoding="utf-8")
        written.append(target)
    return written
