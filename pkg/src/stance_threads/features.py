"""Per-tweet feature extraction and assembly.

Feature groups (fixed concatenation order)::

    LF1  lexicon             word embedding mean, POS counts, negations, swear words
    LF2  content formatting  characters, whitespace tokens
    LF3  punctuation         has '?', has '!'
    LF4  tweet formatting    has URL
    R    relational          cosine vs. source, parent, other-author thread mean
    ST   structural          is leaf, is source tweet, is source user
    SO   social              favourites, retweets, persistence, seconds since source
    HF   Hawkes              bag-of-words counts, seconds since source
"""
from __future__ import annotations

import enum
import re
import string
from collections import Counter
from dataclasses import dataclass, field
from importlib import resources as importlib_resources
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import ConfigError, DimensionMismatch, MissingResource
from .thread_model import ConversationThread, Tweet

NEGATION_WORDS = frozenset(
    """not no nobody nothing none never neither nor nowhere hardly scarcely barely
    don't isn't wasn't shouldn't wouldn't couldn't doesn't""".split()
)

_URL_RE = re.compile(r"https?://\S+", re.IGNORECASE)
_STRIP = string.punctuation + "‘’“”…"


def tokenize(text: str) -> list[str]:
    return text.lower().split()


def lexicon_tokens(text: str) -> list[str]:
    """Lowercased whitespace tokens with surrounding punctuation removed."""
    out = []
    for tok in tokenize(text.replace("’", "'")):
        tok = tok.strip(_STRIP)
        if tok:
            out.append(tok)
    return out


class FeatureGroup(enum.Enum):
    LF1 = "LF1"
    LF2 = "LF2"
    LF3 = "LF3"
    LF4 = "LF4"
    R = "R"
    ST = "ST"
    SO = "SO"
    HF = "HF"


GROUP_ORDER = tuple(FeatureGroup)


@dataclass(frozen=True)
class FeatureConfig:
    groups: frozenset[FeatureGroup]

    def __post_init__(self):
        if not self.groups:
            raise ConfigError("feature configuration must enable at least one group")

    @classmethod
    def of(cls, *groups: FeatureGroup | str) -> "FeatureConfig":
        return cls(frozenset(FeatureGroup(g) if isinstance(g, str) else g for g in groups))

    @classmethod
    def parse(cls, spec: str | Iterable[str]) -> "FeatureConfig":
        """Parse names such as ``"LF123"``, ``"LF+R+SO"``, ``["LF1", "HF"]`` or ``"All"``.

        ``LF`` on its own means the four local groups; ``All`` means every
        local and contextual group (Hawkes features excluded).
        """
        parts = spec.replace(",", "+").split("+") if isinstance(spec, str) else list(spec)
        groups: set[FeatureGroup] = set()
        for part in parts:
            part = part.strip().upper()
            if not part:
                continue
            if part == "ALL":
                groups |= {g for g in FeatureGroup if g is not FeatureGroup.HF}
            elif part == "LF":
                groups |= {FeatureGroup.LF1, FeatureGroup.LF2, FeatureGroup.LF3, FeatureGroup.LF4}
            elif part.startswith("LF") and part[2:].isdigit():
                for digit in part[2:]:
                    if digit not in "1234":
                        raise ConfigError(f"unknown local feature subgroup {digit!r} in {part!r}")
                    groups.add(FeatureGroup(f"LF{digit}"))
            else:
                try:
                    groups.add(FeatureGroup(part))
                except ValueError:
                    raise ConfigError(f"unknown feature group {part!r}") from None
        return cls(frozenset(groups))

    @property
    def ordered(self) -> list[FeatureGroup]:
        return [g for g in GROUP_ORDER if g in self.groups]

    def __str__(self) -> str:
        return "+".join(g.value for g in self.ordered)


@dataclass(frozen=True)
class LayoutEntry:
    group: str
    name: str
    offset: int
    width: int


@dataclass(frozen=True)
class FeatureVector:
    values: np.ndarray
    layout: tuple[LayoutEntry, ...]

    def __post_init__(self):
        width = sum(e.width for e in self.layout)
        if self.values.shape != (width,):
            raise DimensionMismatch(f"values shape {self.values.shape} != layout width {width}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("feature vector contains non-finite values")

    def __len__(self) -> int:
        return self.values.shape[0]

    def get(self, name: str) -> np.ndarray:
        for e in self.layout:
            if e.name == name:
                return self.values[e.offset:e.offset + e.width]
        raise KeyError(name)


class EmbeddingProvider:
    """Read-only word -> vector table.

    Lookups never fabricate vectors: an out-of-vocabulary word returns None.
    """

    def __init__(self, vectors: Mapping[str, Sequence[float]], dimension: int | None = None):
        if dimension is None:
            if not vectors:
                raise ValueError("dimension is required for an empty embedding table")
            dimension = len(next(iter(vectors.values())))
        if dimension <= 0:
            raise ValueError("embedding dimension must be positive")
        self.dimension = int(dimension)
        table = {}
        for word, vec in vectors.items():
            arr = np.asarray(vec, dtype=float)
            if arr.shape != (self.dimension,):
                raise DimensionMismatch(f"vector for {word!r} has shape {arr.shape}")
            arr.setflags(write=False)
            table[word] = arr
        self._table = table

    def __len__(self) -> int:
        return len(self._table)

    def __contains__(self, word: str) -> bool:
        return word in self._table

    @property
    def words(self) -> list[str]:
        return sorted(self._table)

    def lookup(self, word: str) -> np.ndarray | None:
        return self._table.get(word)

    def lookup_token(self, token: str) -> np.ndarray | None:
        # raw token first, then with surrounding punctuation removed
        vec = self._table.get(token)
        if vec is None:
            stripped = token.strip(_STRIP)
            if stripped and stripped != token:
                vec = self._table.get(stripped)
        return vec

    def coverage(self, words: Iterable[str]) -> float:
        words = list(words)
        if not words:
            return 0.0
        return sum(self.lookup_token(w) is not None for w in words) / len(words)

    @classmethod
    def load(cls, path: str | Path) -> "EmbeddingProvider":
        vectors: dict[str, np.ndarray] = {}
        dimension = None
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh):
                parts = line.rstrip("\n").split(" ")
                if not parts or parts == [""]:
                    continue
                if lineno == 0 and len(parts) == 2 and all(p.isdigit() for p in parts):
                    dimension = int(parts[1])
                    continue
                word, nums = parts[0], [p for p in parts[1:] if p]
                if dimension is None:
                    dimension = len(nums)
                if len(nums) != dimension:
                    raise DimensionMismatch(
                        f"{path}:{lineno + 1}: expected {dimension} values, got {len(nums)}"
                    )
                vectors[word] = np.array(nums, dtype=float)
        if dimension is None:
            raise MissingResource(f"embedding file {path} is empty")
        return cls(vectors, dimension)


def load_swear_words(path: str | Path | None = None) -> frozenset[str]:
    try:
        if path is None:
            text = (
                importlib_resources.files("stance_threads")
                .joinpath("data/swear_words.txt")
                .read_text(encoding="utf-8")
            )
        else:
            text = Path(path).read_text(encoding="utf-8")
    except (FileNotFoundError, OSError) as exc:
        raise MissingResource(f"swear-word list not found: {exc}") from None
    return frozenset(w.strip().lower() for w in text.splitlines() if w.strip())


# -- individual features -------------------------------------------------------

def embed_tweet(text: str, provider: EmbeddingProvider) -> np.ndarray:
    vecs = [v for tok in tokenize(text) if (v := provider.lookup_token(tok)) is not None]
    if not vecs:
        return np.zeros(provider.dimension)
    return np.mean(vecs, axis=0)


def negation_count(text: str) -> int:
    return sum(tok in NEGATION_WORDS for tok in lexicon_tokens(text))


def swear_count(text: str, words: frozenset[str] | None = None) -> int:
    if words is None:
        words = load_swear_words()
    return sum(tok in words for tok in lexicon_tokens(text))


def pos_counts(tweet: Tweet, tagset: Sequence[str]) -> np.ndarray:
    out = np.zeros(len(tagset))
    if tweet.pos_tags:
        index = {tag: i for i, tag in enumerate(tagset)}
        for tag in tweet.pos_tags:
            i = index.get(tag)
            if i is not None:
                out[i] += 1
    return out


def has_url(tweet: Tweet) -> bool:
    return tweet.url_entity or bool(_URL_RE.search(tweet.text))


def local_surface_features(tweet: Tweet) -> dict[str, int]:
    text = tweet.text
    return {
        "length": len(text),
        "word_count": len(text.split()),
        "has_question": int("?" in text),
        "has_exclamation": int("!" in text),
        "has_url": int(has_url(tweet)),
    }


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))


def relational_features(
    tweet: Tweet,
    thread: ConversationThread,
    provider: EmbeddingProvider,
    embeddings: Mapping[str, np.ndarray] | None = None,
) -> dict[str, float]:
    if embeddings is None:
        embeddings = {t.id: embed_tweet(t.text, provider) for t in thread}
    own = embeddings[tweet.id]
    if tweet.parent_id is None:
        sim_source = 1.0 if np.any(own) else 0.0
        sim_parent = 0.0
    else:
        sim_source = cosine(own, embeddings[thread.root_id])
        sim_parent = cosine(own, embeddings[tweet.parent_id])
    others = [embeddings[t.id] for t in thread if t.author_id != tweet.author_id]
    sim_thread = cosine(own, np.mean(others, axis=0)) if others else 0.0
    return {"sim_source": sim_source, "sim_parent": sim_parent, "sim_thread": sim_thread}


def structural_features(tweet: Tweet, thread: ConversationThread) -> dict[str, int]:
    return {
        "is_leaf": int(thread.is_leaf(tweet.id)),
        "is_source_tweet": int(tweet.id == thread.root_id),
        "is_source_user": int(tweet.author_id == thread.root.author_id),
    }


def social_features(tweet: Tweet, thread: ConversationThread) -> dict[str, int]:
    return {
        "favourites": tweet.favourites,
        "retweets": tweet.retweets,
        "persistence": sum(t.author_id == tweet.author_id for t in thread),
        "time_difference": tweet.timestamp - thread.root.timestamp,
    }


def hawkes_text_features(tweet: Tweet, vocabulary: Sequence[str]) -> tuple[np.ndarray, int]:
    index = {w: i for i, w in enumerate(vocabulary)}
    counts = np.zeros(len(vocabulary))
    for tok in tokenize(tweet.text):
        i = index.get(tok)
        if i is not None:
            counts[i] += 1
    return counts, tweet.timestamp


def build_vocabulary(threads: Iterable[ConversationThread], min_count: int = 1) -> tuple[str, ...]:
    counts = Counter(tok for th in threads for tw in th for tok in tokenize(tw.text))
    return tuple(sorted(w for w, c in counts.items() if c >= min_count))


def build_tagset(threads: Iterable[ConversationThread]) -> tuple[str, ...]:
    return tuple(sorted({tag for th in threads for tw in th for tag in (tw.pos_tags or ())}))


# -- assembly -----------------------------------------------------------------

@dataclass
class FeatureResources:
    """Fold-level resources.  Everything here must come from training data only."""

    provider: EmbeddingProvider | None = None
    tagset: tuple[str, ...] = ()
    swear_words: frozenset[str] | None = None
    vocabulary: tuple[str, ...] | None = None
    _vocab_index: dict = field(default=None, init=False, repr=False)

    def vocab_index(self) -> dict[str, int]:
        if self._vocab_index is None:
            self._vocab_index = {w: i for i, w in enumerate(self.vocabulary or ())}
        return self._vocab_index


def _require(config: FeatureConfig, res: FeatureResources) -> None:
    g = config.groups
    if FeatureGroup.LF1 in g:
        if res.provider is None:
            raise MissingResource("LF1 requires word embeddings")
        if res.swear_words is None:
            raise MissingResource("LF1 requires the swear-word list")
    if FeatureGroup.R in g and res.provider is None:
        raise MissingResource("relational features require word embeddings")
    if FeatureGroup.HF in g and res.vocabulary is None:
        raise MissingResource("Hawkes features require a vocabulary")


def feature_layout(config: FeatureConfig, resources: FeatureResources) -> tuple[LayoutEntry, ...]:
    _require(config, resources)
    names: list[tuple[str, str, int]] = []
    for group in config.ordered:
        gname = group.value
        if group is FeatureGroup.LF1:
            names += [(gname, "embedding", resources.provider.dimension),
                      (gname, "pos_tags", len(resources.tagset)),
                      (gname, "negation", 1), (gname, "swear_words", 1)]
        elif group is FeatureGroup.LF2:
            names += [(gname, "length", 1), (gname, "word_count", 1)]
        elif group is FeatureGroup.LF3:
            names += [(gname, "has_question", 1), (gname, "has_exclamation", 1)]
        elif group is FeatureGroup.LF4:
            names += [(gname, "has_url", 1)]
        elif group is FeatureGroup.R:
            names += [(gname, n, 1) for n in ("sim_source", "sim_parent", "sim_thread")]
        elif group is FeatureGroup.ST:
            names += [(gname, n, 1) for n in ("is_leaf", "is_source_tweet", "is_source_user")]
        elif group is FeatureGroup.SO:
            names += [(gname, n, 1) for n in ("favourites", "retweets", "persistence", "time_difference")]
        elif group is FeatureGroup.HF:
            names += [(gname, "bag_of_words", len(resources.vocabulary)), (gname, "timestamp", 1)]
    layout, offset = [], 0
    for gname, name, width in names:
        layout.append(LayoutEntry(gname, name, offset, width))
        offset += width
    return tuple(layout)


def assemble_thread(
    thread: ConversationThread, config: FeatureConfig, resources: FeatureResources
) -> dict[str, FeatureVector]:
    """Feature vectors for every tweet of ``thread``, keyed by tweet id."""
    layout = feature_layout(config, resources)
    g = config.groups
    provider = resources.provider
    embeddings = None
    if provider is not None and (FeatureGroup.LF1 in g or FeatureGroup.R in g):
        embeddings = {t.id: embed_tweet(t.text, provider) for t in thread}
    vocab_index = resources.vocab_index() if FeatureGroup.HF in g else None

    out = {}
    for tweet in thread:
        parts: list[np.ndarray | Sequence[float]] = []
        for group in config.ordered:
            if group is FeatureGroup.LF1:
                parts += [embeddings[tweet.id], pos_counts(tweet, resources.tagset),
                          [negation_count(tweet.text), swear_count(tweet.text, resources.swear_words)]]
            elif group in (FeatureGroup.LF2, FeatureGroup.LF3, FeatureGroup.LF4):
                surf = local_surface_features(tweet)
                keys = {FeatureGroup.LF2: ("length", "word_count"),
                        FeatureGroup.LF3: ("has_question", "has_exclamation"),
                        FeatureGroup.LF4: ("has_url",)}[group]
                parts.append([surf[k] for k in keys])
            elif group is FeatureGroup.R:
                parts.append(list(relational_features(tweet, thread, provider, embeddings).values()))
            elif group is FeatureGroup.ST:
                parts.append(list(structural_features(tweet, thread).values()))
            elif group is FeatureGroup.SO:
                parts.append(list(social_features(tweet, thread).values()))
            elif group is FeatureGroup.HF:
                counts = np.zeros(len(vocab_index))
                for tok in tokenize(tweet.text):
                    i = vocab_index.get(tok)
                    if i is not None:
                        counts[i] += 1
                parts += [counts, [tweet.timestamp - thread.root.timestamp]]
        values = np.concatenate([np.asarray(p, dtype=float) for p in parts])
        out[tweet.id] = FeatureVector(values, layout)
    return out


def assemble(
    tweet: Tweet,
    thread: ConversationThread,
    config: FeatureConfig,
    resources: FeatureResources,
) -> FeatureVector:
    return assemble_thread(thread, config, resources)[tweet.id]
