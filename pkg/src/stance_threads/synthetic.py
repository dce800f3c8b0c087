"""Synthetic conversation threads with controllable label-transition structure.

Labels propagate down the reply tree through a parent->child transition
matrix.  Each tweet's text carries a label cue word only with probability
``cue_prob``, so per-tweet evidence can be made as weak as needed while the
thread structure stays informative.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .features import EmbeddingProvider
from .thread_model import LABELS, N_LABELS, ConversationThread, Dataset, Tweet

CUE_WORDS = tuple(f"cue{lab.key}" for lab in LABELS)


def cyclic_transitions(strength: float = 0.8) -> np.ndarray:
    """Support->Deny->Query->Comment->Support with probability ``strength``, rest uniform."""
    rest = (1.0 - strength) / (N_LABELS - 1)
    P = np.full((N_LABELS, N_LABELS), rest)
    for y in range(N_LABELS):
        P[y, (y + 1) % N_LABELS] = strength
    return P


@dataclass
class SyntheticConfig:
    n_events: int = 4
    threads_per_event: int = 40
    max_nodes: int = 30
    transitions: np.ndarray | None = None
    root_probs: tuple[float, ...] = (0.25, 0.25, 0.25, 0.25)
    cue_prob: float = 0.3
    n_filler: int = 40
    words_per_tweet: tuple[int, int] = (4, 10)
    reply_prob: float = 0.55
    max_children: int = 3
    embedding_dim: int = 8
    filler_scale: float = 0.3          # std of filler word vectors; cue vectors have norm ~3
    n_authors: int = 12


def _thread(rng: np.random.Generator, cfg: SyntheticConfig, event: str, idx: int) -> ConversationThread:
    P = cyclic_transitions() if cfg.transitions is None else cfg.transitions
    filler = [f"w{i}" for i in range(cfg.n_filler)]
    tagset = ("N", "V", "A", "D")
    base_time = 1_414_000_000 + int(rng.integers(0, 10_000_000))

    def make_text(label: int) -> str:
        n = int(rng.integers(cfg.words_per_tweet[0], cfg.words_per_tweet[1] + 1))
        words = list(rng.choice(filler, size=n))
        if rng.uniform() < cfg.cue_prob:
            words.insert(int(rng.integers(0, n + 1)), CUE_WORDS[label])
        return " ".join(words)

    tweets: list[Tweet] = []
    labels: dict[str, int] = {}
    frontier = []
    root_label = int(rng.choice(N_LABELS, p=np.asarray(cfg.root_probs)))
    root_id = f"{event}-{idx}-0"
    root_author = f"u{int(rng.integers(cfg.n_authors))}"
    tweets.append(Tweet(root_id, None, root_author, make_text(root_label), base_time,
                        int(rng.poisson(3)), int(rng.poisson(5)),
                        tuple(rng.choice(tagset, size=3)), LABELS[root_label]))
    labels[root_id] = root_label
    frontier.append((root_id, 0, base_time))
    n_root_children = int(rng.integers(1, cfg.max_children + 1))
    while frontier and len(tweets) < cfg.max_nodes:
        parent, depth, ptime = frontier.pop(0)
        n_kids = n_root_children if depth == 0 else int(rng.uniform() < cfg.reply_prob) * int(
            rng.integers(1, cfg.max_children))
        for _ in range(n_kids):
            if len(tweets) >= cfg.max_nodes:
                break
            tid = f"{event}-{idx}-{len(tweets)}"
            y = int(rng.choice(N_LABELS, p=P[labels[parent]]))
            labels[tid] = y
            t = ptime + int(rng.exponential(120)) + 1
            tweets.append(Tweet(tid, parent, f"u{int(rng.integers(cfg.n_authors))}", make_text(y), t,
                                int(rng.poisson(1)), int(rng.poisson(1)),
                                tuple(rng.choice(tagset, size=3)), LABELS[y]))
            frontier.append((tid, depth + 1, t))
    return ConversationThread.from_tweets(event, f"{event}-{idx}", tweets)


def generate(cfg: SyntheticConfig = SyntheticConfig(), seed: int = 0) -> Dataset:
    rng = np.random.default_rng(seed)
    threads = [
        _thread(rng, cfg, f"event{e}", i)
        for e in range(cfg.n_events)
        for i in range(cfg.threads_per_event)
    ]
    return Dataset.from_threads(threads)


def embeddings(cfg: SyntheticConfig = SyntheticConfig(), seed: int = 0) -> EmbeddingProvider:
    """Random filler vectors; each cue word points along its own label axis."""
    rng = np.random.default_rng(seed + 10_007)
    d = cfg.embedding_dim
    vectors = {f"w{i}": rng.normal(0, cfg.filler_scale, d) for i in range(cfg.n_filler)}
    for y, word in enumerate(CUE_WORDS):
        v = rng.normal(0, 0.2, d)
        v[y % d] += 3.0
        vectors[word] = v
    return EmbeddingProvider(vectors, d)


def write_embeddings(provider: EmbeddingProvider, words, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{len(words)} {provider.dimension}\n")
        for w in words:
            fh.write(w + " " + " ".join(repr(float(x)) for x in provider.lookup(w)) + "\n")
