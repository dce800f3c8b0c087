"""Independent oracles shared by the test modules."""
import itertools

import numpy as np
from scipy.special import logsumexp

from stance_threads.thread_model import LABELS, ConversationThread, Tweet


def random_tree(rng, n_nodes, event="e", thread_id="t"):
    """Random recursive tree: node i > 0 attaches to a uniformly chosen earlier node."""
    tweets = []
    for i in range(n_nodes):
        parent = None if i == 0 else f"n{int(rng.integers(0, i))}"
        tweets.append(Tweet(f"n{i}", parent, f"a{int(rng.integers(0, 5))}", f"text {i}",
                            1000 + i, label=LABELS[int(rng.integers(0, 4))]))
    return ConversationThread.from_tweets(event, thread_id, tweets)


def random_parents(rng, n):
    return np.array([-1] + [int(rng.integers(0, i)) for i in range(1, n)])


def assignment_scores(node_pot, parents, transition):
    """Score of every labelling, enumerated in lexicographic order."""
    n = node_pot.shape[0]
    labellings = np.array(list(itertools.product(range(4), repeat=n)))
    scores = node_pot[np.arange(n), labellings].sum(axis=1)
    for c in range(n):
        if parents[c] >= 0:
            scores = scores + transition[labellings[:, parents[c]], labellings[:, c]]
    return labellings, scores


def brute_force(node_pot, parents, transition):
    """(logZ, node marginals, MAP labelling) by exhaustive enumeration."""
    labellings, scores = assignment_scores(node_pot, parents, transition)
    log_z = logsumexp(scores)
    probs = np.exp(scores - log_z)
    n = node_pot.shape[0]
    marg = np.zeros((n, 4))
    for i in range(n):
        np.add.at(marg[i], labellings[:, i], probs)
    return log_z, marg, labellings[int(np.argmax(scores))]


def central_difference(f, x, h=1e-6):
    x = np.asarray(x, dtype=float)
    g = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e.flat[i] = h
        g.flat[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def max_relative_error(analytic, numeric, rel_floor=1e-3):
    """Elementwise relative error; components below ``rel_floor`` times the
    largest component are compared against that floor instead of themselves."""
    analytic, numeric = np.ravel(analytic), np.ravel(numeric)
    floor = rel_floor * max(np.max(np.abs(numeric)), 1e-12)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom))
