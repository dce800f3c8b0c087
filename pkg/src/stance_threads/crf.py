"""Linear-chain and tree-structured CRFs over the four stance labels.

Factors are unary (``W x + b`` per node) and pairwise (a shared 4x4
transition matrix indexed ``[parent_label, child_label]``).  All inference
runs in log space.  A tree is represented by a parent-index array in which
every parent precedes its children and the root has parent ``-1``; a chain of
length n is the tree ``[-1, 0, 1, ..., n-2]``.
"""
from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import optimize
from scipy.special import logsumexp

from .errors import DimensionMismatch, OptimizationDiverged, UnlabelledNode
from .thread_model import N_LABELS

K = N_LABELS


class Topology(str, enum.Enum):
    CHAIN = "chain"
    TREE = "tree"


@dataclass
class CrfModel:
    node_weights: np.ndarray
    node_bias: np.ndarray
    transition: np.ndarray
    topology: Topology = Topology.CHAIN
    feature_layout: list = field(default_factory=list)

    @classmethod
    def zeros(cls, dim: int, topology: Topology = Topology.CHAIN, feature_layout=None) -> "CrfModel":
        return cls(np.zeros((K, dim)), np.zeros(K), np.zeros((K, K)), Topology(topology),
                   list(feature_layout or []))

    @property
    def dim(self) -> int:
        return self.node_weights.shape[1]

    def to_json(self) -> str:
        return json.dumps({
            "topology": Topology(self.topology).value,
            "feature_layout": self.feature_layout,
            "node_weights": self.node_weights.tolist(),
            "node_bias": self.node_bias.tolist(),
            "transition": self.transition.tolist(),
        })

    @classmethod
    def from_json(cls, text: str) -> "CrfModel":
        d = json.loads(text)
        return cls(np.array(d["node_weights"], dtype=float).reshape(K, -1), np.array(d["node_bias"], dtype=float),
                   np.array(d["transition"], dtype=float), Topology(d["topology"]), d.get("feature_layout", []))


@dataclass
class Instance:
    """One training/prediction unit: node features, parent links and (optional) gold labels."""
    features: np.ndarray        # (n, d)
    parents: np.ndarray         # (n,) parent index, -1 for the root
    labels: np.ndarray | None = None
    ids: tuple[str, ...] = ()

    @classmethod
    def chain(cls, features, labels=None, ids=()) -> "Instance":
        features = np.asarray(features, dtype=float)
        parents = np.arange(-1, features.shape[0] - 1)
        return cls(features, parents, None if labels is None else np.asarray(labels, dtype=int), tuple(ids))

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def is_chain(self) -> bool:
        return bool(np.all(self.parents == np.arange(-1, len(self) - 1)))


def node_log_potentials(x: np.ndarray, model: CrfModel) -> np.ndarray:
    """Unary log-potentials; ``x`` may be a single vector or an (n, d) matrix."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != model.dim:
        raise DimensionMismatch(f"feature width {x.shape[-1]} != model width {model.dim}")
    return x @ model.node_weights.T + model.node_bias


# -- chains -------------------------------------------------------------------

def chain_infer(node_pot: np.ndarray, transition: np.ndarray):
    """Forward-backward.  Returns (logZ, node marginals (n, K), edge marginals (n-1, K, K))."""
    node_pot = np.asarray(node_pot, dtype=float)
    n = node_pot.shape[0]
    fwd = np.empty((n, K))
    bwd = np.zeros((n, K))
    fwd[0] = node_pot[0]
    for i in range(1, n):
        fwd[i] = node_pot[i] + logsumexp(fwd[i - 1][:, None] + transition, axis=0)
    for i in range(n - 2, -1, -1):
        bwd[i] = logsumexp(transition + (node_pot[i + 1] + bwd[i + 1])[None, :], axis=1)
    log_z = float(logsumexp(fwd[-1]))
    marg = np.exp(fwd + bwd - log_z)
    edges = np.empty((max(n - 1, 0), K, K))
    for i in range(n - 1):
        edges[i] = np.exp(fwd[i][:, None] + transition + (node_pot[i + 1] + bwd[i + 1])[None, :] - log_z)
    return log_z, marg, edges


def chain_log_z_backward(node_pot: np.ndarray, transition: np.ndarray) -> float:
    n = node_pot.shape[0]
    bwd = np.zeros(K)
    for i in range(n - 2, -1, -1):
        bwd = logsumexp(transition + (node_pot[i + 1] + bwd)[None, :], axis=1)
    return float(logsumexp(node_pot[0] + bwd))


def chain_decode(node_pot: np.ndarray, transition: np.ndarray) -> np.ndarray:
    """Viterbi; ties go to the lowest label index."""
    node_pot = np.asarray(node_pot, dtype=float)
    n = node_pot.shape[0]
    delta = node_pot[0].copy()
    back = np.zeros((n, K), dtype=int)
    for i in range(1, n):
        scores = delta[:, None] + transition
        back[i] = np.argmax(scores, axis=0)
        delta = node_pot[i] + scores[back[i], np.arange(K)]
    path = np.empty(n, dtype=int)
    path[-1] = int(np.argmax(delta))
    for i in range(n - 1, 0, -1):
        path[i - 1] = back[i, path[i]]
    return path


def chain_filter_decode(node_pot: np.ndarray, transition: np.ndarray) -> np.ndarray:
    """Label of position i in the best labelling of the prefix ending at i.

    Uses only positions <= i for each output, i.e. no later tweet is seen.
    """
    node_pot = np.asarray(node_pot, dtype=float)
    out = np.empty(node_pot.shape[0], dtype=int)
    delta = node_pot[0].copy()
    out[0] = int(np.argmax(delta))
    for i in range(1, node_pot.shape[0]):
        delta = node_pot[i] + np.max(delta[:, None] + transition, axis=0)
        out[i] = int(np.argmax(delta))
    return out


# -- trees --------------------------------------------------------------------

def tree_infer(node_pot: np.ndarray, parents: Sequence[int], transition: np.ndarray):
    """Two-pass sum-product.  Edge marginals are indexed by child node: ``edges[c][y_parent, y_child]``
    (the root's entry is zero)."""
    node_pot = np.asarray(node_pot, dtype=float)
    parents = np.asarray(parents, dtype=int)
    n = node_pot.shape[0]
    up = node_pot.copy()             # node potential plus messages from children
    msg_up = np.zeros((n, K))        # message child -> parent, over parent label
    for c in range(n - 1, 0, -1):
        if parents[c] < 0:
            continue
        msg_up[c] = logsumexp(transition + up[c][None, :], axis=1)
        up[parents[c]] += msg_up[c]
    roots = np.flatnonzero(parents < 0)
    log_z = float(sum(logsumexp(up[r]) for r in roots))

    down = np.zeros((n, K))          # message parent -> node, over node label
    for c in range(1, n):
        p = parents[c]
        if p < 0:
            continue
        outside = down[p] + up[p] - msg_up[c]
        down[c] = logsumexp(outside[:, None] + transition, axis=0)
    belief = up + down
    marg = np.exp(belief - logsumexp(belief, axis=1, keepdims=True))
    edges = np.zeros((n, K, K))
    for c in range(n):
        p = parents[c]
        if p < 0:
            continue
        outside = down[p] + up[p] - msg_up[c]
        joint = outside[:, None] + transition + up[c][None, :]
        edges[c] = np.exp(joint - logsumexp(joint))
    return log_z, marg, edges


def tree_decode(node_pot: np.ndarray, parents: Sequence[int], transition: np.ndarray) -> np.ndarray:
    """Max-product with backpointers; ties go to the lowest label index."""
    node_pot = np.asarray(node_pot, dtype=float)
    parents = np.asarray(parents, dtype=int)
    n = node_pot.shape[0]
    up = node_pot.copy()
    back = np.zeros((n, K), dtype=int)
    for c in range(n - 1, 0, -1):
        if parents[c] < 0:
            continue
        scores = transition + up[c][None, :]       # [y_parent, y_child]
        back[c] = np.argmax(scores, axis=1)
        up[parents[c]] += scores[np.arange(K), back[c]]
    out = np.empty(n, dtype=int)
    for i in range(n):
        out[i] = int(np.argmax(up[i])) if parents[i] < 0 else back[i, out[parents[i]]]
    return out


def infer(inst_pot: np.ndarray, parents: np.ndarray, transition: np.ndarray, topology: Topology):
    """Dispatch on topology; edge marginals always come back indexed by child node."""
    if Topology(topology) is Topology.CHAIN:
        log_z, marg, chain_edges = chain_infer(inst_pot, transition)
        edges = np.zeros((inst_pot.shape[0], K, K))
        edges[1:] = chain_edges
        return log_z, marg, edges
    return tree_infer(inst_pot, parents, transition)


# -- batched inference over many instances --------------------------------------

@dataclass
class Forest:
    """Instances stacked into one forest so that sum-product runs level by level.

    Every node of a given depth is processed in a single vectorized step, which
    makes training cost scale with the deepest instance rather than with the
    number of instances.
    """
    features: np.ndarray
    parents: np.ndarray          # global indices, -1 for roots
    labels: np.ndarray | None
    levels: list[np.ndarray]     # node indices at depth 1, 2, ...
    roots: np.ndarray

    @classmethod
    def from_instances(cls, instances: Sequence[Instance]) -> "Forest":
        feats, parents, labels = [], [], []
        offset = 0
        labelled = all(inst.labels is not None for inst in instances)
        for inst in instances:
            par = np.asarray(inst.parents, dtype=int)
            if np.any(par >= np.arange(len(par))):
                raise ValueError("parents must precede children in node order")
            feats.append(inst.features)
            parents.append(np.where(par >= 0, par + offset, -1))
            if labelled:
                labels.append(np.asarray(inst.labels, dtype=int))
            offset += len(inst)
        parents_all = np.concatenate(parents)
        depth = np.zeros(offset, dtype=int)
        for i in np.flatnonzero(parents_all >= 0):
            depth[i] = depth[parents_all[i]] + 1
        levels = [np.flatnonzero(depth == d) for d in range(1, int(depth.max(initial=0)) + 1)]
        return cls(np.vstack(feats), parents_all, np.concatenate(labels) if labelled else None,
                   levels, np.flatnonzero(parents_all < 0))


def forest_infer(node_pot: np.ndarray, forest: Forest, transition: np.ndarray):
    """Sum-product on every tree of ``forest`` at once.

    Returns (sum of per-tree logZ, node marginals, edge marginals indexed by child).
    """
    n = node_pot.shape[0]
    parents = forest.parents
    up = node_pot.copy()
    msg_up = np.zeros((n, K))
    for nodes in reversed(forest.levels):
        msg_up[nodes] = logsumexp(transition[None, :, :] + up[nodes][:, None, :], axis=2)
        np.add.at(up, parents[nodes], msg_up[nodes])
    log_z = float(logsumexp(up[forest.roots], axis=1).sum())

    down = np.zeros((n, K))
    edges = np.zeros((n, K, K))
    for nodes in forest.levels:
        p = parents[nodes]
        outside = down[p] + up[p] - msg_up[nodes]
        down[nodes] = logsumexp(outside[:, :, None] + transition[None, :, :], axis=1)
        joint = outside[:, :, None] + transition[None, :, :] + up[nodes][:, None, :]
        edges[nodes] = np.exp(joint - logsumexp(joint, axis=(1, 2), keepdims=True))
    belief = up + down
    marg = np.exp(belief - logsumexp(belief, axis=1, keepdims=True))
    return log_z, marg, edges


# -- training -----------------------------------------------------------------

def _pack(model: CrfModel) -> np.ndarray:
    return np.concatenate([model.node_weights.ravel(), model.node_bias, model.transition.ravel()])


def _unpack(theta: np.ndarray, dim: int):
    w = theta[:K * dim].reshape(K, dim)
    b = theta[K * dim:K * dim + K]
    t = theta[K * dim + K:].reshape(K, K)
    return w, b, t


def _forest_nll(model: CrfModel, forest: Forest, weights: np.ndarray | None, l2: float,
                freeze_transition: bool):
    w_cls = np.ones(K) if weights is None else np.asarray(weights, dtype=float)
    W, b, T = model.node_weights, model.node_bias, model.transition
    dim = W.shape[1]
    X, y, parents = forest.features, forest.labels, forest.parents
    if X.shape[1] != dim:
        raise DimensionMismatch(f"instance width {X.shape[1]} != model width {dim}")
    n = X.shape[0]
    pot = X @ W.T + b
    log_z, marg, edges = forest_infer(pot, forest, T)
    nw = w_cls[y]
    loss = log_z - float(np.sum(nw * pot[np.arange(n), y]))
    resid = marg
    resid[np.arange(n), y] -= nw
    gW = resid.T @ X
    gb = resid.sum(axis=0)
    child = np.flatnonzero(parents >= 0)
    gT = np.zeros((K, K))
    if child.size:
        loss -= float(np.sum(T[y[parents[child]], y[child]]))
        gT += edges[child].sum(axis=0)
        np.add.at(gT, (y[parents[child]], y[child]), -1.0)
    theta = _pack(model)
    if freeze_transition:
        gT[:] = 0.0
        theta = theta.copy()
        theta[K * dim + K:] = 0.0
    loss += 0.5 * l2 * float(theta @ theta)
    grad = np.concatenate([gW.ravel(), gb, gT.ravel()]) + l2 * theta
    return loss, grad


def _check_labelled(instances: Sequence[Instance]) -> None:
    for inst in instances:
        if inst.labels is None or np.any(np.asarray(inst.labels) < 0):
            raise UnlabelledNode("every training node needs a gold label")


def nll_and_gradient(
    model: CrfModel,
    instances: Sequence[Instance],
    weights: np.ndarray | None = None,
    l2: float = 0.0,
    freeze_transition: bool = False,
):
    """Class-weighted negative log-likelihood and its gradient.

    The gold node terms are scaled by ``weights[gold]``; gold edge terms and
    the partition function are unweighted.  Returns ``(loss, grad)`` with the
    gradient packed as ``[W.ravel(), b, T.ravel()]``.  A chain is a path-shaped
    tree, so both topologies share the same computation.
    """
    _check_labelled(instances)
    return _forest_nll(model, Forest.from_instances(instances), weights, l2, freeze_transition)


@dataclass
class CrfTrainConfig:
    l2: float = 1.0
    max_iter: int = 200
    tol: float = 1e-6
    topology: Topology = Topology.CHAIN
    freeze_transition: bool = False


def train(
    instances: Sequence[Instance],
    config: CrfTrainConfig = CrfTrainConfig(),
    weights: np.ndarray | None = None,
    feature_layout=None,
    callback=None,
) -> CrfModel:
    if not instances:
        raise ValueError("no training instances")
    _check_labelled(instances)
    dim = instances[0].features.shape[1]
    model = CrfModel.zeros(dim, config.topology, feature_layout)
    forest = Forest.from_instances(instances)

    def objective(theta):
        W, b, T = _unpack(theta, dim)
        m = CrfModel(W, b, T, model.topology)
        loss, grad = _forest_nll(m, forest, weights, config.l2, config.freeze_transition)
        if not np.isfinite(loss):
            raise OptimizationDiverged("non-finite CRF objective")
        return loss, grad

    res = optimize.minimize(objective, _pack(model), jac=True, method="L-BFGS-B",
                            callback=callback,
                            options={"maxiter": config.max_iter, "gtol": config.tol})
    W, b, T = _unpack(res.x, dim)
    if config.freeze_transition:
        T = np.zeros((K, K))
    return CrfModel(W.copy(), b.copy(), T.copy(), Topology(config.topology), list(feature_layout or []))


def decode(model: CrfModel, inst: Instance, causal: bool = False) -> np.ndarray:
    """MAP labels for ``inst``.

    With ``causal=True`` each node's label comes from the best labelling of the
    part of the graph that precedes it: the chain prefix for chains; for trees,
    the nodes at or before it in ``inst`` order (callers order nodes by time).
    """
    pot = node_log_potentials(inst.features, model)
    if Topology(model.topology) is Topology.CHAIN or inst.is_chain:
        if causal:
            return chain_filter_decode(pot, model.transition)
        return chain_decode(pot, model.transition)
    if not causal:
        return tree_decode(pot, inst.parents, model.transition)
    out = np.empty(len(inst), dtype=int)
    for i in range(len(inst)):
        out[i] = tree_decode(pot[:i + 1], inst.parents[:i + 1], model.transition)[i]
    return out
