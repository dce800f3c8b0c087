import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from helpers import brute_force, central_difference, max_relative_error, random_parents
from stance_threads import crf
from stance_threads.crf import CrfModel, CrfTrainConfig, Instance, Topology
from stance_threads.errors import DimensionMismatch, UnlabelledNode

LN4 = np.log(4.0)


def chain_parents(n):
    return np.arange(-1, n - 1)


def rand_problem(rng, n, tree):
    pot = rng.normal(0, 1.5, (n, 4))
    T = rng.normal(0, 1.5, (4, 4))
    parents = random_parents(rng, n) if tree else chain_parents(n)
    return pot, parents, T


def test_node_potentials():
    m = CrfModel.zeros(3)
    assert np.allclose(crf.node_log_potentials(np.ones(3), m), 0)
    m.node_weights = np.arange(12.0).reshape(4, 3)
    m.node_bias = np.array([1.0, 0, 0, 0])
    assert np.allclose(crf.node_log_potentials(np.array([0, 1.0, 0]), m), m.node_weights[:, 1] + m.node_bias)
    x = np.array([0.3, -1.0, 2.0])
    assert np.allclose(crf.node_log_potentials(2 * x, m) - m.node_bias,
                       2 * (crf.node_log_potentials(x, m) - m.node_bias))
    with pytest.raises(DimensionMismatch):
        crf.node_log_potentials(np.ones(4), m)


def test_uniform_chain():
    log_z, marg, edges = crf.chain_infer(np.zeros((3, 4)), np.zeros((4, 4)))
    assert log_z == pytest.approx(3 * LN4, abs=1e-12)
    assert round(log_z, 6) == 4.158883
    assert np.allclose(marg, 0.25)
    assert list(crf.chain_decode(np.zeros((3, 4)), np.zeros((4, 4)))) == [0, 0, 0]


def test_length_one_chain():
    pot = np.array([[0.1, -2.0, 3.0, 0.5]])
    log_z, marg, edges = crf.chain_infer(pot, np.zeros((4, 4)))
    assert log_z == pytest.approx(np.log(np.exp(pot).sum()))
    assert edges.shape == (0, 4, 4)


def test_diagonal_transition_gives_constant_labels():
    pot = np.array([[0.0, 0.2, 0, 0], [0.1, 0, 0, 0], [0, 0.15, 0, 0]])
    T = 10 * np.eye(4)
    path = crf.chain_decode(pot, T)
    assert len(set(path)) == 1
    assert list(path) == list(brute_force(pot, chain_parents(3), T)[2])


def test_star_tree_zero():
    log_z, marg, _ = crf.tree_infer(np.zeros((3, 4)), [-1, 0, 0], np.zeros((4, 4)))
    assert log_z == pytest.approx(3 * LN4)
    assert list(crf.tree_decode(np.zeros((3, 4)), [-1, 0, 0], np.zeros((4, 4)))) == [0, 0, 0]


@pytest.mark.parametrize("seed", range(100))
def test_chain_matches_enumeration(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 7))
    pot, parents, T = rand_problem(rng, n, tree=False)
    log_z, marg, edges = crf.chain_infer(pot, T)
    bf_z, bf_marg, bf_map = brute_force(pot, parents, T)
    assert abs(log_z - bf_z) < 1e-8
    assert np.allclose(marg, bf_marg, atol=1e-10)
    assert list(crf.chain_decode(pot, T)) == list(bf_map)
    assert abs(crf.chain_log_z_backward(pot, T) - log_z) < 1e-9
    assert np.allclose(marg.sum(axis=1), 1, atol=1e-10)
    for i in range(n - 1):
        assert np.allclose(edges[i].sum(axis=1), marg[i])
        assert np.allclose(edges[i].sum(axis=0), marg[i + 1])


@pytest.mark.parametrize("seed", range(100))
def test_tree_matches_enumeration(seed):
    rng = np.random.default_rng(1000 + seed)
    n = int(rng.integers(1, 9))
    pot, parents, T = rand_problem(rng, n, tree=True)
    log_z, marg, edges = crf.tree_infer(pot, parents, T)
    bf_z, bf_marg, bf_map = brute_force(pot, parents, T)
    assert abs(log_z - bf_z) < 1e-8
    assert np.allclose(marg, bf_marg, atol=1e-10)
    assert list(crf.tree_decode(pot, parents, T)) == list(bf_map)
    for c in range(1, n):
        assert np.allclose(edges[c].sum(axis=0), marg[c])
        assert np.allclose(edges[c].sum(axis=1), marg[parents[c]])


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 8), st.integers(0, 2**32 - 1))
def test_path_tree_equals_chain(n, seed):
    rng = np.random.default_rng(seed)
    pot, parents, T = rand_problem(rng, n, tree=False)
    a = crf.chain_infer(pot, T)
    b = crf.tree_infer(pot, parents, T)
    assert a[0] == pytest.approx(b[0], abs=1e-10)
    assert np.allclose(a[1], b[1])
    assert np.allclose(a[2], b[2][1:])
    assert list(crf.chain_decode(pot, T)) == list(crf.tree_decode(pot, parents, T))


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 8), st.integers(0, 2**32 - 1), st.floats(-5, 5))
def test_shift_invariance(n, seed, c):
    rng = np.random.default_rng(seed)
    pot, parents, T = rand_problem(rng, n, tree=True)
    i = int(rng.integers(0, n))
    shifted = pot.copy()
    shifted[i] += c
    a, b = crf.tree_infer(pot, parents, T), crf.tree_infer(shifted, parents, T)
    assert b[0] == pytest.approx(a[0] + c, abs=1e-9)
    assert np.allclose(a[1], b[1])
    assert list(crf.tree_decode(pot, parents, T)) == list(crf.tree_decode(shifted, parents, T))


def test_filter_decode_is_prefix_viterbi():
    rng = np.random.default_rng(5)
    pot, _, T = rand_problem(rng, 6, tree=False)
    causal = crf.chain_filter_decode(pot, T)
    for i in range(6):
        assert causal[i] == crf.chain_decode(pot[:i + 1], T)[i]
    # the last position sees the whole chain, so it agrees with full Viterbi
    assert causal[-1] == crf.chain_decode(pot, T)[-1]


def test_causal_tree_decode_ignores_later_nodes():
    rng = np.random.default_rng(9)
    n = 7
    parents = random_parents(rng, n)
    model = CrfModel(rng.normal(size=(4, 3)), rng.normal(size=4), rng.normal(size=(4, 4)), Topology.TREE)
    X = rng.normal(size=(n, 3))
    full = crf.decode(model, Instance(X, parents), causal=True)
    X2 = X.copy()
    X2[4:] = rng.normal(size=(n - 4, 3)) * 10
    changed = crf.decode(model, Instance(X2, parents), causal=True)
    assert list(full[:4]) == list(changed[:4])


def random_instances(rng, count, d, tree):
    out = []
    for _ in range(count):
        n = int(rng.integers(1, 6))
        parents = random_parents(rng, n) if tree else chain_parents(n)
        out.append(Instance(rng.normal(size=(n, d)), parents, rng.integers(0, 4, n)))
    return out


def random_model(rng, d, topology):
    return CrfModel(rng.normal(0, 0.5, (4, d)), rng.normal(0, 0.5, 4), rng.normal(0, 0.5, (4, 4)), topology)


@pytest.mark.parametrize("seed", range(20))
@pytest.mark.parametrize("topology", [Topology.CHAIN, Topology.TREE])
def test_gradient_matches_finite_differences(seed, topology):
    rng = np.random.default_rng(seed)
    d = 3
    insts = random_instances(rng, 3, d, topology is Topology.TREE)
    model = random_model(rng, d, topology)
    w = rng.uniform(0.3, 3.0, 4)

    def loss(theta):
        W, b, T = crf._unpack(theta, d)
        return crf.nll_and_gradient(CrfModel(W, b, T, topology), insts, w, l2=0.7)[0]

    _, grad = crf.nll_and_gradient(model, insts, w, l2=0.7)
    numeric = central_difference(loss, crf._pack(model))
    assert max_relative_error(grad, numeric) < 1e-5


def test_single_node_loss():
    m = CrfModel.zeros(2)
    loss, _ = crf.nll_and_gradient(m, [Instance.chain(np.ones((1, 2)), [3])], np.ones(4), l2=0.0)
    assert loss == pytest.approx(LN4)


def test_doubling_weights_doubles_data_term():
    rng = np.random.default_rng(3)
    insts = random_instances(rng, 4, 3, tree=True)
    m = random_model(rng, 3, Topology.TREE)
    w = rng.uniform(0.5, 2.0, 4)
    zero_w = crf.nll_and_gradient(m, insts, np.zeros(4))[0]       # logZ minus edge terms
    one = crf.nll_and_gradient(m, insts, w)[0] - zero_w
    two = crf.nll_and_gradient(m, insts, 2 * w)[0] - zero_w
    assert two == pytest.approx(2 * one, rel=1e-10)


def test_unlabelled_node():
    with pytest.raises(UnlabelledNode):
        crf.nll_and_gradient(CrfModel.zeros(2), [Instance.chain(np.ones((2, 2)))])


def separable_chains(rng, n=40):
    insts = []
    for _ in range(n):
        y0 = int(rng.integers(0, 4))
        labels = [y0, (y0 + 1) % 4]
        X = np.eye(4)[labels] + rng.normal(0, 0.05, (2, 4))
        insts.append(Instance.chain(X, labels))
    return insts


def test_training_fits_separable_data():
    insts = separable_chains(np.random.default_rng(0))
    model = crf.train(insts, CrfTrainConfig(l2=0.01))
    correct = sum(int(np.all(crf.decode(model, i) == i.labels)) for i in insts)
    assert correct == len(insts)


def test_training_loss_non_increasing():
    insts = separable_chains(np.random.default_rng(1))
    losses = []

    def cb(theta):
        W, b, T = crf._unpack(theta, 4)
        losses.append(crf.nll_and_gradient(CrfModel(W, b, T), insts, None, 1.0)[0])

    crf.train(insts, CrfTrainConfig(l2=1.0), callback=cb)
    assert len(losses) > 1
    assert all(b <= a + 1e-9 for a, b in zip(losses, losses[1:]))


def test_large_l2_drives_weights_to_zero():
    insts = separable_chains(np.random.default_rng(2))
    model = crf.train(insts, CrfTrainConfig(l2=1e6))
    norm = np.sqrt(np.sum(model.node_weights ** 2) + np.sum(model.node_bias ** 2) + np.sum(model.transition ** 2))
    assert norm < 1e-3


def test_chain_and_tree_agree_on_paths():
    insts = separable_chains(np.random.default_rng(4), 15)
    chain = crf.train(insts, CrfTrainConfig(l2=0.5, topology=Topology.CHAIN))
    tree = crf.train(insts, CrfTrainConfig(l2=0.5, topology=Topology.TREE))
    a = crf.nll_and_gradient(chain, insts, None, 0.5)[0]
    b = crf.nll_and_gradient(tree, insts, None, 0.5)[0]
    assert a == pytest.approx(b, abs=1e-6)


def test_training_is_deterministic_and_serializes():
    insts = separable_chains(np.random.default_rng(6), 10)
    a = crf.train(insts, CrfTrainConfig(l2=0.5), feature_layout=[{"name": "x"}])
    b = crf.train(insts, CrfTrainConfig(l2=0.5), feature_layout=[{"name": "x"}])
    assert a.to_json() == b.to_json()
    c = CrfModel.from_json(a.to_json())
    assert np.array_equal(c.node_weights, a.node_weights) and c.feature_layout == [{"name": "x"}]


def test_frozen_transition_stays_zero():
    insts = separable_chains(np.random.default_rng(7), 10)
    m = crf.train(insts, CrfTrainConfig(freeze_transition=True))
    assert np.all(m.transition == 0)


@pytest.mark.parametrize("seed", range(20))
def test_forest_matches_per_instance_inference(seed):
    rng = np.random.default_rng(500 + seed)
    insts = random_instances(rng, 6, 2, tree=bool(seed % 2))
    forest = crf.Forest.from_instances(insts)
    T = rng.normal(size=(4, 4))
    pot = rng.normal(size=(forest.features.shape[0], 4))
    log_z, marg, edges = crf.forest_infer(pot, forest, T)
    total, off = 0.0, 0
    for inst in insts:
        n = len(inst)
        z, m, e = crf.tree_infer(pot[off:off + n], inst.parents, T)
        total += z
        assert np.allclose(marg[off:off + n], m, atol=1e-12)
        assert np.allclose(edges[off:off + n], e, atol=1e-12)
        off += n
    assert log_z == pytest.approx(total, abs=1e-10)
