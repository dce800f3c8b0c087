"""Acceptance criteria 1-9.  Each test records one PASS/FAIL line (see conftest).

Criterion 9 needs the public PHEME release and user-supplied embeddings; point
``STANCE_THREADS_PHEME`` (and optionally ``STANCE_THREADS_EMBEDDINGS``) at them
to run it, otherwise it is skipped.
"""
import os
import time
from collections import Counter

import numpy as np
import pytest
from scipy import integrate, sparse

from helpers import brute_force, central_difference, max_relative_error, random_parents, random_tree
from stance_threads import branch_lstm as bl
from stance_threads import crf, evaluation, hawkes, maxent, metrics, pipeline, synthetic
from stance_threads.branch_lstm import BranchData, BranchLstmModel, ModelConfig
from stance_threads.crf import CrfModel, Instance, Topology
from stance_threads.evaluation import ClassifierSpec
from stance_threads.features import EmbeddingProvider, FeatureConfig
from stance_threads.hawkes import EventHistory, HawkesParams, ThreadEvents
from stance_threads.thread_model import LABELS, depth_of, extract_branches, novelty_mask_check

pytestmark = pytest.mark.acceptance


# -- 1. structured inference vs enumeration ------------------------------------

def test_criterion_1_inference_oracle(criterion):
    start = time.perf_counter()
    worst_z, decode_mismatch, cases = 0.0, 0, 0
    for seed in range(100):
        rng = np.random.default_rng(seed)
        for tree, max_n in ((False, 6), (True, 8)):
            n = int(rng.integers(1, max_n + 1))
            pot, T = rng.normal(0, 1.5, (n, 4)), rng.normal(0, 1.5, (4, 4))
            parents = random_parents(rng, n) if tree else np.arange(-1, n - 1)
            bf_z, bf_marg, bf_map = brute_force(pot, parents, T)
            if tree:
                log_z, marg, _ = crf.tree_infer(pot, parents, T)
                path = crf.tree_decode(pot, parents, T)
            else:
                log_z, marg, _ = crf.chain_infer(pot, T)
                path = crf.chain_decode(pot, T)
            worst_z = max(worst_z, abs(log_z - bf_z), float(np.max(np.abs(marg - bf_marg))))
            decode_mismatch += int(list(path) != list(bf_map))
            cases += 1
    elapsed = time.perf_counter() - start
    ok = worst_z < 1e-8 and decode_mismatch == 0 and elapsed < 30
    criterion(1, ok, f"{cases} cases, max |logZ/marginal err|={worst_z:.2e}, "
                     f"decode mismatches={decode_mismatch}, {elapsed:.1f}s")


# -- 2. finite-difference gradients --------------------------------------------

def crf_gradient_error(seed, topology):
    rng = np.random.default_rng(seed)
    d = 3
    insts = []
    for _ in range(3):
        n = int(rng.integers(1, 6))
        parents = random_parents(rng, n) if topology is Topology.TREE else np.arange(-1, n - 1)
        insts.append(Instance(rng.normal(size=(n, d)), parents, rng.integers(0, 4, n)))
    model = CrfModel(rng.normal(0, 0.5, (4, d)), rng.normal(0, 0.5, 4), rng.normal(0, 0.5, (4, 4)), topology)
    w = rng.uniform(0.3, 3.0, 4)

    def loss(theta):
        W, b, T = crf._unpack(theta, d)
        return crf.nll_and_gradient(CrfModel(W, b, T, topology), insts, w, l2=0.7)[0]

    _, grad = crf.nll_and_gradient(model, insts, w, l2=0.7)
    return max_relative_error(grad, central_difference(loss, crf._pack(model)))


def maxent_gradient_error(seed):
    rng = np.random.default_rng(seed)
    X, y = rng.normal(size=(12, 4)), rng.integers(0, 4, 12)
    sw = rng.uniform(0.2, 3.0, 4)[y]
    theta = rng.normal(size=20)
    _, grad = maxent.nll_and_gradient(theta, X, y, sw, 0.8)
    numeric = central_difference(lambda t: maxent.nll_and_gradient(t, X, y, sw, 0.8)[0], theta)
    return max_relative_error(grad, numeric)


def lstm_gradient_error(seed):
    rng = np.random.default_rng(seed)
    model = BranchLstmModel.init(3, ModelConfig((4,), (5,), 0.0, 0.01), seed)
    n = 3
    batch = [BranchData(rng.normal(size=(n, 3)), rng.integers(0, 4, n),
                        np.r_[1.0, (rng.uniform(size=n - 1) < 0.7)].astype(float))]
    X, Y, M = bl.pad_batch(batch, 3)
    names = list(model.params)

    def loss(theta):
        m = model.copy()
        off = 0
        for k in names:
            size = m.params[k].size
            m.params[k] = theta[off:off + size].reshape(m.params[k].shape)
            off += size
        return bl.loss_and_gradient(m, X, Y, M)[0]

    theta = np.concatenate([model.params[k].ravel() for k in names])
    grads = bl.gradient(model, batch)
    analytic = np.concatenate([grads[k].ravel() for k in names])
    return max_relative_error(analytic, central_difference(loss, theta))


def test_criterion_2_gradients(criterion):
    start = time.perf_counter()
    crf_err = max(crf_gradient_error(s, t) for s in range(20) for t in Topology)
    me_err = max(maxent_gradient_error(s) for s in range(20))
    lstm_err = max(lstm_gradient_error(s) for s in range(20))
    elapsed = time.perf_counter() - start
    ok = crf_err < 1e-5 and me_err < 1e-5 and lstm_err < 1e-4 and elapsed < 60
    criterion(2, ok, f"max rel err CRF={crf_err:.1e} (40 inst), MaxEnt={me_err:.1e} (20), "
                     f"LSTM={lstm_err:.1e} (20), {elapsed:.1f}s")


# -- 3. Hawkes likelihood ------------------------------------------------------

def random_history(rng, n_threads=4, max_events=6, V=3):
    threads = []
    for m in range(n_threads):
        n = int(rng.integers(1, max_events + 1))
        times = np.sort(rng.uniform(0, 30, n))
        times -= times[0]
        threads.append(ThreadEvents(f"m{m}", times, rng.integers(0, 4, n), sparse.csr_matrix(rng.poisson(1.0, (n, V))),
                                    float(times[-1]) + rng.uniform(0, 5)))
    return EventHistory(threads, tuple(f"w{i}" for i in range(V)))


def quadrature_compensator(ev, p):
    def total(t):
        lam = p.mu.copy()
        for tl, yl in zip(ev.times, ev.labels):
            if tl < t:
                lam = lam + p.alpha[yl] * p.omega * np.exp(-p.omega * (t - tl))
        return lam.sum()

    knots = [0.0, *sorted(set(ev.times)), ev.horizon]
    return sum(integrate.quad(total, a, b, epsabs=1e-12, epsrel=1e-12)[0] for a, b in zip(knots, knots[1:]) if b > a)


def test_criterion_3_hawkes_likelihood(criterion):
    worst, histories = 0.0, 0
    for seed in range(20):
        rng = np.random.default_rng(seed)
        hist = random_history(rng)
        p = HawkesParams(rng.uniform(0.01, 0.5, 4), rng.uniform(0, 1.5, (4, 4)), rng.dirichlet(np.ones(3), 4))
        for ev in hist.threads:
            worst = max(worst, abs(hawkes.compensator(ev, p) - quadrature_compensator(ev, p)))
            histories += 1
    drops = []
    for seed in range(20):
        hist = random_history(np.random.default_rng(100 + seed), n_threads=6, max_events=8)
        init = hawkes.fit_approx(hist)
        fitted = hawkes.fit_grad(hist, init, max_iter=200)
        drops.append(hawkes.log_likelihood(hist, init) - hawkes.log_likelihood(hist, fitted))
    ok = worst < 1e-6 and max(drops) <= 1e-9
    criterion(3, ok, f"compensator vs quadrature max err={worst:.1e} over {histories} histories; "
                     f"fit_grad smallest loglik gain over init={-max(drops):+.3g} over 20 fits")


# -- 4. Hawkes recovery --------------------------------------------------------

def test_criterion_4_hawkes_recovery(criterion):
    start = time.perf_counter()
    mu = np.array([0.02, 0.01, 0.015, 0.05])
    truth = HawkesParams(mu, np.zeros((4, 4)), np.full((4, 5), 0.2))
    hits, worst = 0, 0.0
    for rep in range(20):
        hist = hawkes.simulate(truth, 200, 200.0, seed=rep)
        fitted = hawkes.fit_grad(hist, hawkes.fit_approx(hist))
        rel = np.abs(fitted.mu - mu) / mu
        worst = max(worst, float(rel.max()))
        hits += bool(np.all(rel <= 0.25))
    elapsed = time.perf_counter() - start
    ok = hits >= 18 and elapsed < 120
    criterion(4, ok, f"{hits}/20 repetitions with every mu within 25% (worst rel err {worst:.3f}), {elapsed:.1f}s")


# -- 5. branch decomposition ---------------------------------------------------

def test_criterion_5_branches(criterion):
    bad = 0
    for seed in range(1000):
        rng = np.random.default_rng(seed)
        th = random_tree(rng, int(rng.integers(1, 31)))
        branches = extract_branches(th)
        leaves = sum(th.is_leaf(t) for t in th.tweets)
        mask_total = sum(int(sum(b.novelty_mask)) for b in branches)
        firsts = Counter(t for b in branches for t, m in zip(b.tweet_ids, b.novelty_mask) if m)
        ok = (len(branches) == leaves and mask_total == len(th) and set(firsts) == set(th.tweets)
              and all(c == 1 for c in firsts.values()) and novelty_mask_check(branches, len(th)))
        bad += not ok
    criterion(5, bad == 0, f"1000 random trees (<=30 nodes), violations={bad}")


# -- 6. metric hand checks -----------------------------------------------------

def test_criterion_6_metrics(criterion):
    gold = [0] * 910 + [1] * 344 + [2] * 358 + [3] * 2907
    f1 = metrics.macro_f1(gold, [3] * len(gold))
    stat = metrics.mcnemar_from_counts(10, 2).statistic
    ok = abs(f1 - 0.1957) <= 5e-4 and abs(stat - 4.0833) <= 1e-4
    criterion(6, ok, f"all-comment macro-F1={f1:.4f} (0.1957), McNemar(10,2)={stat:.4f} (4.0833)")


# -- 7. zero-transition CRF vs MaxEnt ------------------------------------------

class MaxEntWeightsCrf(pipeline.CrfClassifier):
    """Train MaxEnt, then decode with those node weights and a zero transition."""

    def fit(self, threads, ctx):
        self.ctx = ctx
        me = pipeline.MaxEntClassifier().fit(threads, ctx).model
        self.model = CrfModel(me.weights, me.bias, np.zeros((4, 4)), self.topology)
        return self


def test_criterion_7_zero_transition_crf(criterion):
    for topology in ("chain", "tree"):
        pipeline.register(f"maxent-crf-{topology}", lambda t=topology, **kw: MaxEntWeightsCrf(topology=t, **kw))
    cfg = synthetic.SyntheticConfig(threads_per_event=15)
    ds, prov = synthetic.generate(cfg, 7), synthetic.embeddings(cfg, 7)
    feats = FeatureConfig.parse("LF123+R+ST")

    def run(name, params=None):
        report = evaluation.run_experiment(ds, ClassifierSpec(name, params or {}), feats, provider=prov,
                                           swear_words=frozenset())
        return {p.tweet_id: p.pred for p in report.predictions}

    reference = run("maxent")
    runs = {"chain causal": ("maxent-crf-chain", {}), "chain full": ("maxent-crf-chain", {"causal": False}),
            "tree causal": ("maxent-crf-tree", {}), "tree full": ("maxent-crf-tree", {"causal": False})}
    diffs = {key: sum(reference[t] != y for t, y in run(*args).items()) for key, args in runs.items()}
    ok = all(v == 0 for v in diffs.values())
    criterion(7, ok, f"{len(reference)} tweets, 4 events; prediction differences vs MaxEnt: {diffs}")


# -- 8. sequential signal ------------------------------------------------------

def test_criterion_8_sequential_signal(criterion):
    cfg = synthetic.SyntheticConfig(threads_per_event=80)
    gaps = []
    for seed in range(5):
        ds, prov = synthetic.generate(cfg, seed), synthetic.embeddings(cfg, seed)
        f1 = {name: evaluation.run_experiment(ds, ClassifierSpec(name), FeatureConfig.parse("LF1"), provider=prov,
                                              swear_words=frozenset()).macro_f1
              for name in ("maxent", "crf-linear")}
        gaps.append(f1["crf-linear"] - f1["maxent"])
    ok = min(gaps) >= 0.05
    criterion(8, ok, "linear CRF minus MaxEnt macro-F1 over 5 synthetic datasets: "
                     + ", ".join(f"{g:+.3f}" for g in gaps))


# -- 9. PHEME (dataset-contingent) --------------------------------------------

PHEME = os.environ.get("STANCE_THREADS_PHEME")
EMBEDDINGS = os.environ.get("STANCE_THREADS_EMBEDDINGS")


@pytest.mark.skipif(not PHEME, reason="STANCE_THREADS_PHEME not set; PHEME-dependent criterion not run")
def test_criterion_9_pheme(criterion):
    from stance_threads.pheme import convert_pheme

    start = time.perf_counter()
    ds = convert_pheme(PHEME).dataset
    counts = ds.label_counts()
    n_tweets = sum(len(th) for th in ds.threads)
    totals = [counts[lab] for lab in LABELS]
    depth = Counter(evaluation.depth_bucket(depth_of(th, t)) for th in ds.threads for t in th.tweets)
    depths = [depth[b] for b in ("0", "1", "2", "3", "4", "5+")]
    checks = [f"tweets={n_tweets} labels={totals} (4519; [910, 344, 358, 2907])",
              f"depths={depths} ([297, 2602, 553, 313, 195, 595])"]
    ok = n_tweets == 4519 and totals == [910, 344, 358, 2907] and depths == [297, 2602, 553, 313, 195, 595]
    if EMBEDDINGS:
        prov = EmbeddingProvider.load(EMBEDDINGS)
        me = evaluation.run_experiment(ds, ClassifierSpec("maxent"), FeatureConfig.parse("All"), provider=prov).macro_f1
        lstm = evaluation.run_experiment(ds, ClassifierSpec("lstm", {"search_budget": 20}),
                                         FeatureConfig.parse("LF123"), provider=prov).macro_f1
        checks.append(f"MaxEnt All={me:.3f} [0.40, 0.49], LSTM LF123={lstm:.3f} [0.38, 0.49]")
        ok = ok and 0.40 <= me <= 0.49 and 0.38 <= lstm <= 0.49
    else:
        checks.append("classifier ranges not run (STANCE_THREADS_EMBEDDINGS not set)")
    checks.append(f"{time.perf_counter() - start:.0f}s")
    criterion(9, ok, "; ".join(checks))
