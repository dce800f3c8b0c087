"""Compare per-tweet and sequential classifiers on synthetic threads whose
labels follow a strong parent->child transition pattern."""
import argparse

from stance_threads import evaluation, synthetic
from stance_threads.evaluation import ClassifierSpec
from stance_threads.features import FeatureConfig


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--threads", type=int, default=80, help="threads per event")
    ap.add_argument("--strength", type=float, default=0.8, help="probability of the preferred transition")
    ap.add_argument("--models", nargs="+", default=["maxent", "crf-linear", "crf-tree"])
    args = ap.parse_args()

    cfg = synthetic.SyntheticConfig(threads_per_event=args.threads,
                                    transitions=synthetic.cyclic_transitions(args.strength))
    print("seed," + ",".join(args.models))
    for seed in range(args.seeds):
        ds, prov = synthetic.generate(cfg, seed), synthetic.embeddings(cfg, seed)
        scores = [evaluation.run_experiment(ds, ClassifierSpec(m), FeatureConfig.parse("LF1"), provider=prov,
                                            swear_words=frozenset()).macro_f1 for m in args.models]
        print(f"{seed}," + ",".join(f"{s:.4f}" for s in scores))


if __name__ == "__main__":
    main()
