"""Write a synthetic corpus, matching embeddings and a sample run config.

    python3 scripts/make_fixture.py out/ --events 4 --threads 40
    stance-threads run out/config.json
"""
import argparse
import json
from pathlib import Path

from stance_threads import synthetic
from stance_threads.thread_model import save_dataset


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("out", type=Path)
    ap.add_argument("--events", type=int, default=4)
    ap.add_argument("--threads", type=int, default=40, help="threads per event")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    cfg = synthetic.SyntheticConfig(n_events=args.events, threads_per_event=args.threads)
    ds = synthetic.generate(cfg, args.seed)
    prov = synthetic.embeddings(cfg, args.seed)
    save_dataset(ds, args.out / "threads")
    synthetic.write_embeddings(prov, prov.words, args.out / "embeddings.txt")
    config = {"dataset": str(args.out / "threads"), "classifier": "maxent", "features": "LF123",
              "embeddings": str(args.out / "embeddings.txt"), "output": str(args.out / "report.json"),
              "seed": args.seed}
    (args.out / "config.json").write_text(json.dumps(config, indent=2) + "\n", encoding="utf-8")
    print(f"{sum(len(th) for th in ds.threads)} tweets in {len(ds.threads)} threads -> {args.out}")


if __name__ == "__main__":
    main()
