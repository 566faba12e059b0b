"""Run the benchmark recipes on locally available data files.

    python scripts/reproduce.py musk1 fox --seed 1
    python scripts/reproduce.py messidor --seeds 1 2 3 --out results/

Files are looked up in $MILGRAPH_DATA (see docs/formats.md).
"""
import argparse
import json
import sys
from pathlib import Path

from milgraph.benchmarks import DATA_ENV, ETA_GRID, RECIPES, find_dataset, run_benchmark


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("datasets", nargs="+", choices=sorted(RECIPES))
    ap.add_argument("--seeds", type=int, nargs="+", default=[1])
    ap.add_argument("--tune-eta", action="store_true", help=f"try every eta in {ETA_GRID} and keep the best")
    ap.add_argument("--pool", choices=("diffpool", "attention"), default=None)
    ap.add_argument("--epochs", type=int, default=None)
    ap.add_argument("--out", type=Path, default=None, help="directory for per-run report.json files")
    args = ap.parse_args(argv)

    overrides = {k: v for k, v in (("pool", args.pool), ("epochs", args.epochs)) if v is not None}
    status = 0
    for name in args.datasets:
        if find_dataset(name) is None:
            print(f"{name}: no data file under ${DATA_ENV}, skipped", file=sys.stderr)
            status = 1
            continue
        for seed in args.seeds:
            etas = ETA_GRID if args.tune_eta else (RECIPES[name][0].eta,)
            runs = [(eta, run_benchmark(name, seed=seed, eta=eta, **overrides)) for eta in etas]
            eta, rep = max(runs, key=lambda r: r[1].acc_mean)
            print(f"{name} seed={seed} eta={eta} acc {rep.acc_mean:.4f} ± {rep.acc_std:.4f} f1 {rep.f1_mean:.4f}")
            if args.out:
                target = args.out / f"{name}-seed{seed}"
                rep.write(target)
                (target / "choice.json").write_text(json.dumps({"eta": str(eta)}) + "\n")
    return status


if __name__ == "__main__":
    sys.exit(main())
