"""Write a planted-signal MIL dataset as canonical CSV.

    python scripts/make_synthetic.py planted.csv --bags 60 --dim 8
"""
import argparse

from milgraph.data import write_canonical_csv
from milgraph.synthetic import planted_bags


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("out")
    ap.add_argument("--bags", type=int, default=60)
    ap.add_argument("--dim", type=int, default=8)
    ap.add_argument("--min-size", type=int, default=4)
    ap.add_argument("--max-size", type=int, default=10)
    ap.add_argument("--planted", type=int, default=2, help="positive instances per positive bag")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    ds = planted_bags(args.bags, args.dim, (args.min_size, args.max_size), args.planted, seed=args.seed)
    write_canonical_csv(ds, args.out)
    print(ds.summary())


if __name__ == "__main__":
    main()
