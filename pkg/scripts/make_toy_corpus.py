#!/usr/bin/env python3
"""Write the synthetic toy corpus to a text file, one sentence per line.

Training ensembles from the command line needs members that share a
vocabulary, so the corpus must live in a file rather than be regenerated
from each member's seed:

    python3 scripts/make_toy_corpus.py --n 2400 --seed 0 --out toy.txt
    conssent train --corpus toy.txt --task R --k 1 --seed 1 --out m1.ckpt
    conssent train --corpus toy.txt --task R --k 1 --seed 2 --out m2.ckpt
"""

import argparse

from conssent.toydata import make_toy_corpus


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--n", type=int, default=2400, help="number of sentences")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="toy.txt")
    args = ap.parse_args()
    with open(args.out, "w", encoding="utf-8") as fh:
        for sentence in make_toy_corpus(args.n, seed=args.seed):
            fh.write(" ".join(sentence) + "\n")
    print(f"wrote {args.n} sentences to {args.out}")


if __name__ == "__main__":
    main()
