#!/usr/bin/env python3
"""One-off converter: official CIFAR-N label file (.pt) -> CSV.

CIFAR-10_human.pt holds clean_label, aggre_label, random_label1..3 and
worse_label; CIFAR-100_human.pt holds clean_label and noisy_label. The CSV has
an index column plus one column per array, in training-set order, and feeds
`bilearn convert-sidecar --column <name>`.

Needs torch (torch.load of a pickled dict of arrays).
"""

import argparse
import csv
import sys

import numpy as np
import torch


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("input", help="CIFAR-10_human.pt or CIFAR-100_human.pt")
    ap.add_argument("output", help="CSV to write")
    args = ap.parse_args()

    raw = torch.load(args.input, weights_only=False)
    if not isinstance(raw, dict):
        print(f"{args.input}: expected a dict of label arrays, got {type(raw).__name__}", file=sys.stderr)
        return 1
    columns = {k: np.asarray(v).astype(np.int64).ravel() for k, v in sorted(raw.items())}
    lengths = {len(v) for v in columns.values()}
    if len(lengths) != 1:
        print(f"{args.input}: label arrays differ in length: {sorted(lengths)}", file=sys.stderr)
        return 1

    names = list(columns)
    with open(args.output, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["index", *names])
        for i in range(lengths.pop()):
            w.writerow([i, *(int(columns[n][i]) for n in names)])
    print(f"wrote {args.output} with columns {', '.join(names)}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
