#!/usr/bin/env python3
"""Convert a CSV of MNIST rows (784 pixels then the label) into the four
standard IDX files, splitting a seeded shuffle into train and t10k parts.

Useful when only a CSV subset is at hand, e.g. the 5000-row sample that
ships inside the mlxtend wheel (mlxtend/data/data/mnist_5k.csv.gz).
"""

import argparse
import gzip
import pathlib
import struct

import numpy as np


def write_images(path, images):
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", 2051, len(images), 28, 28))
        f.write(images.astype(np.uint8).tobytes())


def write_labels(path, labels):
    with open(path, "wb") as f:
        f.write(struct.pack(">II", 2049, len(labels)))
        f.write(labels.astype(np.uint8).tobytes())


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("csv", type=pathlib.Path, help="CSV or CSV.gz, label in the last column")
    ap.add_argument("out_dir", type=pathlib.Path)
    ap.add_argument("--train", type=int, default=4000, help="rows in the training split")
    ap.add_argument("--seed", type=int, default=0, help="shuffle seed; the source may be sorted by label")
    args = ap.parse_args()

    opener = gzip.open if args.csv.suffix == ".gz" else open
    with opener(args.csv, "rt") as f:
        rows = np.loadtxt(f, delimiter=",", dtype=np.int64)
    if rows.shape[1] != 785:
        raise SystemExit(f"expected 785 columns, got {rows.shape[1]}")
    rows = rows[np.random.default_rng(args.seed).permutation(len(rows))]
    images, labels = rows[:, :784], rows[:, 784]
    if not (0 < args.train < len(rows)):
        raise SystemExit(f"--train must lie in (0, {len(rows)})")

    args.out_dir.mkdir(parents=True, exist_ok=True)
    write_images(args.out_dir / "train-images-idx3-ubyte", images[: args.train])
    write_labels(args.out_dir / "train-labels-idx1-ubyte", labels[: args.train])
    write_images(args.out_dir / "t10k-images-idx3-ubyte", images[args.train :])
    write_labels(args.out_dir / "t10k-labels-idx1-ubyte", labels[args.train :])
    for digit in range(10):
        print(digit, int((labels[: args.train] == digit).sum()), int((labels[args.train :] == digit).sum()))


if __name__ == "__main__":
    main()
