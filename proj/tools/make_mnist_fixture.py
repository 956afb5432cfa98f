#!/usr/bin/env python3
# SPDX-License-Identifier: Apache-2.0
"""Build the two-class MNIST IDX fixture from two groups of digits.

Source: the 5000-image MNIST sample (500 per digit) shipped as mnist_5k.csv.gz
inside the mlxtend wheel. Pass either the wheel or the extracted csv.gz.
"""
import argparse
import gzip
import pathlib
import random
import struct
import zipfile


def read_rows(source: pathlib.Path):
    if source.suffix == ".whl":
        with zipfile.ZipFile(source) as z:
            raw = z.read("mlxtend/data/data/mnist_5k.csv.gz")
    else:
        raw = source.read_bytes()
    rows = []
    for line in gzip.decompress(raw).decode().splitlines():
        values = [int(v) for v in line.split(",")]
        rows.append((bytes(values[:784]), values[784]))
    return rows


def write_idx(prefix: pathlib.Path, rows):
    with open(f"{prefix}-images-idx3-ubyte", "wb") as f:
        f.write(struct.pack(">IIII", 0x803, len(rows), 28, 28))
        for pixels, _ in rows:
            f.write(pixels)
    with open(f"{prefix}-labels-idx1-ubyte", "wb") as f:
        f.write(struct.pack(">II", 0x801, len(rows)))
        f.write(bytes(label for _, label in rows))


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("source", type=pathlib.Path)
    ap.add_argument("--out", type=pathlib.Path, default=pathlib.Path("tests/data"))
    ap.add_argument("--train", type=int, default=2000)
    ap.add_argument("--test", type=int, default=1000)
    ap.add_argument("--seed", type=int, default=20240)
    ap.add_argument("--class0", default="147", help="digits mapped to label 0")
    ap.add_argument("--class1", default="038", help="digits mapped to label 1")
    args = ap.parse_args()

    groups = {int(d): 0 for d in args.class0}
    groups.update({int(d): 1 for d in args.class1})
    by_class = {0: [], 1: []}
    for pixels, digit in read_rows(args.source):
        if digit in groups:
            by_class[groups[digit]].append((pixels, groups[digit]))
    for c in (0, 1):
        if len(by_class[c]) < (args.train + args.test) // 2:
            raise SystemExit(f"class {c} has only {len(by_class[c])} images")
    rng = random.Random(args.seed)
    train, test = [], []
    for c in (0, 1):
        rng.shuffle(by_class[c])
        train += by_class[c][: args.train // 2]
        test += by_class[c][args.train // 2 : args.train // 2 + args.test // 2]
    rng.shuffle(train)
    rng.shuffle(test)
    args.out.mkdir(parents=True, exist_ok=True)
    write_idx(args.out / "mnist2-train", train)
    write_idx(args.out / "mnist2-test", test)
    print(f"wrote {len(train)} train / {len(test)} test samples to {args.out}")


if __name__ == "__main__":
    main()
