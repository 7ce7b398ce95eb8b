"""Convert the digits bundled in the npm ``mnist`` package into IDX files.

The npm package (``npm pack mnist``) ships 10,000 MNIST digits as JSON arrays
of 784 grayscale values quantized to three decimals. This script recovers the
byte values and writes a class-stratified train/test split in the standard
big-endian IDX layout so that ``dabnet.data.load_mnist`` can read it.

Usage::

    npm pack mnist && tar xzf mnist-*.tgz
    python tools/npm_mnist_to_idx.py package/src/digits /path/to/mnist --test-per-class 200
"""

import argparse
import json
import struct
from pathlib import Path

import numpy as np


def write_idx(path, array, magic):
    with open(path, "wb") as fh:
        fh.write(struct.pack(">I", magic))
        for dim in array.shape:
            fh.write(struct.pack(">I", dim))
        fh.write(array.astype(np.uint8).tobytes())


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("digits_dir", type=Path)
    ap.add_argument("out_dir", type=Path)
    ap.add_argument("--test-per-class", type=int, default=200)
    args = ap.parse_args()

    train_x, train_y, test_x, test_y = [], [], [], []
    for label in range(10):
        raw = json.loads((args.digits_dir / f"{label}.json").read_text())["data"]
        pix = np.rint(np.asarray(raw, dtype=np.float64) * 255.0).clip(0, 255)
        pix = pix.astype(np.uint8).reshape(-1, 28, 28)
        n_test = args.test_per_class
        train_x.append(pix[:-n_test])
        train_y += [label] * (len(pix) - n_test)
        test_x.append(pix[-n_test:])
        test_y += [label] * n_test

    # interleave classes deterministically so file order is not class-sorted
    rng = np.random.Generator(np.random.Philox(12345))
    args.out_dir.mkdir(parents=True, exist_ok=True)
    for prefix, xs, ys in (("train", train_x, train_y), ("t10k", test_x, test_y)):
        x = np.concatenate(xs)
        y = np.asarray(ys, dtype=np.uint8)
        order = rng.permutation(len(y))
        write_idx(args.out_dir / f"{prefix}-images-idx3-ubyte", x[order], 0x00000803)
        write_idx(args.out_dir / f"{prefix}-labels-idx1-ubyte", y[order], 0x00000801)
        print(f"{prefix}: {len(y)} images")


if __name__ == "__main__":
    main()
