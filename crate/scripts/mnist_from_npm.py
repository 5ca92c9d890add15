#!/usr/bin/env python3
"""Build gzip IDX files from the 10k-digit MNIST subset shipped in the npm `mnist` package.

Usage: mnist_from_npm.py <path to extracted npm package> <output dir> [--train 6000]

The digits are shuffled with a fixed seed; the first `--train` become the train
split and the remainder the test split.
"""
import argparse
import gzip
import json
import os
import struct

import numpy as np


def write_idx(path, magic, dims, payload):
    header = struct.pack(">I", magic) + b"".join(struct.pack(">I", d) for d in dims)
    with gzip.GzipFile(path, "wb", mtime=0) as fh:
        fh.write(header + payload)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("package")
    ap.add_argument("out")
    ap.add_argument("--train", type=int, default=6000)
    args = ap.parse_args()

    images, labels = [], []
    for digit in range(10):
        with open(os.path.join(args.package, "src", "digits", f"{digit}.json")) as fh:
            flat = np.asarray(json.load(fh)["data"], dtype=np.float64)
        flat = flat.reshape(-1, 784)
        images.append(np.clip(np.rint(flat * 255.0), 0, 255).astype(np.uint8))
        labels.append(np.full(flat.shape[0], digit, dtype=np.uint8))
    images = np.concatenate(images)
    labels = np.concatenate(labels)

    order = np.random.RandomState(0).permutation(len(labels))
    images, labels = images[order], labels[order]
    n = args.train

    os.makedirs(args.out, exist_ok=True)
    for prefix, sl in (("train", slice(0, n)), ("t10k", slice(n, None))):
        imgs, labs = images[sl], labels[sl]
        write_idx(os.path.join(args.out, f"{prefix}-images-idx3-ubyte.gz"), 0x803,
                  [len(labs), 28, 28], imgs.tobytes())
        write_idx(os.path.join(args.out, f"{prefix}-labels-idx1-ubyte.gz"), 0x801,
                  [len(labs)], labs.tobytes())
        print(prefix, len(labs), np.bincount(labs, minlength=10).tolist())


if __name__ == "__main__":
    main()
