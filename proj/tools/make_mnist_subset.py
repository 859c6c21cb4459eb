#!/usr/bin/env python3
"""Build IDX files from the 10,000 MNIST digits shipped in the npm `mnist` package.

Usage: npm pack mnist && tar xzf mnist-1.1.0.tgz
       python3 tools/make_mnist_subset.py package/src/digits data/mnist

The package stores pixels as byte/255 rounded to three decimals; rounding
value*255 recovers the original bytes exactly. The digits are shuffled with a
fixed seed and split 9000 train / 1000 test.
"""
import gzip
import json
import struct
import sys
from pathlib import Path

import numpy as np


def write_idx(path, magic, array):
    header = struct.pack(">I", magic) + b"".join(struct.pack(">I", d) for d in array.shape)
    with open(path, "wb") as raw, gzip.GzipFile(fileobj=raw, mode="wb", mtime=0) as out:
        out.write(header + array.astype(np.uint8).tobytes())


def main(src, dst):
    images, labels = [], []
    for digit in range(10):
        values = np.asarray(json.loads(Path(src, f"{digit}.json").read_text())["data"])
        pixels = np.rint(values * 255.0).reshape(-1, 28, 28)
        images.append(pixels)
        labels.append(np.full(len(pixels), digit))
    images = np.concatenate(images)
    labels = np.concatenate(labels)
    order = np.random.default_rng(20190520).permutation(len(labels))
    images, labels = images[order], labels[order]
    Path(dst).mkdir(parents=True, exist_ok=True)
    split = 9000
    write_idx(Path(dst, "train-images-idx3-ubyte.gz"), 0x803, images[:split])
    write_idx(Path(dst, "train-labels-idx1-ubyte.gz"), 0x801, labels[:split])
    write_idx(Path(dst, "t10k-images-idx3-ubyte.gz"), 0x803, images[split:])
    write_idx(Path(dst, "t10k-labels-idx1-ubyte.gz"), 0x801, labels[split:])


if __name__ == "__main__":
    main(sys.argv[1], sys.argv[2])
