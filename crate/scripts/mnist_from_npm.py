#!/usr/bin/env python3
"""Convert the digits bundled in the npm `mnist` package (v1.1.0) into IDX files.

Usage: npm pack mnist@1.1.0 && tar xzf mnist-1.1.0.tgz
       python3 scripts/mnist_from_npm.py package/src/digits data/mnist10k

Pixels in the package are byte values divided by 255 and rounded to three
decimals, so rounding x*255 recovers the original bytes.
"""
import gzip
import json
import os
import struct
import sys


def main(src, dst):
    images, labels = [], []
    for digit in range(10):
        with open(os.path.join(src, f"{digit}.json")) as f:
            flat = json.load(f)["data"]
        assert len(flat) % 784 == 0
        for i in range(len(flat) // 784):
            px = flat[i * 784:(i + 1) * 784]
            images.append(bytes(min(255, max(0, round(v * 255))) for v in px))
            labels.append(digit)
    # interleave classes so the file order is not sorted by label
    order = sorted(range(len(labels)), key=lambda i: (i * 7919) % len(labels))
    n = len(labels)
    os.makedirs(dst, exist_ok=True)
    with gzip.GzipFile(os.path.join(dst, "train-images-idx3-ubyte.gz"), "wb", mtime=0) as f:
        f.write(struct.pack(">IIII", 0x803, n, 28, 28))
        for i in order:
            f.write(images[i])
    with gzip.GzipFile(os.path.join(dst, "train-labels-idx1-ubyte.gz"), "wb", mtime=0) as f:
        f.write(struct.pack(">II", 0x801, n))
        f.write(bytes(labels[i] for i in order))
    print(n, "images written to", dst)


if __name__ == "__main__":
    main(sys.argv[1], sys.argv[2])
