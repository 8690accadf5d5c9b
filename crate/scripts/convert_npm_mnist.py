#!/usr/bin/env python3
"""Convert the digit files of the npm `mnist` package (1.1.0) into gzipped IDX.

Usage: convert_npm_mnist.py <package>/src/digits <out_dir>

Digits are interleaved 0,1,...,9,0,1,... so any prefix is class balanced.
Pixels in [0, 1] are stored as round(v * 255).
"""
import gzip
import json
import struct
import sys
from pathlib import Path


def main(src, out):
    digits = [json.load(open(Path(src) / f"{d}.json"))["data"] for d in range(10)]
    per = [[d[i * 784:(i + 1) * 784] for i in range(len(d) // 784)] for d in digits]
    order = []
    idx = [0] * 10
    while any(idx[c] < len(per[c]) for c in range(10)):
        for c in range(10):
            if idx[c] < len(per[c]):
                order.append((c, per[c][idx[c]]))
                idx[c] += 1
    imgs = bytearray(struct.pack(">IIII", 2051, len(order), 28, 28))
    labs = bytearray(struct.pack(">II", 2049, len(order)))
    for c, px in order:
        imgs += bytes(int(round(v * 255)) for v in px)
        labs.append(c)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    with gzip.GzipFile(out / "mnist10k-images-idx3-ubyte.gz", "wb", mtime=0) as f:
        f.write(imgs)
    with gzip.GzipFile(out / "mnist10k-labels-idx1-ubyte.gz", "wb", mtime=0) as f:
        f.write(labs)
    print(len(order), "images")


if __name__ == "__main__":
    main(sys.argv[1], sys.argv[2])
