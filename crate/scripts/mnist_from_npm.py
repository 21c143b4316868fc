"""Convert the digit JSON files of the npm `mnist` package into gzipped IDX files.

Usage: python3 scripts/mnist_from_npm.py <package-dir> <out-dir> [--train 6000]

The package ships about 1000 digits per class as flat lists of 784 floats in
[0, 1]. Digits are pooled, shuffled with a fixed seed, rounded back to bytes
and split into a train and a test set.
"""

import argparse
import gzip
import json
import random
import struct
from pathlib import Path


def write_idx(path, magic, dims, payload):
    with gzip.GzipFile(path, "wb", mtime=0) as f:
        f.write(struct.pack(">I", magic))
        for d in dims:
            f.write(struct.pack(">I", d))
        f.write(payload)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("package_dir", type=Path)
    ap.add_argument("out_dir", type=Path)
    ap.add_argument("--train", type=int, default=6000)
    ap.add_argument("--seed", type=int, default=20180101)
    args = ap.parse_args()

    samples = []
    for digit in range(10):
        raw = json.loads((args.package_dir / "src" / "digits" / f"{digit}.json").read_text())["data"]
        n = len(raw) // 784
        for i in range(n):
            px = bytes(min(255, max(0, round(v * 255))) for v in raw[i * 784:(i + 1) * 784])
            samples.append((px, digit))
    random.Random(args.seed).shuffle(samples)
    if args.train >= len(samples):
        raise SystemExit(f"only {len(samples)} digits available")

    args.out_dir.mkdir(parents=True, exist_ok=True)
    for name, part in (("train", samples[:args.train]), ("t10k", samples[args.train:])):
        write_idx(args.out_dir / f"{name}-images-idx3-ubyte.gz", 2051, (len(part), 28, 28), b"".join(p for p, _ in part))
        write_idx(args.out_dir / f"{name}-labels-idx1-ubyte.gz", 2049, (len(part),), bytes(l for _, l in part))
        print(f"{name}: {len(part)} digits")


if __name__ == "__main__":
    main()
