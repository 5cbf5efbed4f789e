#!/usr/bin/env python3
"""Build an IDX copy of the 10,000 MNIST digits bundled with the `mnist` npm package.

The npm package stores each digit class as a JSON list of 784-float vectors
normalised to [0, 1] with three decimals; round(v * 255) recovers the
original bytes exactly. Samples are interleaved by class so any prefix of
the file is roughly balanced.

Usage: scripts/fetch_mnist.py [--tarball mnist-1.1.0.tgz] [--out data/mnist]
"""
import argparse
import io
import json
import pathlib
import struct
import subprocess
import tarfile
import tempfile


def load_digits(tarball: pathlib.Path):
    digits = {}
    with tarfile.open(tarball, "r:gz") as tar:
        for d in range(10):
            member = tar.extractfile(f"package/src/digits/{d}.json")
            flat = json.load(io.TextIOWrapper(member))["data"]
            assert len(flat) % 784 == 0
            digits[d] = [flat[i:i + 784] for i in range(0, len(flat), 784)]
    return digits


def interleave(digits):
    images, labels = [], []
    longest = max(len(v) for v in digits.values())
    for i in range(longest):
        for d in range(10):
            if i < len(digits[d]):
                images.append(bytes(int(round(p * 255)) for p in digits[d][i]))
                labels.append(d)
    return images, labels


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--tarball", type=pathlib.Path)
    ap.add_argument("--out", type=pathlib.Path, default=pathlib.Path("data/mnist"))
    args = ap.parse_args()

    with tempfile.TemporaryDirectory() as tmp:
        tarball = args.tarball
        if tarball is None:
            subprocess.run(["npm", "pack", "mnist@1.1.0", "--silent"], cwd=tmp, check=True,
                           stdout=subprocess.DEVNULL)
            tarball = pathlib.Path(tmp) / "mnist-1.1.0.tgz"
        images, labels = interleave(load_digits(tarball))

    args.out.mkdir(parents=True, exist_ok=True)
    with open(args.out / "mnist10k-images-idx3-ubyte", "wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, len(images), 28, 28))
        for img in images:
            f.write(img)
    with open(args.out / "mnist10k-labels-idx1-ubyte", "wb") as f:
        f.write(struct.pack(">II", 0x00000801, len(labels)))
        f.write(bytes(labels))
    print(f"wrote {len(images)} images to {args.out}")


if __name__ == "__main__":
    main()
