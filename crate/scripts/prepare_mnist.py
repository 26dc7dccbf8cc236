#!/usr/bin/env python3
"""Build MNIST IDX files from the npm `mnist` package (10,000 real MNIST digits).

Writes into <out_dir>:
  train-images-idx3-ubyte / train-labels-idx1-ubyte  first 250 samples of each class (2500)
  test-images-idx3-ubyte  / test-labels-idx1-ubyte   every remaining sample (7500)

Usage: prepare_mnist.py [package_dir] [out_dir]
If package_dir is omitted the package is fetched with `npm pack mnist`.
"""
import json
import os
import struct
import subprocess
import sys
import tarfile
import tempfile

PER_CLASS_TRAIN = 250
SIDE = 28


def fetch_package(workdir):
    subprocess.run(["npm", "pack", "mnist@1.1.0"], cwd=workdir, check=True,
                   stdout=subprocess.DEVNULL)
    tgz = next(f for f in os.listdir(workdir) if f.endswith(".tgz"))
    with tarfile.open(os.path.join(workdir, tgz)) as tar:
        tar.extractall(workdir)
    return os.path.join(workdir, "package")


def write_idx(out_dir, prefix, images, labels):
    with open(os.path.join(out_dir, f"{prefix}-images-idx3-ubyte"), "wb") as f:
        f.write(struct.pack(">IIII", 0x803, len(images), SIDE, SIDE))
        for img in images:
            f.write(bytes(img))
    with open(os.path.join(out_dir, f"{prefix}-labels-idx1-ubyte"), "wb") as f:
        f.write(struct.pack(">II", 0x801, len(labels)))
        f.write(bytes(labels))


def main():
    out_dir = sys.argv[2] if len(sys.argv) > 2 else os.path.join(
        os.path.dirname(os.path.abspath(__file__)), "..", "data", "mnist")
    os.makedirs(out_dir, exist_ok=True)
    with tempfile.TemporaryDirectory() as tmp:
        pkg = sys.argv[1] if len(sys.argv) > 1 else fetch_package(tmp)
        train, test = ([], []), ([], [])
        for digit in range(10):
            with open(os.path.join(pkg, "src", "digits", f"{digit}.json")) as f:
                flat = json.load(f)["data"]
            n = len(flat) // (SIDE * SIDE)
            for i in range(n):
                px = flat[i * SIDE * SIDE:(i + 1) * SIDE * SIDE]
                img = [min(255, max(0, round(v * 255))) for v in px]
                target = train if i < PER_CLASS_TRAIN else test
                target[0].append(img)
                target[1].append(digit)
    write_idx(out_dir, "train", *train)
    write_idx(out_dir, "test", *test)
    print(f"wrote {len(train[1])} train / {len(test[1])} test samples to {out_dir}")


if __name__ == "__main__":
    main()
