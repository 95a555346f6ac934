#!/usr/bin/env python3
"""Convert public digit and image datasets into formats the `ossl` binary reads.

Subcommands:

  mnist-json  flat-float JSON digit files (one file per class, values in [0,1],
              28x28 row-major) -> IDX images/labels pair
  usps        USPS as HDF5 (train/test groups with `data`/`target`) or LIBSVM
              (labels 1..10, features in [-1,1]) -> OSSLRAW1
  svhn        SVHN cropped digits `.mat` (X: 32x32x3xN, label 10 means 0) -> OSSLRAW1
  cifar101    CIFAR-10.1 `*_data.npy` / `*_labels.npy` -> OSSLRAW1

OSSLRAW1 layout (little endian):
  b"OSSLRAW1" | u32 M | u32 C | u32 H | u32 W | u32 class_count
  M*C*H*W f32 pixels in [0,1] | M u16 labels
"""

import argparse
import json
import struct
import sys
from pathlib import Path

import numpy as np


def write_raw(path, images, labels, classes=10):
    """images: float array (M, C, H, W) in [0,1]; labels: ints in [0, classes)."""
    images = np.clip(np.asarray(images, dtype=np.float32), 0.0, 1.0)
    labels = np.asarray(labels).astype(np.int64)
    if images.ndim != 4 or images.shape[0] != labels.shape[0]:
        sys.exit(f"shape mismatch: images {images.shape}, labels {labels.shape}")
    if labels.min() < 0 or labels.max() >= classes:
        sys.exit(f"labels outside [0, {classes})")
    m, c, h, w = images.shape
    with open(path, "wb") as f:
        f.write(b"OSSLRAW1")
        f.write(struct.pack("<5I", m, c, h, w, classes))
        f.write(images.astype("<f4").tobytes())
        f.write(labels.astype("<u2").tobytes())
    print(f"{path}: {m} images, {c}x{h}x{w}")


def write_idx(images_path, labels_path, images, labels):
    """images: uint8 (M, H, W); labels: uint8 (M,)."""
    m, h, w = images.shape
    with open(images_path, "wb") as f:
        f.write(struct.pack(">4I", 0x803, m, h, w))
        f.write(np.ascontiguousarray(images, dtype=np.uint8).tobytes())
    with open(labels_path, "wb") as f:
        f.write(struct.pack(">2I", 0x801, m))
        f.write(np.asarray(labels, dtype=np.uint8).tobytes())
    print(f"{images_path}, {labels_path}: {m} images, {h}x{w}")


def mnist_json(args):
    images, labels = [], []
    for digit in range(10):
        with open(Path(args.src) / f"{digit}.json") as f:
            flat = np.asarray(json.load(f)["data"], dtype=np.float64)
        if flat.size % 784:
            sys.exit(f"{digit}.json: {flat.size} values is not a multiple of 784")
        block = flat.reshape(-1, 28, 28)
        images.append(np.rint(np.clip(block, 0, 1) * 255).astype(np.uint8))
        labels.append(np.full(block.shape[0], digit, dtype=np.uint8))
    images = np.concatenate(images)
    labels = np.concatenate(labels)
    # The source is grouped by class; interleave it so that a `limit` prefix
    # stays class-balanced.
    order = np.random.default_rng(args.seed).permutation(len(labels))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_idx(out / "train-images-idx3-ubyte", out / "train-labels-idx1-ubyte",
              images[order], labels[order])


def usps(args):
    src = Path(args.src)
    if src.suffix in (".h5", ".hdf5"):
        import h5py

        with h5py.File(src, "r") as f:
            group = f[args.split]
            data = np.asarray(group["data"], dtype=np.float32)
            target = np.asarray(group["target"]).astype(np.int64)
        # The common HDF5 release is already scaled to [0,1].
        lo, hi = float(data.min()), float(data.max())
        if lo < 0 or hi > 1:
            data = (data - lo) / (hi - lo)
    else:
        from sklearn.datasets import load_svmlight_file

        x, y = load_svmlight_file(str(src), n_features=256)
        data = (x.toarray().astype(np.float32) + 1.0) / 2.0
        target = y.astype(np.int64) - 1
    write_raw(args.out, data.reshape(-1, 1, 16, 16), target)


def svhn(args):
    from scipy.io import loadmat

    mat = loadmat(args.src)
    x = np.asarray(mat["X"], dtype=np.float32) / 255.0  # (32, 32, 3, N)
    y = np.asarray(mat["y"]).reshape(-1).astype(np.int64)
    y[y == 10] = 0
    write_raw(args.out, x.transpose(3, 2, 0, 1), y)


def cifar101(args):
    data = np.load(args.data).astype(np.float32) / 255.0  # (N, 32, 32, 3)
    labels = np.load(args.labels)
    write_raw(args.out, data.transpose(0, 3, 1, 2), labels)


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("mnist-json", help="JSON digit files -> IDX pair")
    p.add_argument("src", help="directory holding 0.json .. 9.json")
    p.add_argument("out", help="output directory")
    p.add_argument("--seed", type=int, default=0, help="interleaving seed")
    p.set_defaults(run=mnist_json)

    p = sub.add_parser("usps", help="USPS (.h5 or LIBSVM) -> OSSLRAW1")
    p.add_argument("src")
    p.add_argument("out")
    p.add_argument("--split", default="test", help="HDF5 group to read")
    p.set_defaults(run=usps)

    p = sub.add_parser("svhn", help="SVHN test_32x32.mat -> OSSLRAW1")
    p.add_argument("src")
    p.add_argument("out")
    p.set_defaults(run=svhn)

    p = sub.add_parser("cifar101", help="CIFAR-10.1 .npy pair -> OSSLRAW1")
    p.add_argument("data")
    p.add_argument("labels")
    p.add_argument("out")
    p.set_defaults(run=cifar101)

    args = parser.parse_args()
    args.run(args)


if __name__ == "__main__":
    main()
