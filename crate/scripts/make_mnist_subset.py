#!/usr/bin/env python3
"""Build the 4000/1000 MNIST subset used by the desk profile.

Source: the 5000-image MNIST sample bundled with the `mlxtend` wheel
(500 images per digit, drawn from the official training set). The images are
split 400/100 per class with a fixed seed and written as gzip'd IDX files.

    pip download mlxtend --no-deps -d /tmp/mlx
    python3 scripts/make_mnist_subset.py /tmp/mlx/mlxtend-*.whl data/mnist-subset
"""
import gzip
import io
import struct
import sys
import zipfile

import numpy as np


def write_idx_images(path, images):
    n = images.shape[0]
    header = struct.pack(">IIII", 2051, n, 28, 28)
    with gzip.GzipFile(path, "wb", mtime=0) as f:
        f.write(header + images.astype(np.uint8).tobytes())


def write_idx_labels(path, labels):
    header = struct.pack(">II", 2049, labels.shape[0])
    with gzip.GzipFile(path, "wb", mtime=0) as f:
        f.write(header + labels.astype(np.uint8).tobytes())


def main():
    wheel, out = sys.argv[1], sys.argv[2]
    raw = zipfile.ZipFile(wheel).read("mlxtend/data/data/mnist_5k.csv.gz")
    table = np.loadtxt(io.BytesIO(gzip.decompress(raw)), delimiter=",")
    images, labels = table[:, :-1], table[:, -1].astype(int)

    rng = np.random.default_rng(20240917)
    train_idx, test_idx = [], []
    for c in range(10):
        idx = rng.permutation(np.flatnonzero(labels == c))
        train_idx.extend(idx[:400])
        test_idx.extend(idx[400:])
    train_idx = rng.permutation(np.array(train_idx))
    test_idx = rng.permutation(np.array(test_idx))

    write_idx_images(f"{out}/train-images-idx3-ubyte.gz", images[train_idx])
    write_idx_labels(f"{out}/train-labels-idx1-ubyte.gz", labels[train_idx])
    write_idx_images(f"{out}/t10k-images-idx3-ubyte.gz", images[test_idx])
    write_idx_labels(f"{out}/t10k-labels-idx1-ubyte.gz", labels[test_idx])


if __name__ == "__main__":
    main()
