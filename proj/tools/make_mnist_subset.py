#!/usr/bin/env python3
# Copyright (c) 2026, The DNR Authors
# SPDX-License-Identifier: Apache-2.0
"""Write the 5,000-image MNIST sample shipped with mlxtend as gzipped IDX files.

The sample (500 digits per class from the MNIST training set) is split into
4,000 training and 1,000 test images with a fixed permutation, so the output
is byte-for-byte reproducible.

    pip download --no-deps mlxtend==0.24.0 -d /tmp/mlx
    python3 tools/make_mnist_subset.py /tmp/mlx/mlxtend-0.24.0-py3-none-any.whl data/mnist-5k
"""
import gzip
import io
import struct
import sys
import zipfile
from pathlib import Path

import numpy as np

CSV_MEMBER = "mlxtend/data/data/mnist_5k.csv.gz"
NUM_TEST = 1000
SEED = 20201


def write_idx(path: Path, array: np.ndarray) -> None:
    magic = {1: 0x00000801, 3: 0x00000803}[array.ndim]
    header = struct.pack(">I", magic) + b"".join(struct.pack(">I", d) for d in array.shape)
    with gzip.GzipFile(path, "wb", mtime=0) as f:
        f.write(header + array.astype(np.uint8).tobytes())


def main() -> None:
    wheel, out = Path(sys.argv[1]), Path(sys.argv[2])
    with zipfile.ZipFile(wheel) as z:
        raw = gzip.decompress(z.read(CSV_MEMBER))
    table = np.loadtxt(io.BytesIO(raw), delimiter=",", dtype=np.int64)
    images = table[:, :-1].reshape(-1, 28, 28)
    labels = table[:, -1]
    order = np.random.RandomState(SEED).permutation(len(labels))
    images, labels = images[order], labels[order]
    out.mkdir(parents=True, exist_ok=True)
    write_idx(out / "train-images-idx3-ubyte.gz", images[NUM_TEST:])
    write_idx(out / "train-labels-idx1-ubyte.gz", labels[NUM_TEST:])
    write_idx(out / "t10k-images-idx3-ubyte.gz", images[:NUM_TEST])
    write_idx(out / "t10k-labels-idx1-ubyte.gz", labels[:NUM_TEST])


if __name__ == "__main__":
    main()
