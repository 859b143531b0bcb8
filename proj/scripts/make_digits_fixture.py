#!/usr/bin/env python3
"""Export the bundled handwritten-digits fixture as MNIST-style idx files.

The UCI optical-digits set shipped with scikit-learn (1797 genuine
handwritten digits, 8x8 grayscale) is upsampled to 28x28 and split 70/30
per class into train/test files under data/digits/. The repository ships
the generated files; rerun this script only to regenerate them.
"""

import os
import struct

import numpy as np
from scipy import ndimage
from sklearn.datasets import load_digits

OUT_DIR = os.path.join(os.path.dirname(__file__), "..", "data", "digits")
SEED = 20240901
TEST_FRACTION = 0.3


def upsample(img8: np.ndarray) -> np.ndarray:
    # 8x8 values in [0,16] -> 28x28 uint8 in [0,255], cubic interpolation
    img = img8.astype(np.float64) / 16.0
    big = ndimage.zoom(img, 28.0 / 8.0, order=3)
    return (np.clip(big, 0.0, 1.0) * 255.0).round().astype(np.uint8)


def write_idx_images(path: str, images: np.ndarray) -> None:
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", 2051, images.shape[0], images.shape[1], images.shape[2]))
        f.write(images.tobytes())


def write_idx_labels(path: str, labels: np.ndarray) -> None:
    with open(path, "wb") as f:
        f.write(struct.pack(">II", 2049, labels.shape[0]))
        f.write(labels.astype(np.uint8).tobytes())


def main() -> None:
    x, y = load_digits(return_X_y=True)
    x = x.reshape(-1, 8, 8)
    rng = np.random.default_rng(SEED)

    train_idx, test_idx = [], []
    for c in range(10):
        idx = np.flatnonzero(y == c)
        rng.shuffle(idx)
        n_test = int(round(TEST_FRACTION * len(idx)))
        test_idx.extend(idx[:n_test])
        train_idx.extend(idx[n_test:])
    train_idx = np.sort(np.array(train_idx))
    test_idx = np.sort(np.array(test_idx))

    os.makedirs(OUT_DIR, exist_ok=True)
    big = np.stack([upsample(img) for img in x])
    write_idx_images(os.path.join(OUT_DIR, "train-images-idx3-ubyte"), big[train_idx])
    write_idx_labels(os.path.join(OUT_DIR, "train-labels-idx1-ubyte"), y[train_idx])
    write_idx_images(os.path.join(OUT_DIR, "t10k-images-idx3-ubyte"), big[test_idx])
    write_idx_labels(os.path.join(OUT_DIR, "t10k-labels-idx1-ubyte"), y[test_idx])
    print(f"wrote {len(train_idx)} train / {len(test_idx)} test digits to {OUT_DIR}")


if __name__ == "__main__":
    main()
