import gzip
import struct

import numpy as np
import pytest


def write_idx_pair(dirpath, images, labels, split="train", compress=False):
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    n, rows, cols = images.shape
    img_bytes = struct.pack(">IIII", 0x803, n, rows, cols) + images.tobytes()
    lbl_bytes = struct.pack(">II", 0x801, n) + labels.tobytes()
    suffix = ".gz" if compress else ""
    opener = gzip.open if compress else open
    with opener(dirpath / f"{split}-images-idx3-ubyte{suffix}", "wb") as f:
        f.write(img_bytes)
    with opener(dirpath / f"{split}-labels-idx1-ubyte{suffix}", "wb") as f:
        f.write(lbl_bytes)


def class_pattern(label, rng):
    """Structured 28x28 template per class so detectors can separate them."""
    img = np.zeros((28, 28))
    if label == 9:      # boots: bright lower-left block
        img[14:26, 2:16] = 0.9
        img[6:14, 2:8] = 0.7
    elif label == 3:    # dresses: tall center column
        img[2:26, 10:18] = 0.8
    elif label == 5:    # sandals: thin horizontal bands
        img[20:23, 2:26] = 0.9
        img[12:14, 2:26] = 0.5
    elif label == 7:    # sneakers: low wide block, overlaps the boot shape
        img[16:24, 2:20] = 0.85
    else:
        img[4:24, 4:24] = 0.3 + 0.05 * label
    img = img + rng.normal(0, 0.05, size=(28, 28))
    return np.clip(img, 0, 1)


@pytest.fixture(scope="session")
def fashion_corpus(tmp_path_factory):
    """Small synthetic IDX corpus with 40 images per class."""
    root = tmp_path_factory.mktemp("fashion")
    rng = np.random.default_rng(1234)
    images, labels = [], []
    for label in range(10):
        for _ in range(40):
            images.append((class_pattern(label, rng) * 255).astype(np.uint8))
            labels.append(label)
    write_idx_pair(root, np.stack(images), np.array(labels))
    return root
