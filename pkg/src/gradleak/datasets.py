"""Dataset loaders and model checkpoints.

CSV: one sample per row, real or integer features, optional trailing label
column.  IDX: the big-endian binary format used for MNIST-style corpora
(magic 0x00000803 for image tensors, 0x00000801 for label vectors).
Checkpoints: JSON with layer sizes and row-major weight/bias arrays.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .flsim import MlpModel

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


def load_csv(path: str | Path, labeled: bool = False) -> tuple[np.ndarray, np.ndarray | None]:
    """Load a CSV of samples; the last column is the label when labeled=True."""
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            rows.append([float(tok) for tok in line.replace(";", ",").split(",") if tok != ""])
    if not rows:
        raise ValueError(f"no samples in {path}")
    data = np.array(rows, dtype=float)
    if labeled:
        return data[:, :-1], data[:, -1].astype(int)
    return data, None


def save_csv(path: str | Path, data: np.ndarray, labels: np.ndarray | None = None) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for i in range(data.shape[0]):
            row = [repr(float(v)) for v in data[i]]
            if labels is not None:
                row.append(str(int(labels[i])))
            fh.write(",".join(row) + "\n")


def load_idx(path: str | Path) -> np.ndarray:
    """Read an IDX file: images come back as (n, rows*cols) floats in [0, 1)."""
    raw = Path(path).read_bytes()
    magic = struct.unpack(">I", raw[:4])[0]
    if magic == IDX_IMAGES_MAGIC:
        n, rows, cols = struct.unpack(">III", raw[4:16])
        data = np.frombuffer(raw, dtype=np.uint8, offset=16)
        if data.size != n * rows * cols:
            raise ValueError("truncated IDX image file")
        return data.reshape(n, rows * cols).astype(float) / 256.0
    if magic == IDX_LABELS_MAGIC:
        n = struct.unpack(">I", raw[4:8])[0]
        data = np.frombuffer(raw, dtype=np.uint8, offset=8)
        if data.size != n:
            raise ValueError("truncated IDX label file")
        return data.astype(int)
    raise ValueError(f"unrecognized IDX magic 0x{magic:08x}")


def save_idx_images(path: str | Path, images: np.ndarray, rows: int, cols: int) -> None:
    """Write uint8 images (n, rows*cols) in IDX format."""
    arr = np.asarray(images, dtype=np.uint8)
    n = arr.shape[0]
    with open(path, "wb") as fh:
        fh.write(struct.pack(">IIII", IDX_IMAGES_MAGIC, n, rows, cols))
        fh.write(arr.tobytes())


def save_idx_labels(path: str | Path, labels: np.ndarray) -> None:
    arr = np.asarray(labels, dtype=np.uint8)
    with open(path, "wb") as fh:
        fh.write(struct.pack(">II", IDX_LABELS_MAGIC, arr.shape[0]))
        fh.write(arr.tobytes())


def save_checkpoint(path: str | Path, model: MlpModel) -> None:
    doc = {
        "layer_sizes": list(model.layer_sizes),
        "weights": [w.flatten().tolist() for w in model.weights],
        "biases": [b.tolist() for b in model.biases],
    }
    Path(path).write_text(json.dumps(doc))


def load_checkpoint(path: str | Path) -> MlpModel:
    doc = json.loads(Path(path).read_text())
    sizes = tuple(int(s) for s in doc["layer_sizes"])
    weights = []
    biases = []
    for l, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        weights.append(np.array(doc["weights"][l], dtype=float).reshape(fan_out, fan_in))
        biases.append(np.array(doc["biases"][l], dtype=float))
    return MlpModel(sizes, weights, biases)
