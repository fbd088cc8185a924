"""Datasets and input encoding.

Three dataset kinds: seeded synthetic spatio-temporal spike patterns,
IDX-format image/label pairs (big-endian, standard magic numbers), and
headered CSV tables with a ``label`` column.  All randomness flows through
one generator seeded from the dataset spec, so regeneration is bit-identical.
"""

from __future__ import annotations

import csv
import math
import struct
from dataclasses import dataclass, field

import numpy as np

from .autograd import Tensor


class DataError(ValueError):
    """Malformed dataset file or invalid dataset specification."""


@dataclass(frozen=True)
class DatasetSpec:
    kind: str = "synthetic-patterns"   # | idx-images | csv-table
    classes: int = 3
    samples_per_class: int = 200
    noise: float = 0.08
    height: int = 8
    width: int = 8
    timesteps: int = 4
    train_fraction: float = 0.8
    seed: int = 7
    images_path: str | None = None
    labels_path: str | None = None
    csv_path: str | None = None

    def __post_init__(self):
        if self.kind not in ("synthetic-patterns", "idx-images", "csv-table"):
            raise DataError(f"unknown dataset kind {self.kind!r}")
        if not 0.0 < self.train_fraction < 1.0:
            raise DataError("train_fraction must be in (0, 1)")


@dataclass
class Dataset:
    """Inputs are (N, T, C, H, W) when temporal, else (N, C, H, W)."""
    inputs: np.ndarray
    labels: np.ndarray
    temporal: bool
    train_indices: np.ndarray
    test_indices: np.ndarray
    classes: int
    spec: DatasetSpec = field(repr=False, default=None)

    def frames_for(self, indices: np.ndarray, timesteps: int) -> list[Tensor]:
        x = self.inputs[indices]
        if self.temporal:
            if x.shape[1] < timesteps:
                raise DataError(f"dataset has {x.shape[1]} timesteps, need {timesteps}")
            return [Tensor(np.ascontiguousarray(x[:, t])) for t in range(timesteps)]
        return [Tensor(arr) for arr in encode_input(x, timesteps, mode="direct")]

    def labels_for(self, indices: np.ndarray) -> np.ndarray:
        return self.labels[indices]


def encode_input(x: np.ndarray, timesteps: int, mode: str = "direct") -> list[np.ndarray]:
    """Expand a sample batch into per-timestep arrays.

    ``direct`` repeats real-valued (B, C, H, W) input at every step; the stem
    converts it to spikes.  ``spike`` passes pre-binarized (B, T, C, H, W)
    data through unchanged and rejects non-binary values.
    """
    if timesteps < 1:
        raise DataError(f"timesteps must be >= 1, got {timesteps}")
    if mode == "direct":
        if x.ndim != 4:
            raise DataError(f"direct encoding expects (B, C, H, W), got {x.shape}")
        return [x.copy() for _ in range(timesteps)]
    if mode == "spike":
        if x.ndim != 5:
            raise DataError(f"spike encoding expects (B, T, C, H, W), got {x.shape}")
        if x.shape[1] != timesteps:
            raise DataError(f"spike input has {x.shape[1]} steps, need {timesteps}")
        if not np.isin(x, (0.0, 1.0)).all():
            raise DataError("spike-mode input must be exactly binary")
        return [np.ascontiguousarray(x[:, t]) for t in range(timesteps)]
    raise DataError(f"unknown encoding mode {mode!r}")


# ---------------------------------------------------------------------------
# synthetic spatio-temporal patterns
# ---------------------------------------------------------------------------

def _bar_frame(cls: int, step: int, h: int, w: int) -> np.ndarray:
    """Width-2 oriented bar; orientation encodes the class, position moves
    with the step so single frames carry partial evidence."""
    frame = np.zeros((h, w))
    if cls % 3 == 0:       # vertical bar sweeping right
        c = (2 * step) % w
        frame[:, c] = 1.0
        frame[:, (c + 1) % w] = 1.0
    elif cls % 3 == 1:     # horizontal bar sweeping down
        r = (2 * step) % h
        frame[r, :] = 1.0
        frame[(r + 1) % h, :] = 1.0
    else:                  # wrapping diagonal band
        yy, xx = np.mgrid[0:h, 0:w]
        band = np.mod(xx - yy - step, max(h, w))
        frame[(band == 0) | (band == 1)] = 1.0
    return frame


def generate_synthetic(spec: DatasetSpec) -> Dataset:
    if spec.height < 4 or spec.width < 4 or spec.height % 2 or spec.width % 2:
        raise DataError("synthetic patterns need even height/width >= 4")
    rng = np.random.default_rng(spec.seed)
    n = spec.classes * spec.samples_per_class
    t, h, w = spec.timesteps, spec.height, spec.width
    inputs = np.zeros((n, t, 1, h, w))
    labels = np.zeros(n, dtype=np.int64)
    period = max(h, w) // 2
    for idx in range(n):
        cls = idx // spec.samples_per_class
        phase = int(rng.integers(0, period))
        for step in range(t):
            frame = _bar_frame(cls, phase + step, h, w)
            flips = rng.random((h, w)) < spec.noise
            inputs[idx, step, 0] = np.abs(frame - flips.astype(float))
        labels[idx] = cls

    train_idx, test_idx = [], []
    per_train = int(round(spec.train_fraction * spec.samples_per_class))
    for cls in range(spec.classes):
        base = cls * spec.samples_per_class
        train_idx.extend(range(base, base + per_train))
        test_idx.extend(range(base + per_train, base + spec.samples_per_class))
    return Dataset(inputs=inputs, labels=labels, temporal=True,
                   train_indices=np.array(train_idx), test_indices=np.array(test_idx),
                   classes=spec.classes, spec=spec)


# ---------------------------------------------------------------------------
# IDX files
# ---------------------------------------------------------------------------

_IDX_UBYTE = 0x08


def load_idx(path: str) -> np.ndarray:
    """Parse one IDX file (big-endian dims, unsigned-byte payload)."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 4:
        raise DataError(f"{path}: truncated IDX header")
    if blob[0] != 0 or blob[1] != 0:
        raise DataError(f"{path}: bad IDX magic {blob[:4].hex()}")
    dtype_code, ndim = blob[2], blob[3]
    if dtype_code != _IDX_UBYTE:
        raise DataError(f"{path}: unsupported IDX dtype 0x{dtype_code:02x}")
    header_len = 4 + 4 * ndim
    if len(blob) < header_len:
        raise DataError(f"{path}: truncated IDX dimension table")
    dims = struct.unpack(">" + "I" * ndim, blob[4:header_len])
    expected = header_len + math.prod(dims)
    if len(blob) != expected:
        raise DataError(f"{path}: payload is {len(blob) - header_len} bytes, "
                        f"expected {expected - header_len}")
    return np.frombuffer(blob[header_len:], dtype=np.uint8).reshape(dims).copy()


def load_idx_pair(images_path: str, labels_path: str,
                  train_fraction: float) -> Dataset:
    images = load_idx(images_path)
    labels = load_idx(labels_path)
    if images.ndim != 3:
        raise DataError(f"{images_path}: expected (N, H, W) image tensor")
    if labels.ndim != 1 or labels.shape[0] != images.shape[0]:
        raise DataError("image/label count mismatch")
    inputs = images[:, None, :, :].astype(np.float64) / 255.0
    n_train = int(round(train_fraction * len(labels)))
    return Dataset(inputs=inputs, labels=labels.astype(np.int64), temporal=False,
                   train_indices=np.arange(n_train),
                   test_indices=np.arange(n_train, len(labels)),
                   classes=int(labels.max()) + 1 if len(labels) else 0)


# ---------------------------------------------------------------------------
# CSV tables
# ---------------------------------------------------------------------------

def load_csv_table(path: str, train_fraction: float) -> Dataset:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or "label" not in reader.fieldnames:
            raise DataError(f"{path}: missing required 'label' column")
        feature_cols = [c for c in reader.fieldnames if c != "label"]
        rows, labels = [], []
        for lineno, row in enumerate(reader, start=2):
            try:
                rows.append([float(row[c]) for c in feature_cols])
                labels.append(int(row["label"]))
            except (TypeError, ValueError) as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from exc
    if not rows:
        raise DataError(f"{path}: no data rows")
    feats = np.asarray(rows)
    inputs = feats.reshape(len(rows), 1, 1, feats.shape[1])
    labels = np.asarray(labels, dtype=np.int64)
    n_train = int(round(train_fraction * len(labels)))
    return Dataset(inputs=inputs, labels=labels, temporal=False,
                   train_indices=np.arange(n_train),
                   test_indices=np.arange(n_train, len(labels)),
                   classes=int(labels.max()) + 1)


def load_dataset(spec: DatasetSpec) -> Dataset:
    if spec.kind == "synthetic-patterns":
        return generate_synthetic(spec)
    if spec.kind == "idx-images":
        if not spec.images_path or not spec.labels_path:
            raise DataError("idx-images needs images_path and labels_path")
        ds = load_idx_pair(spec.images_path, spec.labels_path, spec.train_fraction)
    else:
        if not spec.csv_path:
            raise DataError("csv-table needs csv_path")
        ds = load_csv_table(spec.csv_path, spec.train_fraction)
    ds.spec = spec
    return ds
