"""UCR2018-format dataset loading and per-series preprocessing."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError


@dataclass
class TimeSeriesDataset:
    name: str
    samples: np.ndarray                 # (B, n)
    labels: np.ndarray                  # (B,) in [0, K)
    label_map: dict = field(default_factory=dict)   # original label -> contiguous index
    split: str = "train"

    @property
    def num_classes(self) -> int:
        return len(self.label_map)

    @property
    def seq_len(self) -> int:
        return self.samples.shape[1]

    def __len__(self) -> int:
        return self.samples.shape[0]


def _parse_label(token: str):
    value = float(token)
    return int(value) if value.is_integer() else value


def read_ucr_file(path) -> tuple[list, np.ndarray]:
    """Raw labels and the value matrix of one split file (tab or comma separated)."""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"dataset file not found: {path}")
    labels, rows = [], []
    width = None
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        fields = line.split("\t") if "\t" in line else line.split(",")
        try:
            label = _parse_label(fields[0])
            values = [float(v) if v.strip() not in ("", "?") else math.nan for v in fields[1:]]
        except ValueError as exc:
            raise DataError(f"{path}:{lineno}: unparsable field ({exc})") from None
        if width is None:
            width = len(values)
        elif len(values) != width:
            raise DataError(f"{path}:{lineno}: ragged row with {len(values)} values, expected {width}")
        labels.append(label)
        rows.append(values)
    if not rows or not width:
        raise DataError(f"{path}: empty dataset file")
    return labels, np.array(rows, dtype=np.float64)


def build_label_map(labels) -> dict:
    """Original labels -> 0..K-1 in sorted order (independent of row order)."""
    return {lab: i for i, lab in enumerate(sorted(set(labels)))}


def load_ucr_split(path, label_map: dict | None = None, preprocess: bool = False) -> TimeSeriesDataset:
    """Load ``<Name>_TRAIN.tsv`` / ``<Name>_TEST.tsv``. NaN cells are kept unless
    ``preprocess`` is set (fill gaps, then z-normalise each series)."""
    path = Path(path)
    raw_labels, samples = read_ucr_file(path)
    if label_map is None:
        label_map = build_label_map(raw_labels)
    try:
        labels = np.array([label_map[lab] for lab in raw_labels], dtype=np.int64)
    except KeyError as exc:
        raise DataError(f"{path}: label {exc.args[0]!r} not present in the training split") from None
    if preprocess:
        samples = np.stack([znormalize_series(fill_missing(row)) for row in samples])
    stem = path.stem
    name, _, split = stem.rpartition("_")
    return TimeSeriesDataset(name or stem, samples, labels, dict(label_map), split.lower() or "train")


def load_ucr_dataset(data_dir, name: str) -> tuple[TimeSeriesDataset, TimeSeriesDataset]:
    """Both splits of ``<data_dir>/<name>/``, preprocessed, sharing one label map over both splits."""
    root = Path(data_dir) / name
    if not root.is_dir():
        raise DataError(f"dataset directory not found: {root}")
    train_path = root / f"{name}_TRAIN.tsv"
    test_path = root / f"{name}_TEST.tsv"
    raw_train, _ = read_ucr_file(train_path)
    raw_test, _ = read_ucr_file(test_path)
    label_map = build_label_map(list(raw_train) + list(raw_test))
    train = load_ucr_split(train_path, label_map, preprocess=True)
    test = load_ucr_split(test_path, label_map, preprocess=True)
    if train.seq_len != test.seq_len:
        raise DataError(f"{name}: train length {train.seq_len} != test length {test.seq_len}")
    return train, test


def znormalize_series(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    std = x.std()
    if std < 1e-8:
        return np.zeros_like(x)
    return (x - x.mean()) / std


def fill_missing(x) -> np.ndarray:
    """Linear interpolation across interior NaN runs; edge runs copy the nearest value."""
    x = np.array(x, dtype=np.float64)
    finite = np.isfinite(x)
    if not finite.any():
        raise DataError("series has no finite values")
    if finite.all():
        return x
    idx = np.arange(x.size)
    x[~finite] = np.interp(idx[~finite], idx[finite], x[finite])
    return x


def write_ucr_split(path, samples, labels) -> None:
    """Write one split in the archive layout (label first, tab separated)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = ["\t".join([str(lab)] + [repr(float(v)) for v in row]) for lab, row in zip(labels, samples)]
    path.write_text("\n".join(lines) + "\n")


def make_two_sine(
    n_train: int = 40,
    n_test: int = 100,
    length: int = 64,
    noise: float = 0.3,
    seed: int = 0,
    freqs: tuple[float, float] = (3.0, 5.0),
) -> tuple[TimeSeriesDataset, TimeSeriesDataset]:
    """Two-class toy problem: sines with different cycle counts, random phase,
    additive Gaussian noise of std ``noise``; classes alternate so both
    splits are balanced."""
    rng = np.random.default_rng(seed)
    t = np.arange(length) / length

    def split(count, name):
        labels = np.arange(count) % 2
        phase = rng.uniform(0, 2 * np.pi, count)
        f = np.asarray(freqs)[labels]
        x = np.sin(2 * np.pi * f[:, None] * t[None, :] + phase[:, None])
        x = x + rng.normal(0.0, noise, x.shape)
        x = np.stack([znormalize_series(row) for row in x])
        return TimeSeriesDataset("TwoSine", x, labels.astype(np.int64), {0: 0, 1: 1}, name)

    return split(n_train, "train"), split(n_test, "test")
