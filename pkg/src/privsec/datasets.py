"""Synthetic datasets and CSV loading for desk-scale experiments."""

import csv

import numpy as np

from .model_core import Dataset

__all__ = ["synthesize_dataset", "load_csv", "save_csv", "to_pm1", "class_template"]

TEMPLATE_DIM = 64  # 8x8 inputs for the inversion/model-inversion harnesses


def class_template(cls: int, dim: int = TEMPLATE_DIM) -> np.ndarray:
    """Fixed per-class template, a function of the class index only."""
    return np.random.default_rng(1000 + cls).uniform(-1.0, 1.0, dim)


def synthesize_dataset(kind, n, noise, rng, n_classes=2, mu=1.5, dim=2) -> Dataset:
    """Synthetic data: 'gaussians', 'moons', or 'class_templates_8x8'."""
    if n < 2:
        raise ValueError("need n >= 2")
    if kind == "gaussians":
        half = n // 2
        n1 = n - half
        center = np.full(dim, mu)
        X = np.vstack([
            -center + noise * rng.normal(size=(half, dim)),
            center + noise * rng.normal(size=(n1, dim)),
        ])
        y = np.concatenate([np.zeros(half, dtype=np.intp), np.ones(n1, dtype=np.intp)])
        return Dataset(X, y)
    if kind == "moons":
        half = n // 2
        n1 = n - half
        t0 = np.linspace(0.0, np.pi, half)
        t1 = np.linspace(0.0, np.pi, n1)
        X = np.vstack([
            np.column_stack([np.cos(t0), np.sin(t0)]),
            np.column_stack([1.0 - np.cos(t1), 0.5 - np.sin(t1)]),
        ])
        X += noise * rng.normal(size=X.shape)
        y = np.concatenate([np.zeros(half, dtype=np.intp), np.ones(n1, dtype=np.intp)])
        return Dataset(X, y)
    if kind == "class_templates_8x8":
        y = rng.integers(0, n_classes, n)
        X = np.vstack([class_template(int(c)) for c in y])
        X = X + noise * rng.normal(size=X.shape)
        return Dataset(X, y.astype(np.intp))
    raise ValueError(f"unknown dataset kind {kind!r}")


def to_pm1(dataset: Dataset) -> Dataset:
    """Map {0,1} labels to {-1,+1} for the SVM modules."""
    y = np.asarray(dataset.y)
    return Dataset(dataset.X, np.where(y > 0, 1, -1), dataset.bounds)


def load_csv(path, label_column) -> Dataset:
    """Rectangular CSV with a header; labels become dense ids by first appearance."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if label_column not in header:
            raise ValueError(f"label column {label_column!r} not in header")
        li = header.index(label_column)
        feats = []
        raw_labels = []
        for row_num, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise ValueError(f"ragged row at line {row_num}")
            try:
                feats.append([float(v) for i, v in enumerate(row) if i != li])
            except ValueError as exc:
                raise ValueError(f"non-numeric feature cell at line {row_num}") from exc
            raw_labels.append(row[li])
    ids = {}
    y = np.array([ids.setdefault(v, len(ids)) for v in raw_labels], dtype=np.intp)
    return Dataset(np.asarray(feats, dtype=np.float64), y)


def save_csv(dataset: Dataset, path, label_column="label"):
    d = dataset.X.shape[1]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"f{i}" for i in range(d)] + [label_column])
        for x, yi in zip(dataset.X, dataset.y):
            writer.writerow([repr(float(v)) for v in x] + [int(yi)])
