"""Training-time statistics: class feature means, weight column sums, and
energy confidences at sample/class/global scale.

The confidence function is phi(s) = -log sum_j exp(s_j / T), evaluated in the
max-shifted form so arbitrarily large logits never overflow.  Per-class and
global confidences are means of phi over the training dump; both are
precomputed here once and reused by every scored sample.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .datastore import (
    ClassifierHead,
    ContainerError,
    FeatureDataset,
    derive_logits,
    read_container,
    write_container,
)

GROUPINGS = ("auto", "labels", "predicted")


class CalibrationError(Exception):
    """Invalid inputs or unsatisfiable statistics (e.g. an empty class)."""


def energy_confidence(logits: np.ndarray, temperature: float = 1.0):
    """phi(s) = -log sum exp(s/T), max-shifted.  Rows of a 2-D input map to a vector."""
    if temperature <= 0:
        raise CalibrationError(f"temperature must be positive, got {temperature}")
    z = np.asarray(logits, dtype=np.float64) / temperature
    m = np.max(z, axis=-1, keepdims=True)
    out = -(np.squeeze(m, axis=-1) + np.log(np.sum(np.exp(z - m), axis=-1)))
    if z.ndim == 1:
        return float(out)
    return out


def class_means(features: np.ndarray, group: np.ndarray, num_classes: int) -> np.ndarray:
    """Arithmetic mean feature vector per class; every class must be populated."""
    features = np.asarray(features, dtype=np.float64)
    group = np.asarray(group)
    if features.ndim != 2:
        raise CalibrationError("features must be an N x d matrix")
    if group.shape != (features.shape[0],):
        raise CalibrationError("group must be a length-N vector")
    if group.size and (group.min() < 0 or group.max() >= num_classes):
        raise CalibrationError(f"group values must lie in [0, {num_classes})")
    counts = np.bincount(group, minlength=num_classes)
    empty = np.flatnonzero(counts == 0)
    if empty.size:
        raise CalibrationError(f"empty class {int(empty[0])}: no samples to average")
    sums = np.zeros((num_classes, features.shape[1]))
    np.add.at(sums, group, features)
    return sums / counts[:, None]


def column_weight_sums(W: np.ndarray) -> np.ndarray:
    """Per-column sum over classes of the head weights: the sensitivity of the
    summed logit response to each feature component."""
    W = np.asarray(W, dtype=np.float64)
    if W.ndim != 2:
        raise CalibrationError("W must be a K x d matrix")
    return W.sum(axis=0)


@dataclass(frozen=True, eq=False)
class CalibrationStats:
    """Everything scoring needs that is precomputed from the training dump."""

    mu: np.ndarray           # K x d class mean features
    w_col: np.ndarray        # d column sums of W
    s_class: np.ndarray      # K per-class mean confidences
    s_global: float          # mean confidence over all training samples
    temperature: float
    class_counts: np.ndarray  # K

    def __post_init__(self):
        mu = np.ascontiguousarray(self.mu, dtype=np.float64)
        w_col = np.ascontiguousarray(self.w_col, dtype=np.float64)
        s_class = np.ascontiguousarray(self.s_class, dtype=np.float64)
        counts = np.ascontiguousarray(self.class_counts, dtype=np.int64)
        for name, arr in (("mu", mu), ("w_col", w_col), ("s_class", s_class)):
            if not np.isfinite(arr).all():
                raise CalibrationError(f"{name} has non-finite entries")
        if not np.isfinite(self.s_global):
            raise CalibrationError("s_global is non-finite")
        if self.temperature <= 0:
            raise CalibrationError("temperature must be positive")
        if mu.ndim != 2 or w_col.shape != (mu.shape[1],):
            raise CalibrationError("w_col length must equal the feature dimension of mu")
        if s_class.shape != (mu.shape[0],) or counts.shape != (mu.shape[0],):
            raise CalibrationError("s_class and class_counts must have one entry per class")
        if counts.min() < 1:
            raise CalibrationError("every class must have at least one training sample")
        weighted = float(np.dot(counts, s_class) / counts.sum())
        if abs(weighted - self.s_global) > 1e-6 * max(1.0, abs(self.s_global)):
            raise CalibrationError(
                "s_global does not match the count-weighted mean of per-class confidences"
            )
        for name, arr in (("mu", mu), ("w_col", w_col), ("s_class", s_class),
                          ("class_counts", counts)):
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)

    @property
    def num_classes(self) -> int:
        return self.mu.shape[0]

    @property
    def dim(self) -> int:
        return self.mu.shape[1]


def fit_calibration(
    train: FeatureDataset,
    head: ClassifierHead,
    temperature: float = 1.0,
    grouping: str = "auto",
) -> CalibrationStats:
    """Compute all precomputed statistics from an ID training dump.

    grouping selects how samples are pooled for mu and the class confidences:
    "labels" (ground truth), "predicted" (model decisions), or "auto"
    (labels when stored, else predictions).
    """
    if grouping not in GROUPINGS:
        raise CalibrationError(f"grouping must be one of {GROUPINGS}, got {grouping!r}")
    if grouping == "auto":
        grouping = "labels" if train.labels is not None else "predicted"

    logits = train.logits
    if logits is None:
        logits = derive_logits(train, head)

    if grouping == "labels":
        if train.labels is None:
            raise CalibrationError("grouping 'labels' requested but dataset has no labels")
        group = train.labels
    else:
        group = train.predicted if train.predicted is not None else (
            np.argmax(logits, axis=1).astype(np.int32)
        )

    k = train.num_classes
    if head.num_classes != k or head.dim != train.dim:
        raise CalibrationError("head shape does not match the training dataset")

    mu = class_means(train.features, group, k)
    phi = energy_confidence(logits, temperature)
    s_class = np.zeros(k)
    for c in range(k):
        s_class[c] = np.mean(phi[group == c])
    s_global = float(np.mean(phi))
    counts = np.bincount(group, minlength=k)
    return CalibrationStats(
        mu=mu,
        w_col=column_weight_sums(head.W),
        s_class=s_class,
        s_global=s_global,
        temperature=temperature,
        class_counts=counts,
    )


def save_stats(stats: CalibrationStats, directory: str | os.PathLike) -> None:
    """Serialize stats as a container under the reserved stat tensor names."""
    write_container(directory, {
        "mu": stats.mu.astype(np.float32),
        "w_col": stats.w_col.astype(np.float32),
        "s_class": stats.s_class.astype(np.float32),
        "s_global": np.array([stats.s_global], dtype=np.float32),
        "temperature": np.array([stats.temperature], dtype=np.float32),
        "class_counts": stats.class_counts.astype(np.int32),
    })


def load_stats(directory: str | os.PathLike) -> CalibrationStats:
    tensors = read_container(directory)
    required = {"mu", "w_col", "s_class", "s_global", "temperature", "class_counts"}
    missing = required - set(tensors)
    if missing:
        raise ContainerError(f"stats container is missing tensors: {sorted(missing)}")
    unknown = set(tensors) - required
    if unknown:
        raise ContainerError(f"unexpected tensors in stats container: {sorted(unknown)}")
    return CalibrationStats(
        mu=tensors["mu"],
        w_col=tensors["w_col"],
        s_class=tensors["s_class"],
        s_global=float(tensors["s_global"][0]),
        temperature=float(tensors["temperature"][0]),
        class_counts=tensors["class_counts"],
    )
