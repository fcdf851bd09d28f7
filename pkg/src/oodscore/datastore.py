"""On-disk tensor container: manifest.json plus one headerless binary per tensor.

Reals are little-endian IEEE-754 float32 row-major ("f32"), integers are
little-endian int32 ("i32").  The reserved dataset names are "features",
"logits", "labels", "predicted", "W", "bias"; calibration stats reserve
"mu", "w_col", "s_class", "s_global", "temperature", "class_counts"; score
containers reserve "scores".  Loaded arrays are frozen (non-writeable) so a
dataset can be shared across threads after construction.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MANIFEST_NAME = "manifest.json"
MANIFEST_VERSION = 1

DTYPES = {"f32": np.dtype("<f4"), "i32": np.dtype("<i4")}

# dtype contract per reserved tensor name
RESERVED_DTYPES = {
    "features": "f32",
    "logits": "f32",
    "labels": "i32",
    "predicted": "i32",
    "W": "f32",
    "bias": "f32",
    "mu": "f32",
    "w_col": "f32",
    "s_class": "f32",
    "s_global": "f32",
    "temperature": "f32",
    "class_counts": "i32",
    "scores": "f32",
}

DATASET_NAMES = ("features", "logits", "labels", "predicted", "W", "bias")


class ContainerError(Exception):
    """Manifest, shape, dtype, or value validation failure."""


@dataclass(frozen=True)
class TensorSpec:
    file: str
    dtype: str
    shape: tuple[int, ...]


@dataclass(frozen=True)
class TensorManifest:
    version: int = MANIFEST_VERSION
    entries: dict[str, TensorSpec] = field(default_factory=dict)

    @classmethod
    def from_json(cls, text: str) -> "TensorManifest":
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ContainerError(f"manifest parse failure: {exc}") from exc
        if not isinstance(raw, dict) or set(raw) != {"version", "entries"}:
            raise ContainerError("manifest must have exactly the keys 'version' and 'entries'")
        if raw["version"] != MANIFEST_VERSION:
            raise ContainerError(f"unsupported manifest version {raw['version']!r} (expected 1)")
        if not isinstance(raw["entries"], dict):
            raise ContainerError("manifest 'entries' must be an object")
        entries = {}
        for name, entry in raw["entries"].items():
            if not isinstance(entry, dict) or set(entry) != {"file", "dtype", "shape"}:
                raise ContainerError(
                    f"entry {name!r} must have exactly the keys 'file', 'dtype', 'shape'"
                )
            if entry["dtype"] not in DTYPES:
                raise ContainerError(f"entry {name!r}: unknown dtype {entry['dtype']!r}")
            shape = entry["shape"]
            if (
                not isinstance(shape, list)
                or not shape
                or not all(isinstance(s, int) and not isinstance(s, bool) and s > 0 for s in shape)
            ):
                raise ContainerError(f"entry {name!r}: shape must be a list of positive integers")
            fname = entry["file"]
            if not isinstance(fname, str) or not fname or Path(fname).is_absolute():
                raise ContainerError(f"entry {name!r}: file must be a relative path")
            entries[name] = TensorSpec(file=fname, dtype=entry["dtype"], shape=tuple(shape))
        return cls(version=raw["version"], entries=entries)

    def to_json(self) -> str:
        raw = {
            "version": self.version,
            "entries": {
                name: {"file": s.file, "dtype": s.dtype, "shape": list(s.shape)}
                for name, s in self.entries.items()
            },
        }
        return json.dumps(raw, sort_keys=True, separators=(",", ":")) + "\n"


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr.flags.writeable = False
    return arr


def read_container(directory: str | os.PathLike) -> dict[str, np.ndarray]:
    """Load and validate every tensor declared by the directory's manifest."""
    directory = Path(directory)
    manifest_path = directory / MANIFEST_NAME
    if not manifest_path.is_file():
        raise ContainerError(f"missing {MANIFEST_NAME} in {directory}")
    manifest = TensorManifest.from_json(manifest_path.read_text(encoding="utf-8"))
    tensors: dict[str, np.ndarray] = {}
    for name, spec in manifest.entries.items():
        if name in RESERVED_DTYPES and spec.dtype != RESERVED_DTYPES[name]:
            raise ContainerError(
                f"tensor {name!r} must have dtype {RESERVED_DTYPES[name]}, got {spec.dtype}"
            )
        path = directory / spec.file
        if not path.is_file():
            raise ContainerError(f"tensor {name!r}: file {spec.file!r} does not exist")
        dtype = DTYPES[spec.dtype]
        expected = int(np.prod(spec.shape)) * dtype.itemsize
        actual = path.stat().st_size
        if actual != expected:
            raise ContainerError(
                f"tensor {name!r}: byte-length mismatch "
                f"(file has {actual} bytes, shape {list(spec.shape)} needs {expected})"
            )
        arr = np.fromfile(path, dtype=dtype).reshape(spec.shape)
        if spec.dtype == "f32" and not np.isfinite(arr).all():
            raise ContainerError(f"tensor {name!r}: non-finite values")
        tensors[name] = _freeze(arr)
    return tensors


def write_container(directory: str | os.PathLike, tensors: dict[str, np.ndarray]) -> None:
    """Write tensors + manifest; validates everything before touching disk."""
    directory = Path(directory)
    entries = {}
    prepared = {}
    for name, arr in tensors.items():
        arr = np.ascontiguousarray(arr)
        if arr.dtype == np.float32:
            dtype = "f32"
        elif arr.dtype == np.int32:
            dtype = "i32"
        else:
            raise ContainerError(f"tensor {name!r}: unsupported dtype {arr.dtype}")
        if name in RESERVED_DTYPES and dtype != RESERVED_DTYPES[name]:
            raise ContainerError(
                f"tensor {name!r} must have dtype {RESERVED_DTYPES[name]}, got {dtype}"
            )
        if arr.size == 0:
            raise ContainerError(f"tensor {name!r}: empty tensors are not representable")
        if dtype == "f32" and not np.isfinite(arr).all():
            raise ContainerError(f"tensor {name!r}: non-finite values")
        entries[name] = TensorSpec(file=f"{name.lower()}.bin", dtype=dtype, shape=arr.shape)
        prepared[name] = arr
    manifest = TensorManifest(entries=entries)

    directory.mkdir(parents=True, exist_ok=True)
    for name, arr in prepared.items():
        _atomic_write(directory / entries[name].file, arr.tobytes())
    # manifest last: a container is only valid once its manifest exists
    _atomic_write(directory / MANIFEST_NAME, manifest.to_json().encode("utf-8"))


def _atomic_write(path: Path, data: bytes) -> None:
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


@dataclass(frozen=True, eq=False)
class ClassifierHead:
    """Final linear layer: weights W (K x d) and bias (K)."""

    W: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        W = _freeze(np.ascontiguousarray(self.W, dtype=np.float32))
        bias = _freeze(np.ascontiguousarray(self.bias, dtype=np.float32))
        object.__setattr__(self, "W", W)
        object.__setattr__(self, "bias", bias)
        if self.W.ndim != 2:
            raise ContainerError("W must be a K x d matrix")
        if self.bias.ndim != 1 or self.bias.shape[0] != self.W.shape[0]:
            raise ContainerError("bias length must equal the number of rows of W")
        if not np.isfinite(self.W).all() or not np.isfinite(self.bias).all():
            raise ContainerError("classifier head has non-finite entries")

    @property
    def num_classes(self) -> int:
        return self.W.shape[0]

    @property
    def dim(self) -> int:
        return self.W.shape[1]


@dataclass(frozen=True, eq=False)
class FeatureDataset:
    """Pre-extracted penultimate features with optional logits/labels/predictions."""

    features: np.ndarray
    num_classes: int
    logits: np.ndarray | None = None
    labels: np.ndarray | None = None
    predicted: np.ndarray | None = None

    def __post_init__(self):
        feats = _freeze(np.ascontiguousarray(self.features, dtype=np.float32))
        object.__setattr__(self, "features", feats)
        if feats.ndim != 2 or feats.shape[0] < 1 or feats.shape[1] < 1:
            raise ContainerError("features must be a non-empty N x d matrix")
        if not np.isfinite(feats).all():
            raise ContainerError("features contain non-finite values")
        n = feats.shape[0]
        k = self.num_classes
        if k < 2:
            raise ContainerError(f"num_classes must be >= 2, got {k}")
        if self.logits is not None:
            logits = _freeze(np.ascontiguousarray(self.logits, dtype=np.float32))
            object.__setattr__(self, "logits", logits)
            if logits.shape != (n, k):
                raise ContainerError(
                    f"logits shape {logits.shape} inconsistent with N={n}, K={k}"
                )
            if not np.isfinite(logits).all():
                raise ContainerError("logits contain non-finite values")
        for attr in ("labels", "predicted"):
            vec = getattr(self, attr)
            if vec is None:
                continue
            vec = _freeze(np.ascontiguousarray(vec, dtype=np.int32))
            object.__setattr__(self, attr, vec)
            if vec.shape != (n,):
                raise ContainerError(f"{attr} must be a length-N vector")
            if vec.min() < 0 or vec.max() >= k:
                raise ContainerError(f"{attr} values must lie in [0, {k})")

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def predicted_classes(self) -> np.ndarray:
        """Stored predictions, else row-argmax of logits (lowest index on ties)."""
        if self.predicted is not None:
            return self.predicted
        if self.logits is None:
            raise ContainerError("dataset has neither predicted classes nor logits")
        return np.argmax(self.logits, axis=1).astype(np.int32)


def _infer_num_classes(tensors: dict[str, np.ndarray]) -> int:
    if "logits" in tensors:
        return tensors["logits"].shape[1]
    if "W" in tensors:
        return tensors["W"].shape[0]
    candidates = [int(tensors[n].max()) + 1 for n in ("labels", "predicted") if n in tensors]
    if candidates:
        return max(max(candidates), 2)
    raise ContainerError(
        "cannot infer num_classes: container has no logits, head, labels, or predictions"
    )


def read_dataset(directory: str | os.PathLike) -> tuple[FeatureDataset, ClassifierHead | None]:
    """Load a feature dump; returns the dataset and its head when W/bias are present."""
    tensors = read_container(directory)
    unknown = set(tensors) - set(DATASET_NAMES)
    if unknown:
        raise ContainerError(f"unexpected tensors in dataset container: {sorted(unknown)}")
    if "features" not in tensors:
        raise ContainerError("dataset container is missing 'features'")
    if ("W" in tensors) != ("bias" in tensors):
        raise ContainerError("'W' and 'bias' must be declared together")

    head = None
    if "W" in tensors:
        head = ClassifierHead(W=tensors["W"], bias=tensors["bias"])

    k = _infer_num_classes(tensors)
    dataset = FeatureDataset(
        features=tensors["features"],
        num_classes=k,
        logits=tensors.get("logits"),
        labels=tensors.get("labels"),
        predicted=tensors.get("predicted"),
    )
    if head is not None:
        if head.dim != dataset.dim:
            raise ContainerError(
                f"head dimension {head.dim} does not match feature dimension {dataset.dim}"
            )
        if head.num_classes != dataset.num_classes:
            raise ContainerError(
                f"head has {head.num_classes} classes, dataset has {dataset.num_classes}"
            )
    return dataset, head


def write_dataset(
    dataset: FeatureDataset,
    head: ClassifierHead | None,
    directory: str | os.PathLike,
) -> None:
    """Write a dataset (and optional head) as a container; absent tensors are omitted."""
    tensors: dict[str, np.ndarray] = {"features": dataset.features}
    if dataset.logits is not None:
        tensors["logits"] = dataset.logits
    if dataset.labels is not None:
        tensors["labels"] = dataset.labels
    if dataset.predicted is not None:
        tensors["predicted"] = dataset.predicted
    if head is not None:
        if head.dim != dataset.dim:
            raise ContainerError("head dimension does not match dataset")
        tensors["W"] = head.W
        tensors["bias"] = head.bias
    write_container(directory, tensors)


def derive_logits(dataset: FeatureDataset, head: ClassifierHead) -> np.ndarray:
    """Recompute logits as features @ W.T + bias in float64."""
    if head.dim != dataset.dim:
        raise ContainerError(
            f"head dimension {head.dim} does not match feature dimension {dataset.dim}"
        )
    feats = dataset.features.astype(np.float64)
    return feats @ head.W.astype(np.float64).T + head.bias.astype(np.float64)


@dataclass(frozen=True)
class ConsistencyReport:
    """Stored-vs-recomputed logit agreement, relative to the largest recomputed logit."""

    max_rel_deviation: float
    tolerance: float

    @property
    def exceeded(self) -> bool:
        return self.max_rel_deviation > self.tolerance


def logits_consistency(
    dataset: FeatureDataset, head: ClassifierHead, rtol: float = 1e-4
) -> ConsistencyReport:
    """Compare stored logits against W @ f + bias; stored logits stay authoritative."""
    if dataset.logits is None:
        raise ContainerError("dataset has no stored logits to check")
    recomputed = derive_logits(dataset, head)
    scale = max(float(np.abs(recomputed).max()), 1e-30)
    max_dev = float(np.abs(dataset.logits.astype(np.float64) - recomputed).max()) / scale
    return ConsistencyReport(max_rel_deviation=max_dev, tolerance=rtol)
