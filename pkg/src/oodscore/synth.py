"""Synthetic classifier heads and ID/OOD feature dumps with tunable separation.

Class prototypes are aligned with the head's weight rows: ID samples are
proto_scale * W_row(c) + noise, so ID logits grow with proto_scale while
prototype-free OOD logits stay near zero.  That construction is what makes
the small-scale detection thresholds in the acceptance suite safe.

All randomness flows through tagged SplitMix64 substreams of the config seed
(one per tensor), so identical configs give bit-identical datasets in any
generation order.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .calib import fit_calibration
from .datastore import ClassifierHead, FeatureDataset
from .metrics import EvalResult, CSV_HEADER, csv_row, evaluate
from .rng import substream
from .scores import MethodSpec, react_fit_threshold, score_batch

OOD_KINDS = ("mean_shift", "scale_shift", "prototype_free")


class SynthError(Exception):
    pass


@dataclass(frozen=True)
class SynthConfig:
    num_classes: int = 10
    dim: int = 64
    n_per_class: int = 50
    n_ood: int = 500
    proto_scale: float = 4.0
    noise_sigma: float = 0.5
    ood_kind: str = "prototype_free"
    shift_mag: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.num_classes < 2:
            raise SynthError("num_classes must be >= 2")
        if self.dim < 1:
            raise SynthError("dim must be >= 1")
        if self.n_per_class < 1 or self.n_ood < 1:
            raise SynthError("n_per_class and n_ood must be >= 1")
        if not (np.isfinite(self.proto_scale) and self.proto_scale > 0):
            raise SynthError("proto_scale must be positive and finite")
        if not (np.isfinite(self.noise_sigma) and self.noise_sigma > 0):
            raise SynthError("noise_sigma must be positive and finite")
        if self.ood_kind not in OOD_KINDS:
            raise SynthError(f"ood_kind must be one of {OOD_KINDS}, got {self.ood_kind!r}")
        if not (np.isfinite(self.shift_mag) and self.shift_mag >= 0):
            raise SynthError("shift_mag must be >= 0 and finite")


def make_head(num_classes: int, dim: int, seed: int) -> ClassifierHead:
    """Head with independent unit-norm pseudo-random weight rows and zero bias."""
    if num_classes < 2 or dim < 1:
        raise SynthError("need num_classes >= 2 and dim >= 1")
    stream = substream(seed, "head.W")
    rows = np.empty((num_classes, dim))
    for c in range(num_classes):
        rows[c] = stream.unit_vector(dim)
    return ClassifierHead(W=rows.astype(np.float32), bias=np.zeros(num_classes, np.float32))


def _with_logits(features32: np.ndarray, head: ClassifierHead, cfg: SynthConfig,
                 labels: np.ndarray | None) -> FeatureDataset:
    logits = (
        features32.astype(np.float64) @ head.W.astype(np.float64).T
        + head.bias.astype(np.float64)
    ).astype(np.float32)
    return FeatureDataset(
        features=features32,
        num_classes=cfg.num_classes,
        logits=logits,
        labels=labels,
        predicted=np.argmax(logits, axis=1).astype(np.int32),
    )


def sample_id(head: ClassifierHead, cfg: SynthConfig, split: str = "id") -> FeatureDataset:
    """One ID sample set: per class, proto_scale * W_row + noise_sigma * N(0, I).

    Distinct split tags draw from independent substreams, so the train/test
    splits of one seed are disjoint by construction.
    """
    k, d, n_per = cfg.num_classes, cfg.dim, cfg.n_per_class
    labels = np.repeat(np.arange(k, dtype=np.int32), n_per)
    noise = substream(cfg.seed, f"{split}.noise").normals(k * n_per * d).reshape(-1, d)
    protos = head.W.astype(np.float64)[labels]
    features = (cfg.proto_scale * protos + cfg.noise_sigma * noise).astype(np.float32)
    return _with_logits(features, head, cfg, labels)


def _unit_rows(stream, n: int, d: int) -> np.ndarray:
    v = stream.normals(n * d).reshape(n, d)
    norms = np.linalg.norm(v, axis=1, keepdims=True)
    norms[norms == 0] = 1.0
    return v / norms


def sample_ood(head: ClassifierHead, cfg: SynthConfig) -> FeatureDataset:
    """OOD samples per cfg.ood_kind; labels are absent by construction."""
    k, d, n = cfg.num_classes, cfg.dim, cfg.n_ood
    noise = substream(cfg.seed, "ood.noise").normals(n * d).reshape(n, d)
    if cfg.ood_kind == "prototype_free":
        dirs = _unit_rows(substream(cfg.seed, "ood.directions"), n, d)
        raw = cfg.shift_mag * dirs + cfg.noise_sigma * noise
    else:
        classes = substream(cfg.seed, "ood.classes").integers(n, k)
        protos = head.W.astype(np.float64)[classes]
        if cfg.ood_kind == "mean_shift":
            dirs = _unit_rows(substream(cfg.seed, "ood.directions"), n, d)
            raw = cfg.proto_scale * protos + cfg.noise_sigma * noise + cfg.shift_mag * dirs
        else:  # scale_shift
            raw = cfg.proto_scale * protos + cfg.noise_sigma * (1.0 + cfg.shift_mag) * noise
    return _with_logits(raw.astype(np.float32), head, cfg, labels=None)


@dataclass(frozen=True)
class ExperimentRow:
    method: MethodSpec
    result: EvalResult


def _resolve_method(m: MethodSpec | str, train: FeatureDataset, temperature: float,
                    react_percentile: float) -> MethodSpec:
    if isinstance(m, MethodSpec):
        return m
    if m == "react":
        thr = react_fit_threshold(train.features, react_percentile)
        return MethodSpec.create("react", clip_threshold=thr, temperature=temperature)
    if m in ("energy", "gafd_cc"):
        return MethodSpec.create(m, temperature=temperature)
    return MethodSpec.create(m)


def run_synthetic_experiment(
    cfg: SynthConfig,
    methods: Sequence[MethodSpec | str],
    temperature: float = 1.0,
    react_percentile: float = 90.0,
    tpr_target: float = 0.95,
    n_threads: int | None = None,
) -> list[ExperimentRow]:
    """Generate head + train/test/OOD sets, calibrate on train, score and
    evaluate every method on the disjoint test split vs the OOD set."""
    if not methods:
        raise SynthError("no methods requested")
    head = make_head(cfg.num_classes, cfg.dim, cfg.seed)
    train = sample_id(head, cfg, split="train")
    test = sample_id(head, cfg, split="test")
    ood = sample_ood(head, cfg)
    stats = fit_calibration(train, head, temperature=temperature)

    rows = []
    for m in methods:
        spec = _resolve_method(m, train, temperature, react_percentile)
        sv_id = score_batch(test, head, stats, spec, n_threads=n_threads)
        sv_ood = score_batch(ood, head, stats, spec, n_threads=n_threads)
        rows.append(ExperimentRow(
            method=spec,
            result=evaluate(sv_id.values, sv_ood.values, tpr_target=tpr_target),
        ))
    return rows


def experiment_csv(cfg: SynthConfig, rows: Sequence[ExperimentRow]) -> str:
    """Header plus one CSV line per method, newline-terminated."""
    lines = [CSV_HEADER]
    for row in rows:
        lines.append(csv_row(row.method.label(), "synth-id", f"synth-{cfg.ood_kind}",
                             row.result))
    return "\n".join(lines) + "\n"
