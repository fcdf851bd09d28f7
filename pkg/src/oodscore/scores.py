"""Detection scorers: decoupled-feature score with confidence calibration
(gafd_cc) plus the msp / maxlogit / energy / react baselines.

All scores follow the "higher = more ID-like" convention.  The confidence
function phi keeps its natural sign (negative for typical logits); the
energy baseline is exposed as -T*phi so it ranks the same way as the rest.

Feature decoupling splits the deviation from the predicted class mean by the
sign of w_i * delta_i, where w is the per-column sum of the head weights:
components that push the summed logit response up go to the positive side,
components that pull it down to the negative side, exact zero products to a
residual bucket.  Both sides are L1 masses normalized by the L1 norm of the
raw feature vector.
"""

from __future__ import annotations

import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .calib import CalibrationStats, energy_confidence
from .datastore import (
    ClassifierHead,
    ContainerError,
    FeatureDataset,
    derive_logits,
    read_container,
    write_container,
    _atomic_write,
)

METHOD_NAMES = ("msp", "maxlogit", "energy", "react", "gafd_cc")

SIDECAR_NAME = "method.json"

# |denominator| below this raises instead of producing huge/infinite scores
SINGULARITY_EPS = 1e-12


class ScoreError(Exception):
    """Degenerate input, singular denominator, or unsatisfiable method spec."""


class ScoreBatchError(ScoreError):
    """One or more rows failed; carries (row, reason) pairs for all of them."""

    def __init__(self, failures: list[tuple[int, str]]):
        self.failures = failures
        preview = "; ".join(f"row {i}: {msg}" for i, msg in failures[:5])
        more = "" if len(failures) <= 5 else f" (+{len(failures) - 5} more)"
        super().__init__(f"{len(failures)} row(s) failed: {preview}{more}")


@dataclass(frozen=True)
class GafdParams:
    """Weighting of the two decoupled terms: lam on the positive side,
    b_coef on the class-mean confidence, b_coef=0 drops it entirely."""

    lam: float = 0.5
    b_coef: float = 1.0
    temperature: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.lam <= 1.0:
            raise ScoreError(f"lambda out of range [0, 1]: {self.lam}")
        if self.b_coef < 0.0:
            raise ScoreError(f"b must be >= 0, got {self.b_coef}")
        if self.temperature <= 0.0:
            raise ScoreError(f"temperature must be positive, got {self.temperature}")


@dataclass(frozen=True)
class DecoupledScores:
    xi_plus: float
    xi_minus: float
    residual: float


def decouple(f: np.ndarray, mu_c: np.ndarray, w_col: np.ndarray) -> DecoupledScores:
    """Split the deviation f - mu_c by the sign of w_col * deviation.

    Returns the L1 masses of the positive set, negative set, and zero-product
    residual, each normalized by ||f||_1.
    """
    f = np.asarray(f, dtype=np.float64)
    mu_c = np.asarray(mu_c, dtype=np.float64)
    w_col = np.asarray(w_col, dtype=np.float64)
    if f.shape != mu_c.shape or f.shape != w_col.shape or f.ndim != 1:
        raise ScoreError("f, mu_c, and w_col must be vectors of equal length")
    norm = float(np.abs(f).sum())
    if norm == 0.0:
        raise ScoreError("degenerate input: L1 norm of features is zero")
    delta = f - mu_c
    prod = w_col * delta
    abs_delta = np.abs(delta)
    xi_plus = float(abs_delta[prod > 0].sum()) / norm
    xi_minus = float(abs_delta[prod < 0].sum()) / norm
    residual = float(abs_delta[prod == 0].sum()) / norm
    return DecoupledScores(xi_plus=xi_plus, xi_minus=xi_minus, residual=residual)


def gafd_cc_score(
    f: np.ndarray,
    logits_row: np.ndarray,
    stats: CalibrationStats,
    params: GafdParams = GafdParams(),
) -> float:
    """lam * xi+ / (s_sample + b*s_class[c]) + (1-lam) * xi- / (s_global + b*s_class[c]).

    c is the row-argmax class.  Confidences are typically negative, so more
    deviation pushes the score further below zero; higher stays more ID-like.
    """
    logits_row = np.asarray(logits_row, dtype=np.float64)
    if logits_row.ndim != 1:
        raise ScoreError("logits_row must be a vector")
    c = int(np.argmax(logits_row))
    if c >= stats.num_classes:
        raise ScoreError(f"missing class stats for class {c}")
    dec = decouple(f, stats.mu[c], stats.w_col)
    s_sample = energy_confidence(logits_row, params.temperature)
    denom_plus = s_sample + params.b_coef * float(stats.s_class[c])
    denom_minus = stats.s_global + params.b_coef * float(stats.s_class[c])
    if abs(denom_plus) < SINGULARITY_EPS:
        raise ScoreError("singular sample-confidence denominator")
    if abs(denom_minus) < SINGULARITY_EPS:
        raise ScoreError("singular global-confidence denominator")
    return params.lam * dec.xi_plus / denom_plus + (1.0 - params.lam) * dec.xi_minus / denom_minus


def msp_score(logits_row: np.ndarray) -> float:
    """Maximum softmax probability, max-shifted for stability."""
    z = np.asarray(logits_row, dtype=np.float64)
    p = np.exp(z - z.max())
    return float(p.max() / p.sum())


def maxlogit_score(logits_row: np.ndarray) -> float:
    return float(np.max(np.asarray(logits_row, dtype=np.float64)))


def energy_detection_score(logits_row: np.ndarray, temperature: float = 1.0) -> float:
    """T * log sum exp(s/T): the detection-convention energy score, == -T*phi."""
    return -temperature * energy_confidence(logits_row, temperature)


def react_score(
    f: np.ndarray,
    head: ClassifierHead,
    clip_threshold: float,
    temperature: float = 1.0,
) -> float:
    """Energy score over logits of the activation-clipped feature min(f, c)."""
    if clip_threshold <= 0:
        raise ScoreError(f"clip threshold must be positive, got {clip_threshold}")
    f = np.asarray(f, dtype=np.float64)
    clipped = np.minimum(f, clip_threshold)
    logits = head.W.astype(np.float64) @ clipped + head.bias.astype(np.float64)
    return energy_detection_score(logits, temperature)


def react_fit_threshold(train_features: np.ndarray, percentile: float = 90.0) -> float:
    """Percentile of the flattened activation multiset, lower interpolation."""
    flat = np.asarray(train_features, dtype=np.float64).ravel()
    if flat.size == 0:
        raise ScoreError("empty input: cannot fit a clip threshold")
    if not 0.0 < percentile <= 100.0:
        raise ScoreError(f"percentile must be in (0, 100], got {percentile}")
    return float(np.percentile(flat, percentile, method="lower"))


_METHOD_PARAMS = {
    "msp": {},
    "maxlogit": {},
    "energy": {"temperature": 1.0},
    "react": {"temperature": 1.0, "clip_threshold": None},  # clip_threshold mandatory
    "gafd_cc": {"lambda": 0.5, "b": 1.0, "temperature": 1.0},
}


@dataclass(frozen=True)
class MethodSpec:
    """A scorer name plus the full parameter record that reproduces it."""

    name: str
    params: tuple[tuple[str, float], ...] = ()

    @classmethod
    def create(cls, name: str, **params: float) -> "MethodSpec":
        if name not in METHOD_NAMES:
            raise ScoreError(f"unknown method {name!r}; expected one of {METHOD_NAMES}")
        allowed = _METHOD_PARAMS[name]
        unknown = set(params) - set(allowed)
        if unknown:
            raise ScoreError(f"method {name!r} does not accept parameters {sorted(unknown)}")
        merged = {k: (params.get(k) if params.get(k) is not None else v)
                  for k, v in allowed.items()}
        missing = [k for k, v in merged.items() if v is None]
        if missing:
            raise ScoreError(f"method {name!r} requires parameters {missing}")
        try:
            merged = {k: float(v) for k, v in merged.items()}
        except (TypeError, ValueError):
            raise ScoreError(f"method {name!r} parameters must be numbers, got {merged}")
        if name == "gafd_cc":
            GafdParams(lam=merged["lambda"], b_coef=merged["b"],
                       temperature=merged["temperature"])
        if "temperature" in merged and merged["temperature"] <= 0:
            raise ScoreError(f"temperature must be positive, got {merged['temperature']}")
        if name == "react" and merged["clip_threshold"] <= 0:
            raise ScoreError(f"clip threshold must be positive, got {merged['clip_threshold']}")
        return cls(name=name, params=tuple(sorted((k, float(v)) for k, v in merged.items())))

    def param(self, key: str) -> float:
        for k, v in self.params:
            if k == key:
                return v
        raise KeyError(key)

    def label(self) -> str:
        if not self.params:
            return self.name
        inner = ";".join(f"{k}={v:g}" for k, v in self.params)
        return f"{self.name}({inner})"

    def to_json(self) -> str:
        return json.dumps(
            {"method": self.name, "params": {k: v for k, v in self.params}},
            sort_keys=True,
        ) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "MethodSpec":
        raw = json.loads(text)
        return cls.create(raw["method"], **raw.get("params", {}))


@dataclass(frozen=True, eq=False)
class ScoreVector:
    method: MethodSpec
    values: np.ndarray

    def __post_init__(self):
        vals = np.ascontiguousarray(self.values, dtype=np.float64)
        if not np.isfinite(vals).all():
            raise ScoreError("score vector has non-finite values")
        vals.flags.writeable = False
        object.__setattr__(self, "values", vals)


def _gafd_params(method: MethodSpec) -> GafdParams:
    return GafdParams(
        lam=method.param("lambda"),
        b_coef=method.param("b"),
        temperature=method.param("temperature"),
    )


def score_batch(
    dataset: FeatureDataset,
    head: ClassifierHead | None,
    stats: CalibrationStats | None,
    method: MethodSpec,
    n_threads: int | None = None,
) -> ScoreVector:
    """Apply one scorer to every row; failing rows are collected and reported
    together rather than silently scored."""
    if dataset.n == 0:
        raise ScoreError("empty dataset")

    needs_logits = method.name in ("msp", "maxlogit", "energy", "gafd_cc")
    logits = None
    if needs_logits:
        if dataset.logits is not None:
            logits = dataset.logits.astype(np.float64)
        elif head is not None:
            logits = derive_logits(dataset, head)
        else:
            raise ScoreError(f"method {method.name!r} needs logits or a classifier head")

    if method.name == "react":
        if head is None:
            raise ScoreError("method 'react' needs the classifier head")
        thr = method.param("clip_threshold")
        temp = method.param("temperature")
    if method.name == "gafd_cc":
        if stats is None:
            raise ScoreError("method 'gafd_cc' needs calibration stats")
        if stats.dim != dataset.dim:
            raise ScoreError("calibration stats dimension does not match dataset")
        params = _gafd_params(method)
        if params.temperature != stats.temperature:
            raise ScoreError(
                f"temperature {params.temperature:g} does not match calibration "
                f"temperature {stats.temperature:g}; refit or drop the override"
            )

    feats = dataset.features.astype(np.float64)

    def score_row(i: int) -> float:
        if method.name == "msp":
            return msp_score(logits[i])
        if method.name == "maxlogit":
            return maxlogit_score(logits[i])
        if method.name == "energy":
            return energy_detection_score(logits[i], method.param("temperature"))
        if method.name == "react":
            return react_score(feats[i], head, thr, temp)
        return gafd_cc_score(feats[i], logits[i], stats, params)

    out = np.empty(dataset.n)

    def run_chunk(start: int, stop: int) -> list[tuple[int, str]]:
        failures = []
        for i in range(start, stop):
            try:
                out[i] = score_row(i)
            except ScoreError as exc:
                out[i] = np.nan
                failures.append((i, str(exc)))
        return failures

    n = dataset.n
    if n_threads is None or n_threads <= 1 or n == 1:
        failures = run_chunk(0, n)
    else:
        workers = min(n_threads, n)
        bounds = np.linspace(0, n, workers + 1).astype(int)
        with ThreadPoolExecutor(max_workers=workers) as pool:
            chunks = [pool.submit(run_chunk, bounds[j], bounds[j + 1]) for j in range(workers)]
            failures = [f for c in chunks for f in c.result()]

    if failures:
        raise ScoreBatchError(failures)
    return ScoreVector(method=method, values=out)


def write_scores(scores: ScoreVector, directory: str | os.PathLike) -> None:
    """Container with the score vector plus a JSON sidecar naming the method."""
    directory = Path(directory)
    write_container(directory, {"scores": scores.values.astype(np.float32)})
    _atomic_write(directory / SIDECAR_NAME, scores.method.to_json().encode("utf-8"))


def read_scores(directory: str | os.PathLike) -> ScoreVector:
    directory = Path(directory)
    tensors = read_container(directory)
    if set(tensors) != {"scores"}:
        raise ContainerError("score container must hold exactly the 'scores' tensor")
    sidecar = directory / SIDECAR_NAME
    if not sidecar.is_file():
        raise ContainerError(f"missing {SIDECAR_NAME} sidecar")
    method = MethodSpec.from_json(sidecar.read_text(encoding="utf-8"))
    return ScoreVector(method=method, values=tensors["scores"].astype(np.float64))
