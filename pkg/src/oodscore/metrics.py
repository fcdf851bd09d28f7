"""Detection metrics over ID/OOD score pairs.

Convention: higher score = more ID-like, decision rule "ID iff score >= tau".
AUROC is the Mann-Whitney estimator with mid-rank (0.5) credit for ties,
computed from average ranks in O(n log n); tests hold it to the O(n^2)
pairwise count.  The TPR threshold is always an observed ID score, never an
interpolated value.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class MetricError(Exception):
    pass


def _check_scores(name: str, scores: np.ndarray) -> np.ndarray:
    arr = np.asarray(scores, dtype=np.float64).ravel()
    if arr.size == 0:
        raise MetricError(f"empty input: {name} scores")
    if not np.isfinite(arr).all():
        raise MetricError(f"{name} scores contain non-finite values")
    return arr


def _midranks(x: np.ndarray) -> np.ndarray:
    """Average ranks 1..n, ties share the mean of their rank range."""
    order = np.argsort(x, kind="mergesort")
    sx = x[order]
    bounds = np.flatnonzero(np.r_[True, sx[1:] != sx[:-1], True])
    avg = (bounds[:-1] + 1 + bounds[1:]) / 2.0
    ranks = np.empty(x.size)
    ranks[order] = np.repeat(avg, np.diff(bounds))
    return ranks


def auroc(id_scores: np.ndarray, ood_scores: np.ndarray) -> float:
    """P(ID score > OOD score) + 0.5 * P(equal)."""
    ids = _check_scores("ID", id_scores)
    oods = _check_scores("OOD", ood_scores)
    ranks = _midranks(np.concatenate([ids, oods]))
    n_id, n_ood = ids.size, oods.size
    u = ranks[:n_id].sum() - n_id * (n_id + 1) / 2.0
    return float(u / (n_id * n_ood))


def threshold_at_tpr(id_scores: np.ndarray, tpr_target: float = 0.95) -> float:
    """Largest observed ID score tau with fraction(id >= tau) >= tpr_target."""
    ids = _check_scores("ID", id_scores)
    if not 0.0 < tpr_target <= 1.0:
        raise MetricError(f"tpr_target must be in (0, 1], got {tpr_target}")
    n = ids.size
    ids_sorted = np.sort(ids)
    # smallest k with k/n >= target under the same float comparisons a
    # threshold scan would make
    k = max(1, min(n, int(np.ceil(tpr_target * n))))
    while k > 1 and (k - 1) / n >= tpr_target:
        k -= 1
    while k < n and k / n < tpr_target:
        k += 1
    return float(ids_sorted[n - k])


def fpr_at_tpr(
    id_scores: np.ndarray, ood_scores: np.ndarray, tpr_target: float = 0.95
) -> float:
    """Fraction of OOD scores accepted as ID at the TPR-matching threshold."""
    oods = _check_scores("OOD", ood_scores)
    tau = threshold_at_tpr(id_scores, tpr_target)
    return float(np.mean(oods >= tau))


@dataclass(frozen=True)
class EvalResult:
    auroc: float
    fpr95: float
    threshold_at_tpr95: float
    n_id: int
    n_ood: int

    def __post_init__(self):
        if not 0.0 <= self.auroc <= 1.0:
            raise MetricError(f"auroc out of [0, 1]: {self.auroc}")
        if not 0.0 <= self.fpr95 <= 1.0:
            raise MetricError(f"fpr out of [0, 1]: {self.fpr95}")
        if self.n_id < 1 or self.n_ood < 1:
            raise MetricError("sample counts must be positive")


def evaluate(
    id_scores: np.ndarray, ood_scores: np.ndarray, tpr_target: float = 0.95
) -> EvalResult:
    """Bundle AUROC and FPR at the requested TPR (default 95%) with counts.

    fpr95/threshold_at_tpr95 hold the values at tpr_target when it differs
    from the default.
    """
    ids = _check_scores("ID", id_scores)
    oods = _check_scores("OOD", ood_scores)
    tau = threshold_at_tpr(ids, tpr_target)
    return EvalResult(
        auroc=auroc(ids, oods),
        fpr95=float(np.mean(oods >= tau)),
        threshold_at_tpr95=tau,
        n_id=ids.size,
        n_ood=oods.size,
    )


CSV_HEADER = "method,dataset_id,dataset_ood,auroc,fpr95,threshold,n_id,n_ood"


def csv_row(method: str, dataset_id: str, dataset_ood: str, result: EvalResult) -> str:
    """One fixed-format CSV line (6-decimal reals, no trailing newline)."""
    for field in (method, dataset_id, dataset_ood):
        if "," in field or "\n" in field:
            raise MetricError(f"CSV field may not contain commas or newlines: {field!r}")
    return (
        f"{method},{dataset_id},{dataset_ood},"
        f"{result.auroc:.6f},{result.fpr95:.6f},{result.threshold_at_tpr95:.6f},"
        f"{result.n_id},{result.n_ood}"
    )
