"""Segmentation metrics, training-loss values, and prediction-directory scoring."""

from __future__ import annotations

import math
import os
from concurrent.futures import Executor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .conditioning import DEFAULT_SE, ConditioningKind, StructuringElement, apply_conditioning
from .mask_io import DatasetManifest, MaskError, SampleRecord, as_mask, check_same_shape, load_mask

SMOOTH = 1e-7
JACCARD_WEIGHT = 8.0
BCE_WEIGHT = 1.0


def jaccard(a, b) -> float:
    """Intersection over union; two empty masks score 1.0."""
    a, b = as_mask(a), as_mask(b)
    check_same_shape(a, b)
    union = np.count_nonzero(a | b)
    if union == 0:
        return 1.0
    return np.count_nonzero(a & b) / union


def _values(x, name) -> np.ndarray:
    arr = np.asarray(x, dtype=float)
    if arr.ndim != 2 or 0 in arr.shape:
        raise ValueError(f"{name} must be a non-empty 2-D array, got shape {arr.shape}")
    return arr


def _check_shapes(x: np.ndarray, g: np.ndarray) -> None:
    if x.shape != g.shape:
        raise MaskError(f"shapes differ: {x.shape} vs {g.shape}")


def soft_jaccard_loss(p, g, smooth: float = SMOOTH) -> float:
    """``1 - (sum(p*g) + s) / (sum(p) + sum(g) - sum(p*g) + s)``."""
    p = _values(p, "probability map")
    g = as_mask(g).astype(float)
    _check_shapes(p, g)
    if np.any((p < 0) | (p > 1)) or not np.all(np.isfinite(p)):
        raise ValueError("probabilities must lie in [0, 1]")
    inter = float(np.sum(p * g))
    union = float(np.sum(p)) + float(np.sum(g)) - inter
    return 1.0 - (inter + smooth) / (union + smooth)


def sigmoid(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def bce_with_logits(x, g) -> float:
    """Mean binary cross-entropy of logits ``x`` against mask ``g``.

    Uses ``max(x, 0) - x*g + log1p(exp(-|x|))``, which never overflows.
    """
    x = _values(x, "logit map")
    g = as_mask(g).astype(float)
    _check_shapes(x, g)
    if not np.all(np.isfinite(x)):
        raise ValueError("logits must be finite")
    loss = np.maximum(x, 0.0) - x * g + np.log1p(np.exp(-np.abs(x)))
    return float(np.mean(loss))


def combined_loss(x, g, w_jaccard: float = JACCARD_WEIGHT, w_bce: float = BCE_WEIGHT) -> float:
    """``w_jaccard * soft_jaccard_loss(sigmoid(x), g) + w_bce * bce_with_logits(x, g)``."""
    x = _values(x, "logit map")
    return w_jaccard * soft_jaccard_loss(sigmoid(x), g) + w_bce * bce_with_logits(x, g)


def best_of_jaccard(
    pred, record: SampleRecord, kind=ConditioningKind.NONE, se: StructuringElement = DEFAULT_SE
) -> float:
    """Highest Jaccard of ``pred`` against any of the record's conditioned masks.

    Only the ground truths are conditioned, never the prediction.
    """
    pred = as_mask(pred)
    best = -math.inf
    for m in record.masks:
        if m.shape != pred.shape:
            raise MaskError(
                f"sample {record.sample_id!r}: prediction shape {pred.shape} != mask shape {m.shape}"
            )
        best = max(best, jaccard(apply_conditioning(m, kind, se), pred))
    return best


@dataclass
class EvaluationReport:
    test_set: str
    conditioning: ConditioningKind
    per_sample: list[tuple[str, float]]
    skipped: list[str] = field(default_factory=list)

    @property
    def n(self) -> int:
        return len(self.per_sample)

    @property
    def mean(self) -> float:
        if not self.per_sample:
            return math.nan
        return math.fsum(j for _, j in self.per_sample) / len(self.per_sample)

    @property
    def complete(self) -> bool:
        return not self.skipped

    def summary(self) -> dict:
        return {
            "test_set": self.test_set,
            "conditioning": self.conditioning.value,
            "n": self.n,
            "mean_jaccard": None if math.isnan(self.mean) else self.mean,
            "skipped": list(self.skipped),
        }


def prediction_path(pred_dir, sample_id: str) -> Path:
    return Path(pred_dir) / f"{sample_id}.png"


def _score_one(args):
    pred_file, record, kind, se = args
    return record.sample_id, best_of_jaccard(load_mask(pred_file), record, kind, se)


def evaluate_predictions(
    pred_dir: str | os.PathLike,
    manifest: DatasetManifest,
    kind=ConditioningKind.NONE,
    se: StructuringElement = DEFAULT_SE,
    test_set: str | None = None,
    executor: Executor | None = None,
) -> EvaluationReport:
    """Score ``<pred_dir>/<sample_id>.png`` against every record of ``manifest``.

    Samples without a prediction file are listed in ``skipped`` rather than
    failing the run. Results are ordered by sample id.
    """
    kind = ConditioningKind.parse(kind)
    jobs, skipped = [], []
    for rec in sorted(manifest.records, key=lambda r: r.sample_id):
        f = prediction_path(pred_dir, rec.sample_id)
        if f.is_file():
            jobs.append((f, rec, kind, se))
        else:
            skipped.append(rec.sample_id)
    if executor is None:
        results = [_score_one(j) for j in jobs]
    else:
        results = list(executor.map(_score_one, jobs))
    return EvaluationReport(test_set or manifest.name, kind, results, skipped)
