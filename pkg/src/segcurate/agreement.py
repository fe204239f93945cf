"""Pixelwise inter-annotator agreement and agreement-based sample selection."""

from __future__ import annotations

import csv
import io
import itertools
import math
from dataclasses import dataclass
from typing import Iterable, Mapping, NamedTuple, Sequence

import numpy as np

from .conditioning import DEFAULT_SE, ConditioningKind, StructuringElement, apply_conditioning
from .mask_io import DatasetManifest, MaskError, SampleRecord, as_mask, check_same_shape, split_dataset

DEFAULT_THRESHOLD = 0.5
DEFAULT_PERCENTILES = (5, 25, 50, 75, 100)
DENSITY_POINTS = 256


class ConfusionMatrix(NamedTuple):
    """Pixel counts of reference ``a`` against comparison ``b``."""

    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


@dataclass(frozen=True)
class AgreementRecord:
    sample_id: str
    kappa: float
    n_masks: int


def confusion(a, b) -> ConfusionMatrix:
    a, b = as_mask(a), as_mask(b)
    check_same_shape(a, b)
    tp = int(np.count_nonzero(a & b))
    fp = int(np.count_nonzero(b)) - tp
    fn = int(np.count_nonzero(a)) - tp
    tn = a.size - tp - fp - fn
    return ConfusionMatrix(tp, fp, fn, tn)


def cohen_kappa(cm: ConfusionMatrix) -> float:
    """Cohen's kappa of a 2x2 confusion table.

    When both raters put every pixel in one class the chance agreement is 1
    and kappa is undefined; we return 1.0 if they agree on every pixel and
    0.0 otherwise.
    """
    tp, fp, fn, tn = cm
    n = tp + fp + fn + tn
    if n <= 0:
        raise ValueError("confusion matrix is empty")
    # integer numerators keep p_o and p_e exact up to the final divisions
    agree = tp + tn
    chance = (tp + fn) * (tp + fp) + (fn + tn) * (fp + tn)
    if chance == n * n:
        return 1.0 if agree == n else 0.0
    return (agree * n - chance) / (n * n - chance)


def kappa(a, b) -> float:
    return cohen_kappa(confusion(a, b))


def avg_pairwise_kappa(
    record: SampleRecord,
    kind=ConditioningKind.NONE,
    se: StructuringElement = DEFAULT_SE,
) -> AgreementRecord:
    """Mean kappa over every unordered pair of the record's (conditioned) masks."""
    masks = record.masks
    if len(masks) < 2:
        raise ValueError(f"sample {record.sample_id!r} has {len(masks)} mask(s); need at least 2")
    for m in masks[1:]:
        if m.shape != masks[0].shape:
            raise MaskError(f"sample {record.sample_id!r}: masks differ in shape")
    conditioned = [apply_conditioning(m, kind, se) for m in masks]
    scores = [kappa(a, b) for a, b in itertools.combinations(conditioned, 2)]
    return AgreementRecord(record.sample_id, math.fsum(scores) / len(scores), len(masks))


def _score(args) -> AgreementRecord:
    return avg_pairwise_kappa(*args)


def agreement_scores(
    manifest: DatasetManifest,
    kind=ConditioningKind.NONE,
    se: StructuringElement = DEFAULT_SE,
    executor=None,
) -> dict[str, float]:
    """Average pairwise kappa of every multi-annotated record, keyed by id."""
    jobs = [(rec, kind, se) for rec in manifest.records if rec.n_masks >= 2]
    results = executor.map(_score, jobs, chunksize=8) if executor is not None else map(_score, jobs)
    return {r.sample_id: r.kappa for r in results}


def select_samples(
    manifest: DatasetManifest,
    threshold: float = DEFAULT_THRESHOLD,
    scores: Mapping[str, float] | None = None,
) -> DatasetManifest:
    """Multi-annotated records whose unconditioned agreement is above ``threshold``.

    Single-mask records never qualify. ``scores`` may carry precomputed
    unconditioned kappas (keyed by sample id) to skip recomputation.
    """
    if scores is None:
        scores = agreement_scores(manifest, ConditioningKind.NONE)
    kept = []
    for rec in manifest.records:
        if rec.n_masks < 2:
            continue
        if rec.sample_id not in scores:
            raise KeyError(f"no agreement score for sample {rec.sample_id!r}")
        if scores[rec.sample_id] > threshold:
            kept.append(rec)
    return DatasetManifest(f"{manifest.name}-best", kept)


def derive_training_sets(
    manifest: DatasetManifest,
    fraction: float,
    seed: int,
    threshold: float = DEFAULT_THRESHOLD,
    scores: Mapping[str, float] | None = None,
) -> dict[str, DatasetManifest]:
    """The all/best training sets with their train/validation splits.

    Only multi-annotated records take part. The full set is split first, and
    each half is then filtered by agreement, so the best-sample split is the
    restriction of the all-sample split.
    """
    multi = DatasetManifest(manifest.name, [r for r in manifest.records if r.n_masks >= 2])
    if scores is None:
        scores = agreement_scores(multi, ConditioningKind.NONE)
    train, val = split_dataset(multi, fraction, seed)
    return {
        "all_train": train,
        "all_val": val,
        "best_train": select_samples(train, threshold, scores),
        "best_val": select_samples(val, threshold, scores),
    }


def kappa_percentiles(scores: Sequence[float], pct: Iterable[float] = DEFAULT_PERCENTILES) -> list[float]:
    """Percentiles by linear interpolation between order statistics.

    The value at percentile ``p`` sits at fractional rank ``p/100 * (n-1)`` of
    the sorted scores.
    """
    values = np.sort(np.asarray(scores, dtype=float))
    if values.size == 0:
        raise ValueError("no scores")
    n = values.size
    out = []
    for p in pct:
        if not 0 <= p <= 100:
            raise ValueError(f"percentile {p} outside [0, 100]")
        rank = p / 100.0 * (n - 1)
        lo = math.floor(rank)
        hi = min(lo + 1, n - 1)
        frac = rank - lo
        out.append(float(values[lo] + (values[hi] - values[lo]) * frac))
    return out


@dataclass
class KappaDistribution:
    bin_edges: np.ndarray
    counts: np.ndarray
    x: np.ndarray
    density: np.ndarray
    bandwidth: float

    def histogram_rows(self):
        return [
            (float(self.bin_edges[i]), float(self.bin_edges[i + 1]), int(c))
            for i, c in enumerate(self.counts)
        ]

    def density_rows(self):
        return [(float(x), float(d)) for x, d in zip(self.x, self.density)]


def scott_bandwidth(values: np.ndarray) -> float:
    return float(values.size ** (-1.0 / 5.0) * values.std(ddof=1)) if values.size > 1 else 0.0


def kappa_distribution(scores: Sequence[float], n_bins: int = 20, n_points: int = DENSITY_POINTS) -> KappaDistribution:
    """Equal-width histogram over ``[min, max]`` plus a Gaussian KDE.

    The bandwidth follows Scott's rule, ``n ** (-1/5)`` times the sample
    standard deviation. The density is sampled at ``n_points`` evenly spaced
    points spanning ``[min - 3h, max + 3h]``. With no spread at all
    (one score, or all equal) the histogram is a single zero-width bin and a
    narrow fallback bandwidth keeps the density finite and peaked there.
    """
    values = np.asarray(scores, dtype=float)
    if values.size == 0:
        raise ValueError("no scores")
    if n_bins < 1:
        raise ValueError("n_bins must be >= 1")
    lo, hi = float(values.min()), float(values.max())
    if lo == hi:
        edges = np.array([lo, hi])
        counts = np.array([values.size])
    else:
        counts, edges = np.histogram(values, bins=n_bins, range=(lo, hi))

    h = scott_bandwidth(values)
    if h <= 0:
        h = 1e-3 * max(1.0, abs(lo))
    x = np.linspace(lo - 3 * h, hi + 3 * h, n_points)
    z = (x[:, None] - values[None, :]) / h
    density = np.exp(-0.5 * z * z).sum(axis=1) / (values.size * h * math.sqrt(2 * math.pi))
    return KappaDistribution(edges, counts, x, density, h)


# ---------------------------------------------------------------- tables

AGREEMENT_COLUMNS = ("sample_id", "n_masks", "kappa_none", "kappa_opening", "kappa_convexhull")


@dataclass(frozen=True)
class AgreementRow:
    sample_id: str
    n_masks: int
    kappas: dict  # ConditioningKind -> float


def _agreement_row(args) -> AgreementRow:
    record, se = args
    kappas = {kind: avg_pairwise_kappa(record, kind, se).kappa for kind in ConditioningKind}
    return AgreementRow(record.sample_id, record.n_masks, kappas)


def agreement_table(
    manifest: DatasetManifest, se: StructuringElement = DEFAULT_SE, executor=None
) -> list[AgreementRow]:
    """Kappa under every conditioning for each multi-annotated record, by sample id."""
    jobs = [(r, se) for r in sorted(manifest.records, key=lambda r: r.sample_id) if r.n_masks >= 2]
    if executor is None:
        return [_agreement_row(j) for j in jobs]
    return list(executor.map(_agreement_row, jobs, chunksize=8))


def agreement_csv(rows: Sequence[AgreementRow]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(AGREEMENT_COLUMNS)
    for row in rows:
        writer.writerow([row.sample_id, row.n_masks, *(repr(row.kappas[k]) for k in ConditioningKind)])
    return buf.getvalue()


def read_agreement_csv(path) -> list[AgreementRow]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = set(AGREEMENT_COLUMNS) - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"{path}: missing columns {sorted(missing)}")
        rows = []
        for row in reader:
            kappas = {k: float(row[f"kappa_{k.value}"]) for k in ConditioningKind}
            rows.append(AgreementRow(row["sample_id"], int(row["n_masks"]), kappas))
    return rows
