"""Binary masks on disk, dataset manifests, and deterministic splits.

A mask is a 2-D ``numpy`` boolean array indexed ``[row, col]``; ``True`` marks
lesion foreground. Everything else in the package consumes masks in that form.
"""

from __future__ import annotations

import csv
import io
import os
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image

from .fsutil import atomic_path, write_text

# foreground iff luminance > THRESHOLD
THRESHOLD = 127

MANIFEST_HEADER = ("sample_id", "image_path", "mask_path")


class MaskError(ValueError):
    """A mask could not be read, or masks that must agree in shape do not."""


class ManifestError(ValueError):
    """Malformed dataset manifest."""


def as_mask(array) -> np.ndarray:
    """Validate ``array`` as a non-empty 2-D mask and return it as ``bool``."""
    mask = np.asarray(array)
    if mask.ndim != 2:
        raise MaskError(f"mask must be 2-D, got shape {mask.shape}")
    if mask.shape[0] < 1 or mask.shape[1] < 1:
        raise MaskError(f"mask has a zero dimension: {mask.shape}")
    if mask.dtype != bool:
        mask = mask.astype(bool)
    return mask


def check_same_shape(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise MaskError(f"mask shapes differ: {a.shape} vs {b.shape}")


def load_mask(path: str | os.PathLike) -> np.ndarray:
    """Read a raster image and binarize it.

    Colour images go through Pillow's luminance conversion first; a pixel is
    foreground when its 8-bit luminance exceeds 127.
    """
    try:
        with Image.open(path) as img:
            img.load()
            gray = img if img.mode == "L" else img.convert("L")
            pixels = np.asarray(gray, dtype=np.uint8)
    except (OSError, ValueError) as exc:
        raise MaskError(f"cannot read mask {path}: {exc}") from exc
    if pixels.ndim != 2 or 0 in pixels.shape:
        raise MaskError(f"mask {path} has zero dimension {pixels.shape}")
    return pixels > THRESHOLD


def save_mask(mask: np.ndarray, path: str | os.PathLike) -> None:
    """Write ``mask`` as an 8-bit single-channel image (0 / 255).

    The format follows the file extension; PNG is the expected one. The file
    appears atomically.
    """
    mask = as_mask(mask)
    path = Path(path)
    if not path.parent.is_dir():
        raise MaskError(f"parent directory does not exist: {path.parent}")
    img = Image.fromarray(np.where(mask, 255, 0).astype(np.uint8), mode="L")
    try:
        with atomic_path(path) as tmp:
            img.save(tmp)
    except (OSError, ValueError) as exc:
        raise MaskError(f"cannot write mask {path}: {exc}") from exc


@dataclass
class SampleRecord:
    """One lesion with its ground-truth annotations.

    Masks are read from ``mask_refs`` on first access of :attr:`masks` and
    checked for a common shape then. Records built from in-memory masks
    (``SampleRecord.from_masks``) carry no file references.
    """

    sample_id: str
    mask_refs: tuple[Path, ...]
    image_ref: Path | None = None
    _masks: tuple[np.ndarray, ...] | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.mask_refs = tuple(Path(p) for p in self.mask_refs)
        if not self.mask_refs and self._masks is None:
            raise ManifestError(f"sample {self.sample_id!r} has no masks")

    @classmethod
    def from_masks(cls, sample_id: str, masks: Sequence[np.ndarray]) -> "SampleRecord":
        masks = tuple(as_mask(m) for m in masks)
        if not masks:
            raise ManifestError(f"sample {sample_id!r} has no masks")
        _check_common_shape(sample_id, masks)
        return cls(sample_id, (), None, masks)

    @property
    def n_masks(self) -> int:
        return len(self._masks) if self._masks is not None else len(self.mask_refs)

    @property
    def masks(self) -> tuple[np.ndarray, ...]:
        if self._masks is None:
            masks = tuple(load_mask(p) for p in self.mask_refs)
            _check_common_shape(self.sample_id, masks)
            self._masks = masks
        return self._masks

    @property
    def shape(self) -> tuple[int, int]:
        return self.masks[0].shape


def _check_common_shape(sample_id, masks):
    shapes = {m.shape for m in masks}
    if len(shapes) > 1:
        raise MaskError(f"sample {sample_id!r}: masks differ in shape {sorted(shapes)}")


@dataclass
class DatasetManifest:
    name: str
    records: list[SampleRecord]

    def __post_init__(self):
        seen = set()
        for rec in self.records:
            if rec.sample_id in seen:
                raise ManifestError(f"duplicate sample_id {rec.sample_id!r}")
            seen.add(rec.sample_id)

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    @property
    def sample_ids(self) -> list[str]:
        return [r.sample_id for r in self.records]

    def subset(self, sample_ids, name: str | None = None) -> "DatasetManifest":
        """Records whose id is in ``sample_ids``, in this manifest's order."""
        keep = set(sample_ids)
        return DatasetManifest(name or self.name, [r for r in self.records if r.sample_id in keep])


def load_manifest(path: str | os.PathLike) -> DatasetManifest:
    """Parse a ``sample_id,image_path,mask_path`` CSV into grouped records.

    Rows sharing a ``sample_id`` are merged into one record, keeping row order
    for the masks. Relative paths resolve against the manifest's directory.
    """
    path = Path(path)
    root = path.parent
    try:
        text = path.read_text(encoding="utf-8-sig")
    except OSError as exc:
        raise ManifestError(f"cannot read manifest {path}: {exc}") from exc

    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header is None:
        raise ManifestError(f"{path}: empty manifest")
    if tuple(h.strip() for h in header) != MANIFEST_HEADER:
        raise ManifestError(f"{path}: expected header {','.join(MANIFEST_HEADER)}, got {','.join(header)}")

    images: dict[str, str] = {}
    masks: dict[str, list[str]] = {}
    for lineno, row in enumerate(reader, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != 3:
            raise ManifestError(f"{path}:{lineno}: expected 3 fields, got {len(row)}")
        sample_id, image_path, mask_path = (c.strip() for c in row)
        if not sample_id:
            raise ManifestError(f"{path}:{lineno}: empty sample_id")
        if not mask_path:
            raise ManifestError(f"{path}:{lineno}: sample {sample_id!r} row has no mask_path")
        if sample_id in images and images[sample_id] != image_path:
            raise ManifestError(
                f"{path}:{lineno}: sample {sample_id!r} listed with two images "
                f"({images[sample_id]!r}, {image_path!r})"
            )
        images[sample_id] = image_path
        sample_masks = masks.setdefault(sample_id, [])
        if mask_path in sample_masks:
            raise ManifestError(f"{path}:{lineno}: duplicate row for sample {sample_id!r}, mask {mask_path!r}")
        sample_masks.append(mask_path)

    if not masks:
        raise ManifestError(f"{path}: empty manifest")

    records = [
        SampleRecord(
            sample_id,
            tuple(root / m for m in mask_paths),
            root / images[sample_id] if images[sample_id] else None,
        )
        for sample_id, mask_paths in masks.items()
    ]
    return DatasetManifest(path.stem, records)


def save_manifest(manifest: DatasetManifest, path: str | os.PathLike) -> None:
    """Write ``manifest`` as CSV with paths relative to the output's directory."""
    path = Path(path)
    root = path.parent.resolve()

    def rel(p):
        return Path(os.path.relpath(Path(p).resolve(), root)).as_posix()

    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(MANIFEST_HEADER)
    for rec in manifest.records:
        if not rec.mask_refs:
            raise ManifestError(f"sample {rec.sample_id!r} has no mask files to write")
        image = rel(rec.image_ref) if rec.image_ref is not None else ""
        for m in rec.mask_refs:
            writer.writerow((rec.sample_id, image, rel(m)))
    write_text(path, buf.getvalue())


def dataset_stats(manifest: DatasetManifest) -> tuple[dict[int, int], int]:
    """Histogram ``{n_masks: n_samples}`` (sorted by mask count) and the total."""
    counts = Counter(rec.n_masks for rec in manifest.records)
    return dict(sorted(counts.items())), len(manifest.records)


def split_dataset(
    manifest: DatasetManifest, fraction: float, seed: int
) -> tuple[DatasetManifest, DatasetManifest]:
    """Seeded train/validation partition.

    Sample ids are sorted, permuted with ``numpy.random.default_rng(seed)``,
    and the first ``floor(fraction * N)`` go to training. Row order in the
    manifest therefore has no influence on the result. Both halves come back
    sorted by sample id.
    """
    if not 0.0 < fraction < 1.0:
        raise ValueError(f"fraction must lie in (0, 1), got {fraction}")
    if len(manifest) == 0:
        raise ManifestError("cannot split an empty manifest")
    ids = sorted(manifest.sample_ids)
    order = np.random.default_rng(seed).permutation(len(ids))
    n_train = int(np.floor(fraction * len(ids)))
    train_ids = sorted(ids[i] for i in order[:n_train])
    val_ids = sorted(ids[i] for i in order[n_train:])
    by_id = {r.sample_id: r for r in manifest.records}
    return (
        DatasetManifest(f"{manifest.name}-train", [by_id[i] for i in train_ids]),
        DatasetManifest(f"{manifest.name}-val", [by_id[i] for i in val_ids]),
    )


def sample_training_mask(record: SampleRecord, rng: np.random.Generator) -> np.ndarray:
    """One of the record's masks, chosen uniformly at random."""
    masks = record.masks
    return masks[int(rng.integers(len(masks)))]
