"""Segmentation metrics: Dice, Hausdorff, average Hausdorff, component counts.

Point sets are foreground voxel centres; distances are Euclidean in mm using
the volume spacing.  Nearest-neighbour distances come from an exact
Euclidean distance transform of the complement mask.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np
from scipy import ndimage

from .volume import CLASS_NAMES, LabelVolume


class EmptyMaskError(ValueError):
    """A distance metric was asked for an empty point set."""


def _spacing_zyx(spacing):
    # spacing is given as (sx, sy, sz), arrays are indexed (z, y, x)
    sx, sy, sz = spacing
    return (sz, sy, sx)


def _pair(a, b):
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    if a.shape != b.shape:
        raise ValueError(f"geometry mismatch: {a.shape} vs {b.shape}")
    return a, b


def dsc(a, b) -> float:
    """Dice similarity coefficient; two empty masks score 1.0."""
    a, b = _pair(a, b)
    total = int(a.sum()) + int(b.sum())
    if total == 0:
        return 1.0
    return 2.0 * int(np.logical_and(a, b).sum()) / total


def _directed_distances(src: np.ndarray, dst: np.ndarray, spacing) -> np.ndarray:
    """Distance from every voxel of ``src`` to its nearest voxel of ``dst``."""
    edt = ndimage.distance_transform_edt(~dst, sampling=_spacing_zyx(spacing))
    return edt[src]


def _check_nonempty(a, b):
    if not a.any() or not b.any():
        raise EmptyMaskError("distance metrics are undefined for an empty mask")


def hausdorff(a, b, spacing=(1.0, 1.0, 1.0)) -> float:
    """Symmetric Hausdorff distance between two masks, in mm."""
    a, b = _pair(a, b)
    _check_nonempty(a, b)
    return float(
        max(
            _directed_distances(a, b, spacing).max(),
            _directed_distances(b, a, spacing).max(),
        )
    )


def avg_hausdorff(a, b, spacing=(1.0, 1.0, 1.0)) -> float:
    """Average Hausdorff distance, in mm.

    Uses the mean of the two directed average distances:
    ``(mean_a d(a, B) + mean_b d(b, A)) / 2``.
    """
    a, b = _pair(a, b)
    _check_nonempty(a, b)
    ab = _directed_distances(a, b, spacing).mean()
    ba = _directed_distances(b, a, spacing).mean()
    return float((ab + ba) / 2.0)


def connected_components(mask, connectivity: int = 26) -> tuple[int, np.ndarray]:
    """Label foreground components under 6- or 26-connectivity.

    Labels are 1..count in raster (z, y, x) order of each component's first
    voxel.
    """
    mask = np.asarray(mask, dtype=bool)
    if connectivity == 26:
        structure = np.ones((3, 3, 3), dtype=bool)
    elif connectivity == 6:
        structure = ndimage.generate_binary_structure(3, 1)
    else:
        raise ValueError(f"connectivity must be 6 or 26, got {connectivity}")
    labeled, count = ndimage.label(mask, structure=structure)
    return int(count), labeled


@dataclass
class ClassMetrics:
    dsc: float | None
    hd_mm: float | None
    avd_mm: float | None
    components: int

    @property
    def defined(self) -> bool:
        return self.hd_mm is not None


@dataclass
class MetricsReport:
    rows: dict[str, ClassMetrics]

    def to_dict(self) -> dict:
        return {name: asdict(row) for name, row in self.rows.items()}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def to_text(self) -> str:
        header = f"{'class':<12}{'DSC(%)':>10}{'HD(mm)':>10}{'AVD(mm)':>10}{'comps':>7}"
        lines = [header, "-" * len(header)]
        for name, row in self.rows.items():
            cells = [
                "undefined" if v is None else f"{v:.2f}"
                for v in (
                    None if row.dsc is None else 100.0 * row.dsc,
                    row.hd_mm,
                    row.avd_mm,
                )
            ]
            lines.append(
                f"{name:<12}{cells[0]:>10}{cells[1]:>10}{cells[2]:>10}{row.components:>7}"
            )
        return "\n".join(lines)


def class_metrics(pred, gt, spacing=(1.0, 1.0, 1.0), connectivity: int = 26) -> ClassMetrics:
    """Metrics for one binary class; distances are ``None`` if either mask is empty."""
    pred, gt = _pair(pred, gt)
    count, _ = connected_components(pred, connectivity)
    if pred.any() and gt.any():
        return ClassMetrics(
            dsc(pred, gt), hausdorff(pred, gt, spacing), avg_hausdorff(pred, gt, spacing), count
        )
    return ClassMetrics(dsc(pred, gt) if not (pred.any() or gt.any()) else 0.0, None, None, count)


def evaluate(pred: LabelVolume, gt: LabelVolume, classes=None) -> MetricsReport:
    """Per-class report for two label volumes of the same geometry."""
    if pred.geometry.dims != gt.geometry.dims:
        raise ValueError(f"geometry mismatch: {pred.geometry.dims} vs {gt.geometry.dims}")
    if classes is None:
        classes = range(1, max(pred.num_classes, gt.num_classes))
    rows = {}
    for c in classes:
        name = CLASS_NAMES[c] if c < len(CLASS_NAMES) else f"class{c}"
        rows[name] = class_metrics(pred.mask(c), gt.mask(c), gt.geometry.spacing)
    return MetricsReport(rows)
