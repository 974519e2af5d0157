"""Synthetic outlier-suppression study.

A phantom holds one spherical kidney with a spherical tumour inside it.  A
corrupted copy of the labels adds small tumour-labelled blobs ("speckles")
in the background, standing in for isolated false-positive predictions.
A free per-voxel logit field is fitted to the corrupted labels by plain
gradient descent on ``dice + ce + alpha * cr``, and the tumour prediction is
scored against the clean labels.  The number of tumour connected components
is the outlier proxy.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import ndimage

from .losses import LossConfig, LossReport, total_loss
from .metrics import avg_hausdorff, connected_components, dsc, hausdorff
from .volume import LabelVolume, ScalarVolume, VolumeGeometry

log = logging.getLogger(__name__)

BACKGROUND, KIDNEY, TUMOR = 0, 1, 2

# Background / kidney / tumour means and noise, in HU.
_INTENSITY = {BACKGROUND: -100.0, KIDNEY: 150.0, TUMOR: 80.0}
_NOISE_SD = 20.0
_SPECKLE_MARGIN = 2
_MAX_PLACEMENT_TRIES = 10_000


class DivergenceError(FloatingPointError):
    """The optimised loss became non-finite."""


@dataclass(frozen=True)
class PhantomSpec:
    dims: tuple[int, int, int] = (48, 48, 48)
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)
    rng_seed: int = 0
    organ_radius_vox: float = 12.0
    tumor_radius_vox: float = 5.0
    speckle_count: int = 8
    speckle_size_vox: int = 2

    def __post_init__(self):
        if self.speckle_count < 0:
            raise ValueError("speckle_count must be >= 0")
        if self.speckle_size_vox < 1:
            raise ValueError("speckle_size_vox must be >= 1")
        if not 0 < self.tumor_radius_vox < self.organ_radius_vox:
            raise ValueError("need 0 < tumor_radius_vox < organ_radius_vox")
        if 2 * self.organ_radius_vox + 2 > min(self.dims):
            raise ValueError(
                f"organ of radius {self.organ_radius_vox} does not fit in {self.dims}"
            )


@dataclass(frozen=True)
class OptimizerConfig:
    learning_rate: float = 3000.0
    iterations: int = 400
    rng_seed: int = 0

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")


def _ball(shape, center, radius) -> np.ndarray:
    zz, yy, xx = np.indices(shape, dtype=np.float64)
    cz, cy, cx = center
    return (zz - cz) ** 2 + (yy - cy) ** 2 + (xx - cx) ** 2 <= radius**2


def make_phantom(spec: PhantomSpec) -> tuple[ScalarVolume, LabelVolume, LabelVolume]:
    """Build ``(intensity, clean_labels, corrupted_labels)`` for ``spec``."""
    geometry = VolumeGeometry(spec.dims, spec.spacing)
    shape = geometry.shape
    rng = np.random.default_rng(spec.rng_seed)

    center = np.array([(n - 1) / 2.0 for n in shape])
    kidney = _ball(shape, center, spec.organ_radius_vox)
    # tumour sits off-centre along x, one voxel inside the kidney surface
    offset = spec.organ_radius_vox - spec.tumor_radius_vox - 1.0
    tumor = _ball(shape, center + np.array([0.0, 0.0, offset]), spec.tumor_radius_vox)

    clean = np.zeros(shape, dtype=np.uint8)
    clean[kidney] = KIDNEY
    clean[tumor] = TUMOR

    corrupted = clean.copy()
    blocked = ndimage.binary_dilation(clean > 0, iterations=_SPECKLE_MARGIN)
    size = spec.speckle_size_vox
    lo = _SPECKLE_MARGIN
    hi = np.array(shape) - size - _SPECKLE_MARGIN
    if np.any(hi < lo) and spec.speckle_count:
        raise ValueError(f"speckles of size {size} do not fit in {spec.dims}")
    placed = tries = 0
    while placed < spec.speckle_count:
        tries += 1
        if tries > _MAX_PLACEMENT_TRIES:
            raise ValueError(
                f"could only place {placed} of {spec.speckle_count} speckles in {spec.dims}"
            )
        corner = rng.integers(lo, hi + 1)
        core = tuple(slice(c, c + size) for c in corner)
        halo = tuple(slice(c - _SPECKLE_MARGIN, c + size + _SPECKLE_MARGIN) for c in corner)
        if blocked[halo].any():
            continue
        corrupted[core] = TUMOR
        blocked[halo] = True
        placed += 1

    intensity = np.vectorize(_INTENSITY.get, otypes=[np.float64])(clean)
    intensity += rng.normal(0.0, _NOISE_SD, size=shape)
    return (
        ScalarVolume(geometry, intensity.astype(np.float32)),
        LabelVolume(geometry, clean, num_classes=3),
        LabelVolume(geometry, corrupted, num_classes=3),
    )


def optimize_logits(
    targets: LabelVolume, loss_cfg: LossConfig, opt_cfg: OptimizerConfig
) -> tuple[np.ndarray, list[LossReport]]:
    """Fit a zero-initialised logit field to ``targets`` by gradient descent.

    The trace holds the loss report evaluated before each step.
    """
    labels = targets.data
    logits = np.zeros((loss_cfg.num_classes,) + labels.shape)
    trace = []
    for it in range(opt_cfg.iterations):
        report, grad = total_loss(logits, labels, loss_cfg)
        if not np.isfinite(report.total) or not np.isfinite(grad).all():
            raise DivergenceError(f"non-finite loss at iteration {it}")
        trace.append(report)
        logits -= opt_cfg.learning_rate * grad
    return logits, trace


@dataclass
class StudyRow:
    alpha: float
    seed: int
    dsc_tumor: float | None
    hd_mm: float | None
    avd_mm: float | None
    components: int | None

    def to_dict(self) -> dict:
        return {
            "alpha": self.alpha,
            "seed": self.seed,
            "dsc_tumor": self.dsc_tumor,
            "hd_mm": self.hd_mm,
            "avd_mm": self.avd_mm,
            "components": self.components,
        }


@dataclass
class StudyReport:
    rows: list[StudyRow] = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps([r.to_dict() for r in self.rows], indent=2) + "\n"

    def baseline(self, seed: int) -> StudyRow | None:
        for r in self.rows:
            if r.seed == seed and r.alpha == 0:
                return r
        return None

    def to_text(self) -> str:
        header = (
            f"{'seed':>5}{'alpha':>8}{'DSC(tumor)':>12}{'HD(mm)':>9}{'AVD(mm)':>9}"
            f"{'comps':>7}  note"
        )
        lines = [header, "-" * len(header)]
        for r in self.rows:
            base = self.baseline(r.seed)
            note = ""
            if r.components is None:
                note = "diverged"
            elif r.alpha == 0:
                note = "baseline"
            elif base is not None and base.components is not None and r.components < base.components:
                note = "fewer components"
                if base.dsc_tumor is not None and r.dsc_tumor < base.dsc_tumor - 0.05:
                    note += ", DSC drop"
            cells = [
                "-" if v is None else f"{v:.4f}" if i == 0 else f"{v:.2f}"
                for i, v in enumerate((r.dsc_tumor, r.hd_mm, r.avd_mm))
            ]
            comps = "-" if r.components is None else str(r.components)
            lines.append(
                f"{r.seed:>5}{r.alpha:>8g}{cells[0]:>12}{cells[1]:>9}{cells[2]:>9}"
                f"{comps:>7}  {note}".rstrip()
            )
        lines.append("components = 26-connected tumour components (outlier proxy)")
        return "\n".join(lines) + "\n"


def score_tumor(pred: np.ndarray, clean: LabelVolume, alpha: float, seed: int) -> StudyRow:
    pred_t = pred == TUMOR
    gt_t = clean.data == TUMOR
    count, _ = connected_components(pred_t)
    spacing = clean.geometry.spacing
    if pred_t.any():
        hd, avd = hausdorff(pred_t, gt_t, spacing), avg_hausdorff(pred_t, gt_t, spacing)
    else:
        hd = avd = None
    return StudyRow(float(alpha), int(seed), dsc(pred_t, gt_t), hd, avd, count)


def run_outlier_study(
    spec: PhantomSpec,
    alphas,
    loss_cfg: LossConfig,
    opt_cfg: OptimizerConfig,
    targets: str = "corrupted",
) -> StudyReport:
    """Fit one logit field per alpha and score each against the clean labels.

    ``targets`` selects the labels the fields are fitted to: ``"corrupted"``
    (default) or ``"clean"``.
    """
    alphas = [float(a) for a in alphas]
    if 0.0 not in alphas:
        raise ValueError("alphas must include the 0 baseline")
    _, clean, corrupted = make_phantom(spec)
    fit_to = {"corrupted": corrupted, "clean": clean}[targets]
    report = StudyReport()
    for alpha in alphas:
        cfg = replace(loss_cfg, alpha=alpha)
        try:
            logits, _ = optimize_logits(fit_to, cfg, opt_cfg)
        except DivergenceError as exc:
            log.warning("seed %d alpha %g: %s", spec.rng_seed, alpha, exc)
            report.rows.append(StudyRow(alpha, spec.rng_seed, None, None, None, None))
            continue
        row = score_tumor(logits.argmax(axis=0), clean, alpha, spec.rng_seed)
        log.info(
            "seed %d alpha %g: dsc %.4f components %d",
            spec.rng_seed, alpha, row.dsc_tumor, row.components,
        )
        report.rows.append(row)
    return report
