"""Contour regularisation for 3D multi-class segmentation."""

from .losses import LossConfig, LossReport, cr_loss, dice_loss, cross_entropy_loss, total_loss
from .metrics import avg_hausdorff, connected_components, dsc, evaluate, hausdorff
from .morphology import contour, maxpool_argmax, maxpool_naive, maxpool_separable, minpool_argmin
from .volume import (
    LabelVolume,
    ScalarVolume,
    VolumeFormatError,
    VolumeGeometry,
    load_field,
    load_volume,
    percentile_clip,
    save_field,
    save_volume,
)

__version__ = "0.1.0"
