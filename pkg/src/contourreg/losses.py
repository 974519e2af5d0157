"""Soft Dice, cross-entropy and contour-regularisation losses with gradients.

Fields are numpy arrays with a leading class axis: logits and probabilities
have shape ``(C, nz, ny, nx)``; labels have shape ``(nz, ny, nx)``.  All
accumulation happens in float64.

The composite objective is::

    total = dice + ce + alpha * cr

where ``cr`` is the l2 norm of the contour map (windowed max minus windowed
min) of the probability of a single class.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from typing import Callable

import numpy as np

from .morphology import maxpool_argmax, minpool_argmin
from .volume import LabelVolume

CR_GRAD_GUARD = 1e-12


@dataclass(frozen=True)
class LossConfig:
    alpha: float = 1.0
    d: int = 1
    cr_class: int = 2
    dice_eps: float = 1e-5
    num_classes: int = 5

    def __post_init__(self):
        if self.num_classes < 2:
            raise ValueError("num_classes must be at least 2")
        if not 0 <= self.cr_class < self.num_classes:
            raise ValueError(
                f"cr_class {self.cr_class} outside [0, {self.num_classes})"
            )
        if not self.alpha >= 0:
            raise ValueError(f"alpha must be >= 0, got {self.alpha}")
        if not self.dice_eps > 0:
            raise ValueError(f"dice_eps must be > 0, got {self.dice_eps}")
        if int(self.d) != self.d or self.d < 0:
            raise ValueError(f"d must be a non-negative integer, got {self.d}")


@dataclass(frozen=True)
class LossReport:
    dice: float
    ce: float
    cr: float
    alpha: float
    total: float

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def _labels(labels) -> np.ndarray:
    if isinstance(labels, LabelVolume):
        return labels.data
    return np.asarray(labels)


def _check_fields(field: np.ndarray, labels: np.ndarray) -> None:
    if field.ndim != 4 or field.shape[1:] != labels.shape:
        raise ValueError(
            f"geometry mismatch: field {field.shape} vs labels {labels.shape}"
        )
    if labels.size and labels.max() >= field.shape[0]:
        raise ValueError(
            f"label {labels.max()} out of range for {field.shape[0]} classes"
        )


def softmax(logits: np.ndarray) -> np.ndarray:
    """Class-axis softmax, shifted by the per-voxel max."""
    z = np.asarray(logits, dtype=np.float64)
    e = np.exp(z - z.max(axis=0, keepdims=True))
    return e / e.sum(axis=0, keepdims=True)


def one_hot(labels, num_classes: int) -> np.ndarray:
    labels = _labels(labels)
    classes = np.arange(num_classes).reshape((-1,) + (1,) * labels.ndim)
    return (labels[None] == classes).astype(np.float64)


def dice_loss(p: np.ndarray, labels, cfg: LossConfig) -> tuple[float, np.ndarray]:
    """Soft Dice over foreground classes 1..C-1, averaged.

    Returns the loss and its gradient with respect to ``p``.
    """
    p = np.asarray(p, dtype=np.float64)
    labels = _labels(labels)
    _check_fields(p, labels)
    num_classes = p.shape[0]
    y = one_hot(labels, num_classes)
    eps = cfg.dice_eps

    fg_p = p[1:].reshape(num_classes - 1, -1)
    fg_y = y[1:].reshape(num_classes - 1, -1)
    intersect = (fg_p * fg_y).sum(axis=1)
    denom = fg_p.sum(axis=1) + fg_y.sum(axis=1) + eps
    numer = 2.0 * intersect + eps
    loss = 1.0 - float(np.mean(numer / denom))

    scale = -1.0 / (num_classes - 1)
    grad = np.zeros_like(p)
    shape = (-1,) + (1,) * labels.ndim
    grad[1:] = scale * (
        2.0 * y[1:] / denom.reshape(shape) - (numer / denom**2).reshape(shape)
    )
    return loss, grad


def cross_entropy_loss(logits: np.ndarray, labels, probs=None) -> tuple[float, np.ndarray]:
    """Mean voxelwise cross-entropy and its gradient w.r.t. the logits.

    ``probs`` may pass in an already computed ``softmax(logits)``.
    """
    z = np.asarray(logits, dtype=np.float64)
    labels = _labels(labels)
    _check_fields(z, labels)
    zmax = z.max(axis=0)
    lse = zmax + np.log(np.exp(z - zmax).sum(axis=0))
    true_logit = np.take_along_axis(z, labels[None].astype(np.intp), axis=0)[0]
    n = labels.size
    loss = float(np.sum(lse - true_logit) / n)
    grad = (softmax(z) if probs is None else probs) - one_hot(labels, z.shape[0])
    grad /= n
    return loss, grad


def cr_loss(p: np.ndarray, cfg: LossConfig) -> tuple[float, np.ndarray]:
    """l2 norm of the contour map of ``p[cfg.cr_class]`` and its gradient.

    Each contour value ``g[v] = max - min`` over the window of ``v``; its
    subgradient sends ``+g[v]/L`` to the window's argmax voxel and
    ``-g[v]/L`` to the argmin voxel.
    """
    p = np.asarray(p, dtype=np.float64)
    pt = p[cfg.cr_class]
    hi, hi_idx = maxpool_argmax(pt, cfg.d)
    lo, lo_idx = minpool_argmin(pt, cfg.d)
    g = (hi - lo).ravel()
    value = float(np.sqrt(np.sum(g * g)))

    w = g / max(value, CR_GRAD_GUARD)
    n = pt.size
    grad_t = np.bincount(hi_idx.ravel(), weights=w, minlength=n) - np.bincount(
        lo_idx.ravel(), weights=w, minlength=n
    )
    grad = np.zeros_like(p)
    grad[cfg.cr_class] = grad_t.reshape(pt.shape)
    return value, grad


def softmax_backward(p: np.ndarray, grad_p: np.ndarray) -> np.ndarray:
    """Pull a probability-space gradient back through the softmax."""
    return p * (grad_p - np.sum(p * grad_p, axis=0, keepdims=True))


def total_loss(logits: np.ndarray, labels, cfg: LossConfig) -> tuple[LossReport, np.ndarray]:
    """Dice + CE + alpha * CR, with the gradient w.r.t. the logits."""
    z = np.asarray(logits, dtype=np.float64)
    labels = _labels(labels)
    _check_fields(z, labels)
    if z.shape[0] != cfg.num_classes:
        raise ValueError(
            f"logits have {z.shape[0]} classes, config expects {cfg.num_classes}"
        )
    p = softmax(z)
    dice, g_dice = dice_loss(p, labels, cfg)
    ce, g_ce = cross_entropy_loss(z, labels, p)
    cr, g_cr = cr_loss(p, cfg)

    grad_p = g_dice + cfg.alpha * g_cr if cfg.alpha else g_dice
    grad = softmax_backward(p, grad_p) + g_ce
    report = LossReport(
        dice=dice, ce=ce, cr=cr, alpha=float(cfg.alpha), total=dice + ce + cfg.alpha * cr
    )
    return report, grad


def _scalar(result) -> float:
    value = result[0] if isinstance(result, tuple) else result
    return float(getattr(value, "total", value))


@dataclass(frozen=True)
class GradCheckResult:
    max_rel_error: float
    checked: int
    skipped: int


def _window_selection(z: np.ndarray, cfg: LossConfig) -> tuple[np.ndarray, np.ndarray]:
    pt = softmax(z)[cfg.cr_class]
    return maxpool_argmax(pt, cfg.d)[1], minpool_argmin(pt, cfg.d)[1]


def gradient_check(
    loss_fn: Callable,
    logits: np.ndarray,
    labels,
    cfg: LossConfig,
    h: float = 1e-3,
    n_samples: int = 200,
    rng=None,
    floor: float = 1e-8,
) -> GradCheckResult:
    """Compare ``loss_fn``'s gradient with central differences.

    ``loss_fn(logits, labels, cfg)`` returns ``(value_or_report, grad)``.
    Relative error is ``|a - n| / max(|a|, |n|, floor)``.

    When ``cfg.alpha > 0`` the CR term is only piecewise smooth: a stencil
    ``x +- h`` that changes which voxel is a window's max or min straddles
    a kink, where no derivative exists.  Such coordinates are skipped and
    replaced by further samples until ``n_samples`` smooth ones are checked
    or the coordinates run out.
    """
    rng = np.random.default_rng(rng)
    z = np.array(logits, dtype=np.float64)
    _, grad = loss_fn(z, labels, cfg)
    grad = np.asarray(grad, dtype=np.float64).ravel()
    flat = z.ravel()
    order = rng.permutation(flat.size)
    watch_kinks = cfg.alpha > 0
    if watch_kinks:
        base = _window_selection(z, cfg)

    def smooth_here() -> bool:
        sel = _window_selection(z, cfg)
        return np.array_equal(sel[0], base[0]) and np.array_equal(sel[1], base[1])

    worst = 0.0
    checked = skipped = 0
    for i in order:
        if checked >= n_samples:
            break
        orig = flat[i]
        flat[i] = orig + h
        smooth = not watch_kinks or smooth_here()
        f_plus = _scalar(loss_fn(z, labels, cfg))
        flat[i] = orig - h
        smooth = smooth and (not watch_kinks or smooth_here())
        f_minus = _scalar(loss_fn(z, labels, cfg))
        flat[i] = orig
        if not smooth:
            skipped += 1
            continue
        numeric = (f_plus - f_minus) / (2.0 * h)
        analytic = grad[i]
        err = abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)
        worst = max(worst, err)
        checked += 1
    return GradCheckResult(worst, checked, skipped)


def finite_diff_check(
    loss_fn: Callable,
    logits: np.ndarray,
    labels,
    cfg: LossConfig,
    h: float = 1e-3,
    n_samples: int = 200,
    rng=None,
) -> float:
    """Worst relative gradient error; see :func:`gradient_check`."""
    return gradient_check(loss_fn, logits, labels, cfg, h, n_samples, rng).max_rel_error
