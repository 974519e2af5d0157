"""Command-line entry point: ``contourreg <subcommand> ...``.

Reports go to stdout, diagnostics to stderr.  Exit codes: 0 success,
1 validation error, 2 I/O error, 3 numeric failure (divergence or a
gradient-check breach).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import bench
from .experiment import OptimizerConfig, PhantomSpec, StudyReport, run_outlier_study
from .losses import LossConfig, gradient_check, total_loss
from .metrics import evaluate
from .morphology import contour
from .volume import (
    LabelVolume,
    ScalarVolume,
    VolumeFormatError,
    load_field,
    load_volume,
    percentile_clip,
    save_volume,
)

log = logging.getLogger("contourreg")

EXIT_OK, EXIT_VALIDATION, EXIT_IO, EXIT_NUMERIC = 0, 1, 2, 3
GRADCHECK_TOLERANCE = 1e-4
DEFAULT_ALPHAS = (0.0, 0.5, 1.0, 2.0, 4.0)


class NumericFailure(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # usage errors are validation failures; argparse's own code 2 means I/O here
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_VALIDATION, f"{self.prog}: error: {message}\n")


@dataclass
class RunConfig:
    """Loss, optimiser and phantom settings shared by all subcommands."""

    loss: LossConfig = field(default_factory=lambda: LossConfig(num_classes=3))
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    phantom: PhantomSpec = field(default_factory=PhantomSpec)

    @classmethod
    def from_json(cls, path) -> "RunConfig":
        data = json.loads(Path(path).read_text())
        unknown = set(data) - {"loss", "optimizer", "phantom"}
        if unknown:
            raise ValueError(f"unknown config sections: {sorted(unknown)}")
        base = cls()
        return cls(
            loss=_merge(base.loss, data.get("loss", {})),
            optimizer=_merge(base.optimizer, data.get("optimizer", {})),
            phantom=_merge(base.phantom, data.get("phantom", {})),
        )

    def to_dict(self) -> dict:
        return {"loss": asdict(self.loss), "optimizer": asdict(self.optimizer), "phantom": asdict(self.phantom)}


def _merge(obj, overrides: dict):
    names = {f.name for f in fields(obj)}
    unknown = set(overrides) - names
    if unknown:
        raise ValueError(f"unknown {type(obj).__name__} keys: {sorted(unknown)}")
    cleaned = {k: tuple(v) if isinstance(v, list) else v for k, v in overrides.items()}
    return replace(obj, **cleaned)


def _load_config(args) -> RunConfig:
    cfg = RunConfig.from_json(args.config) if getattr(args, "config", None) else RunConfig()
    loss_overrides = {
        k: v
        for k, v in {
            "alpha": getattr(args, "alpha", None),
            "d": getattr(args, "d", None),
            "cr_class": getattr(args, "cr_class", None),
            "dice_eps": getattr(args, "dice_eps", None),
        }.items()
        if v is not None
    }
    opt_overrides = {
        k: v
        for k, v in {
            "learning_rate": getattr(args, "lr", None),
            "iterations": getattr(args, "iterations", None),
        }.items()
        if v is not None
    }
    return RunConfig(
        loss=_merge(cfg.loss, loss_overrides),
        optimizer=_merge(cfg.optimizer, opt_overrides),
        phantom=cfg.phantom,
    )


def _dims(text: str) -> tuple[int, int, int]:
    parts = text.lower().replace(",", "x").split("x")
    if len(parts) == 1:
        parts = parts * 3
    try:
        dims = tuple(int(p) for p in parts)
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad dims {text!r}; use N or NXxNYxNZ") from None
    if len(dims) != 3 or min(dims) < 1:
        raise argparse.ArgumentTypeError(f"bad dims {text!r}; use N or NXxNYxNZ")
    return dims


def _float_list(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v.strip()]


def _int_list(text: str) -> list[int]:
    return [int(v) for v in text.split(",") if v.strip()]


def cmd_clip(args) -> int:
    vol = load_volume(args.input)
    if not isinstance(vol, ScalarVolume):
        raise ValueError(f"{args.input} holds labels, clip needs a scalar volume")
    save_volume(percentile_clip(vol, args.lo, args.hi, args.method), args.output)
    return EXIT_OK


def cmd_contour(args) -> int:
    vol = load_volume(args.input)
    if not isinstance(vol, ScalarVolume):
        raise ValueError(f"{args.input} holds labels, contour needs a scalar volume")
    out = contour(vol.data.astype(np.float64), args.d)
    save_volume(ScalarVolume(vol.geometry, out), args.output)
    return EXIT_OK


def cmd_loss(args) -> int:
    logits, geometry = load_field(args.logits)
    labels = load_volume(args.labels, num_classes=logits.shape[0])
    if not isinstance(labels, LabelVolume):
        raise ValueError(f"{args.labels} does not hold labels")
    if labels.geometry.dims != geometry.dims:
        raise ValueError(f"geometry mismatch: logits {geometry.dims} vs labels {labels.geometry.dims}")
    loss = _load_config(args).loss
    channels = logits.shape[0]
    cr_class = loss.cr_class if args.cr_class is not None else min(loss.cr_class, channels - 1)
    cfg = replace(loss, num_classes=channels, cr_class=cr_class)
    report, _ = total_loss(logits, labels, cfg)
    print(report.to_json())
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    cfg = LossConfig(
        alpha=args.alpha, d=args.d, cr_class=min(args.cr_class, args.classes - 1), num_classes=args.classes
    )
    rng = np.random.default_rng(args.seed)
    nx, ny, nz = args.dims
    logits = rng.normal(0.0, 2.0, size=(args.classes, nz, ny, nx))
    labels = rng.integers(0, args.classes, size=(nz, ny, nx))

    loss_fn = total_loss
    if args.corrupt_gradient:
        factor = 1.0 + args.corrupt_gradient

        def loss_fn(z, y, c):
            report, grad = total_loss(z, y, c)
            return report, grad * factor

    result = gradient_check(loss_fn, logits, labels, cfg, h=args.h, n_samples=args.samples, rng=args.seed)
    print(
        json.dumps(
            {
                "max_rel_error": result.max_rel_error,
                "checked": result.checked,
                "skipped_kinks": result.skipped,
                "tolerance": GRADCHECK_TOLERANCE,
            }
        )
    )
    if not result.max_rel_error < GRADCHECK_TOLERANCE:
        raise NumericFailure(
            f"gradient check failed: max relative error {result.max_rel_error:.3e}"
        )
    return EXIT_OK


def cmd_metrics(args) -> int:
    pred = load_volume(args.pred, num_classes=args.num_classes)
    gt = load_volume(args.gt, num_classes=args.num_classes)
    if not (isinstance(pred, LabelVolume) and isinstance(gt, LabelVolume)):
        raise ValueError("metrics needs two label volumes")
    report = evaluate(pred, gt, args.classes)
    if args.format in ("json", "both"):
        print(report.to_json())
    if args.format in ("text", "both"):
        print(report.to_text())
    return EXIT_OK


def cmd_bench(args) -> int:
    rows = bench.benchmark_maxpool(args.dims, args.d_list, args.reps)
    sys.stdout.write(bench.rows_to_csv(rows))
    return EXIT_OK


def cmd_study(args) -> int:
    cfg = _load_config(args)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    combined = StudyReport()
    for seed in args.seeds:
        spec = replace(cfg.phantom, rng_seed=seed)
        report = run_outlier_study(spec, args.alphas, cfg.loss, cfg.optimizer)
        (out_dir / f"study_seed{seed}.json").write_text(report.to_json())
        (out_dir / f"study_seed{seed}.txt").write_text(report.to_text())
        combined.rows.extend(report.rows)
    (out_dir / "study.json").write_text(combined.to_json())
    summary = combined.to_text()
    (out_dir / "summary.txt").write_text(summary)
    (out_dir / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2) + "\n")
    sys.stdout.write(summary)
    return EXIT_OK


def _add_loss_flags(p, with_config=True):
    if with_config:
        p.add_argument("--config", help="JSON config with loss/optimizer/phantom sections")
    p.add_argument("--alpha", type=float, help="CR weight (default 1.0)")
    p.add_argument("--d", type=int, help="CR window radius (default 1)")
    p.add_argument("--cr-class", type=int, help="class the CR term acts on (default 2, tumour)")
    p.add_argument("--dice-eps", type=float, help="Dice smoothing (default 1e-5)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="contourreg", description="Contour-regularised segmentation loss toolkit.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    fmt = argparse.ArgumentDefaultsHelpFormatter

    p = sub.add_parser("clip", help="clip intensities to a percentile band", formatter_class=fmt)
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--lo", type=float, default=0.5, help="lower percentile")
    p.add_argument("--hi", type=float, default=99.5, help="upper percentile")
    p.add_argument("--method", choices=("outward", "linear"), default="outward",
                   help="percentile convention")
    p.set_defaults(func=cmd_clip)

    p = sub.add_parser("contour", help="windowed max minus min of a scalar volume", formatter_class=fmt)
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--d", type=int, default=1, help="window radius")
    p.set_defaults(func=cmd_contour)

    p = sub.add_parser("loss", help="evaluate dice + ce + alpha * cr", formatter_class=fmt)
    p.add_argument("logits", help="multi-channel f32 field (header has 'channels')")
    p.add_argument("labels", help="u8 label volume")
    _add_loss_flags(p)
    p.set_defaults(func=cmd_loss)

    p = sub.add_parser("gradcheck", help="finite-difference check of the loss gradient",
                       formatter_class=fmt)
    p.add_argument("--dims", type=_dims, default=(6, 6, 6), help="NX x NY x NZ")
    p.add_argument("--classes", type=int, default=3)
    p.add_argument("--d", type=int, default=1)
    p.add_argument("--alpha", type=float, default=1.0)
    p.add_argument("--cr-class", type=int, default=2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--h", type=float, default=1e-3, help="central-difference step")
    p.add_argument("--samples", type=int, default=200, help="coordinates checked")
    p.add_argument("--corrupt-gradient", type=float, default=0.0, help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("metrics", help="per-class DSC / HD / AVD / components", formatter_class=fmt)
    p.add_argument("pred")
    p.add_argument("gt")
    p.add_argument("--classes", type=_int_list, default=None,
                   help="comma-separated class ids (default: all foreground classes)")
    p.add_argument("--num-classes", type=int, default=5)
    p.add_argument("--format", choices=("json", "text", "both"), default="both")
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("bench", help="time naive vs separable max pooling (CSV)", formatter_class=fmt)
    p.add_argument("--dims", type=_dims, default=(64, 64, 64))
    p.add_argument("--d-list", type=_int_list, default=[0, 1, 2, 3])
    p.add_argument("--reps", type=int, default=5)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("study", help="outlier-suppression study on synthetic phantoms",
                       formatter_class=fmt)
    p.add_argument("--config", help="JSON config with loss/optimizer/phantom sections")
    p.add_argument("--alphas", type=_float_list, default=list(DEFAULT_ALPHAS),
                   help="comma-separated CR weights, must include 0")
    p.add_argument("--seeds", type=_int_list, default=list(range(10)))
    p.add_argument("--out-dir", default="study_out")
    p.add_argument("--lr", type=float, help=f"learning rate (default {OptimizerConfig.learning_rate})")
    p.add_argument("--iterations", type=int, help=f"GD steps (default {OptimizerConfig.iterations})")
    _add_loss_flags(p, with_config=False)
    p.set_defaults(func=cmd_study)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command == "clip" and not args.lo < args.hi:
            parser.error(f"--lo ({args.lo}) must be below --hi ({args.hi})")
    except SystemExit as exc:
        return exc.code
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return args.func(args)
    except NumericFailure as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except FloatingPointError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (FileNotFoundError, IsADirectoryError, PermissionError) as exc:
        print(f"error: {exc.strerror or exc}: {exc.filename}", file=sys.stderr)
        return EXIT_IO
    except VolumeFormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ValueError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
