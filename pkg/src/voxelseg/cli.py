"""Command-line front end for the volumetric segmentation pipeline.

Every subcommand reads the same JSON config (--config) with flag
overrides, touches only its declared inputs and outputs, and exits with a
code that identifies the error class (see --help).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import config as config_mod
from . import errors as errors_mod
from . import losses, normalize, orientation
from .config import PipelineConfig
from .errors import ConfigInvalid, VoxelsegError
from .inference import predict_volume, thread_cap, threshold_mask
from .nifti import DTYPE_NAMES, read_header, read_nifti, write_nifti
from .patches import sample_training_patches
from .phantom import generate
from .rng import RngStream
from .training import train
from .vnet import build, load as load_model, save as save_model
from .volume import Volume

_EXIT_CODES = {
    name: cls.exit_code
    for name, cls in vars(errors_mod).items()
    if isinstance(cls, type) and issubclass(cls, VoxelsegError) and cls is not VoxelsegError
}
_EXIT_CODES["FileNotFound"] = 3

_EPILOG = "exit codes:\n  0 success\n  1 unexpected error\n" + "\n".join(
    f"  {code} {name}" for name, code in sorted(_EXIT_CODES.items(), key=lambda kv: kv[1])
)


def _read_volume(path: str) -> Volume:
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"input file {path} does not exist")
    return read_nifti(p.read_bytes())


def _write_volume(path: str, v: Volume, datatype_code: int):
    out = Path(path)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_bytes(write_nifti(v, datatype_code))


def _load_config(args) -> PipelineConfig:
    cfg = config_mod.load(args.config) if args.config else PipelineConfig()
    return _apply_overrides(cfg, args)


def _apply_overrides(cfg: PipelineConfig, args) -> PipelineConfig:
    """Command-line flags win over the config file."""
    from dataclasses import replace

    patch = cfg.patch
    if getattr(args, "patch_size", None):
        patch = replace(patch, size=_parse_triple(args.patch_size, "--patch-size"))
    overlap = cfg.overlap
    if getattr(args, "overlap", None):
        overlap = _parse_triple(args.overlap, "--overlap")
    window = getattr(args, "window", None) or cfg.window
    train_cfg = replace(cfg.train, patch=patch)
    if getattr(args, "seed", None) is not None:
        train_cfg = replace(train_cfg, seed=args.seed)
    if getattr(args, "loss", None):
        train_cfg = replace(train_cfg, loss=args.loss)
    if getattr(args, "alpha", None) is not None:
        train_cfg = replace(
            train_cfg,
            tversky=losses.TverskyParams.from_alpha(args.alpha, epsilon=cfg.train.tversky.epsilon),
        )
    phantom_cfg = cfg.phantom
    if getattr(args, "seed", None) is not None:
        phantom_cfg = replace(phantom_cfg, seed=args.seed)
    return PipelineConfig(
        normalization=cfg.normalization,
        patch=patch,
        overlap=overlap,
        window=window,
        model=cfg.model,
        train=train_cfg,
        phantom=phantom_cfg,
        io=cfg.io,
    )


def _parse_triple(text: str, flag: str) -> tuple[int, int, int]:
    parts = text.split(",")
    if len(parts) != 3:
        raise ConfigInvalid(f"{flag} expects d,h,w (three integers), got {text!r}")
    try:
        return tuple(int(p) for p in parts)
    except ValueError as exc:
        raise ConfigInvalid(f"{flag} expects integers, got {text!r}") from exc


def _cmd_info(args) -> int:
    p = Path(args.image)
    if not p.exists():
        raise FileNotFoundError(f"input file {args.image} does not exist")
    data = p.read_bytes()
    header = read_header(data)
    v = read_nifti(data)
    print(f"extents={v.extents[0]},{v.extents[1]},{v.extents[2]}")
    print(f"spacing={v.spacing[0]:.6f},{v.spacing[1]:.6f},{v.spacing[2]:.6f}")
    print(f"orientation={v.orientation}")
    print(f"datatype={DTYPE_NAMES[header.datatype_code]}")
    return 0


def _cmd_phantom(args) -> int:
    cfg = _load_config(args)
    image, mask = generate(cfg.phantom)
    _write_volume(args.out_image, image, 16)
    _write_volume(args.out_mask, mask, 2)
    print(f"wrote {args.out_image} and {args.out_mask} (seed {cfg.phantom.seed})")
    return 0


def _cmd_reorient(args) -> int:
    v = _read_volume(args.image)
    out = orientation.reorient(v, args.target)
    _write_volume(args.out, out, 16)
    print(f"{v.orientation} -> {out.orientation}")
    return 0


def _cmd_normalize(args) -> int:
    cfg = _load_config(args)
    v = _read_volume(args.image)
    if args.kind == "label":
        out = normalize.normalize_label(v)
        _write_volume(args.out, out, 2)
    else:
        spec = cfg.normalization
        out = normalize.zscore(v) if spec.mode == normalize.ZSCORE else normalize.clip_rescale(v, spec)
        _write_volume(args.out, out, 16)
    print(f"wrote {args.out}")
    return 0


def _cmd_sample_patches(args) -> int:
    cfg = _load_config(args)
    image = _read_volume(args.image)
    label = normalize.normalize_label(_read_volume(args.label))
    rng = RngStream(cfg.train.seed)
    triples = sample_training_patches(image, label, cfg.patch, args.count, rng)

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = []
    for i, (img, lab, center) in enumerate(triples):
        img_path = out_dir / f"patch_{i:04d}_image.nii"
        lab_path = out_dir / f"patch_{i:04d}_label.nii"
        affine = np.eye(4)
        _write_volume(str(img_path), Volume(img, affine, "RAS"), 16)
        _write_volume(str(lab_path), Volume(lab, affine, "RAS"), 2)
        manifest.append(
            {
                "image": img_path.name,
                "label": lab_path.name,
                "source_image": args.image,
                "source_label": args.label,
                "center": list(center),
                "seed": cfg.train.seed,
            }
        )
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2))
    print(f"wrote {len(triples)} patch pairs to {out_dir}")
    return 0


def _prepare_pair(image_path: str, label_path: str, cfg: PipelineConfig) -> tuple[Volume, Volume]:
    image = orientation.reorient(_read_volume(image_path))
    label = orientation.reorient(_read_volume(label_path))
    spec = cfg.normalization
    image = normalize.zscore(image) if spec.mode == normalize.ZSCORE else normalize.clip_rescale(image, spec)
    label = normalize.normalize_label(label)
    return image, label


def _cmd_train(args) -> int:
    cfg = _load_config(args)
    train_pairs = [
        _prepare_pair(img, lab, cfg) for img, lab in zip(cfg.io.train_images, cfg.io.train_labels)
    ]
    heldout_pairs = [
        _prepare_pair(img, lab, cfg) for img, lab in zip(cfg.io.heldout_images, cfg.io.heldout_labels)
    ]
    init_rng = RngStream(cfg.train.seed).split(2)[0]
    model = build(cfg.model, init_rng)
    model, log = train(train_pairs, heldout_pairs, model, cfg.train, threads=thread_cap())

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_bytes(save_model(model))
    if args.log:
        Path(args.log).write_text("\n".join(log) + "\n")
    for line in log:
        if line.startswith("eval"):
            print(line)
    print(f"wrote {args.out}")
    return 0


def _cmd_predict(args) -> int:
    cfg = _load_config(args)
    model_path = Path(args.model)
    if not model_path.exists():
        raise FileNotFoundError(f"model file {args.model} does not exist")
    model = load_model(model_path.read_bytes())
    # same preprocessing as the training data loader; idempotent on
    # already-normalized inputs
    image = orientation.reorient(_read_volume(args.image))
    spec = cfg.normalization
    image = normalize.zscore(image) if spec.mode == normalize.ZSCORE else normalize.clip_rescale(image, spec)

    prob = predict_volume(
        model,
        image.data,
        cfg.patch.size,
        overlap=cfg.overlap,
        window=cfg.window,
        threads=thread_cap(),
    )
    _write_volume(args.out, image.with_data(prob), 16)
    mask_path = args.out_mask or str(Path(args.out).with_suffix("")) + "_mask.nii"
    _write_volume(mask_path, image.with_data(threshold_mask(prob)), 2)
    print(f"wrote {args.out} and {mask_path}")
    return 0


def _cmd_evaluate(args) -> int:
    pred = normalize.normalize_label(_read_volume(args.pred))
    truth = normalize.normalize_label(_read_volume(args.truth))
    c = losses.counts(pred.data, truth.data)
    params = losses.TverskyParams.from_alpha(args.alpha if args.alpha is not None else 0.5)
    print(f"jaccard={losses.jaccard(c):.6f}")
    print(f"dice={losses.dice(c):.6f}")
    print(f"tversky={losses.tversky(c, params):.6f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="voxelseg",
        description="Volumetric segmentation pipeline: phantoms, preprocessing, training, tiled prediction.",
        epilog=_EPILOG,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, seed=True):
        p.add_argument("--config", help="JSON pipeline config", default=None)
        if seed:
            p.add_argument("--seed", type=int, default=None, help="override the config seed")

    p = sub.add_parser("info", help="print extents/spacing/orientation/datatype of a NIfTI file")
    p.add_argument("image")
    p.set_defaults(fn=_cmd_info)

    p = sub.add_parser("phantom", help="generate a synthetic image/mask pair")
    common(p)
    p.add_argument("--out-image", required=True)
    p.add_argument("--out-mask", required=True)
    p.set_defaults(fn=_cmd_phantom)

    p = sub.add_parser("reorient", help="reorient a volume to a target orientation code")
    p.add_argument("image")
    p.add_argument("--target", default="RAS")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_reorient)

    p = sub.add_parser("normalize", help="normalize intensities (or binarize a label)")
    common(p, seed=False)
    p.add_argument("image")
    p.add_argument("--kind", choices=["image", "label"], default="image")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_normalize)

    p = sub.add_parser("sample-patches", help="write class-balanced training patches plus a manifest")
    common(p)
    p.add_argument("--image", required=True)
    p.add_argument("--label", required=True)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--patch-size", help="d,h,w")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(fn=_cmd_sample_patches)

    p = sub.add_parser("train", help="train on the volumes listed in the config io section")
    common(p)
    p.add_argument("--patch-size", help="d,h,w")
    p.add_argument("--loss", choices=list(losses.LOSS_KINDS))
    p.add_argument("--alpha", type=float, help="tversky false-positive weight (beta = 1 - alpha)")
    p.add_argument("--out", required=True, help="checkpoint output path")
    p.add_argument("--log", help="metric log output path")
    p.set_defaults(fn=_cmd_train)

    p = sub.add_parser("predict", help="tile, forward, stitch; writes probabilities and a 0.5-threshold mask")
    common(p, seed=False)
    p.add_argument("--model", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--patch-size", help="d,h,w")
    p.add_argument("--overlap", help="d,h,w")
    p.add_argument("--window", choices=["uniform", "hann"])
    p.add_argument("--out", required=True, help="probability volume output path")
    p.add_argument("--out-mask", help="binary mask output path (default: <out>_mask.nii)")
    p.set_defaults(fn=_cmd_predict)

    p = sub.add_parser("evaluate", help="print jaccard/dice/tversky between two masks")
    p.add_argument("--pred", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--alpha", type=float, default=None)
    p.set_defaults(fn=_cmd_evaluate)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except FileNotFoundError as exc:
        print(f"FileNotFound: {exc}", file=sys.stderr)
        return _EXIT_CODES["FileNotFound"]
    except VoxelsegError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    except Exception as exc:  # pragma: no cover - defensive
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
