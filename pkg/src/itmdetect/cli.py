"""Command-line surface: featurize / train / eval / perturb / export-reps.

Exit codes: 0 success, 1 usage error, 2 data error, 3 provider error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

from .errors import DataError, ItmdetectError, ProviderError, SampleError
from .perturb import (
    PerturbationKind,
    PerturbationSpec,
    apply_perturbation,
    decode_image,
    encode_jpeg,
    encode_png,
)
from .pipeline import (
    RunConfig,
    export_representations,
    featurize_corpus,
    run_eval,
    run_training,
    write_representations,
)
from .providers import ProviderKind, make_provider
from .representation import FusionMode

_IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp", ".gif", ".tif", ".tiff", ".webp"}


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on usage errors by default; the CLI contract
    # reserves 2 for data errors and uses 1 for usage.
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="itmdetect", description="Detect fake images via image-text misalignment.")
    parser.add_argument("--config", type=Path, help="JSON run configuration file")
    parser.add_argument("--provider", choices=[k.value for k in ProviderKind], help="provider backend")
    parser.add_argument("--mode", choices=[m.value for m in FusionMode], help="fusion mode")
    parser.add_argument("--seed", type=int, help="seed for training and the synthetic provider")
    parser.add_argument("--strict", action="store_true", help="abort on the first failed sample")
    parser.add_argument("--out", type=Path, default=Path("out"), help="output directory (default: ./out)")
    commands = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    featurize = commands.add_parser("featurize", help="compute misalignment representations")
    featurize.add_argument("--manifest", type=Path, required=True)

    train = commands.add_parser("train", help="featurize and train the classifier head")
    train.add_argument("--manifest", type=Path, required=True)

    evaluate = commands.add_parser("eval", help="score a corpus with a trained model")
    evaluate.add_argument("--manifest", type=Path, required=True)
    evaluate.add_argument("--model", type=Path, required=True)

    perturb = commands.add_parser("perturb", help="apply a robustness perturbation to an image tree")
    perturb.add_argument("--kind", choices=[k.value for k in PerturbationKind], required=True)
    perturb.add_argument("--param", type=float, required=True)
    perturb.add_argument("--in", dest="in_dir", type=Path, required=True)

    export = commands.add_parser("export-reps", help="featurize and export representations as CSV")
    export.add_argument("--manifest", type=Path, required=True)

    return parser


def _load_config(parser: argparse.ArgumentParser, args: argparse.Namespace) -> RunConfig:
    cfg = RunConfig()
    if args.config is not None:
        try:
            cfg = RunConfig.from_dict(json.loads(args.config.read_text(encoding="utf-8")))
        except (OSError, ValueError, TypeError, KeyError) as exc:
            parser.error(f"cannot load config {args.config}: {exc}")
    if args.provider is not None:
        provider = dataclasses.replace(cfg.provider, kind=ProviderKind(args.provider))
        cfg = dataclasses.replace(cfg, provider=provider)
    if args.mode is not None:
        fusion = dataclasses.replace(cfg.fusion, mode=FusionMode(args.mode))
        cfg = dataclasses.replace(cfg, fusion=fusion)
    if args.seed is not None:
        params = dataclasses.replace(cfg.provider.synthetic_params, seed=args.seed)
        cfg = dataclasses.replace(
            cfg,
            provider=dataclasses.replace(cfg.provider, synthetic_params=params),
            train=dataclasses.replace(cfg.train, seed=args.seed),
        )
    return cfg


def _print_failures(failures) -> None:
    for failure in failures:
        print(f"failed: {failure.error}", file=sys.stderr)


def _cmd_featurize(args, cfg: RunConfig) -> int:
    provider = make_provider(cfg.provider)
    result = featurize_corpus(
        args.manifest, provider, cfg, strict=args.strict, augmented_out=args.out / "manifest.augmented.jsonl"
    )
    path = write_representations(result.records, args.out / "representations.item")
    _print_failures(result.failures)
    total = len(result.records) + len(result.failures)
    print(f"featurized {len(result.records)}/{total} samples -> {path}")
    return 0


def _cmd_train(args, cfg: RunConfig) -> int:
    provider = make_provider(cfg.provider)
    artifact = run_training(args.manifest, provider, cfg, args.out, strict=args.strict)
    print(f"model written to {artifact}")
    return 0


def _cmd_eval(args, cfg: RunConfig) -> int:
    provider = make_provider(cfg.provider)
    metrics = run_eval(args.manifest, provider, args.model, cfg, args.out, strict=args.strict)
    print(f"acc={metrics.acc:.4f} ap={metrics.ap:.4f} n_real={metrics.n_real} n_fake={metrics.n_fake}")
    print(f"scores written to {args.out / 'scores.csv'}")
    return 0


def _cmd_export_reps(args, cfg: RunConfig) -> int:
    provider = make_provider(cfg.provider)
    result = featurize_corpus(
        args.manifest, provider, cfg, strict=args.strict, augmented_out=args.out / "manifest.augmented.jsonl"
    )
    path = export_representations(result.records, args.out / "representations.csv")
    _print_failures(result.failures)
    print(f"exported {len(result.records)} representations -> {path}")
    return 0


def _cmd_perturb(args, cfg: RunConfig) -> int:
    kind = PerturbationKind(args.kind)
    spec = PerturbationSpec(kind=kind, param=args.param, seed=args.seed if args.seed is not None else 0)
    in_dir: Path = args.in_dir
    if not in_dir.is_dir():
        raise DataError(f"--in directory not found: {in_dir}")
    files = sorted(p for p in in_dir.rglob("*") if p.is_file() and p.suffix.lower() in _IMAGE_SUFFIXES)
    if not files:
        raise DataError(f"no image files under {in_dir}")
    for src in files:
        image = decode_image(src.read_bytes())
        rel = src.relative_to(in_dir)
        if kind is PerturbationKind.JPEG:
            # One encode at the requested quality IS the perturbation; the
            # written file decodes to exactly the perturbed pixels.
            out_path = (args.out / rel).with_suffix(".jpg")
            payload = encode_jpeg(image, int(args.param))
        else:
            out_path = (args.out / rel).with_suffix(".png")
            payload = encode_png(apply_perturbation(image, spec))
        out_path.parent.mkdir(parents=True, exist_ok=True)
        out_path.write_bytes(payload)
    print(f"perturbed {len(files)} images -> {args.out}")
    return 0


_COMMANDS = {
    "featurize": _cmd_featurize,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "export-reps": _cmd_export_reps,
    "perturb": _cmd_perturb,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        cfg = _load_config(parser, args)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return _COMMANDS[args.command](args, cfg)
    except SampleError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3 if isinstance(exc.cause, ProviderError) else 2
    except ProviderError as exc:
        print(f"provider error: {exc}", file=sys.stderr)
        return 3
    except (DataError, ItmdetectError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
