"""Command-line surface: export / serve.

Exit codes: 0 success, 1 usage error, 2 export/data error, 3 model error.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .backends import DEFAULT_CAPTIONER, DEFAULT_DETECTOR, DEFAULT_ENCODER
from .errors import ExporterError, ModelLoadError
from .export import ExportJob, export_corpus
from .server import ServeConfig, serve

_LABELS = {"real": 0, "fake": 1}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="itm-export", description="Produce or serve model artifacts for misalignment detection.")
    commands = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    export = commands.add_parser("export", help="export captions, detections, and embeddings")
    export.add_argument("--in", dest="input_dir", type=Path, required=True, help="image directory (real/ and fake/ subdirs)")
    export.add_argument("--out", type=Path, required=True, help="artifact output directory")
    export.add_argument("--captioner", default=DEFAULT_CAPTIONER)
    export.add_argument("--detector", default=DEFAULT_DETECTOR)
    export.add_argument("--encoder", default=DEFAULT_ENCODER)
    export.add_argument("--device", default="cpu")
    export.add_argument("--batch-size", type=int, default=8)
    export.add_argument("--label", choices=sorted(_LABELS), help="label for images outside real//fake/ subdirs")
    export.add_argument("--strict", action="store_true", help="abort on the first failed image")

    server = commands.add_parser("serve", help="serve the /v1/* model protocol over HTTP")
    server.add_argument("--port", type=int, required=True)
    server.add_argument("--host", default="127.0.0.1")
    server.add_argument("--captioner", default=DEFAULT_CAPTIONER)
    server.add_argument("--detector", default=DEFAULT_DETECTOR)
    server.add_argument("--encoder", default=DEFAULT_ENCODER)
    server.add_argument("--device", default="cpu")
    server.add_argument("--max-workers", type=int, default=8)

    return parser


def _cmd_export(args) -> int:
    job = ExportJob(
        input_dir=args.input_dir,
        manifest_out=args.out / "manifest.jsonl",
        embeddings_out=args.out / "embeddings" / "part",
        captioner_id=args.captioner,
        detector_id=args.detector,
        encoder_id=args.encoder,
        device=args.device,
        batch_size=args.batch_size,
        default_label=None if args.label is None else _LABELS[args.label],
    )
    result = export_corpus(job, strict=args.strict)
    print(
        f"exported {len(result.exported)}, skipped {len(result.skipped)} already done, "
        f"failed {len(result.failures)} -> {result.manifest_path}"
    )
    return 0


def _cmd_serve(args) -> int:
    serve(
        ServeConfig(
            host=args.host,
            port=args.port,
            captioner_id=args.captioner,
            detector_id=args.detector,
            encoder_id=args.encoder,
            device=args.device,
            max_workers=args.max_workers,
        )
    )
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return {"export": _cmd_export, "serve": _cmd_serve}[args.command](args)
    except ModelLoadError as exc:
        print(f"model error: {exc}", file=sys.stderr)
        return 3
    except (ExporterError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
