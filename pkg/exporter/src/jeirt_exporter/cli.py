"""Command-line exporter: questions.jsonl -> feature manifest + float32 blob.

Exit codes: 0 success, 2 configuration error, 3 data or environment error.
"""

from __future__ import annotations

import argparse
import json
import sys

from .exporter import ConfigError, EncoderLoadError, ExporterError, export_features


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="jeirt-export",
        description="Run a frozen sentence encoder over a question file and emit jeirt features.",
    )
    parser.add_argument("--questions", required=True, help="questions.jsonl path")
    parser.add_argument(
        "--encoder",
        required=True,
        help="encoder name: st:<model>, hf:<model>, or hash:<dim>",
    )
    parser.add_argument("--out", required=True, help="output prefix (writes <out>.manifest.json and <out>.f32)")
    parser.add_argument("--batch", type=int, default=64, help="inference batch size")
    parser.add_argument("--max-tokens", type=int, default=512, help="truncation length")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        summary = export_features(
            args.questions,
            args.encoder,
            args.out,
            batch_size=args.batch,
            max_tokens=args.max_tokens,
        )
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except EncoderLoadError as exc:
        print(f"environment error: {exc}", file=sys.stderr)
        return 3
    except ExporterError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        name = getattr(exc, "filename", None)
        print(f"data error: {exc}" + (f" ({name})" if name else ""), file=sys.stderr)
        return 3
    print(json.dumps(summary, indent=2, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
