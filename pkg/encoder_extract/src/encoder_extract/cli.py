"""Command line entry points for extraction and the embed service."""
from __future__ import annotations

import argparse
import logging
import sys

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_RUNTIME = 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> _Parser:
    parser = _Parser(prog="encoder-extract")
    sub = parser.add_subparsers(dest="command", required=True)

    ext = sub.add_parser("extract",
                         help="run an encoder over an RSD file")
    ext.add_argument("--rsd", required=True)
    ext.add_argument("--modality", required=True, choices=("text", "image"))
    ext.add_argument("--encoder", required=True,
                     help="model name or local checkpoint directory")
    ext.add_argument("-o", "--out", required=True)
    ext.add_argument("--batch-size", type=int, default=16)
    ext.add_argument("--device", default="cpu")

    srv = sub.add_parser("serve", help="serve the embed HTTP contract")
    srv.add_argument("--encoder", required=True)
    srv.add_argument("--modality", required=True, choices=("text", "image"))
    srv.add_argument("--host", default="127.0.0.1")
    srv.add_argument("--port", type=int, default=8200)
    srv.add_argument("--device", default="cpu")

    tiny = sub.add_parser("make-tiny",
                          help="write a small random checkpoint for offline use")
    tiny.add_argument("--modality", required=True, choices=("text", "image"))
    tiny.add_argument("-o", "--out", required=True)
    tiny.add_argument("--seed", type=int, default=0)
    tiny.add_argument("--dim", type=int, default=32)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    try:
        args = build_parser().parse_args(argv)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    try:
        if args.command == "extract":
            from .extract import ExtractJob, extract
            result = extract(ExtractJob(
                rsd_path=args.rsd, modality=args.modality,
                encoder_id=args.encoder, output_path=args.out,
                batch_size=args.batch_size, device=args.device))
            print(f"written {result.n_written} skipped {result.n_skipped} "
                  f"dim {result.dim}")
            return EXIT_OK
        if args.command == "serve":
            from .service import serve_embed
            serve_embed(args.encoder, args.modality, args.port,
                        host=args.host, device=args.device)
            return EXIT_OK
        if args.command == "make-tiny":
            from .tinymodels import (
                make_tiny_image_encoder,
                make_tiny_text_encoder,
            )
            maker = (make_tiny_text_encoder if args.modality == "text"
                     else make_tiny_image_encoder)
            print(maker(args.out, seed=args.seed, dim=args.dim))
            return EXIT_OK
        raise AssertionError(args.command)
    except (ValueError, FileNotFoundError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA
    except Exception as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RUNTIME


def entry():
    raise SystemExit(main())


if __name__ == "__main__":
    entry()
