"""CLI for the offline extractor."""
from __future__ import annotations

import argparse
import logging
import sys

from .dataset import DatasetError
from .extract import ExtractError, ExtractJob, extract


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="trmqe-extract",
        description="Extract frozen per-token encoder hidden states into a TRMQEMB1 file.",
    )
    parser.add_argument("--dataset", required=True, help="TSV or JSONL dataset file")
    parser.add_argument("--encoder", required=True, help="model id or local checkpoint directory")
    parser.add_argument("--layer", type=int, default=-1, help="hidden-state layer index (default: last)")
    parser.add_argument("--max-tokens", type=int, default=128, help="per-side token cap")
    parser.add_argument("--batch-size", type=int, default=16)
    parser.add_argument("--device", default="cpu")
    parser.add_argument("--score-kind", choices=("z", "raw"), default="z")
    parser.add_argument("--out", required=True, help="output .temb path")
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level="INFO", format="%(levelname)s %(message)s")
    args = build_parser().parse_args(argv)
    job = ExtractJob(
        dataset=args.dataset,
        encoder_id=args.encoder,
        out=args.out,
        layer=args.layer,
        max_tokens=args.max_tokens,
        batch_size=args.batch_size,
        device=args.device,
        score_kind=args.score_kind,
    )
    try:
        n = extract(job)
    except (ExtractError, DatasetError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"wrote {n} examples to {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
