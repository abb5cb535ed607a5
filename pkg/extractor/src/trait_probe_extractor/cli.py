"""trait-probe-extract: dump Wav2Vec2 layer-wise features to an .fmx store."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .extract import (
    MODEL_CHECKPOINTS,
    AudioDecodeError,
    ExtractionJob,
    ModelLoadError,
    extract,
)

log = logging.getLogger("trait_probe_extractor")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="trait-probe-extract",
        description="Dump per-layer Wav2Vec2 hidden states into .fmx files",
    )
    parser.add_argument("--manifest", required=True, help="trait-probe manifest file")
    parser.add_argument(
        "--model", required=True, choices=sorted(MODEL_CHECKPOINTS),
        help="Wav2Vec2 variant",
    )
    parser.add_argument("--out", required=True, help="output feature directory")
    parser.add_argument("--batch", type=int, default=1, help="chunk batch size")
    parser.add_argument("--device", default="cpu", help="torch device")
    parser.add_argument("--quiet", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        stream=sys.stderr,
        level=logging.WARNING if args.quiet else logging.INFO,
        format="%(levelname)s %(message)s",
    )
    job = ExtractionJob(
        manifest_path=Path(args.manifest),
        model_id=args.model,
        out_dir=Path(args.out),
        device=args.device,
        batch_size=args.batch,
    )
    try:
        result = extract(job)
    except (ModelLoadError, AudioDecodeError, ValueError, OSError) as exc:
        log.error("%s", exc)
        return 1
    log.info(
        "wrote %d files for %d utterances (%d skipped)",
        result.files_written, result.utterances_done, len(result.skipped),
    )
    return 0


if __name__ == "__main__":
    sys.exit(main())
