"""Command line wrapper around run_extraction."""

from __future__ import annotations

import argparse
import json
import sys

from .encoder import encoder_names
from .errors import ExtractorError
from .pipeline import DEFAULT_TEMPLATE, ExtractorConfig, run_extraction
from .words import WORD_SOURCES


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="vlextract",
        description="export an embedding bundle from an image folder",
    )
    ap.add_argument("--images", required=True, help="directory of images")
    ap.add_argument("--out", required=True, help="bundle directory to write")
    ap.add_argument("--concept", required=True,
                    help="what the reference words describe, e.g. color")
    ap.add_argument("--encoder", default="hashvl-small",
                    help=f"one of {encoder_names()}")
    ap.add_argument("--template", default=DEFAULT_TEMPLATE,
                    help="prompt with one '*' where the word goes")
    ap.add_argument("--source", default="static_list", choices=WORD_SOURCES,
                    help="where reference words come from")
    ap.add_argument("--words", default="",
                    help="comma-separated words for static_list, also the "
                         "llm_api fallback")
    ap.add_argument("--wordnet-count", type=int, default=10,
                    help="words to draw for wordnet_random")
    ap.add_argument("--seed", type=int, default=0,
                    help="seed for the wordnet_random draw")
    ap.add_argument("--batch-size", type=int, default=8)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    config = ExtractorConfig(
        images=args.images,
        out=args.out,
        concept=args.concept,
        encoder=args.encoder,
        template=args.template,
        source=args.source,
        words=tuple(w for w in args.words.split(",") if w.strip()),
        wordnet_count=args.wordnet_count,
        seed=args.seed,
        batch_size=args.batch_size,
    )
    try:
        summary = run_extraction(config)
    except ExtractorError as exc:
        print(json.dumps(exc.to_json_dict()), file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - one-line diagnostic, then code 3
        print(
            json.dumps({"error": type(exc).__name__, "message": str(exc)}),
            file=sys.stderr,
        )
        return 3
    print(json.dumps(summary, indent=2, sort_keys=True))
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
