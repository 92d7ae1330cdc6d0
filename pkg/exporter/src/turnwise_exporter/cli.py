"""Command-line entry point: plan + videos -> STVE store.

Exit codes: 0 on success (including partial success with a sidecar error
report), 1 on usage errors, 2 when the encoder cannot load or every video
fails.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .encoders import EncoderLoadFailure
from .export import ExportJob, export


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="turnwise-export", description=__doc__.splitlines()[0])
    parser.add_argument("--plan", required=True, help="sample plan JSONL")
    parser.add_argument("--video-root", required=True, help="directory holding <video_id>.<ext>")
    parser.add_argument("--out", required=True, help="output STVE store path")
    parser.add_argument("--encoder", default="tiny:0:64", help="tiny[:seed[:dim]] or clip:<model-id>")
    parser.add_argument("--batch-size", type=int, default=16)
    parser.add_argument("--device", default="cpu")
    args = parser.parse_args(argv)

    job = ExportJob(
        plan_path=Path(args.plan),
        video_root=Path(args.video_root),
        out_path=Path(args.out),
        encoder=args.encoder,
        batch_size=args.batch_size,
        device=args.device,
    )
    try:
        report = export(job)
    except EncoderLoadFailure as exc:
        print(f"encoder error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(json.dumps(report.to_json_dict(), sort_keys=True))
    if report.videos_failed and not report.videos_ok:
        print("error: every video failed to decode", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
