"""Frame extraction at plan timestamps via OpenCV."""

from __future__ import annotations

from pathlib import Path

import cv2
import numpy as np

VIDEO_EXTENSIONS = (".mp4", ".avi", ".mkv", ".mov", ".webm")


class DecodeFailure(Exception):
    pass


def find_video(root: Path, video_id: str) -> Path:
    for ext in VIDEO_EXTENSIONS:
        candidate = root / f"{video_id}{ext}"
        if candidate.exists():
            return candidate
    raise DecodeFailure(f"no video file for {video_id!r} under {root}")


def frames_at(path: Path, timestamps: list[float]) -> list[np.ndarray]:
    """Decode the frame nearest each timestamp (RGB uint8 arrays).

    The nearest frame index is round(t * fps) clamped to the stream, i.e.
    within half a frame period of the request wherever the stream allows.
    """
    capture = cv2.VideoCapture(str(path))
    if not capture.isOpened():
        raise DecodeFailure(f"cannot open {path}")
    try:
        fps = capture.get(cv2.CAP_PROP_FPS)
        frame_count = int(capture.get(cv2.CAP_PROP_FRAME_COUNT))
        if fps <= 0 or frame_count <= 0:
            raise DecodeFailure(f"{path}: no decodable frames (fps={fps}, count={frame_count})")
        frames = []
        for ts in timestamps:
            index = min(max(int(round(ts * fps)), 0), frame_count - 1)
            capture.set(cv2.CAP_PROP_POS_FRAMES, index)
            ok, frame = capture.read()
            if not ok:
                raise DecodeFailure(f"{path}: failed to read frame {index} (t={ts:.3f}s)")
            frames.append(cv2.cvtColor(frame, cv2.COLOR_BGR2RGB))
        return frames
    finally:
        capture.release()
