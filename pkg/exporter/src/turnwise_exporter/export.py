"""Consume a sample plan, embed the referenced frames and turn transcripts
with a frozen encoder, and write an STVE store.

This module speaks the toolkit's external interfaces directly — the plan
JSONL on the way in, the STVE byte format and its key schema on the way out
— so the resulting store drops straight into evaluation with no
translation. Videos that fail to decode are skipped and recorded in a
sidecar error report; the run only fails outright when every video fails.

STVE layout (little-endian throughout)::

    "STVE" | version u16 = 1 | flags u16 = 0 | dim u32 | count u64
    records sorted by key:
        key length u16 | key UTF-8 | modality u8 (0 vision, 1 text) | dim x f32
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .decode import DecodeFailure, find_video, frames_at
from .encoders import FrameTextEncoder, load_encoder

FALLBACK_TURN = -1

_HEADER = struct.Struct("<4sHHIQ")
_KEYLEN = struct.Struct("<H")

MODALITY_VISION = 0
MODALITY_TEXT = 1


@dataclass(frozen=True)
class PlannedFrame:
    turn_index: int
    within_turn_index: int
    timestamp: float
    transcript: str


@dataclass(frozen=True)
class VideoPlan:
    video_id: str
    frames: tuple[PlannedFrame, ...]
    used_fallback: bool


@dataclass
class ExportJob:
    plan_path: Path
    video_root: Path
    out_path: Path
    encoder: str = "tiny:0:64"
    batch_size: int = 16
    device: str = "cpu"


@dataclass
class ExportReport:
    dim: int
    videos_ok: list[str] = field(default_factory=list)
    videos_failed: dict[str, str] = field(default_factory=dict)
    vision_records: int = 0
    text_records: int = 0

    def to_json_dict(self) -> dict:
        return {
            "dim": self.dim,
            "videos_ok": self.videos_ok,
            "videos_failed": self.videos_failed,
            "vision_records": self.vision_records,
            "text_records": self.text_records,
        }


def read_plan_jsonl(text: str) -> dict[str, VideoPlan]:
    plans: dict[str, VideoPlan] = {}
    for line in text.splitlines():
        if not line.strip():
            continue
        obj = json.loads(line)
        vid = obj["video_id"]
        frames = tuple(
            PlannedFrame(f["k"], f["t"], f["timestamp"], f["transcript"]) for f in obj["frames"]
        )
        plans[vid] = VideoPlan(vid, frames, obj["used_fallback"])
    return plans


def timestamp_ms(timestamp: float) -> int:
    return int(round(timestamp * 1000))


def frame_key(video_id: str, timestamp: float) -> str:
    return f"{video_id}:frame:{timestamp_ms(timestamp)}"


def text_key(video_id: str, frame: PlannedFrame) -> str:
    if frame.turn_index == FALLBACK_TURN:
        return f"{video_id}:text:fb={timestamp_ms(frame.timestamp)}"
    return f"{video_id}:text:k={frame.turn_index}"


def write_stve(path: Path, dim: int, records: dict[str, tuple[int, np.ndarray]]) -> int:
    """records maps key -> (modality code, float32 vector)."""
    with open(path, "wb") as sink:
        written = sink.write(_HEADER.pack(b"STVE", 1, 0, dim, len(records)))
        for key in sorted(records):
            modality, values = records[key]
            assert values.shape == (dim,)
            key_bytes = key.encode("utf-8")
            written += sink.write(_KEYLEN.pack(len(key_bytes)))
            written += sink.write(key_bytes)
            written += sink.write(struct.pack("<B", modality))
            written += sink.write(values.astype("<f4", copy=False).tobytes())
    return written


def export(job: ExportJob) -> ExportReport:
    encoder: FrameTextEncoder = load_encoder(job.encoder, device=job.device)
    plans = read_plan_jsonl(Path(job.plan_path).read_text(encoding="utf-8"))
    report = ExportReport(dim=encoder.dim)
    records: dict[str, tuple[int, np.ndarray]] = {}

    for vid in sorted(plans):
        plan = plans[vid]
        try:
            video_path = find_video(Path(job.video_root), vid)
            frames = frames_at(video_path, [f.timestamp for f in plan.frames])
        except DecodeFailure as exc:
            report.videos_failed[vid] = str(exc)
            continue

        for start in range(0, len(frames), job.batch_size):
            batch = frames[start : start + job.batch_size]
            vectors = encoder.encode_images(batch)
            for offset, vector in enumerate(vectors):
                key = frame_key(vid, plan.frames[start + offset].timestamp)
                if key not in records:
                    records[key] = (MODALITY_VISION, vector)
                    report.vision_records += 1

        text_by_key: dict[str, str] = {}
        for frame in plan.frames:
            text_by_key.setdefault(text_key(vid, frame), frame.transcript)
        keys = sorted(text_by_key)
        for start in range(0, len(keys), job.batch_size):
            batch_keys = keys[start : start + job.batch_size]
            vectors = encoder.encode_texts([text_by_key[k] for k in batch_keys])
            for key, vector in zip(batch_keys, vectors):
                if key not in records:
                    records[key] = (MODALITY_TEXT, vector)
                    report.text_records += 1

        report.videos_ok.append(vid)

    out_path = Path(job.out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    write_stve(out_path, encoder.dim, records)
    if report.videos_failed:
        sidecar = Path(str(out_path) + ".errors.json")
        sidecar.write_text(
            json.dumps(report.videos_failed, indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )
    return report
