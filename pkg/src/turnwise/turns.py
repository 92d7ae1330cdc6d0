"""Speaking-turn construction from diarization segments.

Diarization segments are clipped to the video, merged whenever they overlap
or sit closer than ``merge_gap`` seconds (overlapping speakers collapse into
one turn whose speaker set is the union), and each resulting turn is paired
with the transcript text of every cue that positively overlaps it.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass

from .corpus import Cue, DiarSegment, VideoMeta

logger = logging.getLogger(__name__)

DEFAULT_MERGE_GAP = 0.5


@dataclass(frozen=True)
class SpeakingTurn:
    """A maximal interval of continuous speech with its attached transcript."""

    index: int
    start: float
    end: float
    speakers: frozenset[str]
    transcript: str

    @property
    def duration(self) -> float:
        return self.end - self.start


@dataclass(frozen=True)
class TurnSet:
    """All speaking turns of one video, disjoint and sorted by start."""

    video_id: str
    turns: tuple[SpeakingTurn, ...]
    video_duration: float

    def __len__(self) -> int:
        return len(self.turns)


def build_turns(
    segments: list[DiarSegment],
    cues: list[Cue],
    meta: VideoMeta,
    merge_gap: float = DEFAULT_MERGE_GAP,
    warning_sink: list[str] | None = None,
) -> TurnSet:
    """Merge diarization segments into disjoint speaking turns with transcripts.

    Segments are clipped to [0, video duration]; segments entirely outside
    are dropped with a warning. Two segments merge when the gap between them
    is <= merge_gap (overlap counts as gap <= 0). A turn's transcript is the
    space-joined text of all cues with positive temporal overlap, in cue
    start order; a cue straddling a boundary contributes to every turn it
    touches.
    """
    if merge_gap < 0:
        raise ValueError(f"merge_gap must be >= 0, got {merge_gap}")
    duration = meta.duration

    clipped: list[tuple[float, float, str]] = []
    for seg in segments:
        lo = max(0.0, seg.start)
        hi = min(duration, seg.end)
        if hi <= lo:
            _warn(
                warning_sink,
                f"{meta.video_id}: segment {seg.speaker} [{seg.start}, {seg.end}] "
                f"outside [0, {duration}], dropped",
            )
            continue
        clipped.append((lo, hi, seg.speaker))
    clipped.sort(key=lambda item: (item[0], item[1]))

    merged: list[tuple[float, float, set[str]]] = []
    for lo, hi, speaker in clipped:
        if merged and lo - merged[-1][1] <= merge_gap:
            prev_lo, prev_hi, speakers = merged[-1]
            merged[-1] = (prev_lo, max(prev_hi, hi), speakers | {speaker})
        else:
            merged.append((lo, hi, {speaker}))

    sorted_cues = sorted(cues, key=lambda c: c.start)
    turns = tuple(
        SpeakingTurn(
            index=k,
            start=lo,
            end=hi,
            speakers=frozenset(speakers),
            transcript=_transcript_for(lo, hi, sorted_cues),
        )
        for k, (lo, hi, speakers) in enumerate(merged)
    )
    return TurnSet(video_id=meta.video_id, turns=turns, video_duration=duration)


def _transcript_for(lo: float, hi: float, sorted_cues: list[Cue]) -> str:
    parts = [
        c.text
        for c in sorted_cues
        if min(c.end, hi) - max(c.start, lo) > 0 and c.text
    ]
    return " ".join(parts)


def _warn(sink: list[str] | None, message: str) -> None:
    if sink is not None:
        sink.append(message)
    else:
        logger.warning(message)


def turns_to_jsonl(turnset: TurnSet) -> str:
    """One JSON line per turn: {video_id, k, start, end, speakers, transcript}."""
    lines = []
    for turn in turnset.turns:
        lines.append(
            json.dumps(
                {
                    "video_id": turnset.video_id,
                    "k": turn.index,
                    "start": turn.start,
                    "end": turn.end,
                    "speakers": sorted(turn.speakers),
                    "transcript": turn.transcript,
                },
                ensure_ascii=False,
                sort_keys=True,
            )
        )
    return "\n".join(lines) + ("\n" if lines else "")


def read_turns_jsonl(document: str, durations: dict[str, float]) -> dict[str, TurnSet]:
    """Rebuild TurnSets from JSONL; videos listed in durations but absent
    from the document come back with zero turns."""
    by_video: dict[str, list[SpeakingTurn]] = {vid: [] for vid in durations}
    for line_no, raw in enumerate(document.splitlines(), start=1):
        if not raw.strip():
            continue
        obj = json.loads(raw)
        vid = obj["video_id"]
        if vid not in by_video:
            raise KeyError(f"line {line_no}: video {vid!r} missing from durations table")
        by_video[vid].append(
            SpeakingTurn(
                index=obj["k"],
                start=obj["start"],
                end=obj["end"],
                speakers=frozenset(obj["speakers"]),
                transcript=obj["transcript"],
            )
        )
    out = {}
    for vid, turns in by_video.items():
        turns.sort(key=lambda t: t.index)
        out[vid] = TurnSet(vid, tuple(turns), durations[vid])
    return out
