"""Speaking-turn frame sampling.

The frame budget M is split across turns proportionally to their durations
(largest-remainder integerization, ties to the earlier turn), frames are
placed at the midpoints of equal-width subintervals inside each turn, and
every frame is bound to its turn's transcript. A video without turns falls
back to midpoint-equidistant sampling over the whole duration, pairing each
frame with the cue text inside a +/- fallback_window around it.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

from .corpus import Cue
from .turns import TurnSet

FALLBACK_TURN = -1  # turn index marking frames sampled by the whole-video fallback

DEFAULT_TOTAL_FRAMES = 10
DEFAULT_FALLBACK_WINDOW = 2.0


class EmptyDurations(ValueError):
    """allocate_frames received an empty duration list."""


@dataclass(frozen=True)
class SamplerConfig:
    total_frames: int = DEFAULT_TOTAL_FRAMES
    placement: str = "midpoint"
    fallback_window: float = DEFAULT_FALLBACK_WINDOW

    def __post_init__(self):
        if self.total_frames < 1:
            raise ValueError(f"total_frames must be >= 1, got {self.total_frames}")
        if self.placement != "midpoint":
            raise ValueError(f"unknown placement {self.placement!r}")
        if self.fallback_window < 0:
            raise ValueError("fallback_window must be >= 0")


@dataclass(frozen=True)
class FrameSample:
    video_id: str
    turn_index: int  # FALLBACK_TURN when sampled by the fallback path
    within_turn_index: int
    timestamp: float
    transcript: str


@dataclass(frozen=True)
class SamplePlan:
    video_id: str
    frames: tuple[FrameSample, ...]
    used_fallback: bool


def allocate_frames(durations: Sequence[float], total_frames: int) -> list[int]:
    """Split total_frames across turns proportionally to duration.

    Largest-remainder rule: each turn gets the floor of its real-valued
    quota duration_k / sum(durations) * total_frames, and the leftover units
    go to the largest fractional remainders, ties broken by the smaller turn
    index. Arithmetic is exact (rationals), so the result depends only on
    duration ratios.
    """
    if len(durations) == 0:
        raise EmptyDurations("durations must be non-empty")
    if any(d <= 0 for d in durations):
        raise ValueError("durations must all be positive")
    if total_frames < 1:
        raise ValueError(f"total_frames must be >= 1, got {total_frames}")

    exact = [Fraction(d) for d in durations]
    total = sum(exact)
    quotas = [q * total_frames / total for q in exact]
    counts = [int(q) for q in quotas]  # floor: quotas are non-negative
    leftover = total_frames - sum(counts)
    by_remainder = sorted(range(len(quotas)), key=lambda i: (counts[i] - quotas[i], i))
    for i in by_remainder[:leftover]:
        counts[i] += 1
    return counts


def place_frames(start: float, end: float, n: int) -> list[float]:
    """Midpoints of n equal-width subintervals of [start, end]."""
    if n < 0:
        raise ValueError(f"n must be >= 0, got {n}")
    if n == 0:
        return []
    if not start < end:
        raise ValueError(f"empty interval [{start}, {end}]")
    width = end - start
    return [start + width * (2 * t + 1) / (2 * n) for t in range(n)]


def build_plan(
    turnset: TurnSet, config: SamplerConfig, cues: Sequence[Cue] = ()
) -> SamplePlan:
    """Produce the ordered frame plan for one video.

    With turns present, the budget is apportioned over turn durations and
    placed inside each turn; all frames of turn k carry that turn's
    transcript verbatim. With zero turns the plan switches to the fallback:
    midpoint-equidistant timestamps over [0, video_duration], each paired
    with the text of cues overlapping [t - w, t + w].
    """
    vid = turnset.video_id
    if len(turnset.turns) == 0:
        frames = []
        window = config.fallback_window
        sorted_cues = sorted(cues, key=lambda c: c.start)
        for t, ts in enumerate(place_frames(0.0, turnset.video_duration, config.total_frames)):
            nearby = [
                c.text
                for c in sorted_cues
                if c.start < ts + window and c.end > ts - window and c.text
            ]
            frames.append(FrameSample(vid, FALLBACK_TURN, t, ts, " ".join(nearby)))
        return SamplePlan(vid, tuple(frames), used_fallback=True)

    counts = allocate_frames([turn.duration for turn in turnset.turns], config.total_frames)
    frames = []
    for turn, n in zip(turnset.turns, counts):
        for t, ts in enumerate(place_frames(turn.start, turn.end, n)):
            frames.append(FrameSample(vid, turn.index, t, ts, turn.transcript))
    return SamplePlan(vid, tuple(frames), used_fallback=False)


def timestamp_ms(timestamp: float) -> int:
    """Millisecond quantization used for serialization and embedding keys."""
    return int(round(timestamp * 1000))


def plan_to_jsonl(plan: SamplePlan) -> str:
    """One JSON line per video; timestamps at millisecond precision."""
    record = {
        "video_id": plan.video_id,
        "used_fallback": plan.used_fallback,
        "frames": [
            {
                "k": f.turn_index,
                "t": f.within_turn_index,
                "timestamp": timestamp_ms(f.timestamp) / 1000.0,
                "transcript": f.transcript,
            }
            for f in plan.frames
        ],
    }
    return json.dumps(record, ensure_ascii=False, sort_keys=True) + "\n"


def read_plans_jsonl(document: str) -> dict[str, SamplePlan]:
    plans: dict[str, SamplePlan] = {}
    for line_no, raw in enumerate(document.splitlines(), start=1):
        if not raw.strip():
            continue
        obj = json.loads(raw)
        vid = obj["video_id"]
        if vid in plans:
            raise ValueError(f"line {line_no}: duplicate plan for video {vid!r}")
        frames = tuple(
            FrameSample(vid, f["k"], f["t"], f["timestamp"], f["transcript"])
            for f in obj["frames"]
        )
        plans[vid] = SamplePlan(vid, frames, obj["used_fallback"])
    return plans
