"""Readers for the three textual corpus inputs.

Three file families feed the pipeline: WebVTT transcripts, RTTM speaker
diarization output, and JSONL question manifests. Each parser is a pure
function from document text to validated records and raises a typed error
(with a line number where one exists) instead of returning partial output.

Cue text normalization: markup tags are stripped, payload lines are joined
with a single space, and internal whitespace is collapsed. RTTM lines with
zero/negative/NaN onset or duration are skipped with a warning rather than
aborting the whole file.
"""

from __future__ import annotations

import json
import logging
import math
import re
from dataclasses import dataclass

logger = logging.getLogger(__name__)


class CorpusError(Exception):
    """Base for corpus parsing failures; carries a 1-based line number when known."""

    def __init__(self, message: str, line_no: int | None = None):
        self.line_no = line_no
        if line_no is not None:
            message = f"line {line_no}: {message}"
        super().__init__(message)


class MalformedHeader(CorpusError):
    pass


class MalformedTimestamp(CorpusError):
    pass


class EmptyDocument(CorpusError):
    pass


class MalformedLine(CorpusError):
    pass


class ManifestError(CorpusError):
    pass


class WrongAnswerCount(ManifestError):
    pass


class GoldIndexOutOfRange(ManifestError):
    pass


class DuplicateQuestionId(ManifestError):
    pass


@dataclass(frozen=True)
class Cue:
    """One subtitle cue: [start, end) in seconds plus its normalized text."""

    start: float
    end: float
    text: str


@dataclass(frozen=True)
class DiarSegment:
    """One who-spoke-when segment from a diarizer."""

    speaker: str
    start: float
    duration: float

    @property
    def end(self) -> float:
        return self.start + self.duration


@dataclass(frozen=True)
class QAInstance:
    """A multiple-choice question: exactly 4 candidate answers, one correct."""

    qa_id: str
    video_id: str
    question: str
    answers: tuple[str, str, str, str]
    gold_index: int


@dataclass(frozen=True)
class VideoMeta:
    video_id: str
    duration: float


_SIGNATURE_RE = re.compile(r"^WEBVTT($|[ \t])")
_TIMESTAMP_RE = re.compile(r"^(?:(\d{1,6}):)?([0-5]?\d):([0-5]\d)\.(\d{3})$")
_TAG_RE = re.compile(r"<[^>]*>")
_BLOCK_KEYWORDS = ("NOTE", "STYLE", "REGION")


def parse_timestamp(token: str) -> float:
    """Convert ``[hh:]mm:ss.mmm`` to seconds (millisecond precision)."""
    m = _TIMESTAMP_RE.match(token)
    if m is None:
        raise ValueError(f"bad timestamp {token!r}")
    hours = int(m.group(1)) if m.group(1) else 0
    ms = ((hours * 60 + int(m.group(2))) * 60 + int(m.group(3))) * 1000 + int(m.group(4))
    return ms / 1000.0


def format_timestamp(seconds: float) -> str:
    ms = round(seconds * 1000)
    if ms < 0:
        raise ValueError(f"negative timestamp {seconds!r}")
    h, rem = divmod(ms, 3600_000)
    m, rem = divmod(rem, 60_000)
    s, ms = divmod(rem, 1000)
    return f"{h:02d}:{m:02d}:{s:02d}.{ms:03d}"


def _normalize_cue_text(payload_lines: list[str]) -> str:
    joined = " ".join(payload_lines)
    return " ".join(_TAG_RE.sub("", joined).split())


def parse_vtt(document: str) -> list[Cue]:
    """Parse a WebVTT document into cues sorted by start time.

    The document must begin with the ``WEBVTT`` signature. Comment blocks
    (NOTE), STYLE and REGION blocks, cue identifiers and cue settings are
    ignored. A header-only document yields an empty list; a blank document
    raises EmptyDocument.
    """
    if document.startswith("﻿"):
        document = document[1:]
    if not document.strip():
        raise EmptyDocument("document contains no content")
    lines = document.splitlines()
    if not _SIGNATURE_RE.match(lines[0]):
        raise MalformedHeader("missing WEBVTT signature", line_no=1)

    cues: list[Cue] = []
    i = 1
    n = len(lines)
    while i < n:
        # skip blank separators between blocks
        if not lines[i].strip():
            i += 1
            continue
        # collect one block (up to the next blank line)
        block_start = i
        block: list[str] = []
        while i < n and lines[i].strip():
            block.append(lines[i])
            i += 1
        first = block[0].strip()
        if any(first == kw or first.startswith(kw + " ") for kw in _BLOCK_KEYWORDS):
            continue
        timing_idx = next((j for j, ln in enumerate(block) if "-->" in ln), None)
        if timing_idx is None:
            # header metadata or a stray identifier with no timing line
            continue
        timing_line_no = block_start + timing_idx + 1
        left, _, right = block[timing_idx].partition("-->")
        end_token = right.split(maxsplit=1)
        try:
            start = parse_timestamp(left.strip())
            end = parse_timestamp(end_token[0]) if end_token else _raise_bad("missing end")
        except ValueError as exc:
            raise MalformedTimestamp(str(exc), line_no=timing_line_no) from None
        if end <= start:
            raise MalformedTimestamp(
                f"cue end {end} not after start {start}", line_no=timing_line_no
            )
        cues.append(Cue(start, end, _normalize_cue_text(block[timing_idx + 1 :])))

    cues.sort(key=lambda c: c.start)  # stable: equal starts keep document order
    return cues


def _raise_bad(msg: str) -> float:
    raise ValueError(msg)


def serialize_vtt(cues: list[Cue]) -> str:
    """Render cues back to canonical WebVTT; a fixed point of parse_vtt."""
    out = ["WEBVTT", ""]
    for cue in cues:
        out.append(f"{format_timestamp(cue.start)} --> {format_timestamp(cue.end)}")
        out.append(cue.text)
        out.append("")
    return "\n".join(out)


def parse_rttm(document: str, warning_sink: list[str] | None = None) -> list[DiarSegment]:
    """Parse NIST RTTM text into diarization segments.

    Only lines of type SPEAKER are read; fields are positional (onset is
    field 4, duration field 5, speaker label field 8). Segments with
    non-positive or NaN onset/duration are rejected with a warning record
    instead of failing the document.
    """
    segments: list[DiarSegment] = []
    for line_no, raw in enumerate(document.splitlines(), start=1):
        stripped = raw.strip()
        if not stripped or stripped.startswith(";;"):
            continue
        parts = stripped.split()
        if parts[0] != "SPEAKER":
            continue
        if len(parts) < 8:
            raise MalformedLine(
                f"expected >= 8 fields on SPEAKER line, got {len(parts)}", line_no=line_no
            )
        try:
            onset = float(parts[3])
            duration = float(parts[4])
        except ValueError:
            raise MalformedLine(
                f"non-numeric onset/duration {parts[3]!r} {parts[4]!r}", line_no=line_no
            ) from None
        if math.isnan(onset) or math.isnan(duration) or duration <= 0 or onset < 0:
            _warn(
                warning_sink,
                f"line {line_no}: segment rejected (onset={parts[3]}, duration={parts[4]})",
            )
            continue
        segments.append(DiarSegment(parts[7], onset, duration))
    return segments


def _warn(sink: list[str] | None, message: str) -> None:
    if sink is not None:
        sink.append(message)
    else:
        logger.warning(message)


def load_manifest(document: str) -> list[QAInstance]:
    """Load a JSONL question manifest.

    Each non-blank line holds one object with keys video_id, question,
    answers (exactly 4 strings) and gold_index in [0, 3]; an optional qa_id
    must be unique across the file. Instances without an explicit qa_id get
    ``{video_id}#{line_no}``.
    """
    instances: list[QAInstance] = []
    seen_ids: set[str] = set()
    for line_no, raw in enumerate(document.splitlines(), start=1):
        if not raw.strip():
            continue
        try:
            obj = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise ManifestError(f"invalid JSON: {exc.msg}", line_no=line_no) from None
        if not isinstance(obj, dict):
            raise ManifestError("record is not an object", line_no=line_no)
        video_id = obj.get("video_id")
        if not isinstance(video_id, str) or not video_id:
            raise ManifestError("missing or empty video_id", line_no=line_no)
        question = obj.get("question")
        if not isinstance(question, str):
            raise ManifestError("missing question", line_no=line_no)
        answers = obj.get("answers")
        if not isinstance(answers, list) or len(answers) != 4:
            got = len(answers) if isinstance(answers, list) else "none"
            raise WrongAnswerCount(f"expected exactly 4 answers, got {got}", line_no=line_no)
        if not all(isinstance(a, str) for a in answers):
            raise ManifestError("answers must be strings", line_no=line_no)
        gold = obj.get("gold_index")
        if isinstance(gold, bool) or not isinstance(gold, int) or not 0 <= gold <= 3:
            raise GoldIndexOutOfRange(f"gold_index {gold!r} not in [0, 3]", line_no=line_no)
        qa_id = obj.get("qa_id")
        if qa_id is not None:
            if not isinstance(qa_id, str) or not qa_id:
                raise ManifestError("qa_id must be a non-empty string", line_no=line_no)
            if qa_id in seen_ids:
                raise DuplicateQuestionId(f"duplicate qa_id {qa_id!r}", line_no=line_no)
            seen_ids.add(qa_id)
        else:
            qa_id = f"{video_id}#{line_no}"
        instances.append(QAInstance(qa_id, video_id, question, tuple(answers), gold))
    return instances


def load_durations(document: str) -> dict[str, float]:
    """Load the video duration table: a JSON object {video_id: seconds}."""
    try:
        obj = json.loads(document)
    except json.JSONDecodeError as exc:
        raise CorpusError(f"invalid durations JSON: {exc.msg}") from None
    if not isinstance(obj, dict):
        raise CorpusError("durations file must be a JSON object")
    out: dict[str, float] = {}
    for video_id, duration in obj.items():
        if not isinstance(duration, (int, float)) or isinstance(duration, bool):
            raise CorpusError(f"duration for {video_id!r} is not a number")
        if not math.isfinite(duration) or duration <= 0:
            raise CorpusError(f"duration for {video_id!r} must be positive, got {duration}")
        out[video_id] = float(duration)
    return out
