import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from turnwise.corpus import Cue, DiarSegment, VideoMeta
from turnwise.turns import build_turns, read_turns_jsonl, turns_to_jsonl

META = VideoMeta("vid", 100.0)


def seg(speaker, start, duration):
    return DiarSegment(speaker, start, duration)


class TestBuildTurns:
    def test_overlapping_segments_merge_to_union(self):
        ts = build_turns([seg("A", 0.0, 2.0), seg("B", 1.5, 2.0)], [], META, merge_gap=0.0)
        assert len(ts) == 1
        turn = ts.turns[0]
        assert (turn.start, turn.end) == (0.0, 3.5)
        assert turn.speakers == frozenset({"A", "B"})

    def test_disjoint_segments_stay_separate(self):
        ts = build_turns([seg("A", 0.0, 1.0), seg("A", 5.0, 1.0)], [], META, merge_gap=0.0)
        assert [(t.start, t.end) for t in ts.turns] == [(0.0, 1.0), (5.0, 6.0)]

    def test_empty_segments_give_zero_turns(self):
        ts = build_turns([], [Cue(0.0, 1.0, "hi")], META)
        assert len(ts) == 0

    def test_merge_gap_bridges_pauses(self):
        segments = [seg("A", 0.0, 1.0), seg("A", 1.3, 1.0)]
        merged = build_turns(segments, [], META, merge_gap=0.5)
        split = build_turns(segments, [], META, merge_gap=0.1)
        assert len(merged) == 1 and len(split) == 2

    def test_clipping_and_outside_dropped(self):
        warnings = []
        ts = build_turns(
            [seg("A", -1.0, 2.0), seg("B", 99.0, 5.0), seg("C", 200.0, 1.0)],
            [],
            META,
            merge_gap=0.0,
            warning_sink=warnings,
        )
        assert [(t.start, t.end) for t in ts.turns] == [(0.0, 1.0), (99.0, 100.0)]
        assert len(warnings) == 1  # only the fully-outside segment

    def test_indexing_sequential(self):
        ts = build_turns([seg("A", 5.0, 1.0), seg("B", 0.0, 1.0)], [], META, merge_gap=0.0)
        assert [t.index for t in ts.turns] == [0, 1]
        assert ts.turns[0].start < ts.turns[1].start

    def test_transcript_attribution(self):
        cues = [Cue(0.2, 0.8, "inside first"), Cue(5.2, 5.8, "inside second")]
        ts = build_turns([seg("A", 0.0, 1.0), seg("A", 5.0, 1.0)], cues, META, merge_gap=0.0)
        assert ts.turns[0].transcript == "inside first"
        assert ts.turns[1].transcript == "inside second"

    def test_straddling_cue_attributed_to_both(self):
        cues = [Cue(0.5, 5.5, "straddles")]
        ts = build_turns([seg("A", 0.0, 1.0), seg("A", 5.0, 1.0)], cues, META, merge_gap=0.0)
        assert ts.turns[0].transcript == "straddles"
        assert ts.turns[1].transcript == "straddles"

    def test_touching_cue_not_attributed(self):
        # zero-length overlap is not positive overlap
        cues = [Cue(1.0, 2.0, "after the end")]
        ts = build_turns([seg("A", 0.0, 1.0)], cues, META, merge_gap=0.0)
        assert ts.turns[0].transcript == ""

    def test_cues_joined_in_temporal_order(self):
        cues = [Cue(0.6, 0.9, "later"), Cue(0.1, 0.4, "earlier")]
        ts = build_turns([seg("A", 0.0, 1.0)], cues, META)
        assert ts.turns[0].transcript == "earlier later"

    def test_negative_merge_gap_rejected(self):
        with pytest.raises(ValueError):
            build_turns([], [], META, merge_gap=-1.0)


@settings(max_examples=150, deadline=None)
@given(
    st.lists(
        st.tuples(
            st.sampled_from("ABC"),
            st.floats(0.0, 90.0, allow_nan=False),
            st.floats(0.01, 20.0, allow_nan=False),
        ),
        min_size=1,
        max_size=20,
    ),
    st.floats(0.0, 2.0, allow_nan=False),
)
def test_turns_disjoint_sorted_and_order_independent(raw, merge_gap):
    segments = [seg(s, start, dur) for s, start, dur in raw]
    ts = build_turns(segments, [], META, merge_gap=merge_gap)
    for a, b in zip(ts.turns, ts.turns[1:]):
        # survivors of the merge sweep are separated by more than merge_gap
        assert b.start - a.end > merge_gap
    total = sum(t.end - t.start for t in ts.turns)
    assert total <= META.duration + 1e-9
    if segments:
        longest = max(min(s.end, META.duration) - max(s.start, 0.0) for s in segments)
        assert total >= min(longest, META.duration) - 1e-9

    shuffled = list(segments)
    random.Random(0).shuffle(shuffled)
    ts2 = build_turns(shuffled, [], META, merge_gap=merge_gap)
    assert [(t.start, t.end, t.speakers) for t in ts2.turns] == [
        (t.start, t.end, t.speakers) for t in ts.turns
    ]


@settings(max_examples=100, deadline=None)
@given(
    st.lists(
        st.tuples(st.floats(0.0, 90.0, allow_nan=False), st.floats(0.05, 10.0, allow_nan=False)),
        min_size=1,
        max_size=15,
    ),
    st.floats(0.0, 1.0, allow_nan=False),
)
def test_build_turns_idempotent_on_merged_intervals(raw, merge_gap):
    first = build_turns([seg("A", s, d) for s, d in raw], [], META, merge_gap=merge_gap)
    again = build_turns(
        [seg("A", t.start, t.end - t.start) for t in first.turns], [], META, merge_gap=merge_gap
    )
    assert [(t.start, t.end) for t in again.turns] == [(t.start, t.end) for t in first.turns]


def test_jsonl_roundtrip(rng):
    from conftest import random_turnset

    ts = random_turnset(rng, "vidX", max_turns=10)
    text = turns_to_jsonl(ts)
    back = read_turns_jsonl(text, {"vidX": ts.video_duration, "empty": 5.0})
    assert back["vidX"].turns == ts.turns
    assert len(back["empty"]) == 0
