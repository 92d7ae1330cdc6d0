import random
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from turnwise.turns import SpeakingTurn, TurnSet


def random_turnset(rng: random.Random, video_id: str = "vid", max_turns: int = 50) -> TurnSet:
    """Disjoint sorted turns with strictly positive gaps and widths."""
    k = rng.randint(1, max_turns)
    cursor = 0.0
    turns = []
    for i in range(k):
        cursor += rng.uniform(0.05, 3.0)  # gap
        width = rng.uniform(0.1, 8.0)
        turns.append(
            SpeakingTurn(
                index=i,
                start=cursor,
                end=cursor + width,
                speakers=frozenset({f"spk{rng.randint(0, 3)}"}),
                transcript=f"turn {i} " + " ".join(f"w{rng.randint(0, 99)}" for _ in range(3)),
            )
        )
        cursor += width
    duration = cursor + rng.uniform(0.1, 5.0)
    return TurnSet(video_id, tuple(turns), duration)


@pytest.fixture
def rng():
    return random.Random(1234)
