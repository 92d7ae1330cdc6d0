"""Synthetic end-to-end fixture with a vision-only planted signal.

Each video gets a few short speaking turns (bounded total coverage) and one
QA instance whose gold answer is identifiable ONLY from the video: the
provider blends the embedding of the gold answer text into frame embeddings
inside the speaking turns. Turn-driven sampling puts every frame inside the
turns, so its fused means carry the planted direction; the equidistant
control plan mostly samples outside the turns and starves the signal.
"""

from __future__ import annotations

import random
from dataclasses import dataclass

from turnwise.corpus import QAInstance
from turnwise.embeddings import Injection, SyntheticProvider, merge_stores, store_from_plan, synthetic_provider
from turnwise.sampling import SamplePlan, SamplerConfig, build_plan
from turnwise.scoring import EvalInputs, assemble_inputs
from turnwise.turns import SpeakingTurn, TurnSet


@dataclass
class PlantedFixture:
    instances: list[QAInstance]
    turnsets: dict[str, TurnSet]
    sts_inputs: EvalInputs
    control_inputs: EvalInputs
    provider: SyntheticProvider
    dim: int
    total_frames: int


def _random_words(rng: random.Random, count: int) -> str:
    return " ".join(f"w{rng.randrange(4000):04d}" for _ in range(count))


def _make_turns(rng: random.Random, duration: float, coverage: float) -> list[tuple[float, float]]:
    """Two disjoint turns with total width = coverage * duration; the free
    space is split into three gaps by two random cut points."""
    width = 0.5 * coverage * duration
    free = duration - 2 * width
    cut_a, cut_b = sorted((rng.uniform(0, free), rng.uniform(0, free)))
    first = (cut_a, cut_a + width)
    second = (cut_b + width, cut_b + 2 * width)
    return [first, second]


def build_planted_fixture(
    n_instances: int = 200,
    seed: int = 7,
    dim: int = 32,
    total_frames: int = 8,
    duration: float = 40.0,
    coverage: float = 0.12,
    blend_weight: float = 0.85,
) -> PlantedFixture:
    rng = random.Random(seed)
    base_provider = synthetic_provider(seed=seed, dim=dim)

    instances: list[QAInstance] = []
    turnsets: dict[str, TurnSet] = {}
    injections: list[Injection] = []
    for i in range(n_instances):
        vid = f"fx{i:04d}"
        answers = tuple(_random_words(rng, 2) for _ in range(4))
        while len(set(answers)) < 4:
            answers = tuple(_random_words(rng, 2) for _ in range(4))
        gold = rng.randrange(4)
        instances.append(
            QAInstance(
                qa_id=f"{vid}q",
                video_id=vid,
                question=_random_words(rng, 3),
                answers=answers,
                gold_index=gold,
            )
        )
        intervals = _make_turns(rng, duration, coverage)
        turns = tuple(
            SpeakingTurn(
                index=k,
                start=lo,
                end=hi,
                speakers=frozenset({f"spk{k}"}),
                transcript=_random_words(rng, 4),
            )
            for k, (lo, hi) in enumerate(intervals)
        )
        turnsets[vid] = TurnSet(vid, turns, duration)
        direction = base_provider.embed_text(answers[gold]).values
        for lo, hi in intervals:
            injections.append(Injection(vid, lo, hi, direction, weight=blend_weight))

    provider = base_provider.with_injections(injections)
    config = SamplerConfig(total_frames=total_frames)

    sts_plans: dict[str, SamplePlan] = {}
    control_plans: dict[str, SamplePlan] = {}
    sts_stores = []
    control_stores = []
    for vid, turnset in turnsets.items():
        sts_plan = build_plan(turnset, config)
        control_plan = build_plan(TurnSet(vid, (), turnset.video_duration), config)
        sts_plans[vid] = sts_plan
        control_plans[vid] = control_plan
        sts_stores.append(store_from_plan(sts_plan, provider))
        control_stores.append(store_from_plan(control_plan, provider))

    return PlantedFixture(
        instances=instances,
        turnsets=turnsets,
        sts_inputs=assemble_inputs(sts_plans, merge_stores(sts_stores)),
        control_inputs=assemble_inputs(control_plans, merge_stores(control_stores)),
        provider=provider,
        dim=dim,
        total_frames=total_frames,
    )
