"""Modality perturbations and the delta report.

Three perturbations probe what the evaluator actually relies on:
zeroing every frame embedding (text side passes through fusion untouched),
substituting frame embeddings from a key-matched alternate store (the
defaced-video protocol without bundling a vision model), and collapsing
every transcript surface to the single word "gibberish". Deltas are the
base accuracy minus the perturbed accuracies.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from typing import Callable

import numpy as np

from .embeddings import (
    MODALITY_TEXT,
    MODALITY_VISION,
    EmbeddingStore,
    EmbeddingVector,
)
from .sampling import SamplePlan
from .scoring import EvalInputs

logger = logging.getLogger(__name__)

GIBBERISH = "gibberish"

PERTURBATION_KINDS = ("none", "substitute_video", "blank_video", "gibberish_transcript")


class PerturbationError(ValueError):
    pass


class UnitMismatch(ValueError):
    pass


@dataclass(frozen=True)
class Perturbation:
    kind: str
    substitute_store: EmbeddingStore | None = None

    def __post_init__(self):
        if self.kind not in PERTURBATION_KINDS:
            raise PerturbationError(f"unknown perturbation kind {self.kind!r}")
        if self.kind == "substitute_video" and self.substitute_store is None:
            raise PerturbationError("substitute_video requires a substitute store")


def apply_perturbation(
    perturbation: Perturbation,
    inputs: EvalInputs,
    text_embedder: Callable[[str], np.ndarray] | None = None,
    warning_sink: list[str] | None = None,
) -> EvalInputs:
    """Return the perturbed evaluation inputs; kind "none" is the identity.

    blank_video zeroes every vision record. gibberish_transcript rewrites
    every transcript surface (plan frame transcripts and the per-video chunk
    context) to "gibberish" and re-embeds the store's text records with
    text_embedder applied to "gibberish", so the run cannot depend on the
    original transcripts. substitute_video swaps vision records for the
    key-matched ones in the substitute store; keys it lacks are dropped with
    a warning, which surfaces downstream as skipped instances.
    """
    kind = perturbation.kind
    if kind == "none":
        return inputs

    if kind == "blank_video":
        store = EmbeddingStore(inputs.store.dim)
        for key, vec in inputs.store.entries.items():
            if vec.modality == MODALITY_VISION:
                store.add(EmbeddingVector(key, MODALITY_VISION, np.zeros(vec.dim, np.float32)))
            else:
                store.add(vec)
        return EvalInputs(inputs.plans, store, inputs.transcripts)

    if kind == "substitute_video":
        sub = perturbation.substitute_store
        if sub.dim != inputs.store.dim:
            raise PerturbationError(
                f"substitute store dim {sub.dim} != base store dim {inputs.store.dim}"
            )
        store = EmbeddingStore(inputs.store.dim)
        for key, vec in inputs.store.entries.items():
            if vec.modality != MODALITY_VISION:
                store.add(vec)
            elif key in sub:
                store.add(sub.get(key))
            else:
                _warn(warning_sink, f"substitute store missing key {key}")
        return EvalInputs(inputs.plans, store, inputs.transcripts)

    # gibberish_transcript
    if text_embedder is None:
        raise PerturbationError(
            "gibberish_transcript needs a text embedder to rewrite text records"
        )
    gib_values = np.asarray(text_embedder(GIBBERISH), dtype=np.float32)
    store = EmbeddingStore(inputs.store.dim)
    for key, vec in inputs.store.entries.items():
        if vec.modality == MODALITY_TEXT:
            store.add(EmbeddingVector(key, MODALITY_TEXT, gib_values))
        else:
            store.add(vec)
    plans = {
        vid: SamplePlan(
            plan.video_id,
            tuple(replace(f, transcript=GIBBERISH) for f in plan.frames),
            plan.used_fallback,
        )
        for vid, plan in inputs.plans.items()
    }
    transcripts = {vid: GIBBERISH for vid in inputs.transcripts}
    return EvalInputs(plans, store, transcripts)


def _warn(sink: list[str] | None, message: str) -> None:
    if sink is not None:
        sink.append(message)
    else:
        logger.warning(message)


@dataclass(frozen=True)
class AblationReport:
    acc_base: float
    acc_defaced: float | None
    acc_blank: float
    acc_gibberish: float
    delta_defaced: float | None
    delta_blank: float
    delta_gibberish: float
    units: str

    def to_json_dict(self) -> dict:
        return {
            "acc": {
                "base": self.acc_base,
                "defaced": self.acc_defaced,
                "blank": self.acc_blank,
                "gibberish": self.acc_gibberish,
            },
            "deltas": {
                "d1": self.delta_defaced,
                "d2": self.delta_blank,
                "d3": self.delta_gibberish,
            },
            "config": {"units": self.units},
        }


def _infer_units(values: list[float]) -> str:
    if all(v <= 1.0 for v in values):
        return "fraction"
    if all(v >= 1.0 for v in values):
        return "percent"
    raise UnitMismatch(f"accuracies mix fractions and percents: {values}")


def delta_report(
    acc_base: float,
    acc_defaced: float,
    acc_blank: float,
    acc_gibberish: float,
    units: str = "auto",
) -> AblationReport:
    """Pure arithmetic: delta_i = base accuracy minus the perturbed one."""
    values = [acc_base, acc_defaced, acc_blank, acc_gibberish]
    if any(not isinstance(v, (int, float)) or isinstance(v, bool) for v in values):
        raise UnitMismatch(f"accuracies must be numbers: {values}")
    if units == "auto":
        units = _infer_units(values)
    limit = 1.0 if units == "fraction" else 100.0
    if units not in ("fraction", "percent"):
        raise ValueError(f"unknown units {units!r}")
    if any(not 0.0 <= v <= limit for v in values):
        raise UnitMismatch(f"accuracies out of range for {units}: {values}")
    return AblationReport(
        acc_base=acc_base,
        acc_defaced=acc_defaced,
        acc_blank=acc_blank,
        acc_gibberish=acc_gibberish,
        delta_defaced=acc_base - acc_defaced,
        delta_blank=acc_base - acc_blank,
        delta_gibberish=acc_base - acc_gibberish,
        units=units,
    )
