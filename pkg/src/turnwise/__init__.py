"""Speaking-turn driven frame sampling, vision-language fusion and
multiple-choice QA evaluation for social video."""

__version__ = "0.1.0"

from .corpus import Cue, DiarSegment, QAInstance, VideoMeta
from .turns import SpeakingTurn, TurnSet, build_turns
from .sampling import (
    FALLBACK_TURN,
    FrameSample,
    SamplePlan,
    SamplerConfig,
    allocate_frames,
    build_plan,
    place_frames,
)
from .embeddings import (
    EmbeddingStore,
    EmbeddingVector,
    Injection,
    SyntheticProvider,
    read_store,
    synthetic_provider,
    write_store,
)
from .fusion import AdapterParams, FusionConfig, adapter_apply, fuse, gradient_check
from .scoring import (
    EvalReport,
    PromptChunk,
    ToyScorerParams,
    chunk_transcript,
    collate_chunks,
    evaluate,
    mlm_binary_loss,
    select_answer,
    toy_score,
)
from .ablation import AblationReport, Perturbation, apply_perturbation, delta_report

__all__ = [
    "__version__",
    "Cue",
    "DiarSegment",
    "QAInstance",
    "VideoMeta",
    "SpeakingTurn",
    "TurnSet",
    "build_turns",
    "FALLBACK_TURN",
    "FrameSample",
    "SamplePlan",
    "SamplerConfig",
    "allocate_frames",
    "build_plan",
    "place_frames",
    "EmbeddingStore",
    "EmbeddingVector",
    "Injection",
    "SyntheticProvider",
    "read_store",
    "synthetic_provider",
    "write_store",
    "AdapterParams",
    "FusionConfig",
    "adapter_apply",
    "fuse",
    "gradient_check",
    "EvalReport",
    "PromptChunk",
    "ToyScorerParams",
    "chunk_transcript",
    "collate_chunks",
    "evaluate",
    "mlm_binary_loss",
    "select_answer",
    "toy_score",
    "AblationReport",
    "Perturbation",
    "apply_perturbation",
    "delta_report",
]
