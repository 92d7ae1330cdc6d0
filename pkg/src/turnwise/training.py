"""Joint training of the fusion adapter and the built-in scorer.

Each QA instance contributes four binary examples (one per candidate
answer, label 1 on the gold answer). The loss is the mean binary
negative log-likelihood; gradients are analytic end to end and are
validated against central finite differences by the gradient-check
utilities. Optimization is plain minibatch gradient descent with optional
momentum, fully seeded.

The built-in scorer never reads the transcript window, so per-chunk scores
within one instance are identical and the collated probability equals the
single-chunk one; training therefore works with one effective chunk per
example without changing the objective.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .corpus import QAInstance
from .embeddings import EmbeddingProvider, frame_key, text_key_for_frame
from .fusion import (
    AdapterParams,
    FusionConfig,
    fuse,
    init_adapter,
    load_adapter,
    save_adapter,
)
from .scoring import (
    PROB_CLAMP,
    EvalInputs,
    ToyScorerParams,
    init_scorer,
    sigmoid,
    toy_features,
)

ADAPTER_FILENAME = "adapter.ckpt"
SCORER_FILENAME = "scorer.json"

DEFAULT_STEPS = 300
DEFAULT_LEARNING_RATE = 0.5
DEFAULT_MOMENTUM = 0.9
DEFAULT_BATCH_SIZE = 32


@dataclass
class PipelineModel:
    adapter: AdapterParams
    scorer: ToyScorerParams
    fusion: FusionConfig

    def copy(self) -> "PipelineModel":
        return PipelineModel(self.adapter.copy(), self.scorer.copy(), self.fusion)


def init_model(d: int, alpha: float, seed: int = 0) -> PipelineModel:
    return PipelineModel(
        adapter=init_adapter(d, seed=seed),
        scorer=init_scorer(d),
        fusion=FusionConfig(alpha=alpha, d=d),
    )


@dataclass(frozen=True)
class TrainExample:
    question_emb: np.ndarray
    answer_emb: np.ndarray
    fused_inputs: tuple[np.ndarray, ...]  # pre-adapter fused vectors, one per frame
    label: int
    qa_id: str


def build_examples(
    instances: list[QAInstance],
    inputs: EvalInputs,
    provider: EmbeddingProvider,
    fusion_config: FusionConfig,
    warning_sink: list[str] | None = None,
) -> list[TrainExample]:
    """Precompute embeddings for training; instances with missing plans or
    embeddings are dropped (recorded in warning_sink)."""
    examples: list[TrainExample] = []
    text_memo: dict[str, np.ndarray] = {}

    def embed(text: str) -> np.ndarray:
        cached = text_memo.get(text)
        if cached is None:
            cached = provider.embed_text(text).values.astype(np.float64)
            text_memo[text] = cached
        return cached

    for instance in instances:
        plan = inputs.plans.get(instance.video_id)
        if plan is None:
            if warning_sink is not None:
                warning_sink.append(f"{instance.qa_id}: missing plan, dropped from training")
            continue
        zs = []
        missing = None
        for f in plan.frames:
            fkey = frame_key(plan.video_id, f.timestamp)
            tkey = text_key_for_frame(plan.video_id, f.turn_index, f.timestamp)
            if fkey not in inputs.store or tkey not in inputs.store:
                missing = fkey if fkey not in inputs.store else tkey
                break
            zs.append(fuse(inputs.store.get(fkey), inputs.store.get(tkey), fusion_config))
        if missing is not None:
            if warning_sink is not None:
                warning_sink.append(f"{instance.qa_id}: missing embedding {missing}, dropped")
            continue
        q = embed(instance.question)
        for j, answer in enumerate(instance.answers):
            examples.append(
                TrainExample(
                    question_emb=q,
                    answer_emb=embed(answer),
                    fused_inputs=tuple(zs),
                    label=int(j == instance.gold_index),
                    qa_id=instance.qa_id,
                )
            )
    return examples


def example_probability(model: PipelineModel, example: TrainExample) -> float:
    d = model.fusion.d
    if example.fused_inputs:
        mean_z = np.mean(np.stack(example.fused_inputs), axis=0)
        m = model.adapter.W @ mean_z + model.adapter.b
    else:
        m = np.zeros(d)
    feat = toy_features(example.question_emb, example.answer_emb, m)
    return sigmoid(float(model.scorer.w @ feat + model.scorer.b0))


def loss_and_grad(model: PipelineModel, batch: list[TrainExample]):
    """Mean binary NLL over the batch plus analytic gradients for
    (adapter.W, adapter.b, scorer.w, scorer.b0)."""
    if not batch:
        raise ValueError("empty batch")
    d = model.fusion.d
    W, b = model.adapter.W, model.adapter.b
    w, b0 = model.scorer.w, model.scorer.b0
    w_m = w[2 * d : 3 * d]
    w_x = w[3 * d :]

    total_loss = 0.0
    dW = np.zeros_like(W)
    db = np.zeros_like(b)
    dw = np.zeros_like(w)
    db0 = 0.0
    for ex in batch:
        if ex.fused_inputs:
            mean_z = np.mean(np.stack(ex.fused_inputs), axis=0)
            m = W @ mean_z + b
        else:
            mean_z = None
            m = np.zeros(d)
        feat = toy_features(ex.question_emb, ex.answer_emb, m)
        p = sigmoid(float(w @ feat + b0))
        pc = min(max(p, PROB_CLAMP), 1.0 - PROB_CLAMP)
        total_loss += -(ex.label * np.log(pc) + (1 - ex.label) * np.log(1.0 - pc))
        # clamped probabilities are flat in the parameters
        ds = (p - ex.label) if PROB_CLAMP < p < 1.0 - PROB_CLAMP else 0.0
        dw += ds * feat
        db0 += ds
        if mean_z is not None and ds != 0.0:
            dm = ds * (w_m + w_x * ex.answer_emb)
            dW += np.outer(dm, mean_z)
            db += dm
    n = len(batch)
    return total_loss / n, (dW / n, db / n, dw / n, db0 / n)


def flatten_params(model: PipelineModel) -> np.ndarray:
    return np.concatenate(
        [model.adapter.W.ravel(), model.adapter.b, model.scorer.w, [model.scorer.b0]]
    )


def unflatten_params(model: PipelineModel, flat: np.ndarray) -> PipelineModel:
    d = model.fusion.d
    W = flat[: d * d].reshape(d, d)
    b = flat[d * d : d * d + d]
    w = flat[d * d + d : d * d + d + 4 * d]
    b0 = float(flat[-1])
    return PipelineModel(AdapterParams(W.copy(), b.copy()), ToyScorerParams(w.copy(), b0), model.fusion)


def make_flat_loss(model: PipelineModel, batch: list[TrainExample]):
    """Closure suitable for gradient_check: flat params -> (loss, flat grad)."""

    def flat_loss(flat: np.ndarray):
        candidate = unflatten_params(model, flat)
        loss, (dW, db, dw, db0) = loss_and_grad(candidate, batch)
        return loss, np.concatenate([dW.ravel(), db, dw, [db0]])

    return flat_loss


@dataclass
class FitResult:
    model: PipelineModel
    history: list[tuple[int, float]]  # (step, mean batch loss)


def fit(
    model: PipelineModel,
    examples: list[TrainExample],
    steps: int = DEFAULT_STEPS,
    learning_rate: float = DEFAULT_LEARNING_RATE,
    momentum: float = DEFAULT_MOMENTUM,
    batch_size: int = DEFAULT_BATCH_SIZE,
    seed: int = 0,
) -> FitResult:
    """Minibatch gradient descent; deterministic for a fixed seed."""
    if not examples:
        raise ValueError("no training examples")
    model = model.copy()
    rng = random.Random(seed)
    order: list[int] = []
    vW = np.zeros_like(model.adapter.W)
    vb = np.zeros_like(model.adapter.b)
    vw = np.zeros_like(model.scorer.w)
    vb0 = 0.0
    history: list[tuple[int, float]] = []
    for step in range(steps):
        if len(order) < batch_size:
            refill = list(range(len(examples)))
            rng.shuffle(refill)
            order.extend(refill)
        batch = [examples[i] for i in order[:batch_size]]
        del order[:batch_size]
        loss, (dW, db, dw, db0) = loss_and_grad(model, batch)
        vW = momentum * vW + dW
        vb = momentum * vb + db
        vw = momentum * vw + dw
        vb0 = momentum * vb0 + db0
        model.adapter.W = model.adapter.W - learning_rate * vW
        model.adapter.b = model.adapter.b - learning_rate * vb
        model.scorer.w = model.scorer.w - learning_rate * vw
        model.scorer.b0 = model.scorer.b0 - learning_rate * vb0
        history.append((step, float(loss)))
    return FitResult(model, history)


def save_checkpoint(directory: str | Path, model: PipelineModel) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    save_adapter(model.adapter, model.fusion.alpha, directory / ADAPTER_FILENAME)
    scorer_doc = {
        "format_version": 1,
        "d": model.scorer.d,
        "w": model.scorer.w.tolist(),
        "b0": model.scorer.b0,
    }
    (directory / SCORER_FILENAME).write_text(
        json.dumps(scorer_doc, sort_keys=True), encoding="utf-8"
    )


def load_checkpoint(directory: str | Path) -> PipelineModel:
    directory = Path(directory)
    adapter, alpha = load_adapter(directory / ADAPTER_FILENAME)
    scorer_doc = json.loads((directory / SCORER_FILENAME).read_text(encoding="utf-8"))
    if scorer_doc.get("format_version") != 1:
        raise ValueError(f"{directory / SCORER_FILENAME}: unsupported scorer version")
    scorer = ToyScorerParams(np.array(scorer_doc["w"], dtype=np.float64), float(scorer_doc["b0"]))
    if scorer.d != adapter.d:
        raise ValueError(
            f"checkpoint dims disagree: adapter d={adapter.d}, scorer d={scorer.d}"
        )
    return PipelineModel(adapter, scorer, FusionConfig(alpha=alpha, d=adapter.d))
