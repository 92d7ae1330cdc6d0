"""Multiple-choice QA scoring.

Each candidate answer is scored independently as a yes/no probability (the
masked-token convention: one binary mask per candidate), per transcript
chunk, then collated across chunks; the predicted answer is the argmax with
ties to the lowest index. A small built-in scorer over provider embeddings
makes the whole pipeline runnable at desk scale, and a line-delimited JSON
protocol bridges to external scorers over subprocess pipes or TCP.

The built-in scorer's feature vector is
``[question ++ answer ++ fused-mean ++ answer * fused-mean]`` (++ is
concatenation, * elementwise). The interaction block is what lets the score
couple a candidate answer with video content; without it the answer ranking
would be independent of the fused embeddings entirely.
"""

from __future__ import annotations

import base64
import json
import select
import shlex
import socket
import subprocess
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .corpus import QAInstance
from .embeddings import (
    EmbeddingProvider,
    EmbeddingStore,
    frame_key,
    text_key_for_frame,
)
from .fusion import AdapterParams, DimMismatch, FusionConfig, adapter_apply, fuse
from .sampling import SamplePlan

PROB_CLAMP = 1e-7
DEFAULT_CHUNK_SIZE = 256
DEFAULT_OVERLAP = 64
COLLATION_RULES = ("mean", "max")


class InvalidChunking(ValueError):
    pass


class EmptyList(ValueError):
    pass


class WrongArity(ValueError):
    pass


class ProtocolError(Exception):
    pass


class ScorerTimeout(Exception):
    pass


class TransportError(Exception):
    pass


@dataclass(frozen=True)
class PromptChunk:
    question: str
    answer: str
    transcript_window: str
    fused: tuple[np.ndarray, ...]


@dataclass(frozen=True)
class ScoreRecord:
    qa_id: str
    answer_index: int
    p_yes: float
    per_chunk: tuple[float, ...]


@dataclass
class ToyScorerParams:
    """Weights of the built-in scorer: w spans the 4 d-sized feature blocks."""

    w: np.ndarray
    b0: float

    def __post_init__(self):
        self.w = np.asarray(self.w, dtype=np.float64)
        if self.w.ndim != 1 or self.w.shape[0] % 4 != 0:
            raise ValueError(f"w must be a flat vector of length 4*d, got {self.w.shape}")
        if not (np.all(np.isfinite(self.w)) and np.isfinite(self.b0)):
            raise ValueError("scorer parameters must be finite")

    @property
    def d(self) -> int:
        return self.w.shape[0] // 4

    def copy(self) -> "ToyScorerParams":
        return ToyScorerParams(self.w.copy(), self.b0)


def init_scorer(d: int) -> ToyScorerParams:
    return ToyScorerParams(np.zeros(4 * d), 0.0)


def tokenize(text: str) -> list[str]:
    return text.split()


def chunk_transcript(tokens: list[str], chunk_size: int, overlap: int) -> list[list[str]]:
    """Overlapping windows over the token list.

    Windows start at multiples of (chunk_size - overlap); the last window may
    be shorter, and a token list that fits in one chunk yields exactly one
    window. Zero tokens yield one empty window.
    """
    if chunk_size <= overlap:
        raise InvalidChunking(f"chunk_size {chunk_size} must exceed overlap {overlap}")
    if overlap < 0:
        raise InvalidChunking(f"overlap must be >= 0, got {overlap}")
    n = len(tokens)
    if n <= chunk_size:
        return [tokens[:]]
    stride = chunk_size - overlap
    windows = []
    start = 0
    while True:
        windows.append(tokens[start : start + chunk_size])
        if start + chunk_size >= n:
            break
        start += stride
    return windows


def sigmoid(x: float) -> float:
    if x >= 0:
        return float(1.0 / (1.0 + np.exp(-x)))
    e = np.exp(x)
    return float(e / (1.0 + e))


def clamp_probability(p: float) -> float:
    return min(max(p, PROB_CLAMP), 1.0 - PROB_CLAMP)


def mlm_binary_loss(p_yes: float, label: int) -> float:
    """Negative log-likelihood of a single binary mask prediction."""
    if label not in (0, 1):
        raise ValueError(f"label must be 0 or 1, got {label}")
    p = clamp_probability(p_yes)
    return -(label * np.log(p) + (1 - label) * np.log(1.0 - p))


def toy_features(
    question_emb: np.ndarray, answer_emb: np.ndarray, fused_mean: np.ndarray
) -> np.ndarray:
    q = np.asarray(question_emb, dtype=np.float64)
    a = np.asarray(answer_emb, dtype=np.float64)
    m = np.asarray(fused_mean, dtype=np.float64)
    return np.concatenate([q, a, m, a * m])


def fused_mean(fused: tuple[np.ndarray, ...], d: int) -> np.ndarray:
    if not fused:
        return np.zeros(d)
    return np.mean(np.stack([np.asarray(v, dtype=np.float64) for v in fused]), axis=0)


def toy_score(params: ToyScorerParams, chunk: PromptChunk, provider: EmbeddingProvider) -> float:
    if provider.dim() != params.d:
        raise DimMismatch(f"provider dim {provider.dim()} != scorer dim {params.d}")
    q = provider.embed_text(chunk.question).values
    a = provider.embed_text(chunk.answer).values
    m = fused_mean(chunk.fused, params.d)
    logit = float(params.w @ toy_features(q, a, m) + params.b0)
    return sigmoid(logit)


def collate_chunks(per_chunk: list[float], rule: str = "mean") -> float:
    if not per_chunk:
        raise EmptyList("no per-chunk scores to collate")
    if rule == "mean":
        return float(np.mean(per_chunk))
    if rule == "max":
        return float(np.max(per_chunk))
    raise ValueError(f"unknown collation rule {rule!r}")


def select_answer(scores: list[float]) -> int:
    if len(scores) != 4:
        raise WrongArity(f"expected exactly 4 scores, got {len(scores)}")
    best = 0
    for j in range(1, 4):
        if scores[j] > scores[best]:
            best = j
    return best


# --- evaluation ---------------------------------------------------------------

@dataclass
class EvalInputs:
    """Everything evaluate needs besides the instances themselves."""

    plans: dict[str, SamplePlan]
    store: EmbeddingStore
    transcripts: dict[str, str]


def plan_transcript(plan: SamplePlan) -> str:
    """Transcript context for chunking: each distinct turn's text once, in
    frame order (per-frame windows under the fallback)."""
    parts = []
    seen: set[int | tuple[int, int]] = set()
    for f in plan.frames:
        key = (f.turn_index, f.within_turn_index) if plan.used_fallback else f.turn_index
        if key in seen:
            continue
        seen.add(key)
        if f.transcript:
            parts.append(f.transcript)
    return " ".join(parts)


def assemble_inputs(plans: dict[str, SamplePlan], store: EmbeddingStore) -> EvalInputs:
    return EvalInputs(
        plans=plans,
        store=store,
        transcripts={vid: plan_transcript(plan) for vid, plan in plans.items()},
    )


@dataclass
class EvalReport:
    n: int
    accuracy: float
    per_video: dict[str, dict[str, int]]
    skipped: list[dict[str, str]]
    records: list[ScoreRecord] = field(default_factory=list, repr=False)

    def to_json_dict(self) -> dict:
        reasons: dict[str, int] = {}
        for item in self.skipped:
            reasons[item["reason"]] = reasons.get(item["reason"], 0) + 1
        return {
            "n": self.n,
            "accuracy": self.accuracy,
            "per_video": {vid: dict(counts) for vid, counts in sorted(self.per_video.items())},
            "skipped": {
                "count": len(self.skipped),
                "reasons": dict(sorted(reasons.items())),
                "instances": self.skipped,
            },
        }


class BuiltinScorer:
    """Wraps the toy scorer with a provider and a small text-embedding memo."""

    def __init__(self, params: ToyScorerParams, provider: EmbeddingProvider):
        self.params = params
        self.provider = provider
        self._text_memo: dict[str, np.ndarray] = {}

    def _embed_text(self, text: str) -> np.ndarray:
        cached = self._text_memo.get(text)
        if cached is None:
            cached = self.provider.embed_text(text).values
            self._text_memo[text] = cached
        return cached

    def score(self, chunk: PromptChunk) -> float:
        q = self._embed_text(chunk.question)
        a = self._embed_text(chunk.answer)
        m = fused_mean(chunk.fused, self.params.d)
        logit = float(self.params.w @ toy_features(q, a, m) + self.params.b0)
        return sigmoid(logit)


def evaluate(
    instances: list[QAInstance],
    inputs: EvalInputs,
    scorer,
    adapter: AdapterParams,
    fusion_config: FusionConfig,
    chunk_size: int = DEFAULT_CHUNK_SIZE,
    overlap: int = DEFAULT_OVERLAP,
    collation: str = "mean",
    workers: int = 1,
) -> EvalReport:
    """Score every instance and report accuracy over the scored ones.

    Instances with a missing plan or missing store embeddings are skipped
    and tallied (never silently dropped); they do not enter the accuracy
    denominator. Chunks share the full fused frame list for the video; only
    the transcript window varies per chunk. Parallelism never changes the
    result: per-instance work is independent and reduced in instance order.
    """
    if collation not in COLLATION_RULES:
        raise ValueError(f"unknown collation rule {collation!r}")

    def score_instance(instance: QAInstance):
        plan = inputs.plans.get(instance.video_id)
        if plan is None:
            return ("skip", instance, "missing_plan", instance.video_id)
        fused_values = []
        for f in plan.frames:
            fkey = frame_key(plan.video_id, f.timestamp)
            tkey = text_key_for_frame(plan.video_id, f.turn_index, f.timestamp)
            if fkey not in inputs.store:
                return ("skip", instance, "missing_embedding", fkey)
            if tkey not in inputs.store:
                return ("skip", instance, "missing_embedding", tkey)
            z = fuse(inputs.store.get(fkey), inputs.store.get(tkey), fusion_config)
            fused_values.append(adapter_apply(adapter, z))
        fused_tuple = tuple(fused_values)
        windows = chunk_transcript(
            tokenize(inputs.transcripts.get(instance.video_id, "")), chunk_size, overlap
        )
        records = []
        scores = []
        for j, answer in enumerate(instance.answers):
            per_chunk = []
            for window in windows:
                chunk = PromptChunk(instance.question, answer, " ".join(window), fused_tuple)
                per_chunk.append(scorer.score(chunk))
            p = collate_chunks(per_chunk, collation)
            records.append(ScoreRecord(instance.qa_id, j, p, tuple(per_chunk)))
            scores.append(p)
        predicted = select_answer(scores)
        return ("ok", instance, predicted, records)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(score_instance, instances))
    else:
        results = [score_instance(inst) for inst in instances]

    n = 0
    correct = 0
    per_video: dict[str, dict[str, int]] = {}
    skipped: list[dict[str, str]] = []
    all_records: list[ScoreRecord] = []
    for result in results:
        if result[0] == "skip":
            _, instance, reason, detail = result
            skipped.append({"qa_id": instance.qa_id, "reason": reason, "detail": detail})
            continue
        _, instance, predicted, records = result
        n += 1
        hit = int(predicted == instance.gold_index)
        correct += hit
        stats = per_video.setdefault(instance.video_id, {"n": 0, "correct": 0})
        stats["n"] += 1
        stats["correct"] += hit
        all_records.extend(records)

    accuracy = correct / n if n else 0.0
    return EvalReport(n, accuracy, per_video, skipped, all_records)


# --- external scorer protocol ---------------------------------------------------

class ExternalScorer:
    """Line-delimited JSON scorer over a subprocess pipe or a TCP socket.

    Endpoint forms: ``cmd:<command line>`` or ``tcp:<host>:<port>``. One
    request is a single line {id, question, answer, transcript_window, d,
    fused} where fused holds one base64 string of little-endian f32 values
    per frame; the response must echo the id and give p_yes strictly inside
    (0, 1). Calls are serialized on one connection.
    """

    def __init__(self, endpoint: str, timeout: float = 30.0):
        self.endpoint = endpoint
        self.timeout = timeout
        self._lock = threading.Lock()
        self._counter = 0
        self._proc: subprocess.Popen | None = None
        self._sock: socket.socket | None = None
        self._sock_file = None
        if endpoint.startswith("cmd:"):
            command = shlex.split(endpoint[len("cmd:"):])
            if not command:
                raise ValueError("empty cmd endpoint")
            try:
                self._proc = subprocess.Popen(
                    command,
                    stdin=subprocess.PIPE,
                    stdout=subprocess.PIPE,
                )
            except OSError as exc:
                raise TransportError(f"cannot spawn scorer {command!r}: {exc}") from exc
        elif endpoint.startswith("tcp:"):
            host, _, port = endpoint[len("tcp:"):].rpartition(":")
            if not host or not port.isdigit():
                raise ValueError(f"bad tcp endpoint {endpoint!r}")
            try:
                self._sock = socket.create_connection((host, int(port)), timeout=timeout)
                self._sock.settimeout(timeout)
                self._sock_file = self._sock.makefile("rwb")
            except OSError as exc:
                raise TransportError(f"cannot connect to {endpoint!r}: {exc}") from exc
        else:
            raise ValueError(f"endpoint must start with 'cmd:' or 'tcp:', got {endpoint!r}")

    def score(self, chunk: PromptChunk) -> float:
        with self._lock:
            self._counter += 1
            request_id = f"r{self._counter}"
            d = int(chunk.fused[0].shape[0]) if chunk.fused else 0
            request = {
                "id": request_id,
                "question": chunk.question,
                "answer": chunk.answer,
                "transcript_window": chunk.transcript_window,
                "d": d,
                "fused": [
                    base64.b64encode(
                        np.asarray(v, dtype="<f4").tobytes()
                    ).decode("ascii")
                    for v in chunk.fused
                ],
            }
            line = (json.dumps(request, ensure_ascii=False) + "\n").encode("utf-8")
            response = self._roundtrip(line)
        try:
            obj = json.loads(response)
        except json.JSONDecodeError:
            raise ProtocolError(f"response is not JSON: {response[:200]!r}") from None
        if obj.get("id") != request_id:
            raise ProtocolError(f"response id {obj.get('id')!r} != request id {request_id!r}")
        p = obj.get("p_yes")
        if not isinstance(p, (int, float)) or isinstance(p, bool) or not 0.0 < p < 1.0:
            raise ProtocolError(f"p_yes {p!r} not strictly inside (0, 1)")
        return float(p)

    def _roundtrip(self, line: bytes) -> bytes:
        if self._proc is not None:
            return self._pipe_roundtrip(line)
        assert self._sock_file is not None
        try:
            self._sock_file.write(line)
            self._sock_file.flush()
            response = self._sock_file.readline()
        except socket.timeout:
            raise ScorerTimeout(f"no response within {self.timeout}s") from None
        except OSError as exc:
            raise TransportError(str(exc)) from exc
        if not response:
            raise TransportError("connection closed by scorer")
        return response

    def _pipe_roundtrip(self, line: bytes) -> bytes:
        proc = self._proc
        if proc.poll() is not None:
            raise TransportError(f"scorer process exited with code {proc.returncode}")
        try:
            proc.stdin.write(line)
            proc.stdin.flush()
        except (OSError, ValueError) as exc:
            raise TransportError(f"cannot write to scorer: {exc}") from exc
        ready, _, _ = select.select([proc.stdout], [], [], self.timeout)
        if not ready:
            raise ScorerTimeout(f"no response within {self.timeout}s")
        response = proc.stdout.readline()
        if not response:
            raise TransportError("scorer closed its output")
        return response

    def close(self) -> None:
        if self._proc is not None:
            self._proc.stdin.close()
            try:
                self._proc.wait(timeout=2)
            except subprocess.TimeoutExpired:
                self._proc.kill()
                self._proc.wait()
            self._proc = None
        if self._sock_file is not None:
            self._sock_file.close()
            self._sock_file = None
        if self._sock is not None:
            self._sock.close()
            self._sock = None

    def __enter__(self):
        return self

    def __exit__(self, *exc_info):
        self.close()


def external_score(endpoint: str, chunk: PromptChunk, timeout: float = 30.0) -> float:
    """One-shot convenience: open the endpoint, score one chunk, close."""
    with ExternalScorer(endpoint, timeout=timeout) as scorer:
        return scorer.score(chunk)
