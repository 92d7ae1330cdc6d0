"""Vision-language fusion: convex combination of the (vision, text) pair,
the trainable affine adapter that projects the result, and gradient-check
utilities for training code built on top.

Training math runs at 64-bit even though stored embeddings are 32-bit; the
checkpoint format keeps full 64-bit adapter weights.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .embeddings import EmbeddingVector

CHECKPOINT_VERSION = 1
DEFAULT_ALPHA = 0.5
DEFAULT_INIT_NOISE = 0.01


class DimMismatch(ValueError):
    pass


class NonFiniteLoss(ValueError):
    pass


@dataclass(frozen=True)
class FusionConfig:
    """alpha is the vision weight of the linear combination, in [0, 1]."""

    alpha: float = DEFAULT_ALPHA
    d: int = 512

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must be in [0, 1], got {self.alpha}")
        if self.d < 1:
            raise ValueError(f"d must be >= 1, got {self.d}")


@dataclass
class AdapterParams:
    """Affine map x -> W x + b over the fused embedding space."""

    W: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        self.W = np.asarray(self.W, dtype=np.float64)
        self.b = np.asarray(self.b, dtype=np.float64)
        d = self.b.shape[0]
        if self.W.shape != (d, d):
            raise DimMismatch(f"W shape {self.W.shape} does not match b length {d}")
        if not (np.all(np.isfinite(self.W)) and np.all(np.isfinite(self.b))):
            raise ValueError("adapter parameters must be finite")

    @property
    def d(self) -> int:
        return int(self.b.shape[0])

    def copy(self) -> "AdapterParams":
        return AdapterParams(self.W.copy(), self.b.copy())


def init_adapter(d: int, seed: int = 0, noise: float = DEFAULT_INIT_NOISE) -> AdapterParams:
    """Identity plus small Gaussian noise; bias zero. Starts the adapter
    near pass-through of the fused signal."""
    rng = np.random.default_rng(seed)
    W = np.eye(d) + noise * rng.standard_normal((d, d))
    return AdapterParams(W, np.zeros(d))


def _values(x) -> np.ndarray:
    if isinstance(x, EmbeddingVector):
        return x.values
    return np.asarray(x)


def fuse(a, b, config: FusionConfig) -> np.ndarray:
    """Convex combination alpha * A + (1 - alpha) * B, at 64-bit."""
    av = _values(a).astype(np.float64)
    bv = _values(b).astype(np.float64)
    if av.shape != bv.shape or av.shape[0] != config.d:
        raise DimMismatch(
            f"operand dims {av.shape[0]}/{bv.shape[0]} do not match configured d={config.d}"
        )
    return config.alpha * av + (1.0 - config.alpha) * bv


def adapter_apply(params: AdapterParams, z) -> np.ndarray:
    zv = _values(z).astype(np.float64)
    if zv.shape[0] != params.d:
        raise DimMismatch(f"input dim {zv.shape[0]} != adapter dim {params.d}")
    return params.W @ zv + params.b


def adapter_gradient(
    params: AdapterParams, batch: Sequence[tuple[np.ndarray, np.ndarray]]
) -> tuple[np.ndarray, np.ndarray]:
    """Gradients of a scalar loss w.r.t. W and b, averaged over the batch.

    Each batch item is (z, g) where g is the upstream gradient dL/d(output)
    at output W z + b. For that output, dL/dW = g z^T and dL/db = g.
    """
    if not batch:
        raise ValueError("empty batch")
    dW = np.zeros_like(params.W)
    db = np.zeros_like(params.b)
    for z, g in batch:
        zv = np.asarray(z, dtype=np.float64)
        gv = np.asarray(g, dtype=np.float64)
        if zv.shape[0] != params.d or gv.shape[0] != params.d:
            raise DimMismatch("batch item dim does not match adapter dim")
        dW += np.outer(gv, zv)
        db += gv
    return dW / len(batch), db / len(batch)


@dataclass(frozen=True)
class GradientCheckReport:
    max_rel_error: float
    passed: bool
    n_checked: int
    worst_index: int


def gradient_check(
    loss_and_grad: Callable[[np.ndarray], tuple[float, np.ndarray]],
    params: np.ndarray,
    tolerance: float,
    step: float = 1e-5,
    max_coords: int | None = None,
    seed: int = 0,
) -> GradientCheckReport:
    """Compare an analytic gradient against central finite differences.

    loss_and_grad maps a flat 64-bit parameter vector to (loss, gradient).
    All coordinates are checked unless max_coords caps them, in which case a
    seeded random subsample is used. Relative error per coordinate is
    |analytic - numeric| / max(|analytic|, |numeric|, 1e-6).
    """
    params = np.asarray(params, dtype=np.float64)
    loss0, analytic = loss_and_grad(params)
    if not math.isfinite(loss0) or not np.all(np.isfinite(analytic)):
        raise NonFiniteLoss("loss or gradient non-finite at the checked point")
    if analytic.shape != params.shape:
        raise DimMismatch("gradient shape does not match parameter shape")

    coords = np.arange(params.size)
    if max_coords is not None and params.size > max_coords:
        rng = np.random.default_rng(seed)
        coords = np.sort(rng.choice(params.size, size=max_coords, replace=False))

    max_rel = 0.0
    worst = -1
    for i in coords:
        perturbed = params.copy()
        perturbed[i] = params[i] + step
        loss_hi, _ = loss_and_grad(perturbed)
        perturbed[i] = params[i] - step
        loss_lo, _ = loss_and_grad(perturbed)
        if not (math.isfinite(loss_hi) and math.isfinite(loss_lo)):
            raise NonFiniteLoss(f"loss non-finite when perturbing coordinate {i}")
        numeric = (loss_hi - loss_lo) / (2.0 * step)
        rel = float(abs(analytic[i] - numeric) / max(abs(analytic[i]), abs(numeric), 1e-6))
        if rel > max_rel:
            max_rel = rel
            worst = int(i)
    return GradientCheckReport(max_rel, bool(max_rel < tolerance), len(coords), worst)


# --- checkpoint file: JSON header line + raw little-endian f64 W then b -------

def save_adapter(params: AdapterParams, alpha: float, path: str | Path) -> None:
    header = {"d": params.d, "alpha": alpha, "format_version": CHECKPOINT_VERSION}
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8"))
        fh.write(b"\n")
        fh.write(np.ascontiguousarray(params.W, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(params.b, dtype="<f8").tobytes())


def load_adapter(path: str | Path) -> tuple[AdapterParams, float]:
    with open(path, "rb") as fh:
        header_line = fh.readline()
        try:
            header = json.loads(header_line.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError):
            raise ValueError(f"{path}: not an adapter checkpoint") from None
        if header.get("format_version") != CHECKPOINT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version")
        d = int(header["d"])
        body = fh.read()
    expected = 8 * (d * d + d)
    if len(body) != expected:
        raise ValueError(f"{path}: expected {expected} payload bytes, got {len(body)}")
    W = np.frombuffer(body[: 8 * d * d], dtype="<f8").reshape(d, d).copy()
    b = np.frombuffer(body[8 * d * d :], dtype="<f8").copy()
    return AdapterParams(W, b), float(header["alpha"])
