"""Frozen image-text encoders behind one small interface.

Two backends:

``tiny[:seed[:dim]]``
    A self-contained seeded torch network (conv stack for images, hashed
    embedding bag for text), deterministic across runs on CPU. No downloads,
    no weights files; meant for tests and offline pipelines.

``clip:<model-id>``
    A transformers CLIP checkpoint (needs the weights to be available
    locally or a reachable model hub). Loaded lazily; failures surface as
    EncoderLoadFailure.
"""

from __future__ import annotations

import hashlib

import cv2
import numpy as np
import torch


class EncoderLoadFailure(Exception):
    pass


class FrameTextEncoder:
    """Maps RGB frames and text strings to unit-norm float32 vectors."""

    name: str
    dim: int

    def encode_images(self, frames: list[np.ndarray]) -> np.ndarray:
        raise NotImplementedError

    def encode_texts(self, texts: list[str]) -> np.ndarray:
        raise NotImplementedError


class TinyEncoder(FrameTextEncoder):
    """Seeded random-weight encoder; a real forward pass over real pixels,
    not a hash of the inputs."""

    IMAGE_SIZE = 64
    VOCAB = 2048

    def __init__(self, seed: int = 0, dim: int = 64):
        self.name = f"tiny:{seed}:{dim}"
        self.dim = dim
        generator = torch.Generator().manual_seed(seed)

        def randn(*shape, scale):
            return torch.randn(*shape, generator=generator, dtype=torch.float64) * scale

        with torch.no_grad():
            self._conv1 = torch.nn.Conv2d(3, 8, 3, stride=2, padding=1).double()
            self._conv1.weight.copy_(randn(8, 3, 3, 3, scale=0.2))
            self._conv1.bias.copy_(randn(8, scale=0.05))
            self._conv2 = torch.nn.Conv2d(8, 16, 3, stride=2, padding=1).double()
            self._conv2.weight.copy_(randn(16, 8, 3, 3, scale=0.15))
            self._conv2.bias.copy_(randn(16, scale=0.05))
            self._image_head = torch.nn.Linear(16 * 4 * 4, dim).double()
            self._image_head.weight.copy_(randn(dim, 16 * 4 * 4, scale=0.08))
            self._image_head.bias.copy_(randn(dim, scale=0.05))
            self._token_table = randn(self.VOCAB, dim, scale=1.0)
            self._text_head = torch.nn.Linear(dim, dim).double()
            self._text_head.weight.copy_(randn(dim, dim, scale=0.3))
            self._text_head.bias.copy_(randn(dim, scale=0.1))
        for module in (self._conv1, self._conv2, self._image_head, self._text_head):
            for param in module.parameters():
                param.requires_grad_(False)

    def encode_images(self, frames: list[np.ndarray]) -> np.ndarray:
        if not frames:
            return np.zeros((0, self.dim), dtype=np.float32)
        batch = np.stack(
            [
                cv2.resize(frame, (self.IMAGE_SIZE, self.IMAGE_SIZE), interpolation=cv2.INTER_AREA)
                for frame in frames
            ]
        )
        tensor = torch.from_numpy(batch).double().permute(0, 3, 1, 2) / 127.5 - 1.0
        with torch.no_grad():
            x = torch.relu(self._conv1(tensor))
            x = torch.relu(self._conv2(x))
            x = torch.nn.functional.adaptive_avg_pool2d(x, 4).flatten(1)
            x = self._image_head(x)
        return _unit_rows(x.numpy())

    def encode_texts(self, texts: list[str]) -> np.ndarray:
        if not texts:
            return np.zeros((0, self.dim), dtype=np.float32)
        pooled = torch.zeros((len(texts), self.dim), dtype=torch.float64)
        for row, text in enumerate(texts):
            tokens = text.split() or ["<empty>"]
            ids = [self._token_id(token) for token in tokens]
            pooled[row] = self._token_table[ids].mean(dim=0)
        with torch.no_grad():
            out = torch.tanh(self._text_head(pooled))
        return _unit_rows(out.numpy())

    def _token_id(self, token: str) -> int:
        digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest()
        return int.from_bytes(digest, "little") % self.VOCAB


class ClipEncoder(FrameTextEncoder):
    def __init__(self, model_id: str, device: str = "cpu"):
        try:
            from transformers import CLIPModel, CLIPProcessor
        except ImportError as exc:
            raise EncoderLoadFailure(f"transformers not available: {exc}") from exc
        try:
            self._model = CLIPModel.from_pretrained(model_id).to(device).eval()
            self._processor = CLIPProcessor.from_pretrained(model_id)
        except Exception as exc:
            raise EncoderLoadFailure(f"cannot load CLIP {model_id!r}: {exc}") from exc
        self.name = f"clip:{model_id}"
        self.device = device
        self.dim = int(self._model.config.projection_dim)

    def encode_images(self, frames: list[np.ndarray]) -> np.ndarray:
        if not frames:
            return np.zeros((0, self.dim), dtype=np.float32)
        inputs = self._processor(images=list(frames), return_tensors="pt").to(self.device)
        with torch.no_grad():
            features = self._model.get_image_features(**inputs)
        return _unit_rows(features.cpu().numpy())

    def encode_texts(self, texts: list[str]) -> np.ndarray:
        if not texts:
            return np.zeros((0, self.dim), dtype=np.float32)
        inputs = self._processor(
            text=list(texts), return_tensors="pt", padding=True, truncation=True
        ).to(self.device)
        with torch.no_grad():
            features = self._model.get_text_features(**inputs)
        return _unit_rows(features.cpu().numpy())


def _unit_rows(matrix: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(matrix, axis=1, keepdims=True)
    norms[norms == 0.0] = 1.0
    return (matrix / norms).astype(np.float32)


def load_encoder(name: str, device: str = "cpu") -> FrameTextEncoder:
    """Instantiate an encoder from its name string."""
    if name.startswith("tiny"):
        parts = name.split(":")
        if len(parts) > 3:
            raise EncoderLoadFailure(f"bad tiny encoder name {name!r}")
        try:
            seed = int(parts[1]) if len(parts) > 1 else 0
            dim = int(parts[2]) if len(parts) > 2 else 64
        except ValueError:
            raise EncoderLoadFailure(f"bad tiny encoder name {name!r}") from None
        torch.set_num_threads(1)  # bit-identical runs regardless of host parallelism
        return TinyEncoder(seed=seed, dim=dim)
    if name.startswith("clip:"):
        return ClipEncoder(name[len("clip:"):], device=device)
    raise EncoderLoadFailure(f"unknown encoder {name!r} (expected tiny[:seed[:dim]] or clip:<id>)")
