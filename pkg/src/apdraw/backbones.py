"""Adapters for the four external pretrained functions the pipeline consumes:
edge extraction, perceptual distance, multi-layer feature activations, and an
image embedding for distribution distances.

Each adapter can load an externally produced TorchScript graph, or run a
built-in deterministic fallback so the full test suite works without any
downloaded weights. Every adapter counts its invocations in ``.calls`` so
wiring tests can assert which code paths touched it.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass
from typing import Any

import torch
import torch.nn.functional as nnf

FALLBACK_FEATURE_CHANNELS = (8, 16, 32, 64, 128)


class BackboneConfigError(RuntimeError):
    """Adapter weights missing while fallbacks are disabled."""


def _seeded(shape: tuple[int, ...], seed: int, scale: float) -> torch.Tensor:
    gen = torch.Generator().manual_seed(seed)
    return torch.randn(shape, generator=gen) * scale


def _ensure_batched(x: torch.Tensor) -> tuple[torch.Tensor, bool]:
    if x.dim() == 3:
        return x.unsqueeze(0), True
    if x.dim() == 4:
        return x, False
    raise ValueError(f"expected (C,H,W) or (B,C,H,W) tensor, got shape {tuple(x.shape)}")


class EdgeExtractor:
    """Edge probability maps in [0, 1], same spatial size as the input.

    Fallback: gradient-magnitude detector (3x3 Sobel pair, replicate padding),
    normalized by its maximum response and smoothed near zero so constant
    images map to exactly 0 while staying differentiable.
    """

    _DELTA = 1e-10

    def __init__(self, script: Any | None = None):
        self.script = script
        self.calls = 0
        kx = torch.tensor([[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]])
        self._kernel = torch.stack([kx, kx.t()]).unsqueeze(1)

    def __call__(self, image: torch.Tensor) -> torch.Tensor:
        self.calls += 1
        x, squeeze = _ensure_batched(image)
        if self.script is not None:
            out = self.script(x)
        else:
            gray = x.mean(dim=1, keepdim=True)
            padded = nnf.pad(gray, (1, 1, 1, 1), mode="replicate")
            g = nnf.conv2d(padded, self._kernel.to(x.dtype))
            sq = (g * g).sum(dim=1, keepdim=True)
            out = (torch.sqrt(sq + self._DELTA) - math.sqrt(self._DELTA)) / (4.0 * math.sqrt(2.0))
        return out.squeeze(0) if squeeze else out


class PerceptualDistance:
    """Scalar perceptual distance, 0 at identical inputs, differentiable.

    Fallback: mean squared feature distance over a fixed seeded random-weight
    conv pyramid (plus the raw pixel level); symmetric by construction.
    """

    expected_channels = 3

    def __init__(self, script: Any | None = None, seed: int = 0):
        self.script = script
        self.calls = 0
        chans = (3, 8, 16, 32)
        self._weights = [
            _seeded((chans[i + 1], chans[i], 3, 3), seed * 7919 + i, 1.0 / (3.0 * math.sqrt(chans[i])))
            for i in range(3)
        ]

    def _pyramid(self, x: torch.Tensor) -> list[torch.Tensor]:
        feats = [x]
        h = x
        for w in self._weights:
            h = torch.tanh(nnf.conv2d(h, w.to(x.dtype), stride=2, padding=1))
            feats.append(h)
        return feats

    def __call__(self, a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
        self.calls += 1
        if a.shape != b.shape:
            raise ValueError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")
        a4, _ = _ensure_batched(a)
        b4, _ = _ensure_batched(b)
        if self.script is not None:
            return self.script(a4, b4).mean()
        if a4.shape[1] != self.expected_channels:
            raise ValueError(f"fallback expects {self.expected_channels} channels, got {a4.shape[1]}")
        total = torch.zeros((), dtype=a4.dtype)
        fa, fb = self._pyramid(a4), self._pyramid(b4)
        for u, v in zip(fa, fb):
            total = total + ((u - v) ** 2).mean()
        return total / len(fa)


class FeaturePyramid:
    """Five feature activations with non-increasing spatial size.

    Fallback: seeded random conv pyramid, channels (8, 16, 32, 64, 128) at
    scales 1, 1/2, 1/4, 1/8, 1/16; grayscale inputs are replicated to 3
    channels at the stem.
    """

    def __init__(self, script: Any | None = None, seed: int = 0):
        self.script = script
        self.calls = 0
        chans = (3,) + FALLBACK_FEATURE_CHANNELS
        self._weights = [
            _seeded((chans[i + 1], chans[i], 3, 3), seed * 6271 + i, 1.0 / (3.0 * math.sqrt(chans[i])))
            for i in range(5)
        ]

    def __call__(self, image: torch.Tensor) -> list[torch.Tensor]:
        self.calls += 1
        x, squeeze = _ensure_batched(image)
        if self.script is not None:
            stack = list(self.script(x))
        else:
            if x.shape[1] == 1:
                x = x.expand(-1, 3, -1, -1)
            stack = []
            h = x
            for i, w in enumerate(self._weights):
                h = torch.tanh(nnf.conv2d(h, w.to(x.dtype), stride=1 if i == 0 else 2, padding=1))
                stack.append(h)
        if len(stack) != 5:
            raise ValueError(f"feature adapter must yield 5 activations, got {len(stack)}")
        return [t.squeeze(0) if squeeze else t for t in stack]


class FidEmbedder:
    """Per-image embedding matrix (N, E) for Frechet-distance evaluation.

    Fallback: global average pooling of the fallback feature pyramid,
    concatenated and passed through a fixed seeded projection to E dims.
    """

    def __init__(self, script: Any | None = None, seed: int = 0, dim: int = 64):
        self.script = script
        self.calls = 0
        self.dim = dim
        total = sum(FALLBACK_FEATURE_CHANNELS)
        self._proj = _seeded((total, dim), seed * 4817 + 11, 1.0 / math.sqrt(total))
        self._features = FeaturePyramid(seed=seed)

    def __call__(self, images: torch.Tensor) -> torch.Tensor:
        self.calls += 1
        x, _ = _ensure_batched(images)
        if x.shape[0] < 2:
            raise ValueError(f"need at least 2 images to embed for a distribution distance, got {x.shape[0]}")
        if self.script is not None:
            return self.script(x)
        pooled = [f.mean(dim=(2, 3)) for f in self._features(x)]
        return torch.cat(pooled, dim=1) @ self._proj.to(x.dtype)


@dataclass
class Backbones:
    edge: EdgeExtractor
    perceptual: PerceptualDistance
    features: FeaturePyramid
    fid: FidEmbedder


def _load_script(path: str, key: str):
    if not path or not os.path.exists(path):
        raise BackboneConfigError(
            f"backbones.fallback is false but backbones.{key} does not point to a loadable graph: {path!r}"
        )
    return torch.jit.load(path, map_location="cpu")


def load_backbones(cfg: dict) -> Backbones:
    section = cfg.get("backbones", {})
    seed = int(section.get("seed", 0))
    dim = int(section.get("fid_dim", 64))
    if section.get("fallback", True):
        return Backbones(
            edge=EdgeExtractor(),
            perceptual=PerceptualDistance(seed=seed),
            features=FeaturePyramid(seed=seed),
            fid=FidEmbedder(seed=seed, dim=dim),
        )
    return Backbones(
        edge=EdgeExtractor(_load_script(section.get("edge", ""), "edge")),
        perceptual=PerceptualDistance(_load_script(section.get("perceptual", ""), "perceptual"), seed=seed),
        features=FeaturePyramid(_load_script(section.get("features", ""), "features"), seed=seed),
        fid=FidEmbedder(_load_script(section.get("fid", ""), "fid"), seed=seed, dim=dim),
    )
