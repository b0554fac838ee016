"""Learnable models: style-conditioned drawing generator, photo generator,
two-branch patch discriminator with local variants, style classifier, and the
quality regressor, plus checkpoint archives.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import torch
import torch.nn as nn

from .config import config_hash

CHECKPOINT_SCHEMA = 1
STYLE_BASIS = ((1.0, 0.0, 0.0), (0.0, 1.0, 0.0), (0.0, 0.0, 1.0))


class CheckpointError(RuntimeError):
    """Unreadable checkpoint or schema/config mismatch."""


class DegenerateRegionWarning(UserWarning):
    """A local-discriminator mask selected no pixels; the term is skipped."""


@dataclass
class DiscriminatorOutput:
    rf_map: torch.Tensor
    cls_probs: torch.Tensor | None = None


def as_style_tensor(s: "Sequence[float] | np.ndarray | torch.Tensor", batch: int | None = None) -> torch.Tensor:
    """Coerce a style vector (or batch of them) to a float tensor of shape (B, 3)."""
    t = s if isinstance(s, torch.Tensor) else torch.as_tensor(np.asarray(s), dtype=torch.float32)
    if t.dim() == 1:
        t = t.unsqueeze(0)
    if t.dim() != 2 or t.shape[1] != 3:
        raise ValueError(f"style vector must have 3 components, got shape {tuple(t.shape)}")
    if batch is not None and t.shape[0] == 1 and batch > 1:
        t = t.expand(batch, -1)
    return t


def _norm(channels: int) -> nn.Module:
    return nn.InstanceNorm2d(channels)


class ResBlock(nn.Module):
    def __init__(self, channels: int):
        super().__init__()
        self.body = nn.Sequential(
            nn.Conv2d(channels, channels, 3, 1, 1),
            _norm(channels),
            nn.ReLU(inplace=True),
            nn.Conv2d(channels, channels, 3, 1, 1),
            _norm(channels),
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return x + self.body(x)


class DrawingGenerator(nn.Module):
    """Photo -> drawing generator with style injection.

    The 3-component style vector is broadcast to a 3-channel map, concatenated
    after the second down-convolution, merged by a flat convolution, and
    followed by the residual trunk and two up-convolutions. Output is a
    single-channel drawing in [0, 1].
    """

    def __init__(self, base_channels: int = 64, n_resblocks: int = 9, use_style: bool = True):
        super().__init__()
        if n_resblocks < 1:
            raise ValueError("n_resblocks must be >= 1")
        self.use_style = use_style
        c = base_channels
        self.stem = nn.Sequential(nn.Conv2d(3, c, 7, 1, 3, padding_mode="reflect"), _norm(c), nn.ReLU(True))
        self.down1 = nn.Sequential(nn.Conv2d(c, 2 * c, 3, 2, 1), _norm(2 * c), nn.ReLU(True))
        self.down2 = nn.Sequential(nn.Conv2d(2 * c, 4 * c, 3, 2, 1), _norm(4 * c), nn.ReLU(True))
        merged_in = 4 * c + (3 if use_style else 0)
        self.merge = nn.Sequential(nn.Conv2d(merged_in, 4 * c, 3, 1, 1), _norm(4 * c), nn.ReLU(True))
        self.blocks = nn.Sequential(*[ResBlock(4 * c) for _ in range(n_resblocks)])
        self.up1 = nn.Sequential(nn.ConvTranspose2d(4 * c, 2 * c, 3, 2, 1, output_padding=1), _norm(2 * c), nn.ReLU(True))
        self.up2 = nn.Sequential(nn.ConvTranspose2d(2 * c, c, 3, 2, 1, output_padding=1), _norm(c), nn.ReLU(True))
        self.head = nn.Conv2d(c, 1, 7, 1, 3, padding_mode="reflect")

    def forward(self, p: torch.Tensor, s: torch.Tensor | None = None) -> torch.Tensor:
        if p.shape[-1] % 4 or p.shape[-2] % 4:
            raise ValueError(f"input spatial size must be divisible by 4, got {tuple(p.shape[-2:])}")
        h = self.down2(self.down1(self.stem(p)))
        if self.use_style:
            if s is None:
                raise ValueError("style vector required")
            sv = as_style_tensor(s, batch=p.shape[0]).to(p.dtype)
            smap = sv[:, :, None, None].expand(-1, -1, h.shape[2], h.shape[3])
            h = torch.cat([h, smap], dim=1)
        h = self.blocks(self.merge(h))
        return torch.sigmoid(self.head(self.up2(self.up1(h))))


class PhotoGenerator(nn.Module):
    """Drawing -> photo generator: same encoder-decoder shape, no style input."""

    def __init__(self, base_channels: int = 64, n_resblocks: int = 9):
        super().__init__()
        c = base_channels
        self.stem = nn.Sequential(nn.Conv2d(1, c, 7, 1, 3, padding_mode="reflect"), _norm(c), nn.ReLU(True))
        self.down1 = nn.Sequential(nn.Conv2d(c, 2 * c, 3, 2, 1), _norm(2 * c), nn.ReLU(True))
        self.down2 = nn.Sequential(nn.Conv2d(2 * c, 4 * c, 3, 2, 1), _norm(4 * c), nn.ReLU(True))
        self.blocks = nn.Sequential(*[ResBlock(4 * c) for _ in range(n_resblocks)])
        self.up1 = nn.Sequential(nn.ConvTranspose2d(4 * c, 2 * c, 3, 2, 1, output_padding=1), _norm(2 * c), nn.ReLU(True))
        self.up2 = nn.Sequential(nn.ConvTranspose2d(2 * c, c, 3, 2, 1, output_padding=1), _norm(c), nn.ReLU(True))
        self.head = nn.Conv2d(c, 3, 7, 1, 3, padding_mode="reflect")

    def forward(self, d: torch.Tensor) -> torch.Tensor:
        if d.shape[-1] % 4 or d.shape[-2] % 4:
            raise ValueError(f"input spatial size must be divisible by 4, got {tuple(d.shape[-2:])}")
        h = self.down2(self.down1(self.stem(d)))
        return torch.sigmoid(self.head(self.up2(self.up1(self.blocks(h)))))


class PatchDiscriminator(nn.Module):
    """PatchGAN critic: three shared stride-2 blocks, a real/fake head of two
    flat convolutions (probability map at exactly 1/8 resolution), and an
    optional classification branch (two more downs, pooling, softmax).
    """

    rf_margin = 0

    def __init__(self, in_channels: int = 1, base_channels: int = 64, n_classes: int = 0):
        super().__init__()
        c = base_channels
        self.shared = nn.Sequential(
            nn.Conv2d(in_channels, c, 3, 2, 1), nn.LeakyReLU(0.2, True),
            nn.Conv2d(c, 2 * c, 3, 2, 1), _norm(2 * c), nn.LeakyReLU(0.2, True),
            nn.Conv2d(2 * c, 4 * c, 3, 2, 1), _norm(4 * c), nn.LeakyReLU(0.2, True),
        )
        self.rf_head = nn.Sequential(
            nn.Conv2d(4 * c, 4 * c, 3, 1, 1), nn.LeakyReLU(0.2, True),
            nn.Conv2d(4 * c, 1, 3, 1, 1),
        )
        self.n_classes = n_classes
        if n_classes:
            self.cls_tail = nn.Sequential(
                nn.Conv2d(4 * c, 8 * c, 3, 2, 1), _norm(8 * c), nn.LeakyReLU(0.2, True),
                nn.Conv2d(8 * c, 8 * c, 3, 2, 1), _norm(8 * c), nn.LeakyReLU(0.2, True),
                nn.AdaptiveAvgPool2d(1), nn.Flatten(),
                nn.Linear(8 * c, n_classes),
            )

    def forward(self, x: torch.Tensor) -> DiscriminatorOutput:
        if x.shape[-1] % 8 or x.shape[-2] % 8:
            raise ValueError(f"input spatial size must be divisible by 8, got {tuple(x.shape[-2:])}")
        h = self.shared(x)
        rf = torch.sigmoid(self.rf_head(h))
        probs = torch.softmax(self.cls_tail(h), dim=1) if self.n_classes else None
        return DiscriminatorOutput(rf_map=rf, cls_probs=probs)


class StyleClassifier(nn.Module):
    """Drawing -> 3 style probabilities; doubles as the style feature extractor."""

    def __init__(self, base_channels: int = 32):
        super().__init__()
        c = base_channels
        # no norm layers: the net must accept inputs small enough to reach
        # 1x1 activations, where instance statistics degenerate
        self.body = nn.Sequential(
            nn.Conv2d(1, c, 3, 2, 1), nn.LeakyReLU(0.2, True),
            nn.Conv2d(c, 2 * c, 3, 2, 1), nn.LeakyReLU(0.2, True),
            nn.Conv2d(2 * c, 4 * c, 3, 2, 1), nn.LeakyReLU(0.2, True),
            nn.AdaptiveAvgPool2d(1), nn.Flatten(),
        )
        self.fc = nn.Linear(4 * c, 3)

    def forward(self, d: torch.Tensor) -> torch.Tensor:
        return self.fc(self.body(d))


class QualityModel(nn.Module):
    """Drawing -> quality score in [0.1, 1] via a scaled sigmoid head."""

    def __init__(self, base_channels: int = 32):
        super().__init__()
        c = base_channels
        self.body = nn.Sequential(
            nn.Conv2d(1, c, 3, 2, 1), nn.LeakyReLU(0.2, True),
            nn.Conv2d(c, 2 * c, 3, 2, 1), nn.LeakyReLU(0.2, True),
            nn.Conv2d(2 * c, 4 * c, 3, 2, 1), nn.LeakyReLU(0.2, True),
            nn.AdaptiveAvgPool2d(1), nn.Flatten(),
        )
        self.fc = nn.Linear(4 * c, 1)

    def forward(self, d: torch.Tensor) -> torch.Tensor:
        z = self.fc(self.body(d)).squeeze(-1)
        return 0.1 + 0.9 * torch.sigmoid(z)


def generate_drawing(G: DrawingGenerator, p: torch.Tensor, s=None) -> torch.Tensor:
    x, squeeze = (p.unsqueeze(0), True) if p.dim() == 3 else (p, False)
    if x.shape[1] != 3:
        raise ValueError(f"photo must have 3 channels, got {x.shape[1]}")
    out = G(x, s) if G.use_style else G(x)
    return out.squeeze(0) if squeeze else out


def reconstruct_photo(F: PhotoGenerator, d: torch.Tensor) -> torch.Tensor:
    x, squeeze = (d.unsqueeze(0), True) if d.dim() == 3 else (d, False)
    if x.shape[1] != 1:
        raise ValueError(f"drawing must have 1 channel, got {x.shape[1]}")
    out = F(x)
    return out.squeeze(0) if squeeze else out


def discriminate_drawing(d: torch.Tensor, D: PatchDiscriminator) -> DiscriminatorOutput:
    x = d.unsqueeze(0) if d.dim() == 3 else d
    return D(x)


def discriminate_photo(p: torch.Tensor, D_P: PatchDiscriminator) -> torch.Tensor:
    x = p.unsqueeze(0) if p.dim() == 3 else p
    return D_P(x).rf_map


def masked_drawing(d: torch.Tensor, mask) -> torch.Tensor | None:
    """Apply a binary region mask, filling the background with white (1.0).

    Returns None (with a warning) when the mask selects no pixels.
    """
    m = mask if isinstance(mask, torch.Tensor) else torch.as_tensor(np.asarray(mask))
    m = m.to(d.dtype)
    while m.dim() < d.dim():
        m = m.unsqueeze(0)
    if m.sum() == 0:
        warnings.warn("region mask is empty; skipping this local term", DegenerateRegionWarning)
        return None
    return d * m + (1.0 - m)


def discriminate_local(d: torch.Tensor, mask, D_region: PatchDiscriminator) -> torch.Tensor | None:
    masked = masked_drawing(d, mask)
    if masked is None:
        return None
    x = masked.unsqueeze(0) if masked.dim() == 3 else masked
    return D_region(x).rf_map


def classify_style(d: torch.Tensor, C: StyleClassifier) -> torch.Tensor:
    x, squeeze = (d.unsqueeze(0), True) if d.dim() == 3 else (d, False)
    probs = torch.softmax(C(x), dim=1)
    return probs.squeeze(0) if squeeze else probs


def predict_quality(d: torch.Tensor, M: QualityModel) -> torch.Tensor:
    x, squeeze = (d.unsqueeze(0), True) if d.dim() == 3 else (d, False)
    out = M(x)
    return out.squeeze(0) if squeeze else out


@dataclass
class ModelBundle:
    g: DrawingGenerator
    f: PhotoGenerator
    d_drawing: PatchDiscriminator
    d_photo: PatchDiscriminator
    d_locals: dict = field(default_factory=dict)
    d_mask: PatchDiscriminator | None = None
    classifier: StyleClassifier | None = None
    quality: QualityModel | None = None

    def named_models(self) -> dict[str, nn.Module]:
        out: dict[str, nn.Module] = {
            "g": self.g, "f": self.f, "d_drawing": self.d_drawing, "d_photo": self.d_photo,
        }
        for name, model in self.d_locals.items():
            out[f"d_{name}"] = model
        if self.d_mask is not None:
            out["d_mask"] = self.d_mask
        if self.classifier is not None:
            out["classifier"] = self.classifier
        if self.quality is not None:
            out["quality"] = self.quality
        return out


def _init_weights(module: nn.Module) -> None:
    for m in module.modules():
        if isinstance(m, (nn.Conv2d, nn.ConvTranspose2d, nn.Linear)):
            nn.init.normal_(m.weight, 0.0, 0.02)
            if m.bias is not None:
                nn.init.zeros_(m.bias)


def build_models(cfg: dict, with_aux: bool = True, seed: int | None = None) -> ModelBundle:
    """Construct the full model set from config (ablation-aware)."""
    net = cfg["networks"]
    abl = cfg["train"]["ablations"]
    c = int(net["base_channels"])
    n_res = int(net["n_resblocks"])
    if seed is not None:
        torch.manual_seed(seed)
    bundle = ModelBundle(
        g=DrawingGenerator(c, n_res, use_style=not abl["no_style_feature"]),
        f=PhotoGenerator(c, n_res),
        d_drawing=PatchDiscriminator(1, c, n_classes=0 if abl["no_style_feature"] else 3),
        d_photo=PatchDiscriminator(3, c),
    )
    if abl["single_disc_mask_channel"]:
        bundle.d_mask = PatchDiscriminator(2, c)
    elif not abl["no_local_disc"]:
        bundle.d_locals = {name: PatchDiscriminator(1, c) for name in ("eyes", "nose", "lips")}
    if with_aux:
        aux_c = max(8, c // 2)
        bundle.classifier = StyleClassifier(aux_c)
        bundle.quality = QualityModel(aux_c)
    for model in bundle.named_models().values():
        _init_weights(model)
    return bundle


def save_model(path: str, model: nn.Module, cfg: dict, name: str) -> None:
    header = {
        "profile": cfg.get("profile"),
        "image_size": cfg["corpus"]["image_size"],
        "base_channels": cfg["networks"]["base_channels"],
        "n_resblocks": cfg["networks"]["n_resblocks"],
    }
    torch.save(
        {
            "schema_version": CHECKPOINT_SCHEMA,
            "name": name,
            "config": json.dumps(header, sort_keys=True),
            "config_hash": config_hash(cfg),
            "state_dict": model.state_dict(),
        },
        path,
    )


def load_model(path: str, model: nn.Module, cfg: dict) -> nn.Module:
    try:
        blob = torch.load(path, map_location="cpu", weights_only=False)
    except Exception as err:
        raise CheckpointError(f"cannot read checkpoint {path!r}: {err}") from err
    if not isinstance(blob, dict) or "schema_version" not in blob:
        raise CheckpointError(f"{path!r} is not a model archive")
    if blob["schema_version"] != CHECKPOINT_SCHEMA:
        raise CheckpointError(
            f"{path!r} has schema {blob['schema_version']}, this build reads {CHECKPOINT_SCHEMA}; migrate first"
        )
    if blob["config_hash"] != config_hash(cfg):
        raise CheckpointError(
            f"{path!r} was written under a different configuration ({blob.get('config')}); refusing cross-profile load"
        )
    model.load_state_dict(blob["state_dict"])
    return model
