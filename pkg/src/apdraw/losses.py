"""Loss terms for the minimax objective, the 6-bit truncation operator, and
the epoch-indexed weight schedule.

The forward cycle (photo -> drawing -> photo) is held to edge-level perceptual
similarity only; the backward cycle (drawing -> photo -> drawing) is held to
pixel-wise L1. The two directions are distinct code paths on purpose:
``relaxed_cycle_loss``/``truncation_loss`` go through the edge extractor and
perceptual adapter, ``strict_cycle_loss`` never does.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields
from typing import Iterable, Mapping

import torch

from .backbones import Backbones

LOG_CLAMP = 1e-12
TRUNC_EPS = 1e-6
TRUNC_LEVELS = 64


class LossConfigError(RuntimeError):
    """A loss was requested without the component it needs (e.g. no quality model)."""


@dataclass(frozen=True)
class LossWeights:
    lambda1: float
    lambda2: float
    lambda3: float
    lambda4: float
    lambda5: float
    epoch: int
    total_epochs: int


@dataclass
class LossReport:
    adv_drawing: float = 0.0
    adv_photo: float = 0.0
    relaxed_cyc: float = 0.0
    strict_cyc: float = 0.0
    trunc: float = 0.0
    style: float = 0.0
    quality: float = 0.0
    total: float = 0.0

    def as_dict(self) -> dict[str, float]:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def loss_weights(i: int, N: int, quality_after: int = 100) -> LossWeights:
    """Weight schedule at 1-indexed epoch i of N.

    lambda1 decays 5 -> 0.5 while lambda3 grows 0 -> 4.5 (their sum stays 5);
    lambda2 = 5 and lambda4 = 1 are constant; lambda5 = 0.5 strictly after
    ``quality_after`` epochs.
    """
    if not 1 <= i <= N:
        raise ValueError(f"epoch {i} outside 1..{N}")
    return LossWeights(
        lambda1=5.0 - 4.5 * i / N,
        lambda2=5.0,
        lambda3=4.5 * i / N,
        lambda4=1.0,
        lambda5=0.5 if i > quality_after else 0.0,
        epoch=i,
        total_epochs=N,
    )


def _safe_log(x: torch.Tensor) -> torch.Tensor:
    return torch.log(torch.clamp(x, min=LOG_CLAMP))


def disc_adv_loss(real_map: torch.Tensor, fake_map: torch.Tensor, mode: str = "log") -> torch.Tensor:
    """Per-discriminator adversarial loss in minimization form.

    log mode: -E[log D(real)] - E[log(1 - D(fake))], so a discriminator stuck
    at 0.5 scores 2*ln2 and a perfect one scores 0. lsgan mode is the
    least-squares variant on the same probability maps.
    """
    if mode == "log":
        return -_safe_log(real_map).mean() - _safe_log(1.0 - fake_map).mean()
    if mode == "lsgan":
        return ((real_map - 1.0) ** 2).mean() + (fake_map**2).mean()
    raise LossConfigError(f"unknown adversarial mode {mode!r}")


def gen_adv_loss(fake_map: torch.Tensor, mode: str = "log") -> torch.Tensor:
    """Generator-side adversarial term (non-saturating in log mode)."""
    if mode == "log":
        return -_safe_log(fake_map).mean()
    if mode == "lsgan":
        return ((fake_map - 1.0) ** 2).mean()
    raise LossConfigError(f"unknown adversarial mode {mode!r}")


def _family_inputs(
    real: torch.Tensor,
    fake: torch.Tensor,
    family: Mapping,
    real_masks: Mapping | None,
    fake_masks: Mapping | None,
) -> Iterable[tuple[object, torch.Tensor, torch.Tensor]]:
    from .networks import masked_drawing

    if "global" not in family:
        raise LossConfigError("discriminator family must contain a 'global' member")
    for name, disc in family.items():
        if name == "global":
            yield disc, real, fake
            continue
        r_in = masked_drawing(real, real_masks[name]) if real_masks else None
        f_in = masked_drawing(fake, fake_masks[name]) if fake_masks else None
        if r_in is None or f_in is None:
            continue
        yield disc, r_in, f_in


def adv_loss_drawing(
    real: torch.Tensor,
    fake: torch.Tensor,
    family: Mapping,
    mode: str = "log",
    real_masks: Mapping | None = None,
    fake_masks: Mapping | None = None,
) -> torch.Tensor:
    """Sum of adversarial losses over the drawing-discriminator family.

    ``family`` maps member names to discriminators and must contain "global";
    other members are local critics fed white-filled masked drawings (members
    whose mask is empty are skipped).
    """
    if real.shape[0] == 0 or fake.shape[0] == 0:
        raise ValueError("empty batch")
    total = torch.zeros((), dtype=real.dtype)
    for disc, r_in, f_in in _family_inputs(real, fake, family, real_masks, fake_masks):
        total = total + disc_adv_loss(disc(r_in).rf_map, disc(f_in).rf_map, mode)
    return total


def adv_loss_photo(real: torch.Tensor, fake: torch.Tensor, d_photo, mode: str = "log") -> torch.Tensor:
    if real.shape[0] == 0 or fake.shape[0] == 0:
        raise ValueError("empty batch")
    return disc_adv_loss(d_photo(real).rf_map, d_photo(fake).rf_map, mode)


def generator_adv_drawing(
    fake: torch.Tensor,
    family: Mapping,
    mode: str = "log",
    fake_masks: Mapping | None = None,
) -> torch.Tensor:
    from .networks import masked_drawing

    total = torch.zeros((), dtype=fake.dtype)
    for name, disc in family.items():
        if name == "global":
            f_in = fake
        else:
            f_in = masked_drawing(fake, fake_masks[name]) if fake_masks else None
            if f_in is None:
                continue
        total = total + gen_adv_loss(disc(f_in).rf_map, mode)
    return total


def _edge_pair_distance(a: torch.Tensor, b: torch.Tensor, bb: Backbones) -> torch.Tensor:
    ea, eb = bb.edge(a), bb.edge(b)
    reps = bb.perceptual.expected_channels
    return bb.perceptual(ea.expand(*ea.shape[:-3], reps, -1, -1), eb.expand(*eb.shape[:-3], reps, -1, -1))


def relaxed_cycle_loss(p: torch.Tensor, p_rec: torch.Tensor, bb: Backbones, use_edges: bool = True) -> torch.Tensor:
    """Forward-cycle loss: perceptual distance between edge maps of the photo
    and its reconstruction (or between raw images when use_edges is False).
    """
    if p.shape != p_rec.shape:
        raise ValueError(f"shape mismatch: {tuple(p.shape)} vs {tuple(p_rec.shape)}")
    if not use_edges:
        return bb.perceptual(p, p_rec)
    return _edge_pair_distance(p, p_rec, bb)


def strict_cycle_loss(d: torch.Tensor, d_rec: torch.Tensor) -> torch.Tensor:
    """Backward-cycle loss: mean absolute pixel error."""
    if d.shape != d_rec.shape:
        raise ValueError(f"shape mismatch: {tuple(d.shape)} vs {tuple(d_rec.shape)}")
    return (d - d_rec).abs().mean()


def truncate6(x: torch.Tensor) -> torch.Tensor:
    """Quantize to 64 intensity levels k/64 with a straight-through gradient."""
    q = torch.floor(torch.clamp(x, max=1.0 - TRUNC_EPS) * TRUNC_LEVELS) / TRUNC_LEVELS
    return x + (q - x).detach()


def truncation_loss(
    p: torch.Tensor,
    G,
    F,
    s,
    bb: Backbones,
    fake: torch.Tensor | None = None,
    use_edges: bool = True,
) -> torch.Tensor:
    """Forward-cycle loss recomputed after 6-bit truncation of the drawing."""
    if fake is None:
        fake = G(p, s) if getattr(G, "use_style", True) else G(p)
    rec = F(truncate6(fake))
    return relaxed_cycle_loss(p, rec, bb, use_edges=use_edges)


def soft_cross_entropy(labels: torch.Tensor, probs: torch.Tensor) -> torch.Tensor:
    """Mean over the batch of -sum_c label_c * log prob_c (probs clamped)."""
    if labels.shape != probs.shape:
        raise ValueError(f"shape mismatch: {tuple(labels.shape)} vs {tuple(probs.shape)}")
    if labels.dim() == 1:
        labels, probs = labels.unsqueeze(0), probs.unsqueeze(0)
    return -(labels * _safe_log(probs)).sum(dim=1).mean()


def style_classification_loss(
    real_labels: torch.Tensor,
    dcls_real: torch.Tensor,
    fake_targets: torch.Tensor,
    dcls_fake: torch.Tensor,
) -> torch.Tensor:
    """Soft cross-entropy on real drawings (labels from the style classifier)
    plus soft cross-entropy on fakes (targets = the injected style vectors).
    """
    return soft_cross_entropy(real_labels, dcls_real) + soft_cross_entropy(fake_targets, dcls_fake)


def quality_loss(fake: torch.Tensor, M) -> torch.Tensor:
    """E[1 - M(fake)]; in [0, 0.9] given the [0.1, 1] quality head."""
    if M is None:
        raise LossConfigError("quality loss requested but no quality model is loaded")
    return (1.0 - M(fake)).mean()


_TERM_KEYS = ("adv_drawing", "adv_photo", "relaxed_cyc", "strict_cyc", "trunc", "style", "quality")


def total_loss(terms: Mapping[str, "float | torch.Tensor"], weights: LossWeights) -> LossReport:
    """Weighted objective report. Raises on any non-finite component, naming it."""
    values: dict[str, float] = {}
    for key in _TERM_KEYS:
        v = terms.get(key, 0.0)
        v = float(v.detach() if isinstance(v, torch.Tensor) else v)
        if not math.isfinite(v):
            raise ValueError(f"loss term {key!r} is non-finite: {v}")
        values[key] = v
    total = (
        values["adv_drawing"]
        + values["adv_photo"]
        + weights.lambda1 * values["relaxed_cyc"]
        + weights.lambda2 * values["strict_cyc"]
        + weights.lambda3 * values["trunc"]
        + weights.lambda4 * values["style"]
        + weights.lambda5 * values["quality"]
    )
    return LossReport(total=total, **values)
