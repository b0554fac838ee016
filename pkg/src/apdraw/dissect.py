"""Generator interpretability: threshold each convolution unit's upsampled
feature map by information quality against facial-region masks, label units by
best-IoU region, and export reports and overlay images.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as nnf
from PIL import Image
from scipy import ndimage

from .corpus import NoFaceError, region_masks

CONV_TYPES = (nn.Conv2d, nn.ConvTranspose2d)


@dataclass
class UnitReport:
    layer: str
    unit: int
    best_region: str
    threshold: float
    iou: float
    interpretable: bool


def list_units(model: nn.Module) -> list[tuple[str, int]]:
    """(layer name, output channel count) for every conv unit holder in the model."""
    out = []
    for name, module in model.named_modules():
        if isinstance(module, CONV_TYPES):
            out.append((name, module.out_channels))
    return out


def _capture_layers(model: nn.Module, x: torch.Tensor, layers: Sequence[str]) -> dict[str, torch.Tensor]:
    wanted = set(layers)
    captured: dict[str, torch.Tensor] = {}
    hooks = []
    for name, module in model.named_modules():
        if name in wanted:
            hooks.append(module.register_forward_hook(
                lambda mod, inp, out, key=name: captured.__setitem__(key, out.detach())
            ))
    try:
        with torch.no_grad():
            model(x)
    finally:
        for h in hooks:
            h.remove()
    missing = wanted - set(captured)
    if missing:
        raise ValueError(f"layers produced no activation: {sorted(missing)}")
    return captured


def unit_feature_map(model: nn.Module, p: torch.Tensor, layer: str, unit: int) -> torch.Tensor:
    """One unit's activation map, bilinearly upsampled to the input size."""
    units = dict(list_units(model))
    if layer not in units:
        raise ValueError(f"unknown layer {layer!r}; conv layers: {sorted(units)}")
    if not 0 <= unit < units[layer]:
        raise ValueError(f"unit {unit} out of range for layer {layer!r} (0..{units[layer] - 1})")
    x = p.unsqueeze(0) if p.dim() == 3 else p
    act = _capture_layers(model, x, [layer])[layer]
    fmap = act[:, unit : unit + 1]
    up = nnf.interpolate(fmap, size=x.shape[-2:], mode="bilinear", align_corners=False)
    return up[0, 0]


def _joint_stats(n: int, n_mask: int, n_bin: int, n11: int) -> tuple[float, float]:
    """Mutual information and joint entropy (nats) of two binary variables."""
    cells = (
        (n11, n_bin, n_mask),
        (n_bin - n11, n_bin, n - n_mask),
        (n_mask - n11, n - n_bin, n_mask),
        (n - n_bin - n_mask + n11, n - n_bin, n - n_mask),
    )
    info = 0.0
    entropy = 0.0
    for c, row, col in cells:
        if c <= 0:
            continue
        p = c / n
        entropy -= p * math.log(p)
        info += p * math.log(p * n * n / (row * col)) if row > 0 and col > 0 else 0.0
    return info, entropy


def optimal_threshold(
    maps: Sequence[np.ndarray],
    masks: Sequence[np.ndarray],
    n_candidates: int = 64,
) -> float | None:
    """Threshold maximizing information quality I/H between the binarized map
    and the region mask, pooled over all pixels of all test images.

    Candidates are ``n_candidates`` evenly spaced quantiles of the pooled
    activations (monotone-rescaling invariant). Returns None when every
    candidate is degenerate (e.g. the pooled mask is constant).
    """
    a = np.concatenate([np.asarray(m, dtype=np.float64).ravel() for m in maps])
    m = np.concatenate([np.asarray(k, dtype=bool).ravel() for k in masks])
    if a.shape != m.shape:
        raise ValueError("maps and masks must cover the same pixels")
    n = a.size
    n_mask = int(m.sum())
    if n_mask == 0 or n_mask == n:
        return None
    qs = (np.arange(n_candidates) + 1.0) / (n_candidates + 1.0)
    candidates = np.quantile(a, qs)
    inside = np.sort(a[m])
    everything = np.sort(a)
    best_t, best_ratio = None, -1.0
    for t in candidates:
        n_bin = n - int(np.searchsorted(everything, t, side="right"))
        n11 = n_mask - int(np.searchsorted(inside, t, side="right"))
        info, entropy = _joint_stats(n, n_mask, n_bin, n11)
        if entropy <= 0.0:
            continue
        ratio = info / entropy
        if ratio > best_ratio + 1e-15:
            best_t, best_ratio = float(t), ratio
    return best_t


def unit_region_iou(maps: Sequence[np.ndarray], masks: Sequence[np.ndarray], t: float) -> float:
    """Intersection over union of the thresholded maps and the masks, pooled
    over the test set. An empty union is defined as 0.
    """
    inter = 0
    union = 0
    for fmap, mask in zip(maps, masks):
        bin_map = np.asarray(fmap, dtype=np.float64) > t
        mask = np.asarray(mask, dtype=bool)
        inter += int((bin_map & mask).sum())
        union += int((bin_map | mask).sum())
    return inter / union if union else 0.0


def label_units(
    model: nn.Module,
    photos: Sequence[torch.Tensor],
    parser: Callable,
    dilation_frac: float = 0.02,
    iou_threshold: float = 0.05,
    n_candidates: int = 64,
    extra_inputs: Callable[[torch.Tensor], tuple] | None = None,
) -> list[UnitReport]:
    """Label every conv unit with its best-matching facial region.

    A unit is interpretable iff its best IoU exceeds ``iou_threshold``.
    Photos the parser rejects are skipped (with a warning carrying the count).
    ``extra_inputs`` maps a photo batch to additional forward arguments (e.g.
    a style vector for a style-conditioned generator).
    """
    if not photos:
        raise ValueError("test set is empty")
    units = list_units(model)
    if not units:
        raise ValueError("model has no conv units")
    layer_names = [name for name, _ in units]

    per_photo_acts: list[dict[str, torch.Tensor]] = []
    region_sets: list[dict[str, np.ndarray]] = []
    skipped = 0
    for photo in photos:
        try:
            masks = region_masks(photo, parser, dilation_frac=dilation_frac).regions
        except NoFaceError:
            skipped += 1
            continue
        x = photo.unsqueeze(0) if photo.dim() == 3 else photo
        if extra_inputs is not None:
            captured = _capture_with_args(model, x, extra_inputs(x), layer_names)
        else:
            captured = _capture_layers(model, x, layer_names)
        per_photo_acts.append(captured)
        region_sets.append(masks)
    if skipped:
        warnings.warn(f"parser rejected {skipped} of {len(photos)} photos; they were skipped")
    if not per_photo_acts:
        raise NoFaceError("parser rejected every photo in the test set")

    size = photos[0].shape[-2:]
    region_names = sorted(region_sets[0])
    reports: list[UnitReport] = []
    for layer, n_units in units:
        ups = [
            nnf.interpolate(acts[layer].to(torch.float32), size=size, mode="bilinear", align_corners=False)
            for acts in per_photo_acts
        ]
        for unit in range(n_units):
            maps = [u[0, unit].numpy() for u in ups]
            best_region, best_iou, best_t = "", 0.0, float("nan")
            for region in region_names:
                masks = [regions[region] for regions in region_sets]
                t = optimal_threshold(maps, masks, n_candidates=n_candidates)
                if t is None:
                    continue
                iou = unit_region_iou(maps, masks, t)
                if iou > best_iou:
                    best_region, best_iou, best_t = region, iou, t
            reports.append(
                UnitReport(
                    layer=layer,
                    unit=unit,
                    best_region=best_region,
                    threshold=best_t,
                    iou=best_iou,
                    interpretable=best_iou > iou_threshold,
                )
            )
    return reports


def _capture_with_args(model: nn.Module, x: torch.Tensor, args: tuple, layers: Sequence[str]) -> dict[str, torch.Tensor]:
    wanted = set(layers)
    captured: dict[str, torch.Tensor] = {}
    hooks = []
    for name, module in model.named_modules():
        if name in wanted:
            hooks.append(module.register_forward_hook(
                lambda mod, inp, out, key=name: captured.__setitem__(key, out.detach())
            ))
    try:
        with torch.no_grad():
            model(x, *args)
    finally:
        for h in hooks:
            h.remove()
    return captured


def summarize_reports(reports: Sequence[UnitReport]) -> dict[str, int]:
    counts: dict[str, int] = {"units": len(reports), "interpretable": 0}
    for rep in reports:
        if rep.interpretable:
            counts["interpretable"] += 1
            counts[rep.best_region] = counts.get(rep.best_region, 0) + 1
    return counts


def write_report_csv(reports: Sequence[UnitReport], path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("layer,unit,region,t,iou,interpretable\n")
        for r in reports:
            fh.write(f"{r.layer},{r.unit},{r.best_region},{r.threshold:.8g},{r.iou:.8g},{str(r.interpretable).lower()}\n")


def export_overlay(photo: torch.Tensor, fmap: np.ndarray, t: float, path: str) -> None:
    """Photo with the thresholded-unit outline painted yellow."""
    arr = photo.detach().cpu().numpy()
    if arr.shape[0] == 1:
        arr = np.repeat(arr, 3, axis=0)
    rgb = np.clip(arr.transpose(1, 2, 0), 0.0, 1.0).copy()
    bin_map = np.asarray(fmap) > t
    outline = bin_map & ~ndimage.binary_erosion(bin_map)
    rgb[outline] = (1.0, 1.0, 0.0)
    Image.fromarray((rgb * 255).astype(np.uint8)).save(path)
