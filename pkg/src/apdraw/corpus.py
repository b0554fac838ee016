"""Corpus handling: manifests, preprocessing, facial-region masks, batch sampling.

Manifests are UTF-8 text, one record per line, tab separated
(id, path, kind, style_tag, origin) under the header ``#apdraw-manifest v1``.
Photos are 3-channel, drawings 1-channel; every tensor is float32 in [0, 1]
with shape (C, H, W).
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np
import torch
from PIL import Image
from scipy import ndimage

MANIFEST_HEADER = "#apdraw-manifest v1"
KINDS = ("photo", "drawing")
STYLE_TAGS = ("style1", "style2", "style3", "untagged")
ORIGINS = ("real", "synthesized")
NO_TAG = "-"


class ManifestError(ValueError):
    """Malformed or inconsistent manifest content."""


class NoFaceError(RuntimeError):
    """Raised by a face parser when no face is found in the input."""


@dataclass(frozen=True)
class ImageRecord:
    id: str
    path: str
    kind: str
    style_tag: str | None = None
    origin: str = "real"

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ManifestError(f"record {self.id!r}: bad kind {self.kind!r}")
        if self.origin not in ORIGINS:
            raise ManifestError(f"record {self.id!r}: bad origin {self.origin!r}")
        if self.style_tag is not None and self.style_tag not in STYLE_TAGS:
            raise ManifestError(f"record {self.id!r}: bad style_tag {self.style_tag!r}")
        if self.kind == "photo" and self.style_tag is not None:
            raise ManifestError(f"record {self.id!r}: photos cannot carry a style_tag")
        if self.origin == "synthesized" and self.kind != "drawing":
            raise ManifestError(f"record {self.id!r}: origin=synthesized is drawing-only")


@dataclass
class RegionMaskSet:
    photo_id: str
    regions: dict[str, np.ndarray] = field(default_factory=dict)


FaceParser = Callable[[np.ndarray], dict[str, np.ndarray]]


def load_manifest(path: str) -> list[ImageRecord]:
    """Read a manifest file and return its records.

    Raises ManifestError naming the offending line for malformed rows and
    for duplicate ids.
    """
    records: list[ImageRecord] = []
    seen: set[str] = set()
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0].strip() != MANIFEST_HEADER:
        raise ManifestError(f"{path}: line 1: missing header {MANIFEST_HEADER!r}")
    base = os.path.dirname(os.path.abspath(path))
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 5:
            raise ManifestError(f"{path}: line {lineno}: expected 5 tab-separated fields, got {len(parts)}")
        rid, rel, kind, tag, origin = (p.strip() for p in parts)
        if rid in seen:
            raise ManifestError(f"{path}: line {lineno}: duplicate id {rid!r}")
        seen.add(rid)
        full = rel if os.path.isabs(rel) else os.path.join(base, rel)
        try:
            records.append(ImageRecord(rid, full, kind, None if tag == NO_TAG else tag, origin))
        except ManifestError as err:
            raise ManifestError(f"{path}: line {lineno}: {err}") from err
    return records


def save_manifest(path: str, records: Iterable[ImageRecord]) -> None:
    base = os.path.dirname(os.path.abspath(path))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(MANIFEST_HEADER + "\n")
        for rec in records:
            # anchor to the manifest dir so the file loads from any cwd
            rel = os.path.relpath(os.path.abspath(rec.path), base)
            tag = rec.style_tag if rec.style_tag is not None else NO_TAG
            fh.write(f"{rec.id}\t{rel}\t{rec.kind}\t{tag}\t{rec.origin}\n")


def style_counts(records: Iterable[ImageRecord]) -> dict[str, int]:
    counts: dict[str, int] = {}
    for rec in records:
        if rec.kind == "drawing":
            key = rec.style_tag or "untagged"
            counts[key] = counts.get(key, 0) + 1
    return counts


def preprocess(
    source: "str | Image.Image | np.ndarray",
    size: int,
    kind: str = "photo",
    eval_mode: bool = True,
    rng: np.random.Generator | None = None,
) -> torch.Tensor:
    """Decode, resize (short side), crop to size x size, and normalize to [0, 1].

    Eval mode center-crops deterministically; train mode random-crops with rng.
    Photos come out (3, size, size), drawings (1, size, size).
    """
    if size < 16:
        raise ValueError(f"size must be >= 16, got {size}")
    if kind not in KINDS:
        raise ValueError(f"bad kind {kind!r}")
    if isinstance(source, str):
        try:
            img = Image.open(source)
            img.load()
        except Exception as err:
            raise ValueError(f"cannot decode image {source!r}: {err}") from err
    elif isinstance(source, np.ndarray):
        arr = source
        if arr.dtype != np.uint8:
            arr = np.clip(arr * 255.0 if arr.max() <= 1.0 else arr, 0, 255).astype(np.uint8)
        img = Image.fromarray(arr)
    else:
        img = source
    img = img.convert("RGB" if kind == "photo" else "L")
    w, h = img.size
    scale = size / min(w, h)
    if scale != 1.0:
        img = img.resize((max(size, round(w * scale)), max(size, round(h * scale))), Image.BICUBIC)
    w, h = img.size
    if eval_mode or rng is None:
        left, top = (w - size) // 2, (h - size) // 2
    else:
        left = int(rng.integers(0, w - size + 1))
        top = int(rng.integers(0, h - size + 1))
    img = img.crop((left, top, left + size, top + size))
    arr = np.asarray(img, dtype=np.float32) / 255.0
    if arr.ndim == 2:
        arr = arr[None, :, :]
    else:
        arr = arr.transpose(2, 0, 1)
    return torch.from_numpy(arr.copy())


def load_record_tensor(record: ImageRecord, size: int, eval_mode: bool = True) -> torch.Tensor:
    return preprocess(record.path, size, kind=record.kind, eval_mode=eval_mode)


def _disc_footprint(radius: int) -> np.ndarray:
    grid = np.arange(-radius, radius + 1)
    yy, xx = np.meshgrid(grid, grid, indexing="ij")
    return (yy**2 + xx**2) <= radius**2


def region_masks(
    photo: torch.Tensor,
    parser: FaceParser,
    dilation_frac: float = 0.02,
    photo_id: str = "",
) -> RegionMaskSet:
    """Parse facial regions and dilate each by a disc of radius ceil(frac * side)."""
    if dilation_frac < 0:
        raise ValueError("dilation_frac must be >= 0")
    arr = photo.detach().cpu().numpy() if isinstance(photo, torch.Tensor) else np.asarray(photo)
    raw = parser(arr)
    side = arr.shape[-1]
    radius = int(np.ceil(dilation_frac * side))
    out: dict[str, np.ndarray] = {}
    for name, mask in raw.items():
        mask = np.asarray(mask).astype(bool)
        if radius > 0:
            mask = ndimage.binary_dilation(mask, structure=_disc_footprint(radius))
        out[name] = mask
    return RegionMaskSet(photo_id=photo_id, regions=out)


class SyntheticFaceParser:
    """Deterministic geometric stand-in for a pretrained face parsing network.

    Places eyes (two discs), a nose disc, and a lips ellipse at fixed
    proportional positions, so masks are reproducible for any input size.
    """

    REGION_NAMES = ("eyes", "nose", "lips")

    def __call__(self, image: np.ndarray) -> dict[str, np.ndarray]:
        h, w = image.shape[-2], image.shape[-1]
        yy, xx = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")

        def disc(cy: float, cx: float, r: float) -> np.ndarray:
            return ((yy - cy * h) ** 2 + (xx - cx * w) ** 2) <= (r * min(h, w)) ** 2

        def ellipse(cy: float, cx: float, ry: float, rx: float) -> np.ndarray:
            return ((yy - cy * h) / (ry * h)) ** 2 + ((xx - cx * w) / (rx * w)) ** 2 <= 1.0

        return {
            "eyes": disc(0.38, 0.35, 0.05) | disc(0.38, 0.65, 0.05),
            "nose": disc(0.55, 0.50, 0.055),
            "lips": ellipse(0.72, 0.50, 0.04, 0.09),
        }


def sample_unpaired_batch(
    records: Sequence[ImageRecord],
    batch: int,
    seed: int,
    style_pool: Sequence[Sequence[float]] | None = None,
) -> tuple[list[ImageRecord], list[ImageRecord], np.ndarray]:
    """Draw an unpaired batch: photos and drawings independently, plus one
    style vector per photo from the empirical pool.

    Pure function of (records, batch, seed, style_pool). When style_pool is
    None it is derived from the tagged drawings' basis vectors.
    """
    photos = [r for r in records if r.kind == "photo"]
    drawings = [r for r in records if r.kind == "drawing"]
    if not photos or not drawings:
        raise ValueError("both photo and drawing domains must be non-empty")
    if style_pool is None:
        basis = {"style1": (1.0, 0.0, 0.0), "style2": (0.0, 1.0, 0.0), "style3": (0.0, 0.0, 1.0)}
        style_pool = [basis[d.style_tag] for d in drawings if d.style_tag in basis]
        if not style_pool:
            raise ValueError("no tagged drawings to derive a style pool from")
    rng = np.random.default_rng(seed)
    photo_batch = [photos[i] for i in rng.integers(0, len(photos), batch)]
    drawing_batch = [drawings[i] for i in rng.integers(0, len(drawings), batch)]
    pool = np.asarray(style_pool, dtype=np.float64)
    vectors = pool[rng.integers(0, len(pool), batch)]
    return photo_batch, drawing_batch, vectors


def _render_toy_photo(size: int, rng: np.random.Generator) -> np.ndarray:
    h = w = size
    yy, xx = np.meshgrid(np.linspace(0, 1, h), np.linspace(0, 1, w), indexing="ij")
    base = np.stack([
        0.55 + 0.25 * yy + rng.uniform(-0.08, 0.08),
        0.45 + 0.20 * xx + rng.uniform(-0.08, 0.08),
        0.40 + 0.15 * (1 - yy) + rng.uniform(-0.08, 0.08),
    ])
    face = ((yy - 0.52) / 0.38) ** 2 + ((xx - 0.5) / 0.30) ** 2 <= 1.0
    skin = np.array([0.85, 0.68, 0.55])[:, None, None] + rng.uniform(-0.05, 0.05, (3, 1, 1))
    img = np.where(face[None], skin, base)
    parser = SyntheticFaceParser()
    marks = parser(img)
    for name, shade in (("eyes", 0.15), ("nose", 0.45), ("lips", 0.35)):
        img = np.where(marks[name][None], shade + rng.uniform(-0.05, 0.05), img)
    return np.clip(img, 0.0, 1.0)


def _render_toy_drawing(size: int, style: str, rng: np.random.Generator) -> np.ndarray:
    h = w = size
    yy, xx = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    cy, cx = 0.52 * h + rng.uniform(-2, 2), 0.5 * w + rng.uniform(-2, 2)
    ry, rx = 0.38 * h, 0.30 * w
    dist = np.sqrt(((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2)
    width = {"style1": 0.035, "style2": 0.10, "style3": 0.06}[style]
    ink = {"style1": 0.0, "style2": 0.05, "style3": 0.35}[style]
    img = np.ones((h, w))
    img[np.abs(dist - 1.0) < width] = ink
    parser = SyntheticFaceParser()
    for mask in parser(img[None]).values():
        edge = mask & ~ndimage.binary_erosion(mask, iterations=max(1, size // 32))
        img[edge] = ink
    if style == "style3":
        hatch = ((yy + xx) % max(4, size // 16)) == 0
        img[hatch & (dist < 1.0)] = 0.55
    return np.clip(img, 0.0, 1.0)


def build_toy_corpus(
    root: str,
    n_photos: int = 8,
    n_drawings: int = 8,
    size: int = 64,
    seed: int = 0,
) -> str:
    """Synthesize a small photo/drawing corpus and write its manifest.

    Drawings cycle through the three styles. Returns the manifest path.
    """
    os.makedirs(root, exist_ok=True)
    rng = np.random.default_rng(seed)
    records: list[ImageRecord] = []
    for i in range(n_photos):
        arr = (_render_toy_photo(size, rng) * 255).astype(np.uint8).transpose(1, 2, 0)
        name = f"photo_{i:03d}.png"
        Image.fromarray(arr).save(os.path.join(root, name))
        records.append(ImageRecord(f"p{i:03d}", os.path.join(root, name), "photo"))
    for i in range(n_drawings):
        style = STYLE_TAGS[i % 3]
        arr = (_render_toy_drawing(size, style, rng) * 255).astype(np.uint8)
        name = f"drawing_{i:03d}.png"
        Image.fromarray(arr, mode="L").save(os.path.join(root, name))
        records.append(ImageRecord(f"d{i:03d}", os.path.join(root, name), "drawing", style))
    manifest = os.path.join(root, "manifest.tsv")
    save_manifest(manifest, records)
    return manifest
