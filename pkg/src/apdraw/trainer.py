"""Training jobs (style classifier, quality regressor, main adversarial loop),
the FID / quality-score evaluation harness, and checkpoint round-trips.

The adversarial loop wires the structural asymmetry: the forward cycle
(photo -> drawing -> photo) is scored by edge-perceptual terms only
(``forward_cycle_terms``), the backward cycle (drawing -> photo -> drawing)
by pixel L1 only (``backward_cycle_terms``).
"""

from __future__ import annotations

import itertools
import json
import math
import os
import warnings
from typing import Callable, Iterable, Sequence

import numpy as np
import torch
import torch.nn.functional as nnf
from scipy import linalg as slinalg
from torchvision.transforms import RandomAffine, InterpolationMode

from .backbones import Backbones
from .config import get_by_path
from .corpus import ImageRecord, SyntheticFaceParser, load_record_tensor, region_masks, sample_unpaired_batch
from .losses import (
    LossConfigError,
    LossReport,
    adv_loss_drawing,
    adv_loss_photo,
    disc_adv_loss,
    gen_adv_loss,
    generator_adv_drawing,
    loss_weights,
    quality_loss,
    soft_cross_entropy,
    strict_cycle_loss,
    relaxed_cycle_loss,
    truncation_loss,
    total_loss,
)
from .networks import (
    CheckpointError,
    ModelBundle,
    QualityModel,
    StyleClassifier,
    classify_style,
    load_model,
    predict_quality,
    save_model,
)

STYLE_INDEX = {"style1": 0, "style2": 1, "style3": 2}
BASIS = {
    "style1": (1.0, 0.0, 0.0),
    "style2": (0.0, 1.0, 0.0),
    "style3": (0.0, 0.0, 1.0),
}

CLASSIFIER_AUGMENT = RandomAffine(
    degrees=15, translate=(0.1, 0.1), scale=(0.85, 1.15),
    interpolation=InterpolationMode.BILINEAR, fill=1.0,
)


class TrainingAborted(RuntimeError):
    """An epoch hit a non-finite loss; carries the diagnostic message."""


def freeze_module(module: torch.nn.Module) -> torch.nn.Module:
    for param in module.parameters():
        param.requires_grad_(False)
    return module


def balanced_style_sampler(records: Sequence[ImageRecord], rng: np.random.Generator) -> Iterable[ImageRecord]:
    """Endless tagged-drawing sampler with inverse-frequency style weighting,
    so every style is drawn equally often regardless of corpus imbalance.
    """
    tagged = [r for r in records if r.kind == "drawing" and r.style_tag in STYLE_INDEX]
    if not tagged:
        raise ValueError("no tagged drawings to sample")
    counts: dict[str, int] = {}
    for r in tagged:
        counts[r.style_tag] = counts.get(r.style_tag, 0) + 1
    weights = np.array([1.0 / (len(counts) * counts[r.style_tag]) for r in tagged])
    weights = weights / weights.sum()
    while True:
        yield tagged[int(rng.choice(len(tagged), p=weights))]


def _as_tensor_row(item, size: int) -> torch.Tensor:
    if isinstance(item, torch.Tensor):
        return item
    if isinstance(item, ImageRecord):
        return load_record_tensor(item, size)
    from .corpus import preprocess

    return preprocess(item, size, kind="drawing")


def train_classifier(
    C: StyleClassifier,
    records: Sequence[ImageRecord],
    cfg: dict,
    steps: int | None = None,
    augment: bool = True,
    seed: int = 0,
) -> tuple[StyleClassifier, list[float]]:
    """Train the style classifier on tagged drawings with balanced sampling."""
    size = cfg["corpus"]["image_size"]
    tagged = [r for r in records if r.kind == "drawing" and r.style_tag in STYLE_INDEX]
    present = {r.style_tag for r in tagged}
    missing = set(STYLE_INDEX) - present
    if missing:
        raise ValueError(f"no tagged drawings for styles: {sorted(missing)}")
    steps = steps if steps is not None else int(cfg["train"]["aux_steps"])
    batch = max(2, int(cfg["train"]["batch"]))
    rng = np.random.default_rng(seed)
    torch.manual_seed(seed)
    sampler = balanced_style_sampler(tagged, rng)
    cache = {r.id: load_record_tensor(r, size) for r in tagged}
    opt = torch.optim.Adam(C.parameters(), lr=float(cfg["train"]["lr_aux"]))
    history: list[float] = []
    for _ in range(steps):
        recs = list(itertools.islice(sampler, batch))
        imgs = torch.stack([cache[r.id] for r in recs])
        if augment:
            imgs = torch.stack([CLASSIFIER_AUGMENT(img) for img in imgs])
        labels = torch.tensor([STYLE_INDEX[r.style_tag] for r in recs])
        logits = C(imgs)
        loss = nnf.cross_entropy(logits, labels)
        opt.zero_grad()
        loss.backward()
        opt.step()
        history.append(float(loss.detach()))
    return C, history


def train_metric(
    M: QualityModel,
    rows: Sequence[tuple],
    cfg: dict,
    steps: int | None = None,
    seed: int = 0,
) -> tuple[QualityModel, list[float]]:
    """Fit the quality regressor to (drawing, normalized score) rows by MSE."""
    if not rows:
        raise ValueError("metric dataset is empty")
    for _, score in rows:
        if not 0.1 <= float(score) <= 1.0:
            raise ValueError(f"score {score} outside [0.1, 1]")
    size = cfg["corpus"]["image_size"]
    steps = steps if steps is not None else int(cfg["train"]["aux_steps"])
    torch.manual_seed(seed)
    imgs = torch.stack([_as_tensor_row(item, size) for item, _ in rows])
    scores = torch.tensor([float(s) for _, s in rows])
    opt = torch.optim.Adam(M.parameters(), lr=float(cfg["train"]["lr_aux"]))
    history: list[float] = []
    for _ in range(steps):
        pred = M(imgs)
        loss = ((pred - scores) ** 2).mean()
        opt.zero_grad()
        loss.backward()
        opt.step()
        history.append(float(loss.detach()))
    return M, history


def style_vector_of(record: ImageRecord, image: torch.Tensor, classifier: StyleClassifier | None) -> np.ndarray:
    """Style feature of a training drawing: basis vector when tagged, the
    classifier's softmax otherwise.
    """
    if record.style_tag in BASIS:
        return np.asarray(BASIS[record.style_tag], dtype=np.float64)
    if classifier is None:
        raise ValueError(f"drawing {record.id!r} is untagged and no classifier is available")
    with torch.no_grad():
        probs = classify_style(image, classifier)
    return probs.numpy().astype(np.float64)


def forward_cycle_terms(
    p: torch.Tensor,
    fake_d: torch.Tensor,
    F,
    G,
    s,
    bb: Backbones,
    use_edges: bool = True,
    use_truncation: bool = True,
    relaxed_as_l1: bool = False,
) -> dict[str, torch.Tensor]:
    """Photo -> drawing -> photo terms. Edge-perceptual only; never pixel L1
    on photos unless the relaxed term is explicitly ablated to L1.
    """
    p_rec = F(fake_d)
    if relaxed_as_l1:
        relaxed = (p - p_rec).abs().mean()
    else:
        relaxed = relaxed_cycle_loss(p, p_rec, bb, use_edges=use_edges)
    terms = {"relaxed_cyc": relaxed}
    if use_truncation:
        terms["trunc"] = truncation_loss(p, G, F, s, bb, fake=fake_d, use_edges=use_edges)
    return terms


def backward_cycle_terms(d: torch.Tensor, s_d, F, G) -> dict[str, torch.Tensor]:
    """Drawing -> photo -> drawing term: pixel L1, never the edge extractor."""
    fake_p = F(d)
    d_rec = G(fake_p, s_d) if G.use_style else G(fake_p)
    return {"strict_cyc": strict_cycle_loss(d, d_rec), "fake_p": fake_p}


def make_optimizers(models: ModelBundle, cfg: dict) -> dict[str, torch.optim.Optimizer]:
    lr = float(cfg["train"]["lr_gan"])
    betas = (float(cfg["train"]["beta1"]), float(cfg["train"]["beta2"]))
    gen_params = itertools.chain(models.g.parameters(), models.f.parameters())
    disc_params = [models.d_drawing.parameters(), models.d_photo.parameters()]
    disc_params += [d.parameters() for d in models.d_locals.values()]
    if models.d_mask is not None:
        disc_params.append(models.d_mask.parameters())
    return {
        "g": torch.optim.Adam(gen_params, lr=lr, betas=betas),
        "d": torch.optim.Adam(itertools.chain(*disc_params), lr=lr, betas=betas),
    }


def _mask_tensor(regions: dict[str, np.ndarray], name: str) -> torch.Tensor:
    return torch.from_numpy(regions[name].astype(np.float32))[None]


def _union_mask(regions: dict[str, np.ndarray]) -> torch.Tensor:
    union = np.zeros_like(next(iter(regions.values())), dtype=bool)
    for m in regions.values():
        union |= m.astype(bool)
    return torch.from_numpy(union.astype(np.float32))[None]


def train_gan_epoch(
    models: ModelBundle,
    records: Sequence[ImageRecord],
    i: int,
    N: int,
    cfg: dict,
    bb: Backbones,
    parser: Callable | None = None,
    optimizers: dict | None = None,
    log_fh=None,
    cache: dict | None = None,
) -> LossReport:
    """One epoch of alternating discriminator/generator updates under the
    epoch-i weight schedule. Returns the per-step average LossReport.
    """
    abl = cfg["train"]["ablations"]
    mode = cfg["loss"]["adv"]
    size = cfg["corpus"]["image_size"]
    batch = int(cfg["train"]["batch"])
    dilation = float(cfg["corpus"]["dilation_frac"])
    weights = loss_weights(i, N, quality_after=int(cfg["train"]["quality_after"]))
    use_quality = weights.lambda5 > 0 and not abl["no_quality_loss"]
    if use_quality:
        if models.quality is None:
            raise LossConfigError(f"quality weight is active at epoch {i} but no quality model is loaded")
        freeze_module(models.quality)
    parser = parser or SyntheticFaceParser()
    optimizers = optimizers or make_optimizers(models, cfg)
    cache = cache if cache is not None else {}

    def tensor_of(rec: ImageRecord) -> torch.Tensor:
        if rec.id not in cache:
            cache[rec.id] = load_record_tensor(rec, size)
        return cache[rec.id]

    photos_all = [r for r in records if r.kind == "photo"]
    if not photos_all:
        raise ValueError("no photos in the training corpus")
    steps = max(1, math.ceil(len(photos_all) / batch))
    seed0 = int(cfg.get("seed", 0))
    torch.manual_seed(seed0 * 100003 + i)

    drawings_all = [r for r in records if r.kind == "drawing"]
    style_pool = [style_vector_of(r, tensor_of(r), models.classifier) for r in drawings_all]

    family = {"global": models.d_drawing}
    family.update(models.d_locals)

    sums: dict[str, float] = {}
    for step in range(steps):
        step_seed = seed0 * 1000003 + i * 1009 + step
        p_recs, d_recaggr, s_vecs = sample_unpaired_batch(records, batch, step_seed, style_pool=style_pool)
        rng = np.random.default_rng(step_seed + 7)
        flips_p = rng.random(batch) < 0.5
        flips_d = rng.random(batch) < 0.5
        p = torch.stack([torch.flip(tensor_of(r), [-1]) if fl else tensor_of(r) for r, fl in zip(p_recs, flips_p)])
        d = torch.stack([torch.flip(tensor_of(r), [-1]) if fl else tensor_of(r) for r, fl in zip(d_recaggr, flips_d)])
        s = torch.tensor(np.asarray(s_vecs), dtype=torch.float32)
        s_d = torch.tensor(
            np.stack([style_vector_of(r, di, models.classifier) for r, di in zip(d_recaggr, d)]),
            dtype=torch.float32,
        )

        fake_masks: dict[str, torch.Tensor] = {}
        real_masks: dict[str, torch.Tensor] = {}
        if models.d_locals or models.d_mask is not None:
            fregions = [region_masks(img, parser, dilation).regions for img in p]
            rregions = [region_masks(img, parser, dilation).regions for img in d]
            names = sorted(fregions[0])
            for name in names:
                fake_masks[name] = torch.stack([_mask_tensor(r, name) for r in fregions])
                real_masks[name] = torch.stack([_mask_tensor(r, name) for r in rregions])
            union_fake = torch.stack([_union_mask(r) for r in fregions])
            union_real = torch.stack([_union_mask(r) for r in rregions])

        # discriminators first
        with torch.no_grad():
            fake_d = models.g(p, s) if models.g.use_style else models.g(p)
            fake_p = models.f(d)
        d_adv_drawing = adv_loss_drawing(d, fake_d, family, mode, real_masks or None, fake_masks or None)
        if models.d_mask is not None:
            d_adv_drawing = d_adv_drawing + disc_adv_loss(
                models.d_mask(torch.cat([d, union_real], dim=1)).rf_map,
                models.d_mask(torch.cat([fake_d, union_fake], dim=1)).rf_map,
                mode,
            )
        d_adv_photo = adv_loss_photo(p, fake_p, models.d_photo, mode)
        d_objective = d_adv_drawing + d_adv_photo
        style_real = torch.zeros(())
        if models.d_drawing.n_classes:
            style_real = soft_cross_entropy(s_d, models.d_drawing(d).cls_probs)
            d_objective = d_objective + style_real
        optimizers["d"].zero_grad()
        d_objective.backward()
        optimizers["d"].step()

        # generators second
        fake_d = models.g(p, s) if models.g.use_style else models.g(p)
        fwd = forward_cycle_terms(
            p, fake_d, models.f, models.g, s, bb,
            use_edges=not abl["no_hed"],
            use_truncation=not abl["no_truncation_loss"],
            relaxed_as_l1=abl["no_relaxed"],
        )
        bwd = backward_cycle_terms(d, s_d, models.f, models.g)
        g_adv = generator_adv_drawing(fake_d, family, mode, fake_masks or None)
        if models.d_mask is not None:
            g_adv = g_adv + gen_adv_loss(models.d_mask(torch.cat([fake_d, union_fake], dim=1)).rf_map, mode)
        g_adv = g_adv + gen_adv_loss(models.d_photo(bwd["fake_p"]).rf_map, mode)
        style_fake = torch.zeros(())
        if models.d_drawing.n_classes:
            style_fake = soft_cross_entropy(s, models.d_drawing(fake_d).cls_probs)
        q_term = quality_loss(fake_d, models.quality) if use_quality else torch.zeros(())
        trunc_term = fwd.get("trunc", torch.zeros(()))
        g_objective = (
            g_adv
            + weights.lambda1 * fwd["relaxed_cyc"]
            + weights.lambda2 * bwd["strict_cyc"]
            + weights.lambda3 * trunc_term
            + weights.lambda4 * style_fake
            + weights.lambda5 * q_term
        )
        optimizers["g"].zero_grad()
        g_objective.backward()
        optimizers["g"].step()

        report = total_loss(
            {
                "adv_drawing": d_adv_drawing,
                "adv_photo": d_adv_photo,
                "relaxed_cyc": fwd["relaxed_cyc"],
                "strict_cyc": bwd["strict_cyc"],
                "trunc": trunc_term,
                "style": style_real + style_fake,
                "quality": q_term,
            },
            weights,
        )
        if log_fh is not None:
            row = {"epoch": i, "step": step,
                   "lambda1": weights.lambda1, "lambda2": weights.lambda2, "lambda3": weights.lambda3,
                   "lambda4": weights.lambda4, "lambda5": weights.lambda5}
            row.update(report.as_dict())
            log_fh.write(json.dumps(row) + "\n")
        for key, value in report.as_dict().items():
            sums[key] = sums.get(key, 0.0) + value

    return LossReport(**{k: v / steps for k, v in sums.items()})


def train_gan(
    models: ModelBundle,
    records: Sequence[ImageRecord],
    cfg: dict,
    bb: Backbones,
    parser: Callable | None = None,
    out_dir: str | None = None,
    log_path: str | None = None,
    epochs: int | None = None,
) -> list[LossReport]:
    """Full schedule-driven training loop; writes step logs, a per-epoch
    schedule/loss CSV, and a final checkpoint directory when asked to.
    """
    N = epochs if epochs is not None else int(cfg["train"]["epochs"])
    optimizers = make_optimizers(models, cfg)
    cache: dict = {}
    reports: list[LossReport] = []
    log_fh = open(log_path, "a", encoding="utf-8") if log_path else None
    try:
        for i in range(1, N + 1):
            report = train_gan_epoch(
                models, records, i, N, cfg, bb,
                parser=parser, optimizers=optimizers, log_fh=log_fh, cache=cache,
            )
            reports.append(report)
    finally:
        if log_fh:
            log_fh.close()
    if out_dir:
        checkpoint_save(models, out_dir, cfg)
        write_schedule_csv(reports, N, cfg, os.path.join(out_dir, "schedule.csv"))
    return reports


def write_schedule_csv(reports: Sequence[LossReport], N: int, cfg: dict, path: str) -> None:
    quality_after = int(get_by_path(cfg, "train.quality_after", 100))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("epoch,lambda1,lambda2,lambda3,lambda4,lambda5,"
                 "adv_drawing,adv_photo,relaxed_cyc,strict_cyc,trunc,style,quality,total\n")
        for idx, rep in enumerate(reports, start=1):
            w = loss_weights(idx, max(N, len(reports)), quality_after)
            fh.write(
                f"{idx},{w.lambda1:.8g},{w.lambda2:.8g},{w.lambda3:.8g},{w.lambda4:.8g},{w.lambda5:.8g},"
                f"{rep.adv_drawing:.8g},{rep.adv_photo:.8g},{rep.relaxed_cyc:.8g},{rep.strict_cyc:.8g},"
                f"{rep.trunc:.8g},{rep.style:.8g},{rep.quality:.8g},{rep.total:.8g}\n"
            )


def frechet_distance(mu1: np.ndarray, sigma1: np.ndarray, mu2: np.ndarray, sigma2: np.ndarray) -> float:
    """|mu1 - mu2|^2 + tr(S1 + S2 - 2 (S1 S2)^(1/2)), with epsilon-regularized
    covariances when the matrix square root misbehaves.
    """
    mu1, mu2 = np.atleast_1d(mu1), np.atleast_1d(mu2)
    sigma1, sigma2 = np.atleast_2d(sigma1), np.atleast_2d(sigma2)
    diff = mu1 - mu2
    covmean, _ = slinalg.sqrtm(sigma1 @ sigma2, disp=False)
    if not np.isfinite(covmean).all():
        warnings.warn("covariance product is singular; regularizing with 1e-6 I")
        eps = 1e-6 * np.eye(sigma1.shape[0])
        covmean, _ = slinalg.sqrtm((sigma1 + eps) @ (sigma2 + eps), disp=False)
    if np.iscomplexobj(covmean):
        covmean = covmean.real
    return float(diff @ diff + np.trace(sigma1) + np.trace(sigma2) - 2.0 * np.trace(covmean))


def evaluate_fid(generated: torch.Tensor, reference: torch.Tensor, embedder) -> float:
    """Frechet distance between Gaussians fitted to embedded image sets."""
    if generated.shape[0] < 2 or reference.shape[0] < 2:
        raise ValueError("both image sets need at least 2 images")
    with torch.no_grad():
        e1 = embedder(generated).numpy().astype(np.float64)
        e2 = embedder(reference).numpy().astype(np.float64)
    mu1, mu2 = e1.mean(axis=0), e2.mean(axis=0)
    s1 = np.cov(e1, rowvar=False)
    s2 = np.cov(e2, rowvar=False)
    return frechet_distance(mu1, s1, mu2, s2)


def evaluate_quality(images: torch.Tensor, M: QualityModel) -> float:
    """Mean predicted quality over a drawing set."""
    if images.shape[0] == 0:
        raise ValueError("empty image set")
    with torch.no_grad():
        return float(predict_quality(images, M).mean())


def checkpoint_save(models: "ModelBundle | dict", path: str, cfg: dict) -> None:
    os.makedirs(path, exist_ok=True)
    named = models.named_models() if isinstance(models, ModelBundle) else models
    for name, model in named.items():
        save_model(os.path.join(path, f"{name}.pt"), model, cfg, name)


def checkpoint_load(models: "ModelBundle | dict", path: str, cfg: dict) -> "ModelBundle | dict":
    named = models.named_models() if isinstance(models, ModelBundle) else models
    for name, model in named.items():
        file = os.path.join(path, f"{name}.pt")
        if not os.path.exists(file):
            raise CheckpointError(f"checkpoint {path!r} has no archive for model {name!r}")
        load_model(file, model, cfg)
    return models
