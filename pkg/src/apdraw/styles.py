"""Style-space utilities: interpolation between target styles, histogram-
matching style distance over feature activations, and new-style search by
optimizing a style code against a reference drawing with a frozen generator.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import torch

STYLE_EPS = 1e-12


class StyleSearchError(RuntimeError):
    """Search aborted on a non-finite loss; carries the partial state."""

    def __init__(self, message: str, state: "StyleSearchState"):
        super().__init__(message)
        self.state = state


@dataclass
class StyleSearchState:
    s: tuple[float, float, float]
    step: int
    loss: float
    trace: list[tuple[int, tuple[float, float, float], float]] = field(default_factory=list)


def interpolate_styles(a: Sequence[float], b: Sequence[float], t: float) -> tuple[float, ...]:
    """(1 - t) * a + t * b; stays on the simplex when a and b are on it."""
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"t must be in [0, 1], got {t}")
    av, bv = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if av.shape != (3,) or bv.shape != (3,):
        raise ValueError("style vectors must have 3 components")
    return tuple((1.0 - t) * av + t * bv)


def _remap_1d(source: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """Empirical CDF match: each source value goes to the target quantile at
    its own CDF position. Monotone; exact identity when source == target.
    """
    src_sorted = torch.sort(source).values
    tgt_sorted = torch.sort(target).values
    n_src, n_tgt = source.numel(), target.numel()
    positions = torch.searchsorted(src_sorted, source.contiguous(), right=True).to(torch.float64) / n_src
    k = torch.clamp(torch.ceil(positions * n_tgt).long(), min=1, max=n_tgt)
    return tgt_sorted[k - 1]


def histogram_remap(source, target, bins: int = 256) -> np.ndarray:
    """Remap source values so their distribution matches the target's.

    The match is exact empirical-CDF matching, which is at least as fine as
    ``bins`` resolution (per-bin L1 error <= 2/bins for channels with >= bins
    samples). Output has the source's shape; ordering is preserved.
    """
    if bins < 2:
        raise ValueError(f"bins must be >= 2, got {bins}")
    src = torch.as_tensor(np.asarray(source), dtype=torch.float64)
    tgt = torch.as_tensor(np.asarray(target), dtype=torch.float64)
    if src.numel() == 0 or tgt.numel() == 0:
        raise ValueError("source and target must be non-empty")
    out = _remap_1d(src.flatten(), tgt.flatten())
    return out.reshape(src.shape).numpy()


def _stacks(image: torch.Tensor, features: Callable) -> list[torch.Tensor]:
    stack = features(image)
    return [t.squeeze(0) if t.dim() == 4 and t.shape[0] == 1 else t for t in stack]


def remap_targets(
    a: torch.Tensor,
    b: torch.Tensor,
    features: Callable,
    bins: int = 256,
) -> list[torch.Tensor]:
    """Per-channel histogram-matched versions of A's activations against B's.

    Targets are detached constants: the style distance differentiates only
    through A's activations, with the remap refreshed each optimization step.
    """
    if bins < 2:
        raise ValueError(f"bins must be >= 2, got {bins}")
    stack_a = _stacks(a, features)
    stack_b = _stacks(b, features)
    targets: list[torch.Tensor] = []
    for fa, fb in zip(stack_a, stack_b):
        if fa.shape != fb.shape:
            raise ValueError(f"feature stack shape mismatch: {tuple(fa.shape)} vs {tuple(fb.shape)}")
        fa, fb = fa.detach(), fb.detach()
        chans = [_remap_1d(fa[c].flatten(), fb[c].flatten()).reshape(fa[c].shape) for c in range(fa.shape[0])]
        targets.append(torch.stack(chans).to(fa.dtype))
    return targets


def style_distance_to_targets(a: torch.Tensor, targets: Sequence[torch.Tensor], features: Callable) -> torch.Tensor:
    """Sum over layers of the RMS distance between A's activations and fixed
    per-layer targets (smoothed at zero so the gradient there is zero).
    """
    total = torch.zeros((), dtype=a.dtype)
    for fa, tgt in zip(_stacks(a, features), targets):
        if fa.shape != tgt.shape:
            raise ValueError(f"target shape mismatch: {tuple(fa.shape)} vs {tuple(tgt.shape)}")
        msq = ((fa - tgt.to(fa.dtype)) ** 2).mean()
        total = total + torch.sqrt(msq + STYLE_EPS**2) - STYLE_EPS
    return total


def histogram_style_loss(a: torch.Tensor, b: torch.Tensor, features: Callable, bins: int = 256) -> torch.Tensor:
    """Style distance between two drawings: activations of A vs their
    histogram-matched-to-B versions, summed over the five feature layers.
    """
    return style_distance_to_targets(a, remap_targets(a, b, features, bins), features)


def project_simplex(v: torch.Tensor) -> torch.Tensor:
    """Euclidean projection onto the probability simplex."""
    u = torch.sort(v, descending=True).values
    css = torch.cumsum(u, dim=0)
    ks = torch.arange(1, v.numel() + 1, dtype=v.dtype)
    cond = u + (1.0 - css) / ks > 0
    rho = int(cond.nonzero().max())
    tau = (1.0 - css[rho]) / (rho + 1)
    return torch.clamp(v + tau, min=0.0)


def search_new_style(
    G,
    p: torch.Tensor,
    d_target: torch.Tensor,
    steps: int = 60,
    lr: float = 0.05,
    seed: int = 0,
    features: Callable | None = None,
    bins: int = 256,
    project: bool = False,
    init: Sequence[float] | None = None,
) -> StyleSearchState:
    """Optimize a style code so the frozen generator's output matches the
    reference drawing under the histogram style distance.

    Adam over the 3 style components only. The trace records (step, s, loss)
    at every step plus a final entry; the returned s is the best seen.
    """
    if features is None:
        raise ValueError("a feature adapter is required")
    rng = np.random.default_rng(seed)
    if init is None:
        raw = rng.uniform(0.0, 1.0, 3)
        raw = raw / raw.sum()
    else:
        raw = np.asarray(init, dtype=np.float64)
    s = torch.tensor(raw, dtype=torch.float32, requires_grad=True)
    frozen = [(param, param.requires_grad) for param in G.parameters()]
    for param, _ in frozen:
        param.requires_grad_(False)
    photos = p.unsqueeze(0) if p.dim() == 3 else p
    target_img = d_target.squeeze(0) if d_target.dim() == 4 else d_target
    opt = torch.optim.Adam([s], lr=lr)
    state = StyleSearchState(s=tuple(float(x) for x in s.detach()), step=0, loss=float("inf"))

    def evaluate() -> torch.Tensor:
        sv = s.unsqueeze(0).expand(photos.shape[0], -1)
        fake = G(photos, sv)
        loss = torch.zeros((), dtype=fake.dtype)
        for img in fake:
            targets = remap_targets(img, target_img, features, bins)
            loss = loss + style_distance_to_targets(img, targets, features)
        return loss / photos.shape[0]

    try:
        for step in range(steps):
            loss = evaluate()
            state.trace.append((step, tuple(float(x) for x in s.detach()), float(loss.detach())))
            if not torch.isfinite(loss):
                raise StyleSearchError(f"non-finite loss at step {step}", state)
            opt.zero_grad()
            loss.backward()
            opt.step()
            if project:
                with torch.no_grad():
                    s.copy_(project_simplex(s))
        final = evaluate()
        state.trace.append((steps, tuple(float(x) for x in s.detach()), float(final.detach())))
        if not torch.isfinite(final):
            raise StyleSearchError(f"non-finite loss at step {steps}", state)
    finally:
        for param, flag in frozen:
            param.requires_grad_(flag)
    best = min(state.trace, key=lambda row: row[2])
    state.step, state.s, state.loss = best[0], best[1], best[2]
    return state


def write_trace_csv(trace, path: str) -> None:
    """Write (step, style vector, loss) rows; accepts a search state too."""
    rows = getattr(trace, "trace", trace)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("step,s0,s1,s2,loss\n")
        for step, vec, loss in rows:
            fh.write(f"{step},{vec[0]:.8g},{vec[1]:.8g},{vec[2]:.8g},{loss:.10g}\n")
