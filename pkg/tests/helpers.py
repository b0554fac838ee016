"""Shared test utilities: brute-force oracles and finite-difference gradients."""

from __future__ import annotations

import itertools
import math

import numpy as np
import torch


def brute_force_scores(answers) -> dict[str, int]:
    """Independent oracle: raw score = (# items beaten) - (# items lost to),
    counted pairwise with multiplicity straight from the answer list.
    """
    scores: dict[str, int] = {}
    for ans in answers:
        ordered = list(ans.order)
        for i, j in itertools.combinations(range(3), 2):
            worse, better = ordered[i], ordered[j]
            scores[better] = scores.get(better, 0) + 1
            scores[worse] = scores.get(worse, 0) - 1
    return scores


def kendall_tau_a(ranking: dict[str, float], truth: dict[str, int]) -> float:
    """Tau-a on shared keys: (concordant - discordant) / C(n, 2); ties count
    as neither.
    """
    keys = sorted(truth)
    conc = disc = 0
    for a, b in itertools.combinations(keys, 2):
        s = (ranking[a] - ranking[b]) * (truth[a] - truth[b])
        if s > 0:
            conc += 1
        elif s < 0:
            disc += 1
    return (conc - disc) / math.comb(len(keys), 2)


def simulate_answers(schedule, hidden_rank: dict[str, int], style: str = "style1"):
    """Noiseless annotator: orders each scheduled triple worst -> best by the
    hidden rank.
    """
    from apdraw.ranking import PreferenceAnswer

    answers = []
    for qid, triple in enumerate(schedule):
        order = tuple(sorted(triple, key=lambda pid: hidden_rank[pid]))
        answers.append(PreferenceAnswer(
            question_id=f"q{qid}", style=style, drawing_ids=tuple(triple), order=order,
        ))
    return answers


def fd_gradient(fn, x: torch.Tensor, eps: float = 1e-5) -> torch.Tensor:
    """Central finite differences of a scalar function wrt every element of x."""
    grad = torch.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    with torch.no_grad():
        for i in range(flat.numel()):
            orig = flat[i].item()
            flat[i] = orig + eps
            hi = float(fn(x))
            flat[i] = orig - eps
            lo = float(fn(x))
            flat[i] = orig
            gflat[i] = (hi - lo) / (2 * eps)
    return grad


def check_gradient(fn, x: torch.Tensor, eps: float = 1e-5, rtol: float = 1e-3) -> float:
    """Relative error between autograd and central-difference gradients."""
    x = x.detach().clone().requires_grad_(True)
    loss = fn(x)
    loss.backward()
    analytic = x.grad.detach().clone()
    numeric = fd_gradient(fn, x.detach().clone(), eps=eps)
    denom = max(analytic.norm().item(), numeric.norm().item(), 1e-12)
    rel = (analytic - numeric).norm().item() / denom
    assert rel < rtol, f"gradient relative error {rel:.3e} >= {rtol}"
    return rel


def np_histogram_l1(a: np.ndarray, b: np.ndarray, bins: int) -> float:
    """Per-bin L1 distance between normalized histograms over [0, 1]."""
    ha, _ = np.histogram(a, bins=bins, range=(0.0, 1.0))
    hb, _ = np.histogram(b, bins=bins, range=(0.0, 1.0))
    ha = ha / max(1, a.size)
    hb = hb / max(1, b.size)
    return float(np.abs(ha - hb).sum())
