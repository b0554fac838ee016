"""Central finite-difference validation of every differentiable loss path.

All fixtures are fp64 and at most 8x8 so second-order terms stay below the
1e-3 relative-error budget.
"""

import numpy as np
import pytest
import torch

from helpers import check_gradient

from apdraw.backbones import EdgeExtractor, FeaturePyramid, PerceptualDistance
from apdraw.backbones import Backbones, FidEmbedder
from apdraw.losses import (
    quality_loss,
    relaxed_cycle_loss,
    soft_cross_entropy,
    strict_cycle_loss,
    style_classification_loss,
)
from apdraw.networks import QualityModel
from apdraw.styles import remap_targets, style_distance_to_targets


@pytest.fixture(scope="module")
def fp64_backbones():
    return Backbones(
        edge=EdgeExtractor(),
        perceptual=PerceptualDistance(seed=0),
        features=FeaturePyramid(seed=0),
        fid=FidEmbedder(seed=0),
    )


def test_strict_cycle_gradient():
    torch.manual_seed(0)
    d = torch.rand(1, 1, 8, 8, dtype=torch.float64)
    d_rec0 = torch.rand(1, 1, 8, 8, dtype=torch.float64)
    rel = check_gradient(lambda x: strict_cycle_loss(d, x), d_rec0)
    assert rel < 1e-3


def test_style_classification_gradient():
    torch.manual_seed(1)
    labels = torch.tensor([[0.2, 0.5, 0.3]], dtype=torch.float64)
    fake_targets = torch.tensor([[1.0, 0.0, 0.0]], dtype=torch.float64)
    real_probs = torch.tensor([[0.3, 0.4, 0.3]], dtype=torch.float64)
    probs0 = torch.tensor([[0.25, 0.35, 0.40]], dtype=torch.float64)

    def fn(probs):
        return style_classification_loss(labels, real_probs, fake_targets, probs)

    rel = check_gradient(fn, probs0)
    assert rel < 1e-3


def test_soft_cross_entropy_gradient():
    labels = torch.tensor([[0.6, 0.3, 0.1]], dtype=torch.float64)
    probs0 = torch.tensor([[0.2, 0.5, 0.3]], dtype=torch.float64)
    rel = check_gradient(lambda p: soft_cross_entropy(labels, p), probs0)
    assert rel < 1e-3


def test_quality_loss_gradient():
    torch.manual_seed(2)
    model = QualityModel(base_channels=8).double()
    fake0 = torch.rand(1, 1, 8, 8, dtype=torch.float64)
    rel = check_gradient(lambda x: quality_loss(x, model), fake0)
    assert rel < 1e-3


def test_histogram_style_gradient(fp64_backbones):
    torch.manual_seed(3)
    a0 = torch.rand(1, 8, 8, dtype=torch.float64)
    b = torch.rand(1, 8, 8, dtype=torch.float64)
    targets = remap_targets(a0, b, fp64_backbones.features)

    def fn(a):
        return style_distance_to_targets(a, targets, fp64_backbones.features)

    rel = check_gradient(fn, a0.clone())
    assert rel < 1e-3


def test_relaxed_cycle_gradient(fp64_backbones):
    torch.manual_seed(4)
    p = torch.rand(1, 3, 8, 8, dtype=torch.float64)
    p_rec0 = torch.rand(1, 3, 8, 8, dtype=torch.float64)
    rel = check_gradient(lambda x: relaxed_cycle_loss(p, x, fp64_backbones), p_rec0)
    assert rel < 1e-3
