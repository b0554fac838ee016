import csv

import numpy as np
import pytest
import torch
import torch.nn as nn

from apdraw.corpus import NoFaceError, SyntheticFaceParser, region_masks
from apdraw.dissect import (
    label_units,
    list_units,
    optimal_threshold,
    summarize_reports,
    unit_feature_map,
    unit_region_iou,
    write_report_csv,
)


class WiredUnits(nn.Module):
    """Channel 0 emits the dilated eyes mask exactly; the rest emit seeded noise."""

    def __init__(self, parser, dilation_frac, noise_seed=0):
        super().__init__()
        self.probe = nn.Conv2d(4, 4, 1, bias=False)
        with torch.no_grad():
            self.probe.weight.zero_()
            for c in range(4):
                self.probe.weight[c, c, 0, 0] = 1.0
        self.parser = parser
        self.frac = dilation_frac
        self.gen = torch.Generator().manual_seed(noise_seed)

    def forward(self, x):
        feats = []
        for img in x:
            regions = region_masks(img, self.parser, self.frac).regions
            mask = torch.from_numpy(regions["eyes"].astype(np.float32))
            noise = torch.rand(3, *mask.shape, generator=self.gen)
            feats.append(torch.cat([mask[None], noise]))
        return self.probe(torch.stack(feats))


def test_list_units_counts_conv_channels():
    model = nn.Sequential(
        nn.Conv2d(1, 4, 3, padding=1),
        nn.ReLU(),
        nn.ConvTranspose2d(4, 2, 4, stride=2, padding=1),
    )
    units = list_units(model)
    names = {name for name, _ in units}
    assert len(units) == 2
    assert sum(n for _, n in units) == 6
    assert all("relu" not in n.lower() for n in names)


def test_unit_feature_map_shape_and_validation():
    model = nn.Sequential(nn.Conv2d(3, 4, 3, stride=2, padding=1))
    p = torch.rand(3, 16, 16)
    fmap = unit_feature_map(model, p, "0", 2)
    assert fmap.shape == (16, 16)
    with pytest.raises(ValueError):
        unit_feature_map(model, p, "nonexistent", 0)
    with pytest.raises(ValueError):
        unit_feature_map(model, p, "0", 99)


def test_half_overlap_iou_exactly_one_third():
    # activation box and mask box of equal area, sharing exactly half:
    # intersection = A/2, union = 3A/2 -> IoU = 1/3
    fmap = torch.zeros(1, 8, 8)
    fmap[0, 0:4, 0:4] = 1.0
    mask = np.zeros((1, 8, 8), dtype=bool)
    mask[0, 0:4, 2:6] = True
    iou = unit_region_iou(fmap, torch.from_numpy(mask), t=0.5)
    assert iou == pytest.approx(1.0 / 3.0, abs=1e-12)


def test_optimal_threshold_separates_step():
    rng = np.random.default_rng(0)
    mask = np.zeros((4, 16, 16), dtype=bool)
    mask[:, 4:12, 4:12] = True
    maps = torch.from_numpy(
        np.where(mask, 0.9, 0.1) + rng.normal(0, 0.01, mask.shape)
    ).float()
    t = optimal_threshold(maps, torch.from_numpy(mask))
    assert t is not None
    assert 0.1 < t < 0.9  # strictly between the two activation clusters
    iou = unit_region_iou(maps, torch.from_numpy(mask), t)
    assert iou > 0.95


def test_optimal_threshold_constant_mask_is_none():
    maps = torch.rand(2, 8, 8)
    all_false = torch.zeros(2, 8, 8, dtype=torch.bool)
    assert optimal_threshold(maps, all_false) is None
    all_true = torch.ones(2, 8, 8, dtype=torch.bool)
    assert optimal_threshold(maps, all_true) is None


def test_threshold_invariant_to_monotone_rescaling():
    rng = np.random.default_rng(1)
    mask = np.zeros((2, 16, 16), dtype=bool)
    mask[:, 2:10, 2:10] = True
    base = np.where(mask, 0.8, 0.2) + rng.normal(0, 0.02, mask.shape)
    maps = torch.from_numpy(base).float()
    rescaled = torch.from_numpy(np.tanh(3.0 * base)).float()
    t1 = optimal_threshold(maps, torch.from_numpy(mask))
    t2 = optimal_threshold(rescaled, torch.from_numpy(mask))
    iou1 = unit_region_iou(maps, torch.from_numpy(mask), t1)
    iou2 = unit_region_iou(rescaled, torch.from_numpy(mask), t2)
    assert iou1 == pytest.approx(iou2, abs=1e-12)


def test_label_units_wired_generator():
    parser = SyntheticFaceParser()
    model = WiredUnits(parser, dilation_frac=0.02)
    photos = [torch.rand(3, 64, 64) for _ in range(4)]
    reports = label_units(model, photos, parser, dilation_frac=0.02)
    by_unit = {r.unit: r for r in reports if r.layer == "probe"}
    wired = by_unit[0]
    assert wired.best_region == "eyes"
    assert wired.iou > 0.9
    assert wired.interpretable


def test_label_units_noise_rarely_interpretable():
    parser = SyntheticFaceParser()
    photos = [torch.rand(3, 64, 64) for _ in range(2)]
    flagged = total = 0
    for seed in range(10):
        model = WiredUnits(parser, dilation_frac=0.02, noise_seed=seed)
        reports = label_units(model, photos, parser, dilation_frac=0.02)
        for r in reports:
            if r.unit == 0:
                continue
            total += 1
            flagged += int(r.interpretable)
    assert flagged / total <= 0.05


def test_label_units_skips_on_no_face():
    class PickyParser(SyntheticFaceParser):
        def __call__(self, image):
            raise NoFaceError("nope")

    model = WiredUnits(SyntheticFaceParser(), dilation_frac=0.02)
    photos = [torch.rand(3, 64, 64)]
    with pytest.warns(UserWarning, match="skipped"), pytest.raises(NoFaceError):
        label_units(model, photos, PickyParser(), dilation_frac=0.02)


def test_summarize_and_csv(tmp_path):
    parser = SyntheticFaceParser()
    model = WiredUnits(parser, dilation_frac=0.02)
    photos = [torch.rand(3, 64, 64) for _ in range(2)]
    reports = label_units(model, photos, parser, dilation_frac=0.02)
    summary = summarize_reports(reports)
    assert summary["units"] == len(reports)
    assert summary["interpretable"] >= 1
    out = tmp_path / "report.csv"
    write_report_csv(reports, str(out))
    with open(out) as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["layer", "unit", "region", "t", "iou", "interpretable"]
    assert len(rows) == len(reports) + 1
