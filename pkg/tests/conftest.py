import numpy as np
import pytest
import torch

from apdraw.backbones import load_backbones
from apdraw.config import load_config
from apdraw.corpus import build_toy_corpus, load_manifest


@pytest.fixture(scope="session")
def toy_cfg():
    return load_config(profile="toy")


@pytest.fixture(scope="session")
def toy_corpus_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("toycorpus")
    manifest = build_toy_corpus(str(root), n_photos=8, n_drawings=8, size=64, seed=0)
    return root, manifest


@pytest.fixture(scope="session")
def toy_records(toy_corpus_dir):
    _, manifest = toy_corpus_dir
    return load_manifest(manifest)


@pytest.fixture(scope="session")
def fallback_backbones(toy_cfg):
    return load_backbones(toy_cfg)


@pytest.fixture(autouse=True)
def _fixed_torch_seed():
    torch.manual_seed(1234)
    np.random.seed(1234)
    yield
