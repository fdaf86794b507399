import numpy as np
import pytest
import torch

from psvl.corpus import build_cooccurrence
from psvl.synthetic import block_features, sample_block_boundaries
from psvl.tagging import rule_based_tagger

torch.set_num_threads(4)


def tag_lines(lines):
    return [rule_based_tagger(line) for line in lines]


@pytest.fixture
def toy_corpus_model():
    # counts by hand: nv[dog,run]=2, nv[dog,eat]=1; n[dog]=3; v[run]=2, v[eat]=1
    return build_cooccurrence(tag_lines(["dog run", "dog eat", "dog run"]), min_count=1)


@pytest.fixture
def rng():
    return np.random.default_rng(0)


def planted_video(rng, blocks=5, frames=128, dim=16, sigma=0.05, min_len=8):
    """Stationary-block video with unit block vectors; returns (features, boundaries)."""
    bounds = sample_block_boundaries(rng, frames, blocks, min_len)
    vecs = []
    for _ in range(blocks):
        v = rng.standard_normal(dim)
        vecs.append(v / np.linalg.norm(v))
    return block_features(rng, bounds, vecs, sigma), bounds


def boundary_recall(found, planted, tol=2):
    """Share of planted internal boundaries matched by a found boundary within tol."""
    internal = planted[1:-1]
    if not internal:
        return 1.0
    hits = sum(1 for b in internal if any(abs(b - f) <= tol for f in found))
    return hits / len(internal)
