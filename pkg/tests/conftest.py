from __future__ import annotations

import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from udakit import DomainSpec, generate_domain


def make_blobs(domain_id: str, seed: int, n: int = 200, means=((0.0, 0.0), (3.0, 0.0)),
               sigma: float = 0.5, mix=None, groups=(1.0,), group_offsets=None):
    """Small Gaussian-blob domain for tests."""
    means = np.asarray(means, dtype=float)
    n_classes = means.shape[0]
    dim = means.shape[1]
    mix = np.full(n_classes, 1.0 / n_classes) if mix is None else np.asarray(mix, float)
    groups = np.asarray(groups, float)
    offsets = (np.zeros((groups.size, dim)) if group_offsets is None
               else np.asarray(group_offsets, float))
    spec = DomainSpec(domain_id, n, dim, means, sigma, mix, groups, offsets, seed)
    return generate_domain(spec)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
