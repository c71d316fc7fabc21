"""Shared fixtures: tiny nets and datasets sized for fast CPU tests."""

import numpy as np
import pytest
import torch

from anomap.networks import Discriminator, Generator, init_weights
from anomap.phantom import PhantomSpec


def make_generator(seed: int = 0, base_channels: int = 4) -> Generator:
    g = Generator(base_channels=base_channels)
    init_weights(g, torch.Generator().manual_seed(seed))
    return g


def make_discriminator(seed: int = 0, base_channels: int = 4) -> Discriminator:
    d = Discriminator(base_channels=base_channels)
    init_weights(d, torch.Generator().manual_seed(seed))
    return d


class ZeroMapGenerator(torch.nn.Module):
    """Emits an all-zero additive map regardless of input."""

    def forward(self, x):
        return torch.zeros_like(x)


@pytest.fixture
def tiny_generator():
    return make_generator()


@pytest.fixture
def tiny_discriminator():
    return make_discriminator()


@pytest.fixture
def zero_generator():
    return ZeroMapGenerator()


@pytest.fixture
def small_spec():
    return PhantomSpec(
        image_size=64,
        slices_per_subject=4,
        n_healthy=4,
        n_diseased=2,
        lesion_intensity_delta=0.3,
        lesion_radius_frac=0.12,
        texture_noise_sigma=0.035,
        seed=7,
    )


def random_scores_labels(rng: np.random.Generator, n: int, ties: bool = False):
    scores = rng.normal(size=n)
    if ties:
        scores = np.round(scores, 1)  # coarse grid forces tied scores
    labels = rng.integers(0, 2, size=n)
    # ensure both classes present
    labels[0], labels[1] = 0, 1
    return scores, labels


def brute_force_auc(scores, labels) -> float:
    """O(n^2) pairwise counting oracle: wins + half-credit ties."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    pos = scores[labels == 1]
    neg = scores[labels == 0]
    wins = (pos[:, None] > neg[None, :]).sum()
    ties = (pos[:, None] == neg[None, :]).sum()
    return (wins + 0.5 * ties) / (len(pos) * len(neg))
