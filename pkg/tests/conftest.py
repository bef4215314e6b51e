"""Shared fixtures: one small synthetic corpus reused across test modules."""

import zlib

import numpy as np
import pytest

from dimemo.corpus import SyntheticSpec, generate_synthetic
from dimemo.embeddings import export_synthetic_modality


@pytest.fixture(scope="session")
def tiny_corpus():
    spec = SyntheticSpec(
        seed=7,
        train_count=8,
        dev_count=3,
        test_count=3,
        duration_mean=45.0,
        duration_min=20.0,
        duration_max=90.0,
    )
    return generate_synthetic(spec)


@pytest.fixture(scope="session")
def tiny_streams(tiny_corpus):
    streams = {}
    for i, conv in enumerate(tiny_corpus.conversations.values()):
        streams[conv.id] = export_synthetic_modality(
            conv, "linguistic", dim=3, noise=0.02, seed=100 + i, mapping="random"
        )
    return streams


@pytest.fixture(scope="session")
def tiny_streams_acoustic(tiny_corpus):
    streams = {}
    for i, conv in enumerate(tiny_corpus.conversations.values()):
        streams[conv.id] = export_synthetic_modality(
            conv, "acoustic", dim=4, noise=0.02, seed=500 + i, mapping="random"
        )
    return streams


def rng_for(name: str) -> np.random.Generator:
    """Deterministic per-test generator so tests stay order-independent."""
    return np.random.default_rng(zlib.crc32(name.encode()))
