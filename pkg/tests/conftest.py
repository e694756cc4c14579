import numpy as np
import pytest

from promptforge import EncoderWeights


def rel_error(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b) / denom)


@pytest.fixture(scope="session")
def tiny_weights() -> EncoderWeights:
    """A small encoder pair for gradient and oracle tests."""
    return EncoderWeights(3, dim=16, heads=2, vocab_size=64, max_tokens=8, max_patches=16)


@pytest.fixture(scope="session")
def default_weights() -> EncoderWeights:
    return EncoderWeights(0)
