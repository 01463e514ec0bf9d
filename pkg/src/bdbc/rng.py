"""Pinned random streams.

All randomness goes through numpy's counter-based Philox bit generator,
keyed by a tuple of integers via ``SeedSequence``. Normal variates use
numpy's ziggurat sampler.
"""
import numpy as np


def make_rng(*keys) -> np.random.Generator:
    """Philox generator keyed by a tuple of nonnegative integers."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(k) for k in keys])))
