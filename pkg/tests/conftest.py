"""Shared fixtures and dataset builders for the test suite."""

import numpy as np
import pytest

from rmtif.data import Dataset


def progressive_times(rng, n, n_stages=3, censor_rate=0.0):
    """Random monotone stage times with optional exponential censoring.

    Returns (times, indicators) in the wide representation: times are
    non-decreasing across stages and constant after censoring.
    """
    gaps = rng.exponential(1.0, size=(n, n_stages))
    full = np.cumsum(gaps, axis=1)
    if censor_rate <= 0:
        return full, np.ones((n, n_stages), dtype=int)
    c = rng.exponential(1.0 / censor_rate, size=n)
    times = np.minimum(full, c[:, None])
    ind = (full <= c[:, None]).astype(int)
    return times, ind


def build_irt(rng, n=40, n_stages=3, censor_rate=0.0, balanced=False,
              n_covariates=2):
    """Small individually randomized dataset with continuous covariates."""
    if balanced:
        arm = np.tile([0, 1], n // 2 + 1)[:n]
    else:
        while True:
            arm = (rng.random(n) < 0.5).astype(int)
            if 0 < arm.sum() < n:
                break
    times, ind = progressive_times(rng, n, n_stages, censor_rate)
    Z = rng.normal(size=(n, n_covariates))
    names = [f"z{j + 1}" for j in range(n_covariates)]
    return Dataset.from_arrays(times, ind, arm, Z, names)


def build_crt(rng, m=8, size=3, n_stages=3, censor_rate=0.0,
              balanced=False):
    """Small cluster-randomized dataset with constant cluster size."""
    if balanced:
        arm_c = np.tile([0, 1], m // 2 + 1)[:m]
    else:
        while True:
            arm_c = (rng.random(m) < 0.5).astype(int)
            if 2 <= arm_c.sum() <= m - 2:
                break
    n = m * size
    codes = np.repeat(np.arange(m), size)
    times, ind = progressive_times(rng, n, n_stages, censor_rate)
    Z = rng.normal(size=(n, 2))
    cluster_ids = [f"c{c}" for c in codes]
    return Dataset.from_arrays(times, ind, arm_c[codes], Z, ["z1", "z2"],
                               design="crt", cluster_ids=cluster_ids)


@pytest.fixture
def rng():
    return np.random.default_rng(42)
