"""Shared fixtures: small generated datasets and an acceptance reporter."""

from __future__ import annotations

import numpy as np
import pytest

from nob import fhn
from nob.dataset import Dataset, SplitSpec, generate, split_pool


@pytest.fixture(scope="session")
def tiny_train() -> Dataset:
    """Twelve protocol-sampled training solves at 64x64 (seed 0)."""
    return generate(SplitSpec.train(12), seed=0)


@pytest.fixture(scope="session")
def tiny_pool(tiny_train) -> Dataset:
    """Eight time-translated samples normalized with the training stats."""
    return generate(SplitSpec.test(8), seed=1, norm=tiny_train.norm)


@pytest.fixture(scope="session")
def tiny_val_test(tiny_pool):
    """(validation, test) halves of the translated pool, split by parity."""
    return split_pool(tiny_pool)


@pytest.fixture(scope="session")
def smooth_fields() -> np.ndarray:
    """Deterministic smooth [n, 3, 64, 64] stack for fast model training.

    Low-order Fourier mixtures (not solver output) keep model smoke runs
    cheap while exercising normalization-scale values in (0, 1).
    """
    rng = np.random.default_rng(42)
    x = np.linspace(0.0, 1.0, 64)
    xx, yy = np.meshgrid(x, x, indexing="ij")
    fields = np.empty((10, 3, 64, 64))
    for i in range(10):
        for c in range(3):
            a = rng.normal(size=(3, 3)) / (1.0 + np.arange(3)[:, None]
                                           + np.arange(3)[None, :])
            f = sum(a[p, q] * np.cos(2 * np.pi * (p * xx + q * yy))
                    for p in range(3) for q in range(3))
            fields[i, c] = 0.5 + 0.2 * f
    return fields


def report_criterion(number: int, name: str, passed: bool,
                     detail: str = "") -> None:
    """One pass/fail line per acceptance criterion, then the assertion."""
    status = "PASS" if passed else "FAIL"
    suffix = f" ({detail})" if detail else ""
    print(f"\nACCEPTANCE {number:2d} {name}: {status}{suffix}")
    assert passed, f"criterion {number} {name}: {detail}"
