"""Shared helpers for the test suite."""

from __future__ import annotations

import numpy as np
import scipy.stats


def chi2_rank_uniformity(counts: np.ndarray, n_cells: int) -> float:
    """p-value of a chi-square test that rank counts are uniform."""
    observed = np.bincount(counts, minlength=n_cells)
    assert observed.sum() > 0
    return float(scipy.stats.chisquare(observed).pvalue)


def super_uniform_ok(p_values: np.ndarray, alphas=(0.01, 0.05, 0.1, 0.2), n_se: float = 3.0):
    """Check empirical P(p <= a) <= a + n_se * SE for each level.

    Returns (ok, diagnostics) where diagnostics lists
    (alpha, empirical, bound) triples.
    """
    p_values = np.asarray(p_values, dtype=float)
    reps = p_values.size
    rows = []
    ok = True
    for a in alphas:
        emp = float(np.mean(p_values <= a))
        bound = a + n_se * np.sqrt(a * (1 - a) / reps)
        rows.append((a, emp, bound))
        ok = ok and emp <= bound
    return ok, rows
