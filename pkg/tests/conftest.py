from math import sqrt

import numpy as np
import pytest
from scipy import stats

from ksumforge.core import SeededRng


def chi2_uniform_pvalue(values, bins):
    counts = np.bincount(np.asarray(values, dtype=np.int64), minlength=bins)
    assert len(counts) == bins
    return stats.chisquare(counts).pvalue


def chi2_expected_pvalue(counts, probs):
    counts = np.asarray(counts, dtype=float)
    expected = np.asarray(probs, dtype=float) * counts.sum()
    return stats.chisquare(counts, expected).pvalue


def within_sigma(hits, trials, p, nsig=3.0):
    sigma = sqrt(p * (1 - p) / trials)
    return abs(hits / trials - p) <= nsig * sigma + 1e-12


@pytest.fixture
def rng():
    return SeededRng(20240607)
