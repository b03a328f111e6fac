import math

import numpy as np
import pytest

from glucodg.errors import EmptyInput, SchemaMismatch
from glucodg.mmd import MmdConfig, median_bandwidth, mmd2


def test_analytic_two_point_example():
    assert abs(mmd2([[0.0]], [[1.0]], MmdConfig(bandwidth=1.0)) - (2 - 2 * math.exp(-0.5))) < 1e-9


def test_median_heuristic_for_two_points():
    # pooled sample of two points: the only distance is 1, so sigma = 1
    assert mmd2([[0.0]], [[1.0]]) == pytest.approx(2 - 2 * math.exp(-0.5), abs=1e-12)
    assert median_bandwidth(np.zeros((3, 2))) == 1.0


@pytest.mark.parametrize("seed", range(10))
def test_identity_symmetry_and_shift(seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(80, 4))
    y = rng.normal(size=(80, 4))
    assert mmd2(x, x) == 0.0
    assert mmd2(x, y) == pytest.approx(mmd2(y, x), abs=1e-12)
    same = mmd2(x, y)
    shifted = mmd2(x, y + 1.5)
    assert shifted > 5 * same


def test_input_checks():
    with pytest.raises(EmptyInput):
        mmd2(np.zeros((0, 2)), np.zeros((3, 2)))
    with pytest.raises(SchemaMismatch):
        mmd2(np.zeros((2, 2)), np.zeros((2, 3)))
    with pytest.raises(ValueError):
        MmdConfig(bandwidth=0.0)
