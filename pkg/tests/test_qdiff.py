import numpy as np
import pytest

from hyplab import qdiff
from hyplab.errors import DepthTooSmall


def test_defect_small_at_working_depth(qd5):
    assert qd5.defect_report["defect"] <= 1e-2


def test_defect_decreases_with_depth(group):
    defects = []
    for L in (2, 3, 4, 5):
        qd = qdiff.QuadraticDifferential(group, (1.0,), L)
        defects.append(qd.automorphy_defect())
    for a, b in zip(defects, defects[1:]):
        assert b <= 1.10 * a


def test_zero_seed_rejected(group):
    with pytest.raises(ValueError):
        qdiff.poincare_series_qd(group, (0.0,), 4)


def test_depth_too_small(group):
    with pytest.raises(DepthTooSmall):
        qdiff.poincare_series_qd(group, (1.0,), 1, defect_tol=1e-4)


def test_derivatives_against_central_differences(group):
    qd = qdiff.QuadraticDifferential(group, (1.0, 0.3, 0.2j), 4)
    v = np.array([0.1 + 0.2j, -0.3 + 0.1j, 0.4 - 0.35j])
    h = 1e-5
    q0, q1, q2, q3 = qd.values(v, order=3)
    fd1 = (qd.q(v + h) - qd.q(v - h)) / (2 * h)
    assert np.max(np.abs(fd1 - q1) / np.abs(q1)) < 1e-6
    fd2 = (qd.qprime(v + h) - qd.qprime(v - h)) / (2 * h)
    assert np.max(np.abs(fd2 - q2) / np.abs(q2)) < 1e-6
    fd3 = (qd.values(v + h, order=2)[2] - qd.values(v - h, order=2)[2]) \
        / (2 * h)
    assert np.max(np.abs(fd3 - q3) / np.abs(q3)) < 1e-5


def test_holomorphy_stencil(qd5):
    v = qdiff.default_sample_points(30, radius=0.6)
    h = 1e-5
    dx = (qd5.q(v + h) - qd5.q(v - h)) / (2 * h)
    dy = (qd5.q(v + 1j * h) - qd5.q(v - 1j * h)) / (2 * h)
    scale = 1.0 + np.abs(qd5.q(v))
    assert np.max(np.abs(dx + 1j * dy) / scale) < 1e-6


def test_normalization_flag(group):
    qd = qdiff.poincare_series_qd(group, (1.0,), 5, normalize=True)
    pts = qdiff.default_sample_points()
    assert abs(np.max(np.abs(qd.q(pts))) - 1.0) < 1e-12


def test_values_deterministic(qd5):
    pts = qdiff.default_sample_points(64)
    a = qd5.values(pts, order=1)
    b = qd5.values(pts, order=1)
    assert all(np.array_equal(x, y) for x, y in zip(a, b))


def test_symmetry_killed_sector(group):
    """The pure-v seed lies in an equivariance sector the octagon symmetry
    annihilates; only truncation noise remains."""
    qd = qdiff.QuadraticDifferential(group, (0.0, 1.0), 4)
    pts = qdiff.default_sample_points(50, radius=0.7)
    assert np.max(np.abs(qd.q(pts))) < 1e-2
