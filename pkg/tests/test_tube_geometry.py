import math

import numpy as np
import pytest
from hypothesis import given, settings as hsettings
from hypothesis import strategies as st

from nikodym.errors import InvalidInputError
from nikodym.services.curve_geometry import circle_lift, moment_curve
from nikodym.services.tube_geometry import (
    ScaleVector,
    Tube,
    ball_lens_volume,
    ball_volume,
    check_admissible,
    intersection_volume_constant,
    intersection_volume_mc,
    min_intersection_offset,
    parse_tube,
    predicted_intersection_volume,
    tube_contains,
)


def test_ball_volume():
    assert ball_volume(1) == pytest.approx(2.0)
    assert ball_volume(2) == pytest.approx(math.pi)
    assert ball_volume(3) == pytest.approx(4.0 * math.pi / 3.0)


def test_scale_vector_bounds():
    with pytest.raises(InvalidInputError):
        ScaleVector((0.5, 1.0))
    with pytest.raises(InvalidInputError):
        ScaleVector((0.0, 0.1))
    assert ScaleVector.graded(0.1, 3).r == pytest.approx((0.1, 0.01, 0.001))


@given(st.floats(min_value=1e-3, max_value=0.9), st.integers(min_value=1, max_value=6))
@hsettings(max_examples=30, deadline=None)
def test_isotropic_and_graded_vectors_are_admissible(delta, d):
    assert check_admissible(ScaleVector.isotropic(delta, d)).admissible
    assert check_admissible(ScaleVector.graded(delta, d)).admissible


def test_admissibility_reports_the_first_violation():
    assert check_admissible((0.1, 0.2)) == (False, "r_2 <= r_1")
    assert check_admissible((0.5, 0.01)) == (False, "r_1 <= r_2^(1/2)")
    verdict = check_admissible((0.1, 0.09, 0.001))
    assert not verdict.admissible
    assert verdict.violated.startswith("log-convexity")


def test_isotropic_tube_membership_and_volume():
    tube = Tube(circle_lift(), "isotropic", 0.0, delta=0.1)
    # γ(0) = (1, 0): the core point at height t is (t, 0, t)
    assert tube_contains(tube, [0.5, 0.0, 0.5])
    assert tube_contains(tube, [0.5, 0.09, 0.5])
    assert not tube_contains(tube, [0.5, 0.2, 0.5])
    assert not tube_contains(tube, [1.5, 0.0, 1.5])
    pts = np.array([[0.0, 0.0, 0.0], [0.0, 0.5, 0.0]])
    assert tube_contains(tube, pts).tolist() == [True, False]
    assert tube.volume == pytest.approx(2.0 * math.pi * 0.01)


def test_anisotropic_tube_uses_the_frame():
    tube = Tube(circle_lift(), "anisotropic", 0.0, r=(0.2, 0.01))
    # at s = 0 the frame is e_1 = γ'(0) = (0, 1), e_2 = (-1, 0)
    assert tube_contains(tube, [0.0, 0.15, 0.0])
    assert not tube_contains(tube, [0.05, 0.0, 0.0])
    assert tube.volume == pytest.approx(2.0 * 0.4 * 0.02)


def test_tube_validation():
    with pytest.raises(InvalidInputError):
        Tube(circle_lift(), "isotropic", 0.0)
    with pytest.raises(InvalidInputError):
        Tube(circle_lift(), "anisotropic", 0.0, r=(0.1,))
    with pytest.raises(InvalidInputError):
        Tube(circle_lift(), "isotropic", 0.0, delta=0.1, center_shift=np.zeros(2))


def test_parse_tube():
    iso = parse_tube("iso:s=0.2,delta=0.1", circle_lift())
    assert iso.kind == "isotropic" and iso.s == 0.2 and iso.delta == 0.1
    aniso = parse_tube("aniso:s=0,r=0.1,0.01", circle_lift())
    assert aniso.r == (0.1, 0.01)
    with pytest.raises(InvalidInputError):
        parse_tube("iso:s=0.2", circle_lift())
    with pytest.raises(InvalidInputError):
        parse_tube("slab:s=0,delta=0.1", circle_lift())


def test_self_intersection_recovers_the_volume():
    tube = Tube(moment_curve(2), "isotropic", 0.3, delta=0.05)
    est, err = intersection_volume_mc(tube, tube, 20_000, seed=1)
    assert abs(est - tube.volume) <= 5 * err + 1e-12


def test_intersection_is_deterministic_and_zero_when_boxes_are_apart():
    curve = moment_curve(2)
    a = Tube(curve, "isotropic", 0.0, delta=0.1)
    b = Tube(curve, "isotropic", 0.5, delta=0.05)
    assert intersection_volume_mc(a, b, 5_000, seed=3) == intersection_volume_mc(a, b, 5_000, seed=3)
    far = Tube(curve, "isotropic", 0.0, delta=0.1, center_shift=np.array([10.0, 0.0, 0.0]))
    assert intersection_volume_mc(a, far, 5_000, seed=3) == (0.0, 0.0)
    with pytest.raises(InvalidInputError):
        intersection_volume_mc(a, b, 999, seed=3)


def test_volume_law_helpers():
    assert predicted_intersection_volume(0.1, 0.0, 2) == pytest.approx(0.01)
    assert predicted_intersection_volume(0.1, 0.9, 2) == pytest.approx(0.001)
    assert intersection_volume_constant(2) == pytest.approx(2.0 * math.pi * math.sqrt(11.0))
    with pytest.raises(InvalidInputError):
        predicted_intersection_volume(0.0, 0.1, 2)


def test_min_intersection_offset():
    assert min_intersection_offset([0.0, 1.0], [1.0, 0.0]) == pytest.approx(1.0)
    assert min_intersection_offset([2.0, 0.0], [1.0, 0.0]) == pytest.approx(1.0)
    assert min_intersection_offset([0.5, 0.0], [1.0, 0.0]) == pytest.approx(0.0)


def test_ball_lens_volume():
    assert ball_lens_volume(1.0, 0.5, 0.1, 2) == pytest.approx(math.pi * 0.25)
    assert ball_lens_volume(1.0, 1.0, 3.0, 2) == 0.0
    # two unit disks at distance 1 overlap in 2π/3 − √3/2
    assert ball_lens_volume(1.0, 1.0, 1.0, 2) == pytest.approx(2 * math.pi / 3 - math.sqrt(3) / 2, rel=1e-9)
    vals = ball_lens_volume(np.array([1.0, 1.0]), 1.0, np.array([0.0, 3.0]), 3)
    assert vals[0] == pytest.approx(4.0 * math.pi / 3.0)
    assert vals[1] == 0.0
