import numpy as np
import pytest
from hypothesis import given, settings as hsettings
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from nikodym.errors import DegenerateCurveError, InvalidInputError
from nikodym.services.curve_geometry import (
    build_rescaling_map,
    check_class_membership,
    circle_lift,
    class_bound,
    frenet_frame,
    frenet_frames,
    from_function,
    generalized_determinant,
    get_curve,
    helix,
    moment_curve,
    perturbed_moment_curve,
    rescale_curve,
    solve_sigma,
    solve_sigma_many,
    straight_line,
)


@given(st.integers(min_value=1, max_value=6), st.floats(min_value=-1.0, max_value=1.0))
@hsettings(max_examples=40, deadline=None)
def test_moment_curve_determinant_is_one(d, s):
    assert generalized_determinant(moment_curve(d), s, d) == pytest.approx(1.0, rel=1e-9)


def test_circle_and_helix_derivatives_span():
    s = np.linspace(-1, 1, 9)
    assert_allclose(generalized_determinant(circle_lift(), s, 2), 1.0, rtol=1e-12)
    # γ' = (-sin, cos, 1), γ'' = (-cos, -sin, 0), γ''' = (sin, -cos, 0)
    assert_allclose(generalized_determinant(helix(), s, 3), 1.0, rtol=1e-12)


def test_straight_line_is_degenerate():
    line = straight_line(3)
    assert generalized_determinant(line, 0.2, 2) == 0.0
    with pytest.raises(DegenerateCurveError) as exc:
        frenet_frame(line, 0.2)
    assert exc.value.order == 2
    assert class_bound(line, 2) == float("inf")


def test_determinant_rejects_bad_order():
    with pytest.raises(InvalidInputError):
        generalized_determinant(moment_curve(2), 0.0, 3)


def test_class_membership():
    rep = check_class_membership(moment_curve(2), B=10.0, L=2, s_samples=65)
    assert rep.passes
    assert rep.min_gen_det == pytest.approx(1.0)
    assert rep.samples == 65
    assert rep.certification == "sampled"

    tight = check_class_membership(moment_curve(2), B=1.01, L=2, s_samples=65)
    assert not tight.passes

    with pytest.raises(InvalidInputError):
        check_class_membership(moment_curve(2), B=1.0, L=2)


def test_frenet_frame_is_orthonormal_and_oriented():
    frame = frenet_frame(helix(), 0.3)
    assert_allclose(frame @ frame.T, np.eye(3), atol=1e-12)
    # e_1 points along γ'
    tangent = helix().eval(1, 0.3)
    assert frame[0] @ tangent == pytest.approx(np.linalg.norm(tangent))


def test_vectorized_frames_match_single_frames():
    curve = moment_curve(3)
    s = np.array([-0.7, 0.0, 0.4])
    frames = frenet_frames(curve, s)
    assert frames.shape == (3, 3, 3)
    for k, sk in enumerate(s):
        assert_allclose(frames[k], frenet_frame(curve, sk), atol=1e-12)


def test_from_function_matches_closed_form():
    approx = from_function("circle-fd", 2, lambda s: np.stack([np.cos(s), np.sin(s)], axis=-1))
    s = np.linspace(-1, 1, 11)
    for i in (0, 1, 2):
        assert_allclose(approx.eval(i, s), circle_lift().eval(i, s), atol=1e-5)


def test_get_curve_registry():
    assert get_curve("circle2d").d == 2
    assert get_curve("helix", 3).d == 3
    assert get_curve("moment", 4).name == "moment(d=4)"
    assert "eps=0.01" in get_curve("perturbed-moment:eps=0.01", 3).name
    with pytest.raises(InvalidInputError):
        get_curve("circle2d", 3)
    with pytest.raises(InvalidInputError):
        get_curve("spiral", 2)


def test_eval_rejects_high_orders():
    with pytest.raises(InvalidInputError):
        moment_curve(2).eval(5, 0.0)


def test_solve_sigma_on_moment_curve():
    # ⟨γ'(s), ξ⟩ = ξ_1 + s ξ_2 on the moment curve in d = 2
    curve = moment_curve(2)
    assert solve_sigma(curve, [0.3, 1.0], 2) == pytest.approx(-0.3, abs=1e-10)
    assert solve_sigma(curve, [2.0, 1.0], 2) is None
    with pytest.raises(InvalidInputError):
        solve_sigma(curve, [0.0, 0.0], 2)
    with pytest.raises(InvalidInputError):
        solve_sigma(curve, [1.0, 1.0], 3)


def test_solve_sigma_many_agrees_with_scalar_solver():
    curve = moment_curve(2)
    xis = np.array([[0.3, 1.0], [-0.5, 1.0], [2.0, 1.0]])
    out = solve_sigma_many(curve, xis, 2)
    assert_allclose(out[:2], [-0.3, 0.5], atol=1e-10)
    assert np.isnan(out[2])


def test_rescaling_map_residuals():
    curve = moment_curve(3)
    tmap = build_rescaling_map(curve, 0.0, 0.25, 3)
    res = tmap.residuals(curve)
    assert res["eigen_residual"] < 1e-10
    assert res["determinant_residual"] < 1e-10
    assert res["inverse_norm_scaled"] <= res["inverse_norm_bound"] * (1 + 1e-9)
    assert tmap.expected_determinant == pytest.approx(0.25 ** 6)


def test_rescaled_curve_keeps_derivatives_at_anchor():
    curve = moment_curve(3)
    tmap = build_rescaling_map(curve, 0.5, 0.25, 3)
    rescaled = rescale_curve(curve, tmap)
    assert_allclose(rescaled.eval(0, 0.0), 0.0, atol=1e-14)
    for i in (1, 2, 3):
        assert_allclose(rescaled.eval(i, 0.0), curve.eval(i, 0.5), atol=1e-10)


@pytest.mark.parametrize(
    "curve, s0, rho", [(circle_lift(), 0.3, 0.25), (moment_curve(3), -0.4, 0.5), (helix(), 0.1, 0.125)]
)
def test_rescaled_derivatives_match_finite_differences(curve, s0, rho):
    rescaled = rescale_curve(curve, build_rescaling_map(curve, s0, rho, curve.d))
    s = np.linspace(-0.8, 0.8, 9)
    h = 1e-5
    for i in range(1, curve.d + 1):
        central = (rescaled.eval(i - 1, s + h) - rescaled.eval(i - 1, s - h)) / (2 * h)
        assert_allclose(central, rescaled.eval(i, s), rtol=1e-6, atol=1e-6)


@pytest.mark.parametrize("curve", [moment_curve(3), perturbed_moment_curve(3, 0.05), helix()])
def test_small_windows_keep_half_the_determinant(curve):
    B = class_bound(curve, curve.d)
    rho = B ** (-2 * curve.d)
    for s0 in (-0.7, 0.0, 0.45):
        rescaled = rescale_curve(curve, build_rescaling_map(curve, s0, rho, curve.d))
        det = generalized_determinant(rescaled, np.linspace(-1.0, 1.0, 201), curve.d)
        assert det.min() >= 1.0 / (2.0 * B)


def test_rescaling_map_rejects_bad_windows():
    curve = moment_curve(2)
    with pytest.raises(InvalidInputError):
        build_rescaling_map(curve, 0.0, 1.5, 2)
    with pytest.raises(InvalidInputError):
        build_rescaling_map(curve, 0.9, 0.5, 2)
    with pytest.raises(DegenerateCurveError):
        build_rescaling_map(straight_line(2), 0.0, 0.5, 2)
