import numpy as np
import pytest
from numpy.testing import assert_allclose

from nikodym.errors import ConfigurationError, InvalidGridError, InvalidInputError
from nikodym.services.curve_geometry import circle_lift, moment_curve
from nikodym.services.operators import (
    BallIndicator,
    OperatorHandle,
    TubeIndicator,
    anisotropic_derivative_bound,
    apply_blocks,
    apply_blocks_adjoint,
    averaging_direct,
    averaging_fio,
    b_delta_eval,
    chi3,
    cross_section,
    d_s_symbol,
    decay_fit,
    fractional_fio,
    indicator_field,
    kernel_K,
    nikodym_maximal,
    s_derivative_matrix,
    schur_audit,
    schur_bound,
)
from nikodym.services.sampled_fields import Field, GridSpec, band_limited_field, fractional_s_derivative
from nikodym.services.symbols import (
    Symbol,
    SymbolMeta,
    build_a_delta,
    build_base_case_symbol,
    build_cutoffs,
    build_tube_symbol,
)


def _const_symbol(value=1.0, lam=1.0) -> Symbol:
    return Symbol("const", lambda xi, s, t: value * np.ones(np.broadcast_shapes(np.shape(xi)[:-1], np.shape(s),
                                                                                 np.shape(t))),
                  meta=SymbolMeta(lam=lam))


def test_handle_validation():
    curve = circle_lift()
    with pytest.raises(InvalidInputError):
        OperatorHandle("maximal", curve=curve)
    with pytest.raises(ConfigurationError):
        OperatorHandle("maximal", curve=curve, delta=0.1, s_step=0.2)
    with pytest.raises(ConfigurationError):
        OperatorHandle("maximal", curve=curve, delta=0.1, cross_nodes=4)
    with pytest.raises(InvalidInputError):
        OperatorHandle("averaging_fio", curve=curve)
    with pytest.raises(InvalidInputError):
        OperatorHandle("multiplier")
    with pytest.raises(InvalidGridError):
        OperatorHandle("averaging_fio", curve=moment_curve(4), symbol=_const_symbol(),
                       grid=GridSpec(d=4, X=4.0, nx=8, nt=8))
    handle = OperatorHandle("maximal", curve=curve, delta=0.1)
    assert handle.s_step == pytest.approx(0.05)
    assert not handle.is_linear
    assert handle.name == "maximal[circle2d,delta=0.1]"
    assert len(handle.s_grid()) == 41


@pytest.mark.parametrize("kwargs", [{"delta": 0.2}, {"r": (0.2, 0.05)}])
def test_cross_section_weights_sum_to_the_volume(kwargs):
    section = cross_section(2, **kwargs)
    assert section.weights.sum() == pytest.approx(section.volume, rel=1e-10)


def test_cross_section_needs_eight_nodes():
    with pytest.raises(ConfigurationError):
        cross_section(2, delta=0.2, nodes=7)


@pytest.mark.parametrize("scale", [0.1, (0.1, 0.02)])
def test_averages_of_constants_are_one(scale):
    out = averaging_direct(circle_lift(), scale, lambda p: np.ones(p.shape[:-1]),
                           np.array([[0.0, 0.0], [0.3, -0.2]]), np.array([0.0, 0.5]))
    assert_allclose(out, 1.0, rtol=1e-10)


def test_exact_slices_of_a_covering_ball():
    ball = BallIndicator(np.zeros(3), 3.0)
    assert averaging_direct(circle_lift(), 0.1, ball, np.zeros(2), 0.3) == pytest.approx(1.0, rel=1e-10)
    assert ball.lp_norm(np.inf) == 1.0
    assert ball.lp_norm(1) == pytest.approx(4.0 * np.pi / 3.0 * 27.0)


def test_maximal_function_of_a_tube_indicator():
    curve = circle_lift()
    delta = 0.1
    tube = TubeIndicator(curve, 0.0, np.zeros(2), delta)
    handle = OperatorHandle("maximal", curve=curve, delta=delta)
    values, argmax = nikodym_maximal(handle, tube, np.array([[0.0, 0.0], [5.0, 5.0]]), return_argmax=True)
    assert values[0] == pytest.approx(1.0, rel=1e-9)
    assert argmax[0] == pytest.approx(0.0, abs=1e-12)
    assert values[1] == 0.0 and np.isnan(argmax[1])
    assert tube.lp_norm(2) == pytest.approx(np.sqrt(2.0 * np.pi * delta ** 2))
    with pytest.raises(InvalidInputError):
        nikodym_maximal(OperatorHandle("identity"), tube, np.zeros((1, 2)))


def test_refinement_never_lowers_the_maximum():
    curve = circle_lift()
    tube = TubeIndicator(curve, 0.3, np.array([0.1, 0.0]), 0.1)
    points = np.array([[0.05, 0.02], [0.2, -0.1]])
    coarse = nikodym_maximal(OperatorHandle("maximal", curve=curve, delta=0.1), tube, points)
    fine = nikodym_maximal(OperatorHandle("maximal", curve=curve, delta=0.1, refine=True), tube, points)
    assert np.all(fine >= coarse - 1e-15)


def test_spectral_and_direct_averages_agree():
    curve = moment_curve(1)
    delta = 0.25
    grid = GridSpec(d=1, X=4.0, nx=128, nt=32)
    g = band_limited_field(grid, 1.0, np.random.default_rng(3), s_dependent=False)
    spectral = averaging_fio(build_tube_symbol(curve, delta=delta), curve, g, real=True)
    for i, k in [(64, 16), (70, 5), (56, 27)]:
        x = grid.x_axis[i]
        s = grid.t_axis[k]
        direct = averaging_direct(curve, delta, g, np.array([x]), s)
        assert spectral.values[i, k] == pytest.approx(direct, abs=1e-2)


def test_averaging_fio_checks_its_input():
    grid = GridSpec(d=1, X=4.0, nx=16, nt=8)
    s_field = Field(grid, np.zeros(grid.shape), axis_label="s")
    with pytest.raises(InvalidGridError):
        averaging_fio(_const_symbol(), moment_curve(1), s_field)
    with pytest.raises(InvalidGridError):
        averaging_fio(_const_symbol(), circle_lift(), Field(grid, np.zeros(grid.shape)))


def test_block_adjoint():
    rng = np.random.default_rng(0)
    M = rng.normal(size=(4, 6, 5)) + 1j * rng.normal(size=(4, 6, 5))
    c = rng.normal(size=(4, 5)) + 1j * rng.normal(size=(4, 5))
    v = rng.normal(size=(4, 6)) + 1j * rng.normal(size=(4, 6))
    lhs = np.vdot(v, apply_blocks(M, c))
    rhs = np.vdot(apply_blocks_adjoint(M, v), c)
    assert lhs == pytest.approx(rhs)


def test_s_derivative_matrix_matches_the_field_transform():
    grid = GridSpec(d=1, X=4.0, nx=8, nt=16)
    values = np.random.default_rng(1).normal(size=grid.shape)
    f = Field(grid, values, axis_label="s")
    S = s_derivative_matrix(grid, 0.5)
    assert_allclose((values @ S.T).real, fractional_s_derivative(f, 0.5).values, atol=1e-12)


def test_fractional_fio_acts_on_the_s_axis():
    curve = moment_curve(1)
    grid = GridSpec(d=1, X=4.0, nx=32, nt=8)
    g = band_limited_field(grid, 1.0, np.random.default_rng(0))
    out = fractional_fio(build_tube_symbol(curve, delta=0.25), curve, g)
    assert out.axis_label == "s" and not out.padded
    assert out.values.shape == grid.shape


def test_indicator_field_on_the_grid():
    grid = GridSpec(d=2, X=4.0, nx=16, nt=8)
    ball = BallIndicator(np.array([0.0, 0.0, 0.0]), 1.0)
    f = indicator_field(ball, grid)
    assert set(np.unique(f.values)) <= {0.0, 1.0}
    smooth = indicator_field(ball, grid, mollify=0.25)
    assert np.isrealobj(smooth.values)
    assert smooth.values.max() <= 1.0 + 1e-9


def test_kernel_is_hermitian_and_integrates_the_diagonal():
    curve = circle_lift()
    one = _const_symbol()
    xi = np.array([3.0, -2.0])
    assert kernel_K(one, curve, xi, 0.2, 0.2) == pytest.approx(2.0)
    varying = Symbol("varying", lambda xi, s, t: (1.0 + np.asarray(t)) * np.cos(np.asarray(s))
                     * np.ones(np.shape(xi)[:-1]), meta=SymbolMeta(lam=4.0))
    k12 = kernel_K(varying, curve, xi, 0.1, 0.6)
    k21 = kernel_K(varying, curve, xi, 0.6, 0.1)
    assert k12 == pytest.approx(np.conj(k21))
    assert kernel_K(one, curve, xi, 0.1, np.array([0.1, 0.5])).shape == (2,)


def test_s_derivative_symbol_of_a_constant():
    curve = circle_lift()
    ds = d_s_symbol(_const_symbol(), curve)
    xi = np.array([1.0, 2.0])
    s, t = 0.4, 0.5
    expected = -1j * t * (curve.eval(1, s) @ xi)
    assert complex(ds(xi, s, t)) == pytest.approx(expected, abs=1e-8)


def test_schur_audit_rows():
    lib = build_cutoffs()
    curve = circle_lift()
    sym = build_base_case_symbol(lib, curve, 8.0, 2.0)
    rows = schur_audit(sym, curve, Lambda=8.0, samples=2, t_samples=2, seed=0)
    assert [r["iota"] for r in rows] == [0, 1]
    assert all("normalized" in r and "pass" in r for r in rows)
    with pytest.raises(InvalidInputError):
        schur_bound(sym, curve, 2, np.ones((1, 2)), [0.0])


def test_decay_fit():
    sigma = np.linspace(0, 200, 400)
    fit = decay_fit(sigma, (1 + sigma) ** -3.0)
    assert fit["exponent"] == pytest.approx(3.0, rel=1e-6)
    assert not fit["floor_reached"]
    flat = decay_fit(sigma, np.zeros_like(sigma))
    assert flat["exponent"] == np.inf and flat["floor_reached"]


def test_chi3_vanishes_below_the_cut():
    lib = build_cutoffs()
    sigma = np.array([0.0, 5.0, 1e4])
    out = chi3(lib, sigma, C_cut=1.0, delta=0.1)
    assert out[0] == 0.0 and out[1] == 0.0
    assert out[2] == pytest.approx(1.0 + 1e4)


def test_anisotropic_derivative_bound():
    out = anisotropic_derivative_bound((0.1, 0.01))
    assert out["volume_normalisation"] == pytest.approx(np.sqrt(1000.0))
    assert out["ratios"] == pytest.approx([1.0, 10.0])
    assert out["max_ratio"] == pytest.approx(10.0)


def test_error_term_vanishes_below_the_cut():
    lib = build_cutoffs()
    curve = circle_lift()
    a = build_a_delta(lib, 0.25, curve=curve)
    xi = np.array([2.0, 0.0])
    b = b_delta_eval(a, lib, curve, xi, np.array([0.0, 2.0, 50.0, 400.0]), 0.5, C_cut=1.0, delta=0.25)
    assert b[0] == 0 and b[1] == 0
    assert np.all(np.isfinite(b))
