import numpy as np
import pytest
from numpy.testing import assert_allclose

from nikodym.errors import InvalidInputError
from nikodym.services.curve_geometry import build_rescaling_map, circle_lift, moment_curve
from nikodym.services.symbols import (
    Symbol,
    SymbolMeta,
    build_a_delta,
    build_a_n,
    build_a_n_nu,
    build_anisotropic_symbol,
    build_cutoffs,
    build_G,
    build_H,
    build_tube_symbol,
    inner_product_constants,
    littlewood_paley_piece,
    nu_range,
    rescale_symbol,
    smooth_step,
    support_points,
    verify_inner_product_bounds,
)


@pytest.fixture(scope="module")
def lib():
    return build_cutoffs()


def _ones(curve=None, lam=1.0) -> Symbol:
    return Symbol("one", lambda xi, s, t: np.ones(np.broadcast_shapes(np.shape(xi)[:-1], np.shape(s), np.shape(t))),
                  meta=SymbolMeta(lam=lam, curve=curve))


def test_smooth_step_is_a_partition():
    x = np.linspace(-0.5, 1.5, 201)
    assert_allclose(smooth_step(x) + smooth_step(1 - x), 1.0, atol=1e-14)
    assert smooth_step(-0.1) == 0.0 and smooth_step(1.1) == 1.0


def test_cutoff_residuals(lib):
    res = lib.residuals
    assert res["littlewood_paley"] < 1e-10
    assert res["littlewood_paley_1"] < 1e-10
    assert res["zeta_partition"] < 1e-10
    assert res["zeta_tilde"] < 1e-10
    assert res["support_leak"] == 0.0
    assert res["psi_check_min"] >= 0.0
    assert lib.c0 > 0
    assert lib.psi(0.0) == pytest.approx(1.0)


def test_cutoffs_are_cached(lib):
    assert build_cutoffs() is lib


def test_a_delta(lib):
    a = build_a_delta(lib, 0.125, d=2)
    assert float(a(np.zeros(2), 0.0, 0.0)) == pytest.approx(1.0)
    assert float(a(np.array([8.0, 0.0]), 0.0, 0.0)) == 0.0
    assert float(a(np.zeros(2), 2.5, 0.0)) == 0.0
    assert a.meta.extra["delta"] == 0.125
    xi, s, t = support_points(a, 256, seed=0)
    assert len(s) > 0
    assert np.all(np.linalg.norm(xi, axis=-1) <= 8.0)
    with pytest.raises(InvalidInputError):
        build_a_delta(lib, 1.0)


def test_littlewood_paley_pieces_sum_to_the_symbol(lib):
    a = build_a_delta(lib, 2.0 ** -6, curve=moment_curve(2))
    pieces = [littlewood_paley_piece(a, lib, lam) for lam in (0, 2, 4, 8, 16)]
    rng = np.random.default_rng(0)
    xi = rng.uniform(-11.0, 11.0, size=(200, 2))
    s = rng.uniform(-1, 1, size=200)
    total = sum(p(xi, s, 0.0) for p in pieces)
    assert_allclose(total, a(xi, s, 0.0), atol=1e-12)
    assert pieces[3].meta.extra["annulus"] == (4.0, 16.0)
    with pytest.raises(InvalidInputError):
        littlewood_paley_piece(a, lib, 3.0)


def test_tube_symbol_is_bounded_by_its_value_at_zero():
    curve = circle_lift()
    iso = build_tube_symbol(curve, delta=0.1)
    aniso = build_tube_symbol(curve, r=(0.1, 0.01))
    xi = np.random.default_rng(1).normal(scale=30.0, size=(500, 2))
    for sym in (iso, aniso):
        assert float(sym(np.zeros(2), 0.2, 0.0)) == pytest.approx(0.5)
        assert np.all(np.abs(sym(xi, 0.2, 0.0)) <= 0.5 + 1e-12)
    with pytest.raises(InvalidInputError):
        build_tube_symbol(curve)


def test_H_requires_A_prime_above_one(lib):
    with pytest.raises(InvalidInputError):
        build_H(moment_curve(3), 64.0, 1.0, 3, lib)
    H = build_H(moment_curve(3), 64.0, 4.0, 3, lib)
    assert float(H(np.zeros(3), 0.0, 0.0)) == pytest.approx(1.0)


def test_distance_function_vanishes_at_sigma():
    G = build_G(moment_curve(2), 64.0, 2, eps0=0.1)
    xi = np.array([0.3, 1.0])
    # σ = -0.3 and ⟨γ'(σ), ξ⟩ = 0, so G(ξ, σ) = 0
    assert float(G.sigma(xi)) == pytest.approx(-0.3, abs=1e-10)
    assert float(G(xi, -0.3)) == pytest.approx(0.0, abs=1e-12)
    assert float(G(xi, -0.2)) == pytest.approx(1.0)
    assert np.isnan(G(np.array([5.0, 1.0]), 0.0))
    with pytest.raises(InvalidInputError):
        build_G(moment_curve(2), 64.0, 3, eps0=0.1)


def test_a_n_pieces_without_sigma_go_to_the_first_piece(lib):
    curve = moment_curve(2)
    G = build_G(curve, 64.0, 2, eps0=0.1)
    a = _ones(curve, 64.0)
    a0 = build_a_n(a, G, 0.5, 0, lib)
    a1 = build_a_n(a, G, 0.5, 1, lib)
    no_sigma = np.array([5.0, 1.0])
    assert float(a0(no_sigma, 0.0, 0.0)) == 1.0
    assert float(a1(no_sigma, 0.0, 0.0)) == 0.0
    with pytest.raises(InvalidInputError):
        build_a_n(a, G, 0.5, -1, lib)


def test_s_localization_is_a_partition_of_unity(lib):
    curve = moment_curve(2)
    lam, N, n = 256.0, 2, 1
    a_n = _ones(curve, lam)
    s = np.linspace(-1, 1, 401)
    xi = np.zeros((401, 2))
    total = sum(build_a_n_nu(a_n, lib, n, nu, lam, N)(xi, s, 0.0) for nu in nu_range(n, lam, N))
    assert_allclose(total, 1.0, atol=1e-12)


def test_inner_product_constants_are_ordered():
    lo, hi = inner_product_constants(eps0=0.1, eps1=0.5, A=2.0, B=10.0, N=3)
    assert 0 < lo < hi


def test_rescaled_symbol_composes_with_the_map():
    curve = moment_curve(2)
    tmap = build_rescaling_map(curve, 0.25, 0.5, 2)
    probe = Symbol("probe", lambda xi, s, t: xi[..., 0] + 10 * xi[..., 1] + 100 * s + 1000 * t,
                   meta=SymbolMeta(lam=8.0, curve=curve))
    rescaled = rescale_symbol(probe, tmap)
    eta = np.array([0.7, -0.2])
    parent_xi = tmap.inverse_transpose @ eta
    expected = parent_xi[0] + 10 * parent_xi[1] + 100 * (0.25 + 0.5 * 0.4) + 1000 * 0.1
    assert float(rescaled(eta, 0.4, 0.1)) == pytest.approx(expected)
    assert rescaled.meta.lam == pytest.approx(0.25 * 8.0)
    assert rescaled.meta.curve is not None


def test_anisotropic_symbol_flags_inadmissible_vectors(lib):
    ok = build_anisotropic_symbol(lib, moment_curve(2), (0.1, 0.01))
    assert ok.meta.extra["admissible"]
    bad = build_anisotropic_symbol(lib, moment_curve(2), (0.5, 0.01))
    assert not bad.meta.extra["admissible"]
    assert float(ok(np.zeros(2), 0.0, 0.0)) == pytest.approx(1.0)


def test_inner_product_audit_on_a_localized_piece(lib):
    curve = moment_curve(2)
    top = littlewood_paley_piece(build_a_delta(lib, 2.0 ** -6, curve=curve), lib, 64.0)
    G = build_G(curve, 64.0, 2, eps0=0.1)
    piece = build_a_n_nu(build_a_n(top, G, 0.5, 1, lib), lib, 1, 0, 64.0, 2)
    rep = verify_inner_product_bounds(piece, samples=512, seed=0, bounds=(0.0, np.inf))
    assert rep.lemma == "localized-inner-products"
    assert rep.n == 1 and rep.nu == 0
    if rep.empty:
        assert not rep.passed
    else:
        assert rep.passed and rep.min_ratio >= 0.0
