"""Tests for phase-space geometry: volumes, growth exponents, log potential."""

import math

import numpy as np
import numpy.testing as npt
import pytest
from scipy import integrate

from weyllab.errors import RefusalError, TruncationError, VolumeLeakError
from weyllab.symbols import (
    PhaseGrid,
    PlanarDomain,
    SymbolModel,
    SymbolTerm,
    fit_kappa,
    free_xi2,
    linear_xi,
    make_tilde,
    pushforward_check,
    REGISTRY,
    schrodinger_cos,
    sublevel_volume_profile,
    symbol_log_potential,
    transport,
    weyl_volume,
)

TWO_PI = 2.0 * math.pi

# Closed form for the workhorse model p = xi^2 + i*cos(x) on
# gamma = [1, 2] x [-1/2, 1/2]:  the preimage factorizes into
# {cos x in [-1/2, 1/2]} (measure 2*pi/3) times {xi^2 in [1, 2]}
# (measure 2*(sqrt(2) - 1)).
VOL_WORKHORSE = 4.0 * math.pi * (math.sqrt(2.0) - 1.0) / 3.0


def test_registry_names():
    assert set(REGISTRY) == {"schrodinger_cos", "transport", "free_xi2",
                             "linear_xi"}
    for name, factory in REGISTRY.items():
        assert factory().name == name


def test_eval_pointwise():
    sym = schrodinger_cos(0.7)
    # [TRIVIAL] direct evaluation at hand-picked points
    assert sym.eval(0.0, 2.0) == pytest.approx(4.0 + 0.7j)
    assert sym.eval(math.pi, 0.0) == pytest.approx(-0.7j)
    tr = transport(mean=0.5, re_amp=0.3, im_amp=0.2)
    assert tr.eval(0.0, 1.0) == pytest.approx(1.0 + 0.5 + 0.3)
    assert tr.eval(math.pi / 2, 0.0) == pytest.approx(0.5 + 0.2j)


def test_symmetry_declarations_match_values():
    rng = np.random.default_rng(11)
    x = rng.uniform(0.0, TWO_PI, size=64)
    xi = rng.uniform(-3.0, 3.0, size=64)
    for sym in (schrodinger_cos(1.3), free_xi2()):
        assert sym.symmetric_in_xi
        npt.assert_allclose(sym.eval(x, xi), sym.eval(x, -xi), rtol=0, atol=0)
    for sym in (transport(0.0, 0.2, 0.8), linear_xi()):
        assert not sym.symmetric_in_xi
        assert np.max(np.abs(sym.eval(x, xi) - sym.eval(x, -xi))) > 0.1


def test_eval_broadcasts():
    sym = schrodinger_cos()
    x = np.linspace(0.0, TWO_PI, 7, endpoint=False)
    xi = np.linspace(-2.0, 2.0, 5)
    vals = sym.eval(x[:, None], xi[None, :])
    assert vals.shape == (7, 5)
    assert vals[3, 2] == pytest.approx(sym.eval(x[3], xi[2]))


def test_xi_truncation_certificate():
    sym = schrodinger_cos(2.0)
    r = sym.xi_truncation(5.0)
    xi = np.array([r, -r, r + 3.0])
    x = np.linspace(0.0, TWO_PI, 101)
    vals = np.abs(sym.eval(x[:, None], xi[None, :]))
    assert vals.min() > 5.0
    bare = SymbolModel("bare", terms=None, fn=lambda x, xi: xi)
    with pytest.raises(TruncationError):
        bare.xi_truncation(1.0)


def test_rect_domain_basics():
    dom = PlanarDomain.rect(1.0, 2.0, -0.5, 0.5)
    assert dom.is_rect
    assert dom.bounds() == (1.0, 2.0, -0.5, 0.5)
    assert dom.diameter() == pytest.approx(math.hypot(1.0, 1.0))
    # closed region: corners and edges count as inside
    assert dom.contains(1.0 - 0.5j)
    assert dom.contains(1.5 + 0.5j)
    assert not dom.contains(0.999 + 0.0j)
    npt.assert_array_equal(
        dom.contains(np.array([1.5, 3.0, 1.0 + 0.25j])),
        [True, False, True])
    with pytest.raises(RefusalError):
        PlanarDomain.rect(2.0, 1.0, 0.0, 1.0)


def test_boundary_distance_and_band():
    dom = PlanarDomain.rect(0.0, 2.0, 0.0, 1.0)
    # [TRIVIAL] distances worked out by hand
    assert dom.boundary_distance(1.0 + 0.5j) == pytest.approx(0.5)
    assert dom.boundary_distance(1.0 + 0.1j) == pytest.approx(0.1)
    assert dom.boundary_distance(-3.0 + 0.5j) == pytest.approx(3.0)
    assert dom.boundary_distance(3.0 + 2.0j) == pytest.approx(math.hypot(1, 1))
    band = dom.band(0.25)
    assert band.contains(1.0 + 0.2j)
    assert band.contains(-0.2 + 0.5j)
    assert not band.contains(1.0 + 0.5j)
    assert band.max_abs() == pytest.approx(dom.max_abs() + 0.25)


def test_boundary_samples_lie_on_boundary():
    dom = PlanarDomain.rect(-1.0, 2.0, 0.5, 1.5)
    for count in (4, 37, 256):
        pts = dom.boundary_samples(count)
        assert pts.shape == (count,)
        npt.assert_allclose(dom.boundary_distance(pts), 0.0, atol=1e-12)
    # uniform arclength: adjacent gaps all equal for a count that divides
    # the perimeter evenly
    pts = dom.boundary_samples(16)
    gaps = np.abs(np.diff(np.r_[pts, pts[0]]))
    npt.assert_allclose(gaps, gaps[0], rtol=1e-12)


def test_weyl_volume_closed_form():
    # [DERIVED] closed form above; midpoint quadrature at a few resolutions
    sym = schrodinger_cos(1.0)
    gamma = PlanarDomain.rect(1.0, 2.0, -0.5, 0.5)
    prev_gap = None
    for n in (128, 256, 512):
        est = weyl_volume(sym, gamma, PhaseGrid(n, n))
        gap = abs(est.value - VOL_WORKHORSE)
        print(f"n={n} vol={est.value:.6f} gap={gap:.2e} err={est.error:.2e}")
        assert gap <= max(3.0 * est.error, 5e-3)
        if prev_gap is not None:
            assert gap <= prev_gap
        prev_gap = gap
    assert est.value == pytest.approx(VOL_WORKHORSE, rel=5e-3)


def test_weyl_volume_monte_carlo_cross_check():
    # [DERIVED] rejection sampling over [0, 2*pi) x [-r, r] as an
    # independent route to the same volume
    rng = np.random.default_rng(202)
    sym = schrodinger_cos(1.0)
    gamma = PlanarDomain.rect(1.0, 2.0, -0.5, 0.5)
    r = 2.0
    n = 10_000_000
    x = rng.uniform(0.0, TWO_PI, size=n)
    xi = rng.uniform(-r, r, size=n)
    hits = gamma.contains(sym.eval(x, xi))
    box = TWO_PI * 2.0 * r
    frac = hits.mean()
    mc = box * frac
    sd = box * math.sqrt(frac * (1.0 - frac) / n)
    print(f"mc={mc:.6f} sd={sd:.2e} closed={VOL_WORKHORSE:.6f}")
    assert abs(mc - VOL_WORKHORSE) < 4.0 * sd
    grid = weyl_volume(sym, gamma, PhaseGrid(512, 512, xi_radius=r))
    assert abs(mc - grid.value) < 4.0 * sd + 3.0 * grid.error


def test_weyl_volume_refuses_leaky_truncation():
    sym = schrodinger_cos(1.0)
    gamma = PlanarDomain.rect(1.0, 2.0, -0.5, 0.5)
    with pytest.raises(VolumeLeakError):
        weyl_volume(sym, gamma, PhaseGrid(128, 128, xi_radius=1.2))


def test_sublevel_profile_flat_model():
    # [DERIVED] for p = xi and z = 0 the squared-distance sublevel set is
    # {xi^2 <= t}, so V(t) = 2*pi * 2*sqrt(t) and the growth exponent is 1/2
    sym = linear_xi()
    t = np.geomspace(1e-3, 0.4, 12)
    vols = sublevel_volume_profile(sym, 0.0, t, PhaseGrid(16, 4096))
    npt.assert_allclose(vols, 4.0 * math.pi * np.sqrt(t), rtol=0.05)
    fit = fit_kappa(t, vols)
    assert fit.ok
    assert fit.kappa == pytest.approx(0.5, abs=0.03)


def test_sublevel_profile_regular_point():
    # at a point where the symbol is a submersion the squared-distance
    # volume grows linearly, so the fitted exponent sits near 1
    sym = schrodinger_cos(1.0)
    t = np.geomspace(2e-3, 0.1, 12)
    vols = sublevel_volume_profile(sym, 1.5 + 0.0j, t, PhaseGrid(1024, 1024))
    fit = fit_kappa(t, vols)
    assert fit.ok
    print(f"kappa at regular point: {fit.kappa:.3f}")
    assert 0.85 <= fit.kappa <= 1.15


def test_sublevel_profile_ladder_validation():
    sym = linear_xi()
    grid = PhaseGrid(8, 64)
    with pytest.raises(RefusalError):
        sublevel_volume_profile(sym, 0.0, [0.1, 0.1, 0.2], grid)
    with pytest.raises(RefusalError):
        sublevel_volume_profile(sym, 0.0, [-0.1, 0.2], grid)
    with pytest.raises(RefusalError):
        sublevel_volume_profile(sym, 0.0, [0.1, 0.6], grid)


def test_fit_kappa_refusals():
    t = np.geomspace(1e-3, 0.3, 10)
    empty = fit_kappa(t, np.zeros_like(t))
    assert not empty.ok and math.isnan(empty.kappa)
    flat = fit_kappa(t, np.full_like(t, 2.0))
    assert not flat.ok and "flat" in flat.reason
    short = fit_kappa(t[:3], np.array([1.0, 2.0, 3.0]))
    assert not short.ok


def test_make_tilde_certifies_floor():
    sym = free_xi2()
    omega = PlanarDomain.rect(0.5, 2.5, -1.0, 1.0)
    tilde = make_tilde(sym, omega, PhaseGrid(256, 256))
    assert tilde.ellipticity_floor > 0.0
    assert tilde.amplitude == pytest.approx(2.0 * omega.diameter() + 1.0)
    # the shift is purely imaginary and supported near omega
    p = np.array([1.0 + 0.0j, 1.0 + 5.0j])
    sh = tilde.shift(p)
    assert sh[0].real == 0.0 and sh[0].imag == pytest.approx(tilde.amplitude)
    assert sh[1] == 0.0
    with pytest.raises(RefusalError):
        make_tilde(sym, PlanarDomain((0.0, 1.0, 1.0 + 1.0j)),
                   PhaseGrid(64, 64))
    with pytest.raises(RefusalError):
        make_tilde(sym, omega, PhaseGrid(64, 64),
                   margin_on=0.5, margin_off=0.4)


def test_log_potential_against_1d_quadrature():
    # [DERIVED] for p = xi^2 nothing depends on x, so the phase-space
    # integral reduces to a single xi integral; scipy adaptive quadrature
    # with the singular points declared is the independent route
    sym = free_xi2()
    omega = PlanarDomain.rect(0.5, 2.5, -1.0, 1.0)
    tilde = make_tilde(sym, omega, PhaseGrid(256, 256), amplitude=3.0)
    z = 1.5 + 0.25j

    def integrand(xi):
        p = xi * xi
        pt = p + tilde.shift(np.asarray([p]))[0]
        return math.log(abs(p - z)) - math.log(abs(pt - z))

    cut = math.sqrt(2.5 + tilde.margin_off) + 0.1
    sing = math.sqrt(z.real)
    oracle, quad_err = integrate.quad(integrand, 0.0, cut,
                                      points=[sing], limit=200)
    oracle *= 2.0  # even in xi
    est = symbol_log_potential(sym, tilde, z, PhaseGrid(128, 1024))
    print(f"phi={est.value:.6f} oracle={oracle:.6f} est_err={est.error:.1e}")
    assert abs(est.value - oracle) < max(5e-3, 4.0 * est.error)
    assert quad_err < 1e-6


def test_log_potential_requires_certified_floor():
    from weyllab.symbols import TildeSymbol
    sym = free_xi2()
    omega = PlanarDomain.rect(0.5, 2.5, -1.0, 1.0)
    raw = TildeSymbol(sym, omega, 3.0, 0.15, 0.45)  # floor never certified
    with pytest.raises(RefusalError):
        symbol_log_potential(sym, raw, 1.0, PhaseGrid(64, 64))


def test_pushforward_check_converges():
    sym = schrodinger_cos(1.0)
    omega = PlanarDomain.rect(0.75, 2.25, -0.75, 0.75)
    gamma = PlanarDomain.rect(1.0, 2.0, -0.5, 0.5)
    gaps = []
    for n in (128, 256):
        tilde = make_tilde(sym, omega, PhaseGrid(n, n))
        rep = pushforward_check(sym, tilde, gamma, PhaseGrid(n, n), z_res=12)
        print(f"n={n} lhs={rep.lhs:.5f} rhs={rep.rhs:.5f} "
              f"gap={rep.rel_gap:.2%}")
        gaps.append(rep.rel_gap)
    assert gaps[1] < gaps[0]
    assert gaps[1] < 0.06


def test_pushforward_check_refuses_stencil_escape():
    sym = schrodinger_cos(1.0)
    omega = PlanarDomain.rect(0.75, 2.25, -0.75, 0.75)
    tilde = make_tilde(sym, omega, PhaseGrid(128, 128))
    hugging = PlanarDomain.rect(0.75, 2.25, -0.5, 0.5)
    with pytest.raises(RefusalError):
        pushforward_check(sym, tilde, hugging, PhaseGrid(128, 128))
