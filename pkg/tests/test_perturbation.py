"""Tests for the exponent schedule, coefficient laws, and random potentials."""

import math

import numpy as np
import numpy.testing as npt
import pytest
from scipy import stats

from weyllab.errors import RefusalError, ScheduleError
from weyllab.operators import SpectralBasis, reference_eigenbasis, sobolev_norm
from weyllab.perturbation import (
    build_potential,
    build_schedule,
    draw_potential,
    gaussian_law,
    potential_norm_audit,
    rng_stream,
    uniform_ball_law,
)


def test_schedule_minimal_exponents():
    # [DERIVED] the constraint floors at n=1, kappa=1, s=2, eps=1/2:
    #   freq_exp  = (3 - 1)/(2 - 1/2 - 1/2)        = 2
    #   amp_exp   = 3/2 - 1 + (1/2 + 1/2)*2        = 5/2
    #   coupling  = 5/2 + 2*2 + 1/2                = 7
    #   ladder    = 2*(7 + 1) + slack
    sched = build_schedule(n=1, kappa=1.0, s=2.0, eps=0.5)
    assert sched.freq_exp == pytest.approx(2.0)
    assert sched.amp_exp == pytest.approx(2.5)
    assert sched.coupling_exp == pytest.approx(7.0)
    assert sched.ladder_exp == pytest.approx(16.1)
    # explicit exponents meeting the floors are accepted verbatim
    loose = build_schedule(n=1, kappa=1.0, s=2.0, eps=0.5,
                           freq_exp=3.0, amp_exp=4.0)
    assert loose.freq_exp == 3.0 and loose.amp_exp == 4.0


def test_schedule_violations_are_named_and_collected():
    with pytest.raises(ScheduleError) as info:
        build_schedule(n=1, kappa=3.0, s=0.4, eps=0.1)
    msg = str(info.value)
    assert "s > n/2" in msg
    assert "kappa in (0, 1]" in msg
    assert len(info.value.violations) >= 2
    with pytest.raises(ScheduleError, match="freq_exp >="):
        build_schedule(n=1, kappa=1.0, s=2.0, eps=0.5, freq_exp=1.0)
    with pytest.raises(ScheduleError, match="amp_exp >="):
        build_schedule(n=1, kappa=1.0, s=2.0, eps=0.5, amp_exp=1.0)


def test_schedule_modes_and_delta_rules():
    sched = build_schedule(n=1, kappa=1.0, s=2.0, eps=0.5)
    h, tau0 = 0.1, 0.3
    # lab defaults
    assert sched.mode == "lab"
    assert sched.frequency_cutoff(h) == 2.0
    assert sched.coefficient_radius(h) == 1.0
    assert sched.delta(h, tau0) == pytest.approx(math.exp(-0.15 / h))
    assert sched.delta_paper(h, tau0) == pytest.approx(tau0 * h ** 8.0)
    # paper mode follows the exponents
    paper = build_schedule(n=1, kappa=1.0, s=2.0, eps=0.5, mode="paper")
    assert paper.frequency_cutoff(h) == pytest.approx(h ** -2.0)
    assert paper.coefficient_radius(h) == pytest.approx(h ** -2.5)
    assert paper.delta(h, tau0) == paper.delta_paper(h, tau0)
    # power rule
    powr = build_schedule(n=1, kappa=1.0, s=2.0, eps=0.5,
                          delta_rule=("power", 3.0))
    assert powr.delta(h, tau0) == pytest.approx(h ** 3.0)
    bad = build_schedule(n=1, kappa=1.0, s=2.0, eps=0.5,
                         delta_rule=("nope", 1.0))
    with pytest.raises(RefusalError):
        bad.delta(h, tau0)


def test_schedule_mode_count_and_eps0():
    sched = build_schedule(n=1, kappa=1.0, s=2.0, eps=0.5)
    h = 0.1
    assert sched.mode_count(h) == 2 * 20 + 1
    lh = math.log(1.0 / h)
    want = (h + h * lh) * (math.log(1.0 / 0.3) + lh ** 2)
    assert sched.eps0(h, 0.3) == pytest.approx(want)


def test_schedule_json_roundtrip_fields():
    sched = build_schedule(n=1, kappa=1.0, s=2.0, eps=0.5)
    blob = sched.to_json(h=0.1, tau0=0.3)
    assert blob["mode"] == "lab"
    at = blob["at"]
    assert at["delta_lab"] == pytest.approx(math.exp(-1.5))
    assert at["delta_paper"] == pytest.approx(0.3 * 0.1 ** 8)
    assert at["cutoff"] == 2.0 and at["radius"] == 1.0
    assert "eps0" in at
    assert "at" not in sched.to_json()


def test_rng_stream_keyed_not_sequential():
    a1 = rng_stream(7, "exp", 0).standard_normal(8)
    a2 = rng_stream(7, "exp", 0).standard_normal(8)
    npt.assert_array_equal(a1, a2)
    b = rng_stream(7, "exp", 1).standard_normal(8)
    c = rng_stream(8, "exp", 0).standard_normal(8)
    assert np.max(np.abs(a1 - b)) > 1e-6
    assert np.max(np.abs(a1 - c)) > 1e-6
    # label types matter, order of creation does not
    d_first = rng_stream(7, "other", 3).standard_normal(8)
    a3 = rng_stream(7, "exp", 0).standard_normal(8)
    npt.assert_array_equal(a1, a3)
    assert np.max(np.abs(d_first - a1)) > 1e-6


def test_uniform_ball_radial_law():
    # [DERIVED] in real dimension 2d the radius has CDF (r/R)**(2d)
    rng = np.random.default_rng(404)
    law = uniform_ball_law(2.0)
    d = 5
    samples = np.array([law.sample(rng, d) for _ in range(10_000)])
    assert samples.shape == (10_000, d)
    radii = np.linalg.norm(samples, axis=1)
    assert radii.max() <= 2.0 + 1e-12
    res = stats.kstest(radii, lambda r: (r / 2.0) ** (2 * d))
    print(f"uniform ball KS: stat={res.statistic:.4f} p={res.pvalue:.3f}")
    assert res.pvalue > 0.01
    assert abs(samples.mean()) < 0.02
    assert law.grad_bound == 0.0


def test_gaussian_law_variances_and_rejection():
    rng = np.random.default_rng(405)
    sig = np.array([1.0, 0.5, 0.25])
    law = gaussian_law(50.0, sig)  # radius so large rejection never fires
    samples = np.array([law.sample(rng, 3) for _ in range(8_000)])
    var = np.mean(np.abs(samples) ** 2, axis=0)
    npt.assert_allclose(var, sig ** 2, rtol=0.08)
    assert law.grad_bound == pytest.approx(50.0 / 0.25 ** 2)
    tight = gaussian_law(1e-9, np.ones(3))
    with pytest.raises(RefusalError, match="rejected"):
        tight.sample(rng, 3)
    with pytest.raises(RefusalError):
        gaussian_law(1.0, [0.5, -0.1])


def test_gaussian_law_conditioning_respects_ball():
    rng = np.random.default_rng(406)
    law = gaussian_law(1.0, np.ones(4))  # radius ~ the bulk of the mass
    for _ in range(200):
        a = law.sample(rng, 4)
        assert np.linalg.norm(a) <= 1.0


def test_build_potential_synthesis():
    ref = reference_eigenbasis(SpectralBasis(h=0.25, k_max=12))
    cutoff = 2.0
    mask = ref.mu <= cutoff
    rng = np.random.default_rng(9)
    alpha = rng.normal(size=mask.sum()) + 1j * rng.normal(size=mask.sum())
    pot = build_potential(ref, alpha, cutoff, s=2.0, stream_label="t/0")
    npt.assert_allclose(pot.nodes, ref.vectors[:, mask] @ alpha, atol=1e-14)
    assert pot.hs_norm == pytest.approx(
        sobolev_norm(alpha, ref.mu[mask], 2.0))
    assert pot.sup == pytest.approx(np.max(np.abs(pot.nodes)))
    assert pot.stream_label == "t/0"
    with pytest.raises(RefusalError):
        build_potential(ref, alpha[:-1], cutoff, s=2.0)


def test_draw_potential_mode_count_and_guards():
    sched = build_schedule(n=1, kappa=1.0, s=2.0, eps=0.5)
    h = 0.1
    ref = reference_eigenbasis(SpectralBasis(h, k_max=30))
    law = uniform_ball_law(sched.coefficient_radius(h))
    pot = draw_potential(law, ref, sched, h, rng_stream(1, "draw", 0))
    assert pot.dim == sched.mode_count(h)
    assert pot.cutoff == 2.0
    with pytest.raises(RefusalError):
        draw_potential(law, ref, sched, 0.2, rng_stream(1, "draw", 0))
    small = reference_eigenbasis(SpectralBasis(h, k_max=10))
    with pytest.raises(RefusalError, match="every resolved mode"):
        draw_potential(law, small, sched, h, rng_stream(1, "draw", 0))


def test_draws_are_reproducible_per_label():
    sched = build_schedule(n=1, kappa=1.0, s=2.0, eps=0.5)
    h = 0.1
    ref = reference_eigenbasis(SpectralBasis(h, k_max=30))
    law = uniform_ball_law(1.0)
    p1 = draw_potential(law, ref, sched, h, rng_stream(3, "w", 5))
    p2 = draw_potential(law, ref, sched, h, rng_stream(3, "w", 5))
    npt.assert_array_equal(p1.alpha, p2.alpha)
    p3 = draw_potential(law, ref, sched, h, rng_stream(3, "w", 6))
    assert np.max(np.abs(p1.alpha - p3.alpha)) > 1e-8


def test_norm_audit():
    sched = build_schedule(n=1, kappa=1.0, s=2.0, eps=0.5)
    h = 0.1
    ref = reference_eigenbasis(SpectralBasis(h, k_max=30))
    law = uniform_ball_law(sched.coefficient_radius(h))
    rng = rng_stream(11, "audit")
    for i in range(10):
        pot = draw_potential(law, ref, sched, h, rng)
        audit = potential_norm_audit(pot, sched, h)
        assert audit.ok, f"draw {i}: {audit}"
        assert audit.alpha_norm <= audit.radius * (1 + 1e-12)
        assert audit.sup <= audit.sup_bound
    # an out-of-ball coefficient vector fails the audit
    mask = ref.mu <= sched.frequency_cutoff(h)
    big = build_potential(ref, np.full(mask.sum(), 3.0), 2.0, s=2.0)
    assert not potential_norm_audit(big, sched, h).ok
