"""End-to-end spectral experiments on the discretized models.

Counting conventions: eigenvalues come from the dense solver with algebraic
multiplicity, ordered deterministically by (real part, imaginary part);
points within 1e-8 * ||operator|| of the region boundary are flagged as
ambiguous but counted.  Every perturbed run also emits its unperturbed
control.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import RefusalError
from .operators import (
    DiscretizedOperator,
    SpectralBasis,
    basis_for,
    discretize,
    reference_eigenbasis,
    require_resolved,
)
from .perturbation import (
    CoefficientLaw,
    ParameterSchedule,
    draw_potential,
    rng_stream,
)
from .symbols import (
    PhaseGrid,
    PlanarDomain,
    SymbolModel,
    TWO_PI,
    fit_kappa,
    sublevel_volume_profile,
    weyl_volume,
)

_BOUNDARY_TOL = 1e-8


def sorted_eigenvalues(matrix: np.ndarray) -> np.ndarray:
    """Dense spectrum with deterministic (Re, Im) ordering."""
    ev = np.linalg.eigvals(np.asarray(matrix, dtype=complex))
    order = np.lexsort((ev.imag, ev.real))
    return ev[order]


@dataclass(frozen=True)
class CountResult:
    count: int
    boundary_flagged: int
    eigenvalues: np.ndarray

    @property
    def unambiguous(self) -> int:
        return self.count - self.boundary_flagged


def count_spectrum_in(op: DiscretizedOperator, gamma: PlanarDomain,
                      xi_needed: float | None = None) -> CountResult:
    """Count eigenvalues of ``op`` inside gamma with algebraic multiplicity.

    ``xi_needed`` certifies that the preimage of gamma stays inside the
    resolved frequency window; without it the caller vouches for
    resolvedness.
    """
    if xi_needed is not None:
        require_resolved(op.basis, xi_needed)
    ev = sorted_eigenvalues(op.matrix)
    inside = gamma.contains(ev)
    tol = _BOUNDARY_TOL * max(np.linalg.norm(op.matrix, 2), 1.0)
    near = gamma.boundary_distance(ev) <= tol
    return CountResult(int(np.sum(inside | near)), int(np.sum(near)), ev)


# ---------------------------------------------------------------------------
# Weyl experiment


@dataclass(frozen=True)
class DrawRecord:
    draw: int
    count: int
    boundary_flagged: int
    deviation: float          # count - weyl_term, signed
    stream: str
    eigenvalues: np.ndarray


@dataclass(frozen=True)
class WeylReport:
    h: float
    delta: float
    delta_paper: float
    weyl_term: float
    volume: float
    volume_error: float
    gamma: PlanarDomain
    draws: list
    control: DrawRecord
    tolerance: float
    fraction_within: float
    fraction_within_budget: float
    budget: dict
    failure_prob: list        # (eps_tilde, fraction violating its budget)
    kappa_boundary: list

    def to_json(self) -> dict:
        return {
            "h": self.h, "delta": self.delta,
            "delta_paper": self.delta_paper,
            "weyl_term": self.weyl_term, "volume": self.volume,
            "volume_error": self.volume_error,
            "gamma": [[v.real, v.imag] for v in self.gamma.vertices],
            "tolerance": self.tolerance,
            "fraction_within": self.fraction_within,
            "fraction_within_budget": self.fraction_within_budget,
            "counts": [d.count for d in self.draws],
            "deviations": [d.deviation for d in self.draws],
            "control_count": self.control.count,
            "control_deviation": self.control.deviation,
            "budget": self.budget,
            "failure_prob": self.failure_prob,
            "kappa_boundary": self.kappa_boundary,
        }


def deviation_budget(sym: SymbolModel, gamma: PlanarDomain, grid: PhaseGrid,
                     h: float, n: int, eps_tilde: float, r: float) -> dict:
    """Shape of the probabilistic counting budget: boundary band plus an
    eps_tilde/r trade-off, scaled like the Weyl term itself."""
    band = weyl_volume(sym, gamma.band(r), grid)
    term = (h ** (-n) / TWO_PI) * (
        eps_tilde / r + (r + math.log(1.0 / r)) * band.value
    )
    return {"eps_tilde": eps_tilde, "r": r,
            "boundary_band_volume": band.value, "budget_count": term}


def weyl_experiment(sym: SymbolModel, gamma: PlanarDomain,
                    sched: ParameterSchedule, law: CoefficientLaw,
                    h: float, n_draws: int, seed: int,
                    tolerance: float = 0.15,
                    tau0: float | None = None,
                    grid: PhaseGrid | None = None,
                    eps_tilde: float = 0.05, r_budget: float = 0.1,
                    kappa_t: tuple = (2e-3, 0.1, 12),
                    experiment_id: str = "weyl") -> WeylReport:
    """Eigenvalue counts of randomly perturbed operators against the
    phase-space volume prediction.

    Each draw perturbs the operator by delta times a fresh admissible
    potential (counter-based stream per draw) and counts eigenvalues in
    gamma; the unperturbed control is always evaluated too.  Requires the
    even-in-xi symmetry; symbols without it (first-order models) belong to
    :func:`counterexample_check` instead.
    """
    if not sym.symmetric_in_xi:
        raise RefusalError(
            f"symbol {sym.name!r} is not even in xi; the volume law does "
            "not apply"
        )
    if grid is None:
        grid = PhaseGrid(768, 768)
    tau0 = math.sqrt(h) if tau0 is None else tau0
    xi_needed = sym.xi_truncation(gamma.max_abs())
    basis = basis_for(h, xi_needed)
    ref = reference_eigenbasis(basis)
    op = discretize(sym, basis)
    delta = sched.delta(h, tau0)

    vol = weyl_volume(sym, gamma, grid)
    weyl_term = vol.value / (TWO_PI * h) ** sched.n

    def record(i: int, mat_op: DiscretizedOperator, stream: str) -> DrawRecord:
        res = count_spectrum_in(mat_op, gamma, xi_needed)
        return DrawRecord(i, res.count, res.boundary_flagged,
                          res.count - weyl_term, stream, res.eigenvalues)

    control = record(-1, op, "control")
    draws = []
    for i in range(n_draws):
        rng = rng_stream(seed, experiment_id, i)
        pot = draw_potential(law, ref, sched, h, rng,
                             stream_label=f"{experiment_id}/{i}")
        perturbed = op.with_potential(pot.nodes, delta)
        draws.append(record(i, perturbed, pot.stream_label))

    devs = np.array([d.deviation for d in draws])
    frac = float(np.mean(np.abs(devs) <= tolerance * weyl_term)) \
        if n_draws else math.nan

    budget = deviation_budget(sym, gamma, grid, h, sched.n, eps_tilde,
                              r_budget)
    frac_budget = float(np.mean(np.abs(devs) <= budget["budget_count"])) \
        if n_draws else math.nan
    failure = []
    for et in (eps_tilde * f for f in (0.25, 0.5, 1.0, 2.0, 4.0)):
        cap = deviation_budget(sym, gamma, grid, h, sched.n, et,
                               r_budget)["budget_count"]
        failure.append((float(et), float(np.mean(np.abs(devs) > cap))))

    t_lo, t_hi, t_n = kappa_t
    t_ladder = np.geomspace(t_lo, t_hi, int(t_n))
    kappas = []
    for zb in gamma.boundary_samples(8):
        prof = sublevel_volume_profile(sym, complex(zb), t_ladder, grid)
        fitk = fit_kappa(t_ladder, prof)
        kappas.append(fitk.kappa if fitk.ok else math.nan)

    return WeylReport(
        h=h, delta=delta, delta_paper=sched.delta_paper(h, tau0),
        weyl_term=weyl_term, volume=vol.value, volume_error=vol.error,
        gamma=gamma, draws=draws, control=control, tolerance=tolerance,
        fraction_within=frac, fraction_within_budget=frac_budget,
        budget=budget, failure_prob=failure, kappa_boundary=kappas,
    )


@dataclass(frozen=True)
class LadderReport:
    reports: list
    scaled_medians: list      # median |deviation| * (2 pi h)^n / volume

    @property
    def trend_nonincreasing(self) -> bool:
        m = self.scaled_medians
        return all(m[i + 1] <= m[i] * (1 + 1e-9) for i in range(len(m) - 1))


def weyl_ladder(sym: SymbolModel, gamma: PlanarDomain,
                sched: ParameterSchedule, law: CoefficientLaw,
                h_values, n_draws: int, seed: int,
                **kwargs) -> LadderReport:
    """Run the volume-law experiment over a decreasing h ladder and track
    the scaled median deviation."""
    h_values = sorted(float(h) for h in h_values)[::-1]
    reports = [weyl_experiment(sym, gamma, sched, law, h, n_draws, seed,
                               experiment_id=f"weyl-h{h:g}", **kwargs)
               for h in h_values]
    med = [float(np.median([abs(d.deviation) for d in r.draws]))
           * (TWO_PI * r.h) ** sched.n / r.volume for r in reports]
    return LadderReport(reports, med)


# ---------------------------------------------------------------------------
# first-order counterexample


@dataclass(frozen=True)
class LineCheckReport:
    line_im: float
    max_distance: float
    per_draw: list
    n_checked: int
    spectra: list = field(default_factory=list)


def counterexample_check(sym: SymbolModel, sched: ParameterSchedule,
                         law: CoefficientLaw, h: float, delta: float,
                         n_draws: int, seed: int, k_max: int = 80,
                         k_guard: int = 30) -> LineCheckReport:
    """Spectrum of the first-order model stays on one horizontal line.

    For each admissible perturbation the predicted line is the mean of the
    imaginary part of the full zeroth-order coefficient (drift plus delta
    times the potential); the report carries the maximum distance of any
    eigenvalue in the resolved window to that line.  ``k_guard`` excludes
    the modes next to the frequency truncation, where the discrete gauge
    argument degrades.  Draw 0 is the delta * 0 control.
    """
    if k_guard >= k_max:
        raise RefusalError("guard swallows the whole resolved window")
    basis = SpectralBasis(h, k_max)
    ref = reference_eigenbasis(basis)
    op = discretize(sym, basis)
    g_vals = sym.eval(basis.nodes, np.zeros_like(basis.nodes))

    window = h * (basis.k_max - k_guard)
    per_draw = []
    spectra = []
    max_dist = 0.0
    n_checked = 0
    for i in range(n_draws + 1):
        if i == 0:
            pert_nodes = np.zeros(basis.size, dtype=complex)
            label = "control"
        else:
            rng = rng_stream(seed, "counterexample", i)
            pot = draw_potential(law, ref, sched, h, rng,
                                 stream_label=f"counterexample/{i}")
            pert_nodes = pot.nodes
            label = pot.stream_label
        full = op.with_potential(pert_nodes, delta)
        coeff = g_vals + delta * pert_nodes
        line_im = float(np.mean(coeff.imag))
        line_re = float(np.mean(coeff.real))
        ev = sorted_eigenvalues(full.matrix)
        kept = ev[np.abs(ev.real - line_re) <= window]
        if kept.size == 0:
            raise RefusalError("no eigenvalue inside the resolved window")
        dist = float(np.max(np.abs(kept.imag - line_im)))
        per_draw.append({"draw": i, "stream": label, "line_im": line_im,
                         "max_distance": dist, "n_kept": int(kept.size)})
        spectra.append(ev)
        max_dist = max(max_dist, dist)
        n_checked += int(kept.size)
    return LineCheckReport(per_draw[0]["line_im"], max_dist, per_draw,
                           n_checked, spectra)


# ---------------------------------------------------------------------------
# pseudospectrum


def pseudospectrum_grid(op: DiscretizedOperator, re_grid: np.ndarray,
                        im_grid: np.ndarray) -> np.ndarray:
    """Smallest singular value of (op - z) over a z lattice."""
    out = np.empty((np.size(re_grid), np.size(im_grid)))
    for i, u in enumerate(np.atleast_1d(re_grid)):
        for j, v in enumerate(np.atleast_1d(im_grid)):
            out[i, j] = scipy.linalg.svdvals(op.shifted(complex(u, v)))[-1]
    return out


# ---------------------------------------------------------------------------
# argument principle


@dataclass(frozen=True)
class WindingReport:
    winding: int
    eigenvalue_count: int
    weyl_term: float
    n_boundary_evals: int


def _boundary_param(gamma: PlanarDomain):
    """Map t in [0, 1) to a point on the boundary polygon of gamma."""
    v = list(gamma.vertices)
    edges = [(v[i], v[(i + 1) % len(v)]) for i in range(len(v))]
    lengths = np.array([abs(b - a) for a, b in edges])
    cum = np.concatenate([[0.0], np.cumsum(lengths)])
    total = cum[-1]

    def point(t: float) -> complex:
        s = (t % 1.0) * total
        i = int(np.searchsorted(cum, s, side="right") - 1)
        i = min(i, len(edges) - 1)
        a, b = edges[i]
        frac = (s - cum[i]) / lengths[i]
        return a + frac * (b - a)

    return point


def zero_count_vs_phi(p_op: DiscretizedOperator,
                      pt_op: DiscretizedOperator,
                      gamma: PlanarDomain,
                      weyl_term: float = math.nan,
                      n_start: int = 64,
                      max_depth: int = 16) -> WindingReport:
    """Count zeros of det(relative operator) in gamma by phase tracking.

    Walks the boundary of gamma, tracking the phase of
    det(p - z) / det(p_tilde - z) with adaptive bisection in the arclength
    parameter, so refinement points stay on the boundary.  Samples landing
    on an eigenvalue are nudged along the curve.  The integer winding must
    match the direct eigenvalue count.
    """
    evals = 0
    point = _boundary_param(gamma)

    def phase_at(zz: complex) -> float:
        nonlocal evals
        evals += 1
        sn, _ = np.linalg.slogdet(p_op.shifted(zz))
        sd, _ = np.linalg.slogdet(pt_op.shifted(zz))
        if sn == 0 or sd == 0:
            raise RefusalError("determinant vanished on the contour")
        return float(np.angle(sn / sd))

    def safe_phase(t: float) -> tuple[float, float]:
        for attempt in range(8):
            try:
                return t, phase_at(point(t))
            except RefusalError:
                t = t + 1e-9 * (attempt + 1)
        raise RefusalError("contour sample stuck on the spectrum")

    knots = [safe_phase(i / n_start) for i in range(n_start)]

    for _ in range(max_depth):
        closed = knots + [(knots[0][0] + 1.0, knots[0][1])]
        new_knots = []
        refined = False
        for i in range(len(knots)):
            t0, p0 = closed[i]
            t1, p1 = closed[i + 1]
            new_knots.append((t0, p0))
            if abs(_wrap_phase(p1 - p0)) > math.pi / 2.0 and t1 - t0 > 1e-7:
                new_knots.append(safe_phase(0.5 * (t0 + t1)))
                refined = True
        knots = new_knots
        if not refined:
            break
    else:
        raise RefusalError("phase did not settle on the contour")

    closed = knots + [(knots[0][0] + 1.0, knots[0][1])]
    total = sum(_wrap_phase(closed[i + 1][1] - closed[i][1])
                for i in range(len(knots)))
    winding = total / (2.0 * math.pi)
    if abs(winding - round(winding)) > 1e-6:
        raise RefusalError(f"non-integer winding {winding:.6f}")

    direct = count_spectrum_in(p_op, gamma)
    return WindingReport(int(round(winding)), direct.count, weyl_term, evals)


def _wrap_phase(d: float) -> float:
    while d > math.pi:
        d -= 2.0 * math.pi
    while d < -math.pi:
        d += 2.0 * math.pi
    return d
