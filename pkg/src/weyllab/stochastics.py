"""Probabilistic probes of the normalized spectral determinant.

The object under study is F(alpha) = det(relative operator at coupling
alpha) * exp(-h**-n * phi(z)): the determinant of the randomly perturbed
problem normalized by its phase-space prediction.  Restricted to a complex
line alpha0 + w*alpha1 the determinant is a polynomial in w (the
denominator of the relative operator is kept alpha-independent for exactly
this reason), so its zeros are generalized eigenvalues of a linear pencil,
the polynomial factorization makes |F| cheap everywhere on the line, and
Jensen's formula ties zero counts to boundary averages.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import CertificateError, RefusalError
from .grushin import log_abs_det_lu
from .operators import DiscretizedOperator, ReferenceOperator
from .perturbation import CoefficientLaw, ParameterSchedule


@dataclass(frozen=True)
class ModelBundle:
    """Everything needed to evaluate the normalized determinant.

    The perturbed operator is p0 + delta * diag(q(alpha)) with q synthesized
    from the reference modes below the cutoff; the denominator is the fixed
    shifted elliptic operator, independent of alpha.
    """

    p0: DiscretizedOperator
    p_tilde: DiscretizedOperator
    z: complex
    ref: ReferenceOperator
    delta: float
    cutoff: float
    radius: float
    phi_value: float
    h: float
    n: int = 1

    def __post_init__(self):
        den = self.p_tilde.shifted(self.z)
        smin = float(scipy.linalg.svdvals(den)[-1])
        if smin < 1e-8 * max(np.linalg.norm(den, 2), 1.0):
            raise RefusalError("shifted elliptic operator nearly singular")
        object.__setattr__(self, "_log_den", log_abs_det_lu(den))
        object.__setattr__(self, "_mask", self.ref.mu <= self.cutoff)

    @property
    def n_modes(self) -> int:
        return int(self._mask.sum())

    def q_nodes(self, alpha: np.ndarray) -> np.ndarray:
        alpha = np.asarray(alpha, dtype=complex)
        if alpha.size != self.n_modes:
            raise RefusalError("alpha length does not match the mode count")
        return self.ref.vectors[:, self._mask] @ alpha

    def shifted_matrix(self, alpha: np.ndarray) -> np.ndarray:
        return (self.p0.shifted(self.z)
                + self.delta * np.diag(self.q_nodes(alpha)))

    def log_abs_f(self, alpha: np.ndarray) -> float:
        """log |F(alpha)|; -inf exactly at the zero set."""
        num = log_abs_det_lu(self.shifted_matrix(alpha))
        return num - self._log_den - self.phi_value * self.h ** (-self.n)

    def phase_f(self, alpha: np.ndarray) -> float:
        """Principal-value phase of det(relative operator); mod 2*pi only."""
        sign_n, _ = np.linalg.slogdet(self.shifted_matrix(alpha))
        sign_d, _ = np.linalg.slogdet(self.p_tilde.shifted(self.z))
        return float(np.angle(sign_n / sign_d))


# ---------------------------------------------------------------------------
# line restriction


@dataclass(frozen=True)
class LineProbe:
    """F restricted to the line w -> alpha0 + w * alpha1.

    ``center``/``r0`` describe the disc in w on which the restricted
    coefficient vector stays inside the ball of radius R; ``zeros`` holds
    every finite zero of the restricted determinant (the polynomial is
    reconstructed from all of them), ``zeros_in_disc`` the ones inside the
    enlarged disc of radius 1.5 * r0.
    """

    bundle: ModelBundle
    alpha0: np.ndarray
    alpha1: np.ndarray
    center: complex
    r0: float
    zeros: np.ndarray
    base_point: complex
    base_log_abs_f: float
    field_meta: dict = field(default_factory=dict)

    @property
    def zeros_in_disc(self) -> np.ndarray:
        return self.zeros[np.abs(self.zeros - self.center) <= 1.5 * self.r0]

    def alpha_at(self, w: complex) -> np.ndarray:
        return self.alpha0 + w * self.alpha1

    def log_abs_f(self, w) -> np.ndarray:
        """log |F| on the line through the polynomial factorization."""
        w = np.asarray(w, dtype=complex)
        base = self.base_log_abs_f
        with np.errstate(divide="ignore"):
            shift = (np.log(np.abs(w[..., None] - self.zeros)).sum(axis=-1)
                     - np.log(np.abs(self.base_point - self.zeros)).sum())
        return base + shift


def line_probe(bundle: ModelBundle, alpha0: np.ndarray, alpha1: np.ndarray,
               zero_cap: float = 1e8) -> LineProbe:
    """Restrict F to a line and extract its zeros from the matrix pencil.

    alpha0 must stay in the half-radius ball and alpha1 have norm exactly R;
    then the disc in w over which alpha0 + w*alpha1 remains admissible has
    radius r0 in [sqrt(3)/2, 1].  Every zero inside the enlarged disc is
    validated against the matrix: the smallest singular value there must
    vanish at working precision.
    """
    alpha0 = np.asarray(alpha0, dtype=complex)
    alpha1 = np.asarray(alpha1, dtype=complex)
    r = bundle.radius
    if np.linalg.norm(alpha0) > r / 2.0 + 1e-12:
        raise RefusalError("alpha0 must lie in the half-radius ball")
    if abs(np.linalg.norm(alpha1) - r) > 1e-9 * r:
        raise RefusalError("alpha1 must have norm exactly R")
    inner = complex(np.sum((alpha0 / r) * np.conj(alpha1 / r)))
    center = -inner
    r0 = math.sqrt(max(1.0 - float(np.linalg.norm(alpha0 / r)) ** 2
                       + abs(inner) ** 2, 0.0))

    a = bundle.shifted_matrix(alpha0)
    b = bundle.delta * np.diag(bundle.q_nodes(alpha1))
    if not np.any(np.abs(np.diag(b)) > 0):
        raise RefusalError("direction potential vanishes; pencil degenerate")
    w_all = scipy.linalg.eigvals(a, -b)
    finite = np.isfinite(w_all) & (np.abs(w_all) < zero_cap)
    zeros = w_all[finite]

    # base point for the polynomial form: center of the disc, nudged off zeros
    base = center
    for _ in range(50):
        if zeros.size == 0 or np.min(np.abs(base - zeros)) > 1e-9:
            break
        base = base + 0.01 * r0
    base_val_direct = bundle.log_abs_f(alpha0 + base * alpha1)
    if math.isinf(base_val_direct):
        raise RefusalError("could not find a base point off the zero set")

    probe = LineProbe(bundle, alpha0, alpha1, center, r0, zeros,
                      base, base_val_direct)
    for w in probe.zeros_in_disc:
        m = a + w * b
        smin = float(scipy.linalg.svdvals(m)[-1])
        if smin > 1e-8 * max(np.linalg.norm(m, 2), 1.0):
            raise CertificateError(
                f"reported zero {w:.6g} does not annihilate the determinant "
                f"(s_min ratio {smin:.3e})"
            )
    return probe


def jensen_gap(probe: LineProbe, n_theta: int = 4096) -> float:
    """Jensen's formula residual on the disc (center, r0).

    Boundary average of log|f| minus log|f(center)| minus the zero-distance
    sum; should vanish for a polynomial with the reported zeros.
    """
    c, r0 = probe.center, probe.r0
    if not np.all(np.abs(np.abs(probe.zeros - c) - r0)
                  > 1e-9 * max(r0, 1.0)):
        raise RefusalError("a zero sits on the Jensen circle")
    theta = 2.0 * math.pi * (np.arange(n_theta) + 0.5) / n_theta
    ring = c + r0 * np.exp(1j * theta)
    avg = float(np.mean(probe.log_abs_f(ring)))
    inside = probe.zeros[np.abs(probe.zeros - c) < r0]
    jensen = float(np.sum(np.log(r0 / np.abs(inside - c))))
    center_val = float(probe.log_abs_f(np.array(c)))
    return abs(avg - center_val - jensen)


def winding_on_circle(bundle: ModelBundle, probe: LineProbe,
                      center: complex, radius: float,
                      n_start: int = 64, max_depth: int = 16) -> int:
    """Winding number of the restricted determinant around a circle.

    Uses direct LU determinant phases with adaptive bisection until every
    increment is below pi/2; refuses if the accumulated winding is not an
    integer at the finest subdivision.  Deliberately does not touch the
    pencil zeros, so it cross-checks them.
    """
    a = bundle.shifted_matrix(probe.alpha0)
    b = bundle.delta * np.diag(bundle.q_nodes(probe.alpha1))

    def phase(t):
        w = center + radius * np.exp(2j * math.pi * t)
        sign, logabs = np.linalg.slogdet(a + w * b)
        if sign == 0 or math.isinf(logabs):
            raise RefusalError("determinant vanished on the contour")
        return float(np.angle(sign))

    ts = list(np.linspace(0.0, 1.0, n_start + 1))
    phases = [phase(t) for t in ts]
    for _ in range(max_depth):
        new_ts = [ts[0]]
        new_ph = [phases[0]]
        refined = False
        for i in range(len(ts) - 1):
            d = _wrap(phases[i + 1] - phases[i])
            if abs(d) > math.pi / 2.0:
                tm = 0.5 * (ts[i] + ts[i + 1])
                new_ts.append(tm)
                new_ph.append(phase(tm))
                refined = True
            new_ts.append(ts[i + 1])
            new_ph.append(phases[i + 1])
        ts, phases = new_ts, new_ph
        if not refined:
            break
    else:
        raise RefusalError("phase did not settle under subdivision")
    total = sum(_wrap(phases[i + 1] - phases[i]) for i in range(len(ts) - 1))
    winding = total / (2.0 * math.pi)
    if abs(winding - round(winding)) > 1e-6:
        raise RefusalError(f"non-integer winding {winding:.6f}")
    return int(round(winding))


def _wrap(d: float) -> float:
    while d > math.pi:
        d -= 2.0 * math.pi
    while d < -math.pi:
        d += 2.0 * math.pi
    return d


# ---------------------------------------------------------------------------
# radial small-value measure


@dataclass(frozen=True)
class MeasureReport:
    eps: np.ndarray
    measure: np.ndarray
    r0: float
    n_radii: int


def small_value_measure(probe: LineProbe, eps_values,
                        n_radii: int = 2048, n_theta: int = 64,
                        refine_passes: int = 3) -> MeasureReport:
    """Lebesgue measure of the radii whose circle meets {|F| < eps}.

    For each radius r in [0, r0) the minimum of log|F| over the arc of the
    circle |w| = r inside the disc is computed from the polynomial form;
    the measure of {r : min < log eps} is accumulated per eps.  Radii whose
    arc passes near a zero get ``refine_passes`` rounds of angular
    refinement so narrow dips are not missed.
    """
    eps = np.asarray(eps_values, dtype=float)
    if (eps <= 0).any():
        raise RefusalError("eps thresholds must be positive")
    c, r0 = probe.center, probe.r0
    radii = (np.arange(n_radii) + 0.5) * (r0 / n_radii)
    dr = r0 / n_radii
    min_log = np.full(n_radii, np.inf)

    theta = 2.0 * math.pi * (np.arange(n_theta) + 0.5) / n_theta
    for i, r in enumerate(radii):
        w = r * np.exp(1j * theta)
        on_arc = np.abs(w - c) <= r0
        if not on_arc.any():
            continue
        vals = probe.log_abs_f(w[on_arc])
        min_log[i] = float(vals.min())
        th = theta[on_arc]
        for _ in range(refine_passes):
            j = int(np.argmin(vals))
            span = th[1] - th[0] if th.size > 1 else 2.0 * math.pi / n_theta
            th = th[j] + span * (np.arange(n_theta) / n_theta - 0.5)
            w2 = r * np.exp(1j * th)
            keep = np.abs(w2 - c) <= r0
            if not keep.any():
                break
            th = th[keep]
            vals = probe.log_abs_f(r * np.exp(1j * th))
            min_log[i] = min(min_log[i], float(vals.min()))

    measure = np.array([float(np.sum(min_log < math.log(e)) * dr)
                        for e in eps])
    return MeasureReport(eps, measure, r0, n_radii)


# ---------------------------------------------------------------------------
# failure probability


def wilson_interval(successes: int, trials: int,
                    z: float = 1.96) -> tuple[float, float]:
    if trials == 0:
        return 0.0, 1.0
    p = successes / trials
    den = 1.0 + z ** 2 / trials
    mid = (p + z ** 2 / (2 * trials)) / den
    half = z * math.sqrt(p * (1 - p) / trials
                         + z ** 2 / (4 * trials ** 2)) / den
    return max(mid - half, 0.0), min(mid + half, 1.0)


@dataclass(frozen=True)
class FailureCurve:
    eps_tilde: np.ndarray
    p_hat: np.ndarray
    wilson_lo: np.ndarray
    wilson_hi: np.ndarray
    n_draws: int
    fit_slope: float
    fit_intercept: float
    r_squared: float
    samples: np.ndarray


def failure_probability(bundle: ModelBundle, law: CoefficientLaw,
                        eps_tilde, n_draws: int,
                        rng: np.random.Generator) -> FailureCurve:
    """Monte Carlo estimate of P(log|F| < -eps_tilde * h**-n).

    One sample of log|F| per draw, thresholds applied to the common sample,
    so the curve is exactly non-increasing.  An exponential-decay fit of
    log p against eps_tilde runs over the thresholds with nondegenerate
    estimates.
    """
    et = np.asarray(eps_tilde, dtype=float)
    if et.ndim != 1 or (np.diff(et) <= 0).any():
        raise RefusalError("eps_tilde ladder must be increasing")
    samples = np.empty(n_draws)
    for i in range(n_draws):
        alpha = law.sample(rng, bundle.n_modes)
        samples[i] = bundle.log_abs_f(alpha)
    scale = bundle.h ** (-bundle.n)
    counts = np.array([(samples < -e * scale).sum() for e in et])
    p_hat = counts / n_draws
    lo = np.empty_like(p_hat)
    hi = np.empty_like(p_hat)
    for i, cnt in enumerate(counts):
        lo[i], hi[i] = wilson_interval(int(cnt), n_draws)

    usable = (counts > 0) & (counts < n_draws)
    if usable.sum() >= 3:
        x = et[usable]
        y = np.log(p_hat[usable])
        slope, intercept = np.polyfit(x, y, 1)
        resid = y - (slope * x + intercept)
        ss_tot = float(np.sum((y - y.mean()) ** 2))
        r2 = 1.0 - float(np.sum(resid ** 2)) / ss_tot if ss_tot > 0 else 0.0
    else:
        slope, intercept, r2 = math.nan, math.nan, math.nan
    return FailureCurve(et, p_hat, lo, hi, n_draws,
                        float(slope), float(intercept), float(r2), samples)


def eps_ladder_from_samples(samples: np.ndarray, h: float, n: int,
                            count: int = 8) -> np.ndarray:
    """An increasing eps_tilde ladder spanning the observed left tail."""
    s = np.sort(np.asarray(samples, dtype=float))
    scale = h ** (-n)
    qs = np.linspace(0.05, 0.6, count)
    vals = -np.quantile(s, qs) / scale
    vals = np.maximum.accumulate(vals[::-1])[::-1]
    out = np.unique(vals[::-1])
    if out.size < 3:
        raise RefusalError("sample spread too small for a threshold ladder")
    return out
