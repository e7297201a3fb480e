"""Symbols on the 1D torus and their phase-space geometry.

A symbol is a complex-valued function p(x, xi) on T x R given as a sum of
separable terms a(x) * b(xi), which is what the spectral discretization in
:mod:`weyllab.operators` consumes.  This module owns everything that is pure
phase-space quadrature: volumes of preimages, sublevel-volume profiles with
their growth-exponent fit, the shifted symbol used to normalize determinants,
the logarithmic potential of the normalized symbol, and the consistency check
between its distributional Laplacian and the pushforward of phase-space
volume.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import (
    RefusalError,
    TruncationError,
    VolumeLeakError,
)

TWO_PI = 2.0 * math.pi


# ---------------------------------------------------------------------------
# symbols


@dataclass(frozen=True)
class SymbolTerm:
    """One separable term const * a(x) * b(xi); None means the factor is 1."""

    x_part: Callable[[np.ndarray], np.ndarray] | None
    xi_part: Callable[[np.ndarray], np.ndarray] | None
    const: complex = 1.0


@dataclass(frozen=True)
class SymbolModel:
    """A symbol on the torus [0, 2*pi) x R.

    Parameters
    ----------
    name : str
        Registry name, echoed into reports.
    terms : tuple of SymbolTerm
        Separable decomposition used both for evaluation and quantization.
        May be None for symbols that only support pointwise evaluation.
    fn : callable, optional
        Direct evaluator p(x, xi); derived from ``terms`` when omitted.
    symmetric_in_xi : bool
        Declares p(x, -xi) = p(x, xi).  Checked by tests, relied on by the
        complex-symmetric border construction downstream.
    xi_floor : callable, optional
        Coercivity certificate: xi_floor(m) returns a radius r such that
        |p(x, xi)| > m whenever |xi| >= r.  Required for any operation that
        must truncate the unbounded xi axis.
    """

    name: str
    terms: tuple[SymbolTerm, ...] | None
    fn: Callable[[np.ndarray, np.ndarray], np.ndarray] | None = None
    period: float = TWO_PI
    symmetric_in_xi: bool = False
    xi_floor: Callable[[float], float] | None = None

    def eval(self, x, xi):
        x = np.asarray(x)
        xi = np.asarray(xi)
        if self.fn is not None:
            return self.fn(x, xi)
        if self.terms is None:
            raise RefusalError(f"symbol {self.name!r} has no evaluator")
        out = np.zeros(np.broadcast(x, xi).shape, dtype=complex)
        for t in self.terms:
            piece = np.full_like(out, t.const)
            if t.x_part is not None:
                piece = piece * t.x_part(x)
            if t.xi_part is not None:
                piece = piece * t.xi_part(xi)
            out += piece
        return out

    def xi_truncation(self, level: float) -> float:
        """Certified radius r with |p| > level for |xi| >= r."""
        if self.xi_floor is None:
            raise TruncationError(
                f"symbol {self.name!r} declares no coercivity; "
                "truncation not certifiable"
            )
        return float(self.xi_floor(level))


def schrodinger_cos(coupling: float = 1.0) -> SymbolModel:
    """p(x, xi) = xi**2 + i*coupling*cos(x), the workhorse model."""
    c = float(coupling)
    return SymbolModel(
        name="schrodinger_cos",
        terms=(
            SymbolTerm(None, lambda xi: np.asarray(xi) ** 2),
            SymbolTerm(np.cos, None, const=1j * c),
        ),
        symmetric_in_xi=True,
        # |p| >= xi^2 - |coupling|, so xi^2 > m + |c| suffices.
        xi_floor=lambda m: math.sqrt(max(m, 0.0) + abs(c) + 1.0),
    )


def transport(mean: complex = 0.0,
              re_amp: float = 0.0,
              im_amp: float = 1.0) -> SymbolModel:
    """p(x, xi) = xi + g(x) with g = mean + re_amp*cos(x) + i*im_amp*sin(x).

    First-order model whose spectrum stays on a horizontal line no matter
    how g oscillates; used as the negative control for spectral filling.
    """
    m = complex(mean)
    a = float(re_amp)
    b = float(im_amp)

    def g(x):
        x = np.asarray(x)
        return m + a * np.cos(x) + 1j * b * np.sin(x)

    g_sup = abs(m) + a + b
    return SymbolModel(
        name="transport",
        terms=(
            SymbolTerm(None, lambda xi: np.asarray(xi).astype(complex)),
            SymbolTerm(g, None),
        ),
        symmetric_in_xi=False,
        xi_floor=lambda mm: mm + g_sup + 1.0,
    )


def free_xi2() -> SymbolModel:
    """p = xi**2."""
    return SymbolModel(
        name="free_xi2",
        terms=(SymbolTerm(None, lambda xi: np.asarray(xi) ** 2),),
        symmetric_in_xi=True,
        xi_floor=lambda m: math.sqrt(max(m, 0.0) + 1.0),
    )


def linear_xi() -> SymbolModel:
    """p = xi."""
    return SymbolModel(
        name="linear_xi",
        terms=(SymbolTerm(None, lambda xi: np.asarray(xi).astype(complex)),),
        symmetric_in_xi=False,
        xi_floor=lambda m: m + 1.0,
    )


REGISTRY: dict[str, Callable[..., SymbolModel]] = {
    "schrodinger_cos": schrodinger_cos,
    "transport": transport,
    "free_xi2": free_xi2,
    "linear_xi": linear_xi,
}


# ---------------------------------------------------------------------------
# planar regions


@dataclass(frozen=True)
class PlanarDomain:
    """A closed polygon in the spectral plane, stored as complex vertices."""

    vertices: tuple[complex, ...]

    @classmethod
    def rect(cls, re0: float, re1: float, im0: float, im1: float) -> "PlanarDomain":
        if not (re0 < re1 and im0 < im1):
            raise RefusalError("degenerate rectangle")
        return cls((complex(re0, im0), complex(re1, im0),
                    complex(re1, im1), complex(re0, im1)))

    @property
    def is_rect(self) -> bool:
        v = self.vertices
        if len(v) != 4:
            return False
        return (v[0].imag == v[1].imag and v[1].real == v[2].real
                and v[2].imag == v[3].imag and v[3].real == v[0].real)

    def bounds(self) -> tuple[float, float, float, float]:
        re = [v.real for v in self.vertices]
        im = [v.imag for v in self.vertices]
        return min(re), max(re), min(im), max(im)

    def max_abs(self) -> float:
        return max(abs(v) for v in self.vertices)

    def diameter(self) -> float:
        v = self.vertices
        return max(abs(a - b) for a in v for b in v)

    def contains(self, z) -> np.ndarray:
        """Vectorized membership (closed region)."""
        z = np.asarray(z, dtype=complex)
        if self.is_rect:
            re0, re1, im0, im1 = self.bounds()
            return ((z.real >= re0) & (z.real <= re1)
                    & (z.imag >= im0) & (z.imag <= im1))
        inside = np.zeros(z.shape, dtype=bool)
        x, y = z.real, z.imag
        v = self.vertices
        n = len(v)
        for i in range(n):
            x0, y0 = v[i].real, v[i].imag
            x1, y1 = v[(i + 1) % n].real, v[(i + 1) % n].imag
            crosses = (y0 > y) != (y1 > y)
            with np.errstate(divide="ignore", invalid="ignore"):
                xc = x0 + (y - y0) * (x1 - x0) / (y1 - y0)
            inside ^= crosses & (x < xc)
        return inside | (self.boundary_distance(z) <= 1e-14)

    def boundary_distance(self, z) -> np.ndarray:
        """Unsigned distance to the boundary curve."""
        z = np.asarray(z, dtype=complex)
        v = self.vertices
        n = len(v)
        d = np.full(z.shape, np.inf)
        for i in range(n):
            a = v[i]
            b = v[(i + 1) % n]
            ab = b - a
            t = np.clip(((z - a) * np.conj(ab)).real / abs(ab) ** 2, 0.0, 1.0)
            d = np.minimum(d, np.abs(z - (a + t * ab)))
        return d

    def boundary_samples(self, count: int) -> np.ndarray:
        """Points on the boundary, uniform in arclength, positively oriented."""
        v = list(self.vertices)
        lengths = [abs(v[(i + 1) % len(v)] - v[i]) for i in range(len(v))]
        total = sum(lengths)
        s = np.arange(count) * total / count
        pts = np.empty(count, dtype=complex)
        acc = 0.0
        j = 0
        for i, length in enumerate(lengths):
            a, b = v[i], v[(i + 1) % len(v)]
            while j < count and s[j] < acc + length:
                pts[j] = a + (b - a) * ((s[j] - acc) / length)
                j += 1
            acc += length
        return pts

    def band(self, r: float) -> "BoundaryBand":
        """The set of points within distance r of the boundary."""
        return BoundaryBand(self, float(r))


@dataclass(frozen=True)
class BoundaryBand:
    domain: PlanarDomain
    radius: float

    def contains(self, z) -> np.ndarray:
        return self.domain.boundary_distance(z) <= self.radius

    def max_abs(self) -> float:
        return self.domain.max_abs() + self.radius


# ---------------------------------------------------------------------------
# quadrature grids


@dataclass(frozen=True)
class PhaseGrid:
    """Midpoint tensor grid on [0, period) x [-xi_radius, xi_radius].

    ``xi_radius`` may be left None, in which case each operation derives it
    from the symbol's coercivity certificate and refuses when there is none.
    """

    nx: int
    nxi: int
    xi_radius: float | None = None

    def refine(self, factor: int = 2) -> "PhaseGrid":
        return PhaseGrid(self.nx * factor, self.nxi * factor, self.xi_radius)

    def coarsen(self) -> "PhaseGrid":
        return PhaseGrid(max(self.nx // 2, 8), max(self.nxi // 2, 8),
                         self.xi_radius)

    def nodes(self, period: float, radius: float):
        x = (np.arange(self.nx) + 0.5) * (period / self.nx)
        xi = -radius + (np.arange(self.nxi) + 0.5) * (2.0 * radius / self.nxi)
        return x, xi

    def cell_area(self, period: float, radius: float) -> float:
        return (period / self.nx) * (2.0 * radius / self.nxi)


def _resolve_radius(sym: SymbolModel, grid: PhaseGrid, level: float) -> float:
    if grid.xi_radius is not None:
        return float(grid.xi_radius)
    return sym.xi_truncation(level)


# ---------------------------------------------------------------------------
# volumes


@dataclass(frozen=True)
class VolumeEstimate:
    value: float
    error: float
    nx: int
    nxi: int
    xi_radius: float


def _region_volume(sym, region, grid, radius) -> float:
    x, xi = grid.nodes(sym.period, radius)
    p = sym.eval(x[:, None], xi[None, :])
    mask = region.contains(p)
    if mask[:, 0].any() or mask[:, -1].any():
        raise VolumeLeakError(
            "region is reachable at the xi truncation boundary (volume leak)"
        )
    return float(mask.sum()) * grid.cell_area(sym.period, radius)


def weyl_volume(sym: SymbolModel, region, grid: PhaseGrid) -> VolumeEstimate:
    """Phase-space volume of the preimage of ``region`` under the symbol.

    ``region`` is anything with vectorized ``contains`` and ``max_abs``
    (a :class:`PlanarDomain` or a :class:`BoundaryBand`).  The returned
    error is the difference against one coarsening, which is the honest
    resolution-limited estimate for an indicator integrand.
    """
    radius = _resolve_radius(sym, grid, region.max_abs() + 1.0)
    fine = _region_volume(sym, region, grid, radius)
    coarse = _region_volume(sym, region, grid.coarsen(), radius)
    return VolumeEstimate(fine, abs(fine - coarse), grid.nx, grid.nxi, radius)


def sublevel_volume_profile(sym: SymbolModel, z: complex,
                            t_values: Sequence[float],
                            grid: PhaseGrid) -> np.ndarray:
    """Volumes of {|p - z|**2 <= t} for each t in ``t_values``.

    The t ladder must be positive, increasing and bounded by 1/2: the
    profile feeds a growth-exponent fit that is only meaningful on the
    normalized scale.
    """
    t = np.asarray(t_values, dtype=float)
    if t.ndim != 1 or t.size == 0 or (t <= 0).any() or (np.diff(t) <= 0).any():
        raise RefusalError("t ladder must be positive and strictly increasing")
    if t[-1] > 0.5:
        raise RefusalError("t ladder exceeds 1/2")
    radius = _resolve_radius(sym, grid, abs(z) + 1.0)
    x, xi = grid.nodes(sym.period, radius)
    s = np.abs(sym.eval(x[:, None], xi[None, :]) - z) ** 2
    s_sorted = np.sort(s.ravel())
    counts = np.searchsorted(s_sorted, t, side="right")
    return counts * grid.cell_area(sym.period, radius)


@dataclass(frozen=True)
class KappaFit:
    kappa: float
    ok: bool
    reason: str
    n_points: int


def fit_kappa(t_values, volumes, min_cells_volume: float = 0.0) -> KappaFit:
    """Least-squares growth exponent of V(t) ~ t**kappa.

    Fits log V against log t over the middle two decades of the resolved
    range (V > 0), discarding the endpoint samples to dodge grid-floor and
    saturation bias.  Refuses degenerate profiles instead of guessing.
    """
    t = np.asarray(t_values, dtype=float)
    v = np.asarray(volumes, dtype=float)
    mask = v > max(min_cells_volume, 0.0)
    if mask.sum() < 5:
        return KappaFit(math.nan, False, "profile vanishes on the t ladder",
                        int(mask.sum()))
    t, v = t[mask], v[mask]
    span = t[-1] / t[0]
    if span > 100.0:
        # keep a centered two-decade window
        mid = math.sqrt(t[0] * t[-1])
        lo, hi = mid / 10.0, mid * 10.0
        keep = (t >= lo) & (t <= hi)
        t, v = t[keep], v[keep]
    if t.size > 4:
        t, v = t[1:-1], v[1:-1]
    if t.size < 3:
        return KappaFit(math.nan, False, "too few resolved samples", t.size)
    if np.allclose(v, v[0]):
        return KappaFit(math.nan, False, "profile is flat (saturated)", t.size)
    slope, _ = np.polyfit(np.log(t), np.log(v), 1)
    return KappaFit(float(slope), True, "", t.size)


# ---------------------------------------------------------------------------
# shifted symbol


def _smoothstep(u: np.ndarray) -> np.ndarray:
    """C-infinity step: 1 for u <= 0, 0 for u >= 1."""
    u = np.asarray(u, dtype=float)
    with np.errstate(over="ignore", divide="ignore"):
        a = np.where(u > 0, np.exp(-1.0 / np.maximum(u, 1e-300)), 0.0)
        b = np.where(u < 1, np.exp(-1.0 / np.maximum(1.0 - u, 1e-300)), 0.0)
    out = b / np.where(a + b > 0, a + b, 1.0)
    out[u <= 0] = 1.0
    out[u >= 1] = 0.0
    return out


def _rect_distance(w: np.ndarray, bounds) -> np.ndarray:
    re0, re1, im0, im1 = bounds
    dx = np.maximum(np.maximum(re0 - w.real, w.real - re1), 0.0)
    dy = np.maximum(np.maximum(im0 - w.imag, w.imag - im1), 0.0)
    return np.hypot(dx, dy)


@dataclass(frozen=True)
class TildeSymbol:
    """The symbol plus a purely imaginary bump that makes it elliptic on omega.

    The bump is i * amplitude * chi(dist(p(x, xi), omega)), with chi a smooth
    step that is 1 within ``margin_on`` of omega and 0 beyond ``margin_off``.
    Because the cutoff is a function of the symbol value, the support of the
    shift is a compact phase-space set whenever the symbol is coercive, and
    the ellipticity floor can be certified by sampling.
    """

    base: SymbolModel
    omega: PlanarDomain
    amplitude: float
    margin_on: float
    margin_off: float
    ellipticity_floor: float = field(default=0.0)

    def chi(self, p_values: np.ndarray) -> np.ndarray:
        d = _rect_distance(np.asarray(p_values, dtype=complex),
                           self.omega.bounds())
        return _smoothstep((d - self.margin_on)
                           / (self.margin_off - self.margin_on))

    def shift(self, p_values: np.ndarray) -> np.ndarray:
        return 1j * self.amplitude * self.chi(p_values)

    def eval(self, x, xi):
        p = self.base.eval(x, xi)
        return p + self.shift(p)


def make_tilde(sym: SymbolModel, omega: PlanarDomain, grid: PhaseGrid,
               margin_on: float = 0.15, margin_off: float = 0.45,
               amplitude: float | None = None,
               z_samples: int = 21) -> TildeSymbol:
    """Build the shifted symbol and certify its ellipticity floor on a grid.

    The amplitude defaults to twice the diameter of omega plus one, which
    keeps |p + i*A - z| bounded below wherever the bump is fully on.  The
    certified floor is min over sampled (x, xi) and sampled z in the closed
    omega of |p_tilde - z|; construction refuses if it is not positive.
    """
    if not omega.is_rect:
        raise RefusalError("shifted-symbol construction expects a rectangle")
    if not margin_on < margin_off:
        raise RefusalError("margins must satisfy margin_on < margin_off")
    amp = float(amplitude) if amplitude is not None \
        else 2.0 * omega.diameter() + 1.0
    tilde = TildeSymbol(sym, omega, amp, margin_on, margin_off)

    radius = _resolve_radius(sym, grid, omega.max_abs() + margin_off + 1.0)
    x, xi = grid.nodes(sym.period, radius)
    pt = tilde.eval(x[:, None], xi[None, :]).ravel()
    re0, re1, im0, im1 = omega.bounds()
    zr = np.linspace(re0, re1, z_samples)
    zi = np.linspace(im0, im1, z_samples)
    zz = (zr[:, None] + 1j * zi[None, :]).ravel()
    floor = np.inf
    for z in zz:
        floor = min(floor, float(np.min(np.abs(pt - z))))
    if not floor > 0.0:
        raise RefusalError("ellipticity floor is not positive on the grid")
    return TildeSymbol(sym, omega, amp, margin_on, margin_off, floor)


# ---------------------------------------------------------------------------
# logarithmic potential and pushforward


@dataclass(frozen=True)
class PhiEstimate:
    value: float
    error: float
    jitter_events: int


class _PhiEvaluator:
    """Caches symbol values on a grid so many z evaluations stay cheap."""

    def __init__(self, sym: SymbolModel, tilde: TildeSymbol, grid: PhaseGrid):
        self.sym = sym
        self.tilde = tilde
        self.grid = grid
        level = tilde.omega.max_abs() + tilde.margin_off + 1.0
        self.radius = _resolve_radius(sym, grid, level)
        x, xi = grid.nodes(sym.period, self.radius)
        p = sym.eval(x[:, None], xi[None, :])
        chi = tilde.chi(p)
        # The integrand vanishes identically where the shift is off.
        mask = chi > 0.0
        self.p = p[mask]
        self.pt = (p + 1j * tilde.amplitude * chi)[mask]
        self.area = grid.cell_area(sym.period, self.radius)
        self.cell_diag = math.hypot(sym.period / grid.nx,
                                    2.0 * self.radius / grid.nxi)
        self.x_step = sym.period / grid.nx
        # remember grid coordinates of kept nodes for the refinement pass
        ii, jj = np.nonzero(mask)
        self.x_kept = x[ii]
        self.xi_kept = xi[jj]
        self.jitter_events = 0

    def value(self, z: complex, refine: bool = True) -> float:
        num = np.abs(self.p - z)
        den = np.abs(self.pt - z)
        tiny = num < 1e-300
        if tiny.any():
            # jitter the offending nodes slightly in x and re-evaluate them
            self.jitter_events += int(tiny.sum())
            xj = self.x_kept[tiny] + 1e-9 * self.x_step
            pj = self.sym.eval(xj, self.xi_kept[tiny])
            num[tiny] = np.maximum(np.abs(pj - z), 1e-300)
        vals = np.log(num) - np.log(den)
        if refine:
            near = num < 2.0 * self.cell_diag
            if near.any():
                vals[near] = self._refined(z, near)
        return float(vals.sum()) * self.area / TWO_PI

    def _refined(self, z, near):
        # one 3x3 midpoint refinement of the nearly singular cells
        offs = (np.arange(3) - 1.0) / 3.0
        xs = self.x_kept[near][:, None, None] + offs[None, :, None] * self.x_step
        dxi = 2.0 * self.radius / self.grid.nxi
        xis = self.xi_kept[near][:, None, None] + offs[None, None, :] * dxi
        p = self.sym.eval(xs, xis)
        chi = self.tilde.chi(p)
        pt = p + 1j * self.tilde.amplitude * chi
        num = np.maximum(np.abs(p - z), 1e-300)
        return (np.log(num) - np.log(np.abs(pt - z))).mean(axis=(1, 2))


def symbol_log_potential(sym: SymbolModel, tilde: TildeSymbol, z: complex,
                         grid: PhaseGrid) -> PhiEstimate:
    """(2*pi)**(-1) * integral of log |(p - z)/(p_tilde - z)| over phase space.

    Subharmonic in z; its distributional Laplacian recovers the pushforward
    of phase-space volume, which :func:`pushforward_check` verifies.  Nearly
    singular cells get one local 3x3 refinement; nodes that hit p = z
    exactly are jittered and counted.
    """
    if not tilde.ellipticity_floor > 0:
        raise RefusalError("shifted symbol has no certified ellipticity floor")
    ev = _PhiEvaluator(sym, tilde, grid)
    fine = ev.value(z)
    ev_c = _PhiEvaluator(sym, tilde, grid.coarsen())
    coarse = ev_c.value(z)
    return PhiEstimate(fine, abs(fine - coarse),
                       ev.jitter_events + ev_c.jitter_events)


@dataclass(frozen=True)
class PushforwardReport:
    lhs: float
    rhs: float
    rel_gap: float
    z_res: int
    nx: int
    nxi: int


def pushforward_check(sym: SymbolModel, tilde: TildeSymbol,
                      gamma: PlanarDomain, grid: PhaseGrid,
                      z_res: int = 24) -> PushforwardReport:
    """Compare the Laplacian mass of the log potential on gamma with the
    phase-space volume of its preimage.

    The left side integrates a 5-point finite-difference Laplacian of the
    potential over a z lattice subdividing gamma; the right side is
    (2*pi)**(-1) times the preimage volume.  Refuses when the stencil would
    leave the region in which the shifted symbol is certified elliptic.
    """
    if not gamma.is_rect:
        raise RefusalError("pushforward check expects a rectangular gamma")
    re0, re1, im0, im1 = gamma.bounds()
    dx = (re1 - re0) / z_res
    dy = (im1 - im0) / z_res
    o0, o1, o2, o3 = tilde.omega.bounds()
    if not (o0 <= re0 - dx and re1 + dx <= o1
            and o2 <= im0 - dy and im1 + dy <= o3):
        raise RefusalError(
            "Laplacian stencil leaves the certified ellipticity region"
        )
    ev = _PhiEvaluator(sym, tilde, grid)
    xs = re0 + (np.arange(-1, z_res + 1) + 0.5) * dx
    ys = im0 + (np.arange(-1, z_res + 1) + 0.5) * dy
    phi = np.empty((z_res + 2, z_res + 2))
    for i, u in enumerate(xs):
        for j, v in enumerate(ys):
            phi[i, j] = ev.value(complex(u, v))
    lap = ((phi[2:, 1:-1] + phi[:-2, 1:-1] - 2.0 * phi[1:-1, 1:-1]) / dx ** 2
           + (phi[1:-1, 2:] + phi[1:-1, :-2] - 2.0 * phi[1:-1, 1:-1]) / dy ** 2)
    lhs = float(lap.sum()) * dx * dy / TWO_PI
    vol = weyl_volume(sym, gamma, grid)
    rhs = vol.value / TWO_PI
    rel = abs(lhs - rhs) / max(abs(rhs), 1e-300)
    return PushforwardReport(lhs, rhs, rel, z_res, grid.nx, grid.nxi)
