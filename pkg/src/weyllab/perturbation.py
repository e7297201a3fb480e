"""Random multiplicative potentials and the exponent schedule behind them.

The schedule exists in two modes.  In "paper" mode every quantity follows the
asymptotic bookkeeping exactly; those exponents underflow doubles at any h a
desktop can touch, so runs use "lab" mode, which swaps in configurable
couplings (an explicit exp(-eps_delta/h) or a fixed power of h) while always
logging the asymptotic values alongside for comparison.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import RefusalError, ScheduleError
from .operators import ReferenceOperator, sobolev_norm, sup_norm

TWO_PI = 2.0 * math.pi


# ---------------------------------------------------------------------------
# deterministic streams


def rng_stream(root_seed: int, *labels) -> np.random.Generator:
    """Counter-based stream keyed by (root seed, labels).

    Philox keys are derived by hashing, so draws for one (experiment, draw
    index) pair never depend on how many other draws ran before them.
    """
    text = repr((int(root_seed),) + tuple(labels)).encode()
    key = int.from_bytes(hashlib.blake2b(text, digest_size=16).digest(), "big")
    return np.random.Generator(np.random.Philox(key=key))


# ---------------------------------------------------------------------------
# schedule


@dataclass(frozen=True)
class ParameterSchedule:
    """Exponent bookkeeping for the perturbation family.

    freq_exp bounds the mode cutoff L <= h**(-freq_exp), amp_exp the
    coefficient radius R <= h**(-amp_exp), coupling_exp the coupling
    delta ~ tau0 * h**(coupling_exp + n), ladder_exp the geometric threshold
    ladder of the iterative stage construction.  The lab fields override the
    quantities that would underflow at desk scale.
    """

    n: int
    kappa: float
    s: float
    eps: float
    freq_exp: float
    amp_exp: float
    coupling_exp: float
    ladder_exp: float
    eps0_slack: float
    mode: str = "lab"
    # lab overrides
    l_lab: float = 2.0
    r_lab: float = 1.0
    delta_rule: tuple = ("hager", 0.15)
    coupling_exp_lab: float = 1.0
    ladder_exp_lab: float = 3.0

    def frequency_cutoff(self, h: float) -> float:
        if self.mode == "paper":
            return h ** (-self.freq_exp)
        return self.l_lab

    def coefficient_radius(self, h: float) -> float:
        if self.mode == "paper":
            return h ** (-self.amp_exp)
        return self.r_lab

    def mode_count(self, h: float) -> int:
        """Number of torus modes with mu = h*|k| below the cutoff."""
        return 2 * int(math.floor(self.frequency_cutoff(h) / h)) + 1

    def delta_paper(self, h: float, tau0: float) -> float:
        return tau0 * h ** (self.coupling_exp + self.n)

    def delta(self, h: float, tau0: float) -> float:
        if self.mode == "paper":
            return self.delta_paper(h, tau0)
        kind = self.delta_rule[0]
        if kind == "hager":
            return math.exp(-float(self.delta_rule[1]) / h)
        if kind == "power":
            return h ** float(self.delta_rule[1])
        raise RefusalError(f"unknown delta rule {kind!r}")

    def eps0(self, h: float, tau0: float) -> float:
        """Budget scale (h**kappa + h**n * log(1/h)) * (log(1/tau0) + log(1/h)**2)."""
        lh = math.log(1.0 / h)
        return ((h ** self.kappa + h ** self.n * lh)
                * (math.log(1.0 / tau0) + lh ** 2))

    def to_json(self, h: float | None = None, tau0: float | None = None) -> dict:
        out = {
            "n": self.n, "kappa": self.kappa, "s": self.s, "eps": self.eps,
            "freq_exp": self.freq_exp, "amp_exp": self.amp_exp,
            "coupling_exp": self.coupling_exp, "ladder_exp": self.ladder_exp,
            "eps0_slack": self.eps0_slack, "mode": self.mode,
            "l_lab": self.l_lab, "r_lab": self.r_lab,
            "delta_rule": list(self.delta_rule),
            "coupling_exp_lab": self.coupling_exp_lab,
            "ladder_exp_lab": self.ladder_exp_lab,
        }
        if h is not None and tau0 is not None:
            out["at"] = {
                "h": h, "tau0": tau0,
                "delta_lab": self.delta(h, tau0),
                "delta_paper": self.delta_paper(h, tau0),
                "cutoff": self.frequency_cutoff(h),
                "radius": self.coefficient_radius(h),
                "eps0": self.eps0(h, tau0),
            }
        return out


def build_schedule(n: int, kappa: float, s: float, eps: float,
                   mode: str = "lab",
                   freq_exp: float | None = None,
                   amp_exp: float | None = None,
                   eps0_slack: float = 0.1,
                   **lab) -> ParameterSchedule:
    """Validate the exponent constraints and fill in the minimal choices.

    Raises :class:`ScheduleError` carrying every violated constraint, named
    by the inequality that failed.
    """
    violations = []
    if not s > n / 2.0:
        violations.append(f"s > n/2 required (s={s}, n={n})")
    if not 0 < eps < s - n / 2.0:
        violations.append(f"eps in (0, s - n/2) required (eps={eps})")
    if not 0 < kappa <= 1:
        violations.append(f"kappa in (0, 1] required (kappa={kappa})")
    if violations:
        raise ScheduleError(violations)

    floor_m = (3.0 * n - kappa) / (s - n / 2.0 - eps)
    m = floor_m if freq_exp is None else float(freq_exp)
    if m < floor_m - 1e-12:
        violations.append(
            f"freq_exp >= (3n - kappa)/(s - n/2 - eps) = {floor_m:.6g} "
            f"required (freq_exp={m})"
        )
    floor_mt = 1.5 * n - kappa + (n / 2.0 + eps) * m
    mt = floor_mt if amp_exp is None else float(amp_exp)
    if mt < floor_mt - 1e-12:
        violations.append(
            f"amp_exp >= 3n/2 - kappa + (n/2 + eps)*freq_exp = {floor_mt:.6g} "
            f"required (amp_exp={mt})"
        )
    if violations:
        raise ScheduleError(violations)

    n1 = mt + s * m + n / 2.0
    n2 = 2.0 * (n1 + n) + eps0_slack
    return ParameterSchedule(
        n=n, kappa=kappa, s=s, eps=eps,
        freq_exp=m, amp_exp=mt, coupling_exp=n1, ladder_exp=n2,
        eps0_slack=eps0_slack, mode=mode, **lab,
    )


# ---------------------------------------------------------------------------
# coefficient laws


@dataclass(frozen=True)
class CoefficientLaw:
    """Distribution of the coefficient vector alpha in the ball |alpha| <= R.

    kind "uniform_ball" has identically zero log-density gradient; kind
    "gaussian" is an isotropic-per-mode complex Gaussian conditioned on the
    ball, with grad_bound = R / min(sigma)**2 recorded as its regularity
    surrogate.  ``meta`` carries bookkeeping constants that are recorded in
    manifests but never used numerically.
    """

    kind: str
    radius: float
    sigmas: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    @property
    def grad_bound(self) -> float:
        if self.kind == "uniform_ball":
            return 0.0
        return self.radius / float(np.min(self.sigmas)) ** 2

    def sample(self, rng: np.random.Generator, d: int) -> np.ndarray:
        if self.kind == "uniform_ball":
            g = rng.standard_normal(2 * d)
            g /= np.linalg.norm(g)
            r = self.radius * rng.uniform() ** (1.0 / (2 * d))
            v = r * g
            return v[:d] + 1j * v[d:]
        if self.kind == "gaussian":
            sig = np.broadcast_to(np.asarray(self.sigmas, dtype=float), (d,))
            for _ in range(1000):
                a = (rng.standard_normal(d) + 1j * rng.standard_normal(d)) \
                    * sig / math.sqrt(2.0)
                if np.linalg.norm(a) <= self.radius:
                    return a
            raise RefusalError("gaussian law rejected 1000 draws in a row")
        raise RefusalError(f"unknown coefficient law {self.kind!r}")


def uniform_ball_law(radius: float) -> CoefficientLaw:
    return CoefficientLaw("uniform_ball", float(radius))


def gaussian_law(radius: float, sigmas) -> CoefficientLaw:
    sig = np.atleast_1d(np.asarray(sigmas, dtype=float))
    if (sig <= 0).any():
        raise RefusalError("gaussian law needs positive mode scales")
    return CoefficientLaw("gaussian", float(radius), sig)


# ---------------------------------------------------------------------------
# potentials


@dataclass(frozen=True)
class AdmissiblePotential:
    """A band-limited random potential q = sum_k alpha_k eps_k.

    ``alpha`` is indexed like the reference eigenbasis restricted to modes
    with mu_k <= cutoff; ``nodes`` holds the synthesized node values.
    """

    alpha: np.ndarray
    mu: np.ndarray
    nodes: np.ndarray
    cutoff: float
    hs_norm: float
    sup: float
    stream_label: str = ""

    @property
    def dim(self) -> int:
        return self.alpha.size


def build_potential(ref: ReferenceOperator, alpha: np.ndarray, cutoff: float,
                    s: float, stream_label: str = "") -> AdmissiblePotential:
    mask = ref.mu <= cutoff
    d = int(mask.sum())
    alpha = np.asarray(alpha, dtype=complex)
    if alpha.size != d:
        raise RefusalError(
            f"alpha has {alpha.size} entries but the cutoff keeps {d} modes"
        )
    nodes = ref.vectors[:, mask] @ alpha
    hs = sobolev_norm(alpha, ref.mu[mask], s)
    return AdmissiblePotential(alpha, ref.mu[mask], nodes, float(cutoff),
                               hs, sup_norm(nodes), stream_label)


def draw_potential(law: CoefficientLaw, ref: ReferenceOperator,
                   sched: ParameterSchedule, h: float,
                   rng: np.random.Generator,
                   stream_label: str = "") -> AdmissiblePotential:
    """Draw an admissible potential at scale h from the given law."""
    if abs(ref.h - h) > 1e-12:
        raise RefusalError("reference basis was built at a different h")
    cutoff = sched.frequency_cutoff(h)
    mask = ref.mu <= cutoff
    d = int(mask.sum())
    if d == 0:
        raise RefusalError("cutoff keeps no modes")
    if d == ref.n_kept:
        raise RefusalError(
            "cutoff keeps every resolved mode; enlarge the basis"
        )
    alpha = law.sample(rng, d)
    return build_potential(ref, alpha, cutoff, sched.s, stream_label)


@dataclass(frozen=True)
class NormAudit:
    ok: bool
    sup: float
    hs: float
    sup_bound: float
    alpha_norm: float
    radius: float


def potential_norm_audit(pot: AdmissiblePotential, sched: ParameterSchedule,
                         h: float, sup_const: float = 1.0) -> NormAudit:
    """Check the norm chain |alpha| <= R, sup|q| <= C h**(-n/2) ||q||_{H^s}."""
    alpha_norm = float(np.linalg.norm(pot.alpha))
    radius = sched.coefficient_radius(h)
    sup_bound = sup_const * h ** (-sched.n / 2.0) * pot.hs_norm
    ok = alpha_norm <= radius * (1 + 1e-12) and pot.sup <= sup_bound
    return NormAudit(ok, pot.sup, pot.hs_norm, sup_bound, alpha_norm, radius)
