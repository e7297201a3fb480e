"""Iterative lifting of clustered small singular values.

The construction walks a geometric ladder of shrinking band sizes and
thresholds.  At each stage it borders the current matrix along its smallest
singular values, inspects the top slice of the bordered band, and either
skips (the slice already clears the stage threshold) or adds a small
multiplicative potential built from the singular vectors through the
point-design machinery, re-measuring everything by SVD before accepting the
stage.  After the final stage every singular value of the shifted matrix is
certified above its stage floor.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .deltadesign import (
    Frame,
    approximate_delta,
    frame_from_columns,
    point_mass_nodes,
    select_points,
)
from .errors import CertificateError, RefusalError
from .grushin import build_grushin, log_abs_det_lu
from .operators import ReferenceOperator


def band_ladder(n0: int, theta: float, crossover: int = 8) -> list[int]:
    """Band sizes N^(0) >= N^(1) >= ... >= 1, then a final 0.

    Geometric shrinking by (1 - theta) while at least ``crossover``, unit
    steps below that.  Stage k certifies the band (ladder[k], ladder[k-1]].
    """
    if not 0.0 < theta < 0.25:
        raise RefusalError("theta must lie in (0, 1/4)")
    if n0 < 1:
        raise RefusalError("nothing to lift")
    ladder = [int(n0)]
    while ladder[-1] >= crossover:
        nxt = int(math.floor((1.0 - theta) * ladder[-1]))
        if nxt == ladder[-1]:
            nxt -= 1
        ladder.append(nxt)
    while ladder[-1] > 1:
        ladder.append(ladder[-1] - 1)
    if ladder[-1] == 1:
        ladder.append(0)
    return ladder


def stage_count_bound(n0: int, theta: float, crossover: int = 8) -> int:
    """Upper bound for the ladder length: geometric part plus unit tail."""
    geom = int(math.ceil(math.log(max(n0, 1) / max(crossover - 1, 1))
                         / math.log(1.0 / (1.0 - theta)))) + 1
    return max(geom, 1) + crossover


@dataclass(frozen=True)
class RenormConfig:
    h: float
    tau0: float
    n: int = 1
    theta: float = 0.2
    crossover: int = 8
    coupling_exp_lab: float = 1.0
    ladder_exp_lab: float = 3.0
    c_stage: float = 1.0
    max_retries: int = 3
    symmetric: bool = True

    def threshold(self, k: int) -> float:
        """Stage-k floor tau0 * h**(k * ladder_exp_lab)."""
        return self.tau0 * self.h ** (self.ladder_exp_lab * k)

    def stage_delta(self, k: int, c: float) -> float:
        """Stage-k coupling tau0^(k-1) * h**(coupling_exp_lab + n) / c."""
        return (self.threshold(k - 1)
                * self.h ** (self.coupling_exp_lab + self.n) / c)


# ---------------------------------------------------------------------------
# potential builders


class PointMassBuilder:
    """Potentials that are exact point masses at the selected nodes."""

    def __init__(self, points: np.ndarray, weight: float):
        self.points = np.asarray(points, dtype=float)
        self.weight = float(weight)

    def build(self, e_cols: np.ndarray):
        frame = frame_from_columns(e_cols, self.points, self.weight)
        sel = select_points(frame)
        q = point_mass_nodes(frame, sel.indices)
        meta = {
            "kind": "point_mass",
            "points": sel.points.tolist(),
            "det_floor_log": sel.det_floor_log(),
            "log_abs_det": sel.log_abs_det(),
            "gram_deviation": sel.gram_deviation,
        }
        return q, None, meta


class AdmissibleBuilder:
    """Band-limited potentials approximating the selected point masses.

    The point selection runs on the singular-vector frame; each point mass
    is then truncated to reference modes below the cutoff, so the potential
    that actually perturbs the matrix is admissible.
    """

    def __init__(self, ref: ReferenceOperator, cutoff: float, s: float,
                 gram_gate: float = 0.5):
        self.ref = ref
        self.cutoff = float(cutoff)
        self.s = float(s)
        self.gram_gate = float(gram_gate)

    def build(self, e_cols: np.ndarray):
        basis = self.ref.basis
        frame = frame_from_columns(e_cols, basis.nodes, basis.weight)
        sel = select_points(frame)
        if sel.gram_deviation > self.gram_gate:
            raise RefusalError(
                f"singular-vector Gramian deviates from identity by "
                f"{sel.gram_deviation:.3g}; certificates not transferable"
            )
        alpha = None
        q = np.zeros(basis.size, dtype=complex)
        remainders = []
        for idx in sel.indices:
            approx = approximate_delta(int(idx), self.ref, self.cutoff, self.s)
            q = q + approx.nodes(self.ref)
            remainders.append(approx.remainder_norm)
            alpha = approx.alpha if alpha is None else alpha + approx.alpha
        meta = {
            "kind": "admissible",
            "points": sel.points.tolist(),
            "det_floor_log": sel.det_floor_log(),
            "log_abs_det": sel.log_abs_det(),
            "gram_deviation": sel.gram_deviation,
            "remainder_norms": remainders,
        }
        return q, alpha, meta


# ---------------------------------------------------------------------------
# stages


@dataclass(frozen=True)
class StageRecord:
    k: int
    n_prev: int
    n_k: int
    threshold: float
    action: str
    delta: float
    c_stage: float
    retries: int
    band_before: list
    band_after: list
    meta: dict = field(default_factory=dict)


@dataclass
class RenormTrace:
    config: RenormConfig
    z: complex
    ladder: list[int]
    stages: list[StageRecord] = field(default_factory=list)
    total_potential: np.ndarray | None = None
    total_alpha: np.ndarray | None = None
    final_t: np.ndarray | None = None

    def floor_report(self) -> list[dict]:
        """Per-stage floors against the final measured ladder."""
        out = []
        for rec in self.stages:
            band = self.final_t[rec.n_k:rec.n_prev]
            out.append({
                "k": rec.k,
                "band": [rec.n_k + 1, rec.n_prev],
                "threshold": rec.threshold,
                "min_t": float(band.min()) if band.size else math.nan,
                "ok": bool(band.size and band.min()
                           >= rec.threshold * (1.0 - 1e-9)),
            })
        return out

    def certified(self) -> bool:
        return all(row["ok"] for row in self.floor_report())


def stage_decision(gd, band_size: int, threshold: float) -> str:
    """'skip' when the top ``band_size`` effective singular values already
    clear the stage threshold, else 'perturb'."""
    s_desc = np.sort(scipy.linalg.svdvals(gd.corner))[::-1]
    band = s_desc[:band_size]
    return "skip" if bool(np.all(band >= threshold)) else "perturb"


def _t_ascending(m: np.ndarray) -> np.ndarray:
    return np.sort(scipy.linalg.svdvals(m))


def run_renorm(p0: np.ndarray, z: complex, cfg: RenormConfig, builder,
               enabled: bool = True) -> RenormTrace:
    """Run the full stage ladder on p0 - z.

    With ``enabled=False`` every stage is forced to skip, which leaves the
    matrix bitwise untouched and produces the negative-control trace whose
    floor report is expected to fail.
    """
    p0 = np.asarray(p0, dtype=complex)
    dim = p0.shape[0]
    shifted = p0 - z * np.eye(dim)
    t = _t_ascending(shifted)
    n0 = int(np.sum(t < cfg.tau0))
    if n0 == 0:
        trace = RenormTrace(cfg, z, [0], [], np.zeros(dim, dtype=complex),
                            None, t)
        return trace
    if n0 == dim:
        raise RefusalError("every singular value sits below tau0")

    ladder = band_ladder(n0, cfg.theta, cfg.crossover)
    trace = RenormTrace(cfg, z, ladder)
    p_cur = p0
    total_q = np.zeros(dim, dtype=complex)
    total_alpha = None

    for k in range(1, len(ladder)):
        n_prev, n_k = ladder[k - 1], ladder[k]
        thr = cfg.threshold(k)
        shifted = p_cur - z * np.eye(dim)
        gd = build_grushin(shifted, n_border=n_prev, symmetric=cfg.symmetric)
        band_before = gd.t[n_k:n_prev]
        action = stage_decision(gd, n_prev - n_k, thr)
        if not enabled:
            action = "skip"
        if action == "skip":
            trace.stages.append(StageRecord(
                k, n_prev, n_k, thr, "skip", 0.0, cfg.c_stage, 0,
                band_before.tolist(), band_before.tolist(),
            ))
            continue

        committed = False
        last_fail = ""
        for retry in range(cfg.max_retries + 1):
            c = cfg.c_stage * 2.0 ** retry
            delta = cfg.stage_delta(k, c)
            q_nodes, alpha, meta = builder.build(gd.e_cols)
            sup = float(np.max(np.abs(q_nodes)))
            q_unit = q_nodes / sup
            p_try = p_cur + delta * np.diag(q_unit)
            t_after = _t_ascending(p_try - z * np.eye(dim))
            band_after = t_after[n_k:n_prev]
            band_ok = bool(np.all(band_after >= thr))
            guard = 1.0 - delta / cfg.threshold(k - 1)
            upper_ok = bool(np.all(
                t_after[n_prev:] >= guard * gd.t[n_prev:] - 1e-12 * gd.t[-1]
            ))
            if band_ok and upper_ok:
                p_cur = p_try
                total_q = total_q + delta * q_unit
                if alpha is not None:
                    scaled = delta * alpha / sup
                    total_alpha = scaled if total_alpha is None \
                        else total_alpha + scaled
                meta = dict(meta)
                meta["sup_q"] = sup
                trace.stages.append(StageRecord(
                    k, n_prev, n_k, thr, "perturb", delta, c, retry,
                    band_before.tolist(), band_after.tolist(), meta,
                ))
                committed = True
                break
            last_fail = (f"band_ok={band_ok} upper_ok={upper_ok} "
                         f"min_band={band_after.min():.3e} floor={thr:.3e}")
        if not committed:
            raise CertificateError(
                f"stage {k} failed after {cfg.max_retries + 1} attempts "
                f"({last_fail})"
            )

    trace.total_potential = total_q
    trace.total_alpha = total_alpha
    trace.final_t = _t_ascending(p_cur - z * np.eye(dim))
    if enabled and not trace.certified():
        raise CertificateError("final ladder violates a certified stage floor")
    return trace


# ---------------------------------------------------------------------------
# log-determinant bounds


@dataclass(frozen=True)
class LogDetBounds:
    actual: float
    phi_term: float
    lower: float
    upper: float
    contained: bool
    c_needed: float
    relative_min_ratio: float | None


def logdet_bounds(p_dz: np.ndarray, phi_value: float, h: float, n: int,
                  eps0_lab: float, c_budget: float,
                  t_plain: np.ndarray | None = None,
                  n_compare: int | None = None) -> LogDetBounds:
    """Two-sided containment of log|det| around the phase-space term.

    The budget is c_budget * eps0_lab * h**-n on both sides; ``c_needed``
    reports the constant the actual gap would have required.  When the
    singular values of the shifted absolute operator are supplied, the
    minimal ratio t_k(relative)/t_k(absolute) over the first ``n_compare``
    indices is reported as the measured surrogate of the resolvent-quotient
    comparison.
    """
    actual = log_abs_det_lu(np.asarray(p_dz, dtype=complex))
    phi_term = phi_value * h ** (-n)
    budget = c_budget * eps0_lab * h ** (-n)
    lower, upper = phi_term - budget, phi_term + budget
    c_needed = abs(actual - phi_term) * h ** n / eps0_lab \
        if not math.isinf(actual) else math.inf
    ratio = None
    if t_plain is not None:
        t_rel = _t_ascending(p_dz)
        m = n_compare or min(t_rel.size, len(t_plain))
        tp = np.asarray(t_plain)[:m]
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = float(np.min(t_rel[:m] / np.maximum(tp, 1e-300)))
    return LogDetBounds(actual, phi_term, lower, upper,
                        bool(lower <= actual <= upper), c_needed, ratio)
