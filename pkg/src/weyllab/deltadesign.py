"""Point designs that make coupling matrices provably well conditioned.

Given N functions on a domain, greedily pick N evaluation points that keep
the matrix of function values far from singular.  The certified floors come
from the spectrum of the Gramian of the functions: at step M some point must
sit at squared distance at least (sum of the N-M+1 smallest Gramian
eigenvalues)/vol from the span of the already chosen value vectors, and
chaining those floors bounds |det| of the value matrix and the singular
values of the induced point-mass coupling matrix from below.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import InternalConsistencyError, RefusalError
from .operators import ReferenceOperator, sobolev_norm

TWO_PI = 2.0 * math.pi


# ---------------------------------------------------------------------------
# frames


@dataclass(frozen=True)
class Frame:
    """N functions sampled on a quadrature grid.

    ``values[g, j]`` is e_j at grid point g; ``weights`` are the quadrature
    weights, so Gramian entries are plain weighted sums and every certificate
    below holds exactly on the grid rather than up to quadrature error.
    """

    points: np.ndarray
    weights: np.ndarray
    values: np.ndarray

    @property
    def n_funcs(self) -> int:
        return self.values.shape[1]

    @property
    def volume(self) -> float:
        return float(np.sum(self.weights))

    def gram(self) -> np.ndarray:
        w = self.weights[:, None] * self.values
        return self.values.conj().T @ w


def fourier_frame(n_grid: int, n_funcs: int,
                  period: float = TWO_PI) -> Frame:
    """The orthonormal family exp(i*j*x)/sqrt(2*pi), j = 1..N, on a grid."""
    if n_grid <= 2 * n_funcs:
        raise RefusalError("grid too coarse for the requested frame")
    x = period * np.arange(n_grid) / n_grid
    j = np.arange(1, n_funcs + 1)
    values = np.exp(1j * np.outer(x, j)) / math.sqrt(TWO_PI)
    weights = np.full(n_grid, period / n_grid)
    return Frame(x, weights, values)


def frame_from_columns(cols: np.ndarray, points: np.ndarray,
                       weight: float) -> Frame:
    """Frame of L2-normalized functions from unit node-space columns."""
    w = np.full(points.shape[0], float(weight))
    return Frame(points, w, np.asarray(cols) / math.sqrt(weight))


# ---------------------------------------------------------------------------
# greedy selection


@dataclass(frozen=True)
class PointSelection:
    indices: np.ndarray
    points: np.ndarray
    value_matrix: np.ndarray        # column nu = values of all e_j at a_nu
    distances: np.ndarray           # achieved greedy distances c_M
    gram_tail_sums: np.ndarray      # E_M = sum of the N-M+1 smallest eigenvalues
    gram_eigs: np.ndarray
    gram_deviation: float           # ||Gram - I||, 0 for orthonormal frames
    volume: float

    @property
    def n_points(self) -> int:
        return self.indices.size

    def log_abs_det(self) -> float:
        return float(np.linalg.slogdet(self.value_matrix)[1])

    def det_floor_log(self) -> float:
        """Certified lower bound for log |det| of the value matrix."""
        n = self.n_points
        return float(0.5 * np.sum(np.log(self.gram_tail_sums))
                     - 0.5 * n * math.log(self.volume))


def select_points(frame: Frame, n_points: int | None = None) -> PointSelection:
    """Greedy farthest-from-span selection of evaluation points.

    Step M picks the grid point maximizing the distance of its value vector
    to the span of the vectors already chosen (ties: first index).  The
    achieved distance can never fall below the Gramian floor when both are
    computed on the same grid; if it does, something inconsistent happened
    and we raise instead of certifying.
    """
    n = frame.n_funcs if n_points is None else int(n_points)
    if not 1 <= n <= frame.n_funcs:
        raise RefusalError("n_points out of range")
    gram = frame.gram()
    eigs = np.sort(scipy.linalg.eigvalsh(gram))
    tail = np.array([float(np.sum(eigs[: frame.n_funcs - m + 1]))
                     for m in range(1, n + 1)])
    vol = frame.volume

    rows = frame.values
    dist2 = np.sum(np.abs(rows) ** 2, axis=1)
    chosen = []
    dists = []
    basis = []
    for m in range(n):
        idx = int(np.argmax(dist2))
        d2 = float(dist2[idx])
        floor = tail[m] / vol
        if d2 < floor * (1.0 - 1e-9) - 1e-15:
            raise InternalConsistencyError(
                f"greedy distance {d2:.6e} fell below the certified floor "
                f"{floor:.6e} at step {m + 1}"
            )
        chosen.append(idx)
        dists.append(math.sqrt(max(d2, 0.0)))
        vec = rows[idx].copy()
        for b in basis:
            vec -= np.vdot(b, vec) * b
        nv = np.linalg.norm(vec)
        if nv > 0:
            vec /= nv
            basis.append(vec)
            proj = rows @ vec.conj()
            dist2 = np.maximum(dist2 - np.abs(proj) ** 2, 0.0)

    idxs = np.array(chosen)
    value_matrix = rows[idxs].T.copy()
    gram_dev = float(np.linalg.norm(gram - np.eye(frame.n_funcs), 2))
    return PointSelection(idxs, frame.points[idxs], value_matrix,
                          np.array(dists), tail, eigs, gram_dev, vol)


# ---------------------------------------------------------------------------
# coupling matrices


def coupling_matrix(q_nodes: np.ndarray, e_values: np.ndarray,
                    f_values: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Matrix of the pairings integral(q * e_k * conj(f_j)), j, k = 1..N."""
    wq = np.asarray(weights) * np.asarray(q_nodes)
    return f_values.conj().T @ (wq[:, None] * e_values)


def point_mass_nodes(frame: Frame, indices) -> np.ndarray:
    """Node representation of a sum of unit point masses.

    Each mass is a weighted node indicator with weight 1/w, so that the
    grid pairing integral(q * phi) returns phi at the point exactly.
    """
    q = np.zeros(frame.points.shape[0])
    for i in np.atleast_1d(indices):
        q[int(i)] += 1.0 / frame.weights[int(i)]
    return q


def point_mass_coupling(sel: PointSelection) -> np.ndarray:
    """Coupling matrix of the selected point masses in the conjugate pairing.

    With f_j = conj(e_j) the pairing drops the conjugation and the matrix is
    exactly E @ E.T for the value matrix E, hence complex symmetric with
    |det| = |det E|**2.
    """
    e = sel.value_matrix
    return e @ e.T


def coupling_det_floor_log(sel: PointSelection) -> float:
    """Certified log |det| floor for the point-mass coupling matrix."""
    return 2.0 * sel.det_floor_log()


def coupling_singular_floor(sel: PointSelection, k: int,
                            s1: float) -> float:
    """Certified floor for the k-th largest singular value of the coupling.

    Uses |det M| >= prod(E_j)/vol**N together with the measured largest
    singular value ``s1``: the product of all N singular values is |det M|
    and each of the k-1 leading ones is at most s1.
    """
    n = sel.n_points
    if not 1 <= k <= n:
        raise RefusalError("k out of range")
    log_det_floor = coupling_det_floor_log(sel)
    log_floor = (log_det_floor - (k - 1) * math.log(s1)) / (n - k + 1)
    return math.exp(log_floor)


# ---------------------------------------------------------------------------
# delta approximation


@dataclass(frozen=True)
class DeltaApproximation:
    """Band-limited approximation of a point mass at ``point``.

    ``alpha`` holds the coefficients conj(eps_k(a)) for the kept modes
    (mu_k <= cutoff); ``remainder_norm`` is the dual Sobolev norm of the
    discarded tail, computed exactly as the weighted tail sum over the
    modes the reference basis resolves.
    """

    point: float
    point_index: int
    alpha: np.ndarray
    mu: np.ndarray
    cutoff: float
    remainder_norm: float

    def nodes(self, ref: ReferenceOperator) -> np.ndarray:
        mask = ref.mu <= self.cutoff
        return ref.vectors[:, mask] @ self.alpha


def approximate_delta(point_index: int, ref: ReferenceOperator,
                      cutoff: float, s: float) -> DeltaApproximation:
    """Truncate the eigenbasis expansion of a point mass at a grid node."""
    if not 0 <= point_index < ref.basis.size:
        raise RefusalError("point index outside the grid")
    vals = ref.vectors[point_index, :]
    mask = ref.mu <= cutoff
    if not mask.any():
        raise RefusalError("cutoff keeps no modes")
    if mask.all():
        raise RefusalError("cutoff keeps every resolved mode; tail is empty")
    alpha = np.conj(vals[mask])
    tail = (1.0 + ref.mu[~mask] ** 2) ** (-s) * np.abs(vals[~mask]) ** 2
    return DeltaApproximation(
        float(ref.basis.nodes[point_index]), int(point_index),
        alpha, ref.mu[mask], float(cutoff), math.sqrt(float(tail.sum())),
    )


def frame_constant(ref: ReferenceOperator, e_values: np.ndarray,
                   s: float, weight: float) -> float:
    """Operator norm of coefficients -> sum(c_j e_j) into the Sobolev space."""
    coeffs = weight * (ref.vectors.conj().T @ e_values)
    ws = (1.0 + ref.mu ** 2) ** (s / 2.0)
    return float(np.linalg.norm(ws[:, None] * coeffs, 2))


def coupling_remainder_bound(remainder_norm: float, h: float, n: int,
                             frame_const: float,
                             product_const: float) -> float:
    """Operator-norm bound for the coupling matrix of a truncation remainder.

    Chains the dual pairing through the product inequality on the Sobolev
    scale: ||M_r|| <= product_const * frame_const**2 * h**(-n/2) * ||r||.
    """
    return product_const * frame_const ** 2 * h ** (-n / 2.0) * remainder_norm


def truncation_remainder_sobolev(ref: ReferenceOperator, q_exact: np.ndarray,
                                 q_trunc: np.ndarray, s: float) -> float:
    """Dual Sobolev norm of q_exact - q_trunc via full-basis coefficients."""
    coeffs = ref.project(q_exact - q_trunc)
    return sobolev_norm(coeffs, ref.mu, -s)
