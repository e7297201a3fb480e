"""Spectral discretization on the torus and the reference eigenbasis.

All operators live in node space on the uniform grid x_j = 2*pi*j/size.
Frequency factors are diagonal in mode space and conjugated back by the
unitary discrete Fourier matrix; position factors are diagonal in node
space.  Mixed separable terms are symmetrized, which preserves the
complex-symmetry that the border constructions downstream rely on.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import RefusalError, UnresolvedError
from .symbols import SymbolModel, TWO_PI


class SpectralBasis:
    """Fourier collocation basis with modes -k_max..k_max (odd size).

    Treated as immutable.  ``weight`` is the quadrature weight of the node
    inner product <u, v> = weight * sum(u * conj(v)) that makes the discrete
    setup mimic the continuum L2 pairing.
    """

    kind = "fourier"

    def __init__(self, h: float, k_max: int, period: float = TWO_PI):
        if h <= 0 or k_max < 1:
            raise RefusalError("need h > 0 and k_max >= 1")
        self.h = float(h)
        self.k_max = int(k_max)
        self.period = float(period)
        self.size = 2 * self.k_max + 1
        self.modes = np.arange(-self.k_max, self.k_max + 1)
        self.nodes = self.period * np.arange(self.size) / self.size
        self.weight = self.period / self.size
        self._fourier = np.exp(1j * np.outer(self.nodes, self.modes)) \
            / math.sqrt(self.size)

    @property
    def resolved_xi(self) -> float:
        """Largest |xi| the grid resolves with a factor-2 safety margin."""
        return 0.5 * self.h * self.k_max

    def to_modes(self, u: np.ndarray) -> np.ndarray:
        return self._fourier.conj().T @ u

    def to_nodes(self, c: np.ndarray) -> np.ndarray:
        return self._fourier @ c

    def xi_matrix(self, b) -> np.ndarray:
        """Node-space matrix of the frequency factor b(h * k)."""
        diag = np.asarray(b(self.h * self.modes), dtype=complex)
        return (self._fourier * diag) @ self._fourier.conj().T

    def x_matrix(self, a) -> np.ndarray:
        return np.diag(np.asarray(a(self.nodes), dtype=complex))


def basis_for(h: float, xi_needed: float, period: float = TWO_PI) -> SpectralBasis:
    """Smallest basis whose resolved window covers ``xi_needed``."""
    k = max(int(math.ceil(2.0 * xi_needed / h)), 4)
    return SpectralBasis(h, k, period)


@dataclass(frozen=True)
class DiscretizedOperator:
    matrix: np.ndarray
    basis: SpectralBasis
    source: str
    hermitian_defect: float

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def norm(self) -> float:
        return float(np.linalg.norm(self.matrix, 2))

    def shifted(self, z: complex) -> np.ndarray:
        return self.matrix - z * np.eye(self.dim)

    def with_potential(self, q_nodes: np.ndarray,
                       coupling: complex) -> "DiscretizedOperator":
        m = self.matrix + coupling * np.diag(np.asarray(q_nodes, dtype=complex))
        return DiscretizedOperator(m, self.basis,
                                   f"{self.source}+potential",
                                   _herm_defect(m))


def _herm_defect(m: np.ndarray) -> float:
    return float(np.linalg.norm(m - m.conj().T, 2) / 2.0)


def discretize(sym: SymbolModel, basis: SpectralBasis) -> DiscretizedOperator:
    """Quantize a separable symbol on the given basis.

    Terms with both an x and a xi factor are symmetrized as (AB + BA)/2.
    Symbols without a separable decomposition are refused.
    """
    if sym.terms is None:
        raise RefusalError(
            f"symbol {sym.name!r} has no separable decomposition; unsupported"
        )
    if abs(sym.period - basis.period) > 1e-12:
        raise RefusalError("symbol and basis periods disagree")
    n = basis.size
    out = np.zeros((n, n), dtype=complex)
    for t in sym.terms:
        if t.x_part is None and t.xi_part is None:
            out += t.const * np.eye(n)
        elif t.xi_part is None:
            out += t.const * basis.x_matrix(t.x_part)
        elif t.x_part is None:
            out += t.const * basis.xi_matrix(t.xi_part)
        else:
            a = basis.x_matrix(t.x_part)
            b = basis.xi_matrix(t.xi_part)
            out += t.const * 0.5 * (a @ b + b @ a)
    return DiscretizedOperator(out, basis, sym.name, _herm_defect(out))


# ---------------------------------------------------------------------------
# reference operator


@dataclass(frozen=True)
class ReferenceOperator:
    """Eigenbasis of the semiclassical reference Laplacian on the torus.

    ``mu`` holds the square roots of the eigenvalues of h**2 * (-Laplacian),
    ascending with ties broken by mode index, and ``vectors`` the node values
    of the L2-normalized eigenfunctions exp(i*k*x)/sqrt(2*pi) in the same
    order.
    """

    basis: SpectralBasis
    mu: np.ndarray
    modes: np.ndarray
    vectors: np.ndarray

    @property
    def h(self) -> float:
        return self.basis.h

    @property
    def weight(self) -> float:
        return self.basis.weight

    @property
    def n_kept(self) -> int:
        return self.mu.size

    def project(self, u_nodes: np.ndarray) -> np.ndarray:
        """Coefficients <u, eps_k> in the weighted node inner product."""
        return self.weight * (self.vectors.conj().T @ u_nodes)

    def synthesize(self, coeffs: np.ndarray) -> np.ndarray:
        return self.vectors @ coeffs

    def gram(self) -> np.ndarray:
        return self.weight * (self.vectors.conj().T @ self.vectors)


def reference_eigenbasis(basis: SpectralBasis,
                         n_keep: int | None = None) -> ReferenceOperator:
    if n_keep is None:
        n_keep = basis.size
    if not 1 <= n_keep <= basis.size:
        raise RefusalError("n_keep out of range")
    mu_all = basis.h * np.abs(basis.modes)
    order = np.lexsort((basis.modes, mu_all))[:n_keep]
    modes = basis.modes[order]
    mu = mu_all[order]
    vectors = np.exp(1j * np.outer(basis.nodes, modes)) / math.sqrt(TWO_PI)
    return ReferenceOperator(basis, mu, modes, vectors)


def reference_matrix(basis: SpectralBasis) -> np.ndarray:
    """Node-space matrix of h**2 times the reference Laplacian."""
    return basis.xi_matrix(lambda xi: np.asarray(xi) ** 2)


# ---------------------------------------------------------------------------
# norms


def sobolev_norm(coeffs: np.ndarray, mu: np.ndarray, s: float) -> float:
    """Semiclassical Sobolev norm from eigenbasis coefficients."""
    c = np.asarray(coeffs)
    m = np.asarray(mu, dtype=float)
    if c.shape != m.shape:
        raise RefusalError("coefficients and mu ladder differ in length")
    return float(np.sqrt(np.sum((1.0 + m ** 2) ** s * np.abs(c) ** 2)))


def sobolev_norm_nodes(ref: ReferenceOperator, u_nodes: np.ndarray,
                       s: float) -> float:
    """Sobolev norm of node values, exact when ref keeps the full basis."""
    if ref.n_kept != ref.basis.size:
        raise RefusalError("node-level Sobolev norm needs the full basis")
    return sobolev_norm(ref.project(u_nodes), ref.mu, s)


def sup_norm(u_nodes: np.ndarray) -> float:
    return float(np.max(np.abs(u_nodes)))


def product_inequality_probe(ref: ReferenceOperator, u_nodes: np.ndarray,
                             v_nodes: np.ndarray, s: float) -> float:
    """Ratio ||u*v||_{H^s} / (h**(-1/2) * ||u||_{H^s} * ||v||_{H^s}).

    The algebra-property constant for the semiclassical Sobolev scale; the
    probe requires s > 1/2 so the continuum inequality applies.
    """
    if not s > 0.5:
        raise RefusalError("product probe needs s > n/2")
    nu = sobolev_norm_nodes(ref, u_nodes, s)
    nv = sobolev_norm_nodes(ref, v_nodes, s)
    nuv = sobolev_norm_nodes(ref, np.asarray(u_nodes) * np.asarray(v_nodes), s)
    return nuv * math.sqrt(ref.h) / (nu * nv)


# ---------------------------------------------------------------------------
# relative operator


def relative_operator(p_op: DiscretizedOperator, pt_op: DiscretizedOperator,
                      z: complex, min_sv: float = 1e-8) -> DiscretizedOperator:
    """(P_tilde - z)**(-1) (P - z), refusing near-singular denominators."""
    if p_op.basis is not pt_op.basis and p_op.dim != pt_op.dim:
        raise RefusalError("operators live on different bases")
    den = pt_op.shifted(z)
    smin = float(scipy.linalg.svdvals(den)[-1])
    if smin < min_sv * max(np.linalg.norm(den, 2), 1.0):
        raise RefusalError(
            f"shifted reference operator nearly singular (s_min={smin:.3e})"
        )
    x = scipy.linalg.solve(den, p_op.shifted(z))
    return DiscretizedOperator(x, p_op.basis,
                               f"relative({p_op.source})", _herm_defect(x))


def require_resolved(basis: SpectralBasis, xi_needed: float) -> None:
    if xi_needed > basis.resolved_xi:
        raise UnresolvedError(
            f"window needs |xi| <= {xi_needed:.3g} but the grid only "
            f"resolves {basis.resolved_xi:.3g}"
        )
