"""Dense linear-algebra kernel shared by the oracles.

Everything here works with orthonormal bases of subspaces of R^n that are
supported on an active index set F.  Eigen-decompositions are dense
symmetric solves; the supported desk scale is n <= 4096 (oracle calls are
rare relative to walk steps, so an O(n^3) refresh is affordable).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

__all__ = [
    "SubspaceBasis",
    "orth_complement_within",
    "bottom_eigs",
    "quadratic_subspace",
    "sign_select",
]

# Singular values below RANK_TOL * largest are treated as zero in complements.
RANK_TOL = 1e-10
_ORTHO_TOL = 1e-9


@dataclass
class SubspaceBasis:
    """Orthonormal basis of a subspace of R^n supported on the index set F.

    ``basis`` has shape (n, dim); every column vanishes outside ``ambient``.
    """

    ambient: np.ndarray  # sorted active indices, shape (|F|,)
    basis: np.ndarray  # shape (n, dim), orthonormal columns
    dim: int = field(init=False)

    def __post_init__(self):
        self.ambient = np.asarray(self.ambient, dtype=np.int64)
        self.basis = np.asarray(self.basis, dtype=np.float64)
        if self.basis.ndim != 2:
            raise ValueError("basis must be a 2-d array of column vectors")
        self.dim = self.basis.shape[1]

    def check(self, tol: float = _ORTHO_TOL) -> None:
        """Raise if columns are not orthonormal or leak outside the support."""
        g = self.basis.T @ self.basis
        if not np.allclose(g, np.eye(self.dim), atol=tol):
            raise ValueError("basis columns are not orthonormal")
        outside = np.ones(self.basis.shape[0], dtype=bool)
        outside[self.ambient] = False
        if self.dim and np.abs(self.basis[outside]).max(initial=0.0) > tol:
            raise ValueError("basis vector supported outside the ambient set")


def _embed(F: np.ndarray, local: np.ndarray, n: int) -> np.ndarray:
    out = np.zeros((n, local.shape[1]))
    out[F] = local
    return out


def orth_complement_within(F, constraints, n: int | None = None) -> SubspaceBasis:
    """Orthonormal basis of {v supported on F : <v, c> = 0 for all c}.

    ``constraints`` is an iterable of length-n vectors (their restriction to F
    is what matters).  Dimension is at least |F| - #constraints.
    """
    F = np.asarray(sorted(set(np.asarray(F, dtype=np.int64).tolist())), dtype=np.int64)
    if F.size == 0:
        raise ValueError("empty active set")
    cons = [np.asarray(c, dtype=np.float64) for c in constraints]
    if n is None:
        n = cons[0].shape[0] if cons else int(F.max()) + 1
    k = F.size
    if not cons:
        local = np.eye(k)
        return SubspaceBasis(F, _embed(F, local, n))
    C = np.stack([c[F] for c in cons], axis=0)  # (#cons, k)
    # Null space of C via SVD with a relative rank cutoff.
    u, s, vt = np.linalg.svd(C, full_matrices=True)
    smax = s[0] if s.size else 0.0
    rank = int((s > RANK_TOL * max(smax, 1.0)).sum())
    local = vt[rank:].T  # (k, k-rank)
    return SubspaceBasis(F, _embed(F, local, n))


def restricted_quadratic_form(weights, rows, basis: SubspaceBasis) -> np.ndarray:
    """Matrix of sum_i w_i <u_i, .>^2 expressed in the basis coordinates."""
    w = np.asarray(weights, dtype=np.float64)
    U = np.asarray(rows, dtype=np.float64)
    proj = U @ basis.basis  # (m, dim)
    return proj.T @ (w[:, None] * proj)


def bottom_eigs(weights, rows, within: SubspaceBasis, d: int) -> SubspaceBasis:
    """d-dimensional subspace of ``within`` with the smallest Rayleigh quotients.

    The quadratic form is ``R = sum_i w_i u_i u_i^T`` restricted to ``within``.
    Every unit vector of the result has ``v^T R v`` at most the d-th smallest
    eigenvalue of the restriction (up to solver tolerance).
    """
    if d > within.dim:
        raise ValueError(f"requested {d} dimensions from a {within.dim}-dim subspace")
    M = restricted_quadratic_form(weights, rows, within)
    vals, vecs = sla.eigh(M)
    local = vecs[:, :d]
    return SubspaceBasis(within.ambient, within.basis @ local)


def quadratic_subspace(w, B, alpha: float, F) -> SubspaceBasis:
    """Subspace on which a weighted squared row-sum form is alpha-dominated.

    Returns a basis of codimension at most ceil(alpha * |F|) inside R^F such
    that every vector delta in the span satisfies

        sum_i w_i (sum_j B_ij delta_j)^2
            <= (1/alpha) * sum_i w_i sum_j B_ij^2 delta_j^2.

    Construction: rescale coordinates by the weighted column norms so the
    right-hand side becomes |delta|^2/alpha, then drop the top
    ceil(alpha*|F|) eigenspace of the rescaled Gram operator (whose trace is
    at most |F|).  Columns with zero weighted norm are unconstrained.
    """
    if not (0.0 < alpha < 1.0):
        raise ValueError("alpha must lie in (0,1)")
    w = np.asarray(w, dtype=np.float64)
    if np.any(w < 0):
        raise ValueError("weights must be nonnegative")
    B = np.asarray(B, dtype=np.float64)
    F = np.asarray(sorted(set(np.asarray(F, dtype=np.int64).tolist())), dtype=np.int64)
    n = B.shape[1]
    k = F.size
    Bf = np.sqrt(w)[:, None] * B[:, F]  # (m, k)
    g = np.linalg.norm(Bf, axis=0)  # weighted column norms on F
    live = g > 0.0
    if not live.any():
        return SubspaceBasis(F, _embed(F, np.eye(k), n))
    ncut = int(np.ceil(alpha * k))
    C = Bf[:, live] / g[live]
    G = C.T @ C
    vals, vecs = sla.eigh(G)
    top = vecs[:, -ncut:] if ncut > 0 else vecs[:, :0]
    # Constraints act on the rescaled coordinates: <e, g * delta|_live> = 0.
    cons = np.zeros((top.shape[1], n))
    cols = F[live]
    cons[:, cols] = (top * g[live][:, None]).T
    return orth_complement_within(F, list(cons), n=n)


def sign_select(g, delta):
    """Return +delta if <g, delta> <= 0 else -delta (ties keep +delta)."""
    g = np.asarray(g, dtype=np.float64)
    delta = np.asarray(delta, dtype=np.float64)
    return delta if float(g @ delta) <= 0.0 else -delta
