"""Closed-form identification of (A, B, C) from a pre-collected batch.

The stacked outputs satisfy ``Y = Z [X0_mean; U] + noise`` with
``Z = [G, H (I_L kron B)]``, where ``G`` is the depth-L observability matrix
and ``H`` the block lower-triangular Toeplitz matrix of Markov-like blocks
``C A^j``. The estimate ``Z# = Y [X0_mean; U]^+`` yields shifted blocks of
``G`` from which A#, B#, C# follow by least squares.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import TrajectoryBatch, persistent_excitation_check
from .errors import AssumptionViolation, DimensionError, SingularityError
from .system import observability_matrix

# explicit normal-equation formula below this condition number, SVD above
KAPPA_SWITCH = 1e6
# relative singular-value gate for G1#
G1_RANK_TOL = 1e-8


def _svd_pinv(M, sigma, U, Vt):
    return (Vt.T / sigma) @ U.T


def right_inverse(M):
    """Right inverse ``M^T (M M^T)^{-1}`` of a full-row-rank ``M`` (r <= c).

    Raises:
        SingularityError: ``M`` is numerically row-rank deficient.
    """
    M = np.atleast_2d(np.asarray(M, dtype=float))
    r, c = M.shape
    if r > c:
        raise SingularityError(f"a {r}x{c} matrix has no right inverse", sigma_min=0.0)
    U, s, Vt = np.linalg.svd(M, full_matrices=False)
    tol = max(M.shape) * np.finfo(float).eps * (s[0] if s.size else 0.0)
    if s.size == 0 or s[-1] <= tol:
        raise SingularityError(
            f"matrix is row-rank deficient (sigma_min={s[-1] if s.size else 0.0:.3e})",
            sigma_min=float(s[-1]) if s.size else 0.0,
        )
    if s[0] / s[-1] <= KAPPA_SWITCH:
        return M.T @ np.linalg.inv(M @ M.T)
    return _svd_pinv(M, s, U, Vt)


def left_inverse(M):
    """Left inverse ``(M^T M)^{-1} M^T`` of a full-column-rank ``M``."""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    return right_inverse(M.T).T


def estimate_Z(batch: TrajectoryBatch):
    """``Z# = Y [X0_mean; U]^+``.

    Raises:
        AssumptionViolation: the excitation rank condition fails.
    """
    ok, rank, sigma_min = persistent_excitation_check(batch)
    if not ok:
        raise AssumptionViolation(
            f"[X0_mean; U] is not full row rank: rank {rank} < n + Lm = "
            f"{batch.n + batch.L * batch.m} (sigma_min={sigma_min:.3e}); collect more experiments"
        )
    return batch.Y @ right_inverse(batch.regressor())


def extract_blocks(Z, dims):
    """Split ``Z#`` into (G1, G2, G3, G4).

    Args:
        Z: ((L+1)p x (n+Lm)) estimate.
        dims: (L, n, m, p); a 5-tuple (N, L, n, m, p) is also accepted.

    Returns:
        G1 = Z[:Lp, :n], G2 = Z[p:, :n], G3 = Z[p:, n:n+m], G4 = Z[:p, :n].
    """
    if len(dims) == 5:
        dims = dims[1:]
    L, n, m, p = (int(d) for d in dims)
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    if Z.shape != ((L + 1) * p, n + L * m):
        raise DimensionError(f"Z must be {(L + 1) * p}x{n + L * m} for (L,n,m,p)={dims}, got {Z.shape}")
    G1 = Z[: L * p, :n]
    G2 = Z[p:, :n]
    G3 = Z[p:, n : n + m]
    G4 = Z[:p, :n]
    return G1, G2, G3, G4


def recover_matrices(blocks):
    """``A# = G1^+ G2``, ``B# = G1^+ G3``, ``C# = G4``.

    Raises:
        SingularityError: G1# is (relatively) rank deficient, i.e. the data
            do not pin an observable realization.
    """
    G1, G2, G3, G4 = blocks
    s = np.linalg.svd(G1, compute_uv=False)
    if s.size < G1.shape[1] or s[-1] <= G1_RANK_TOL * s[0]:
        smin = float(s[-1]) if s.size else 0.0
        raise SingularityError(
            f"G1# lacks full column rank (sigma_min={smin:.3e}); the identified "
            "observability blocks cannot pin A#, B#",
            sigma_min=smin,
        )
    G1_inv = left_inverse(G1)
    return G1_inv @ G2, G1_inv @ G3, np.array(G4)


@dataclass(frozen=True, eq=False)
class IdentifiedModel:
    """Identified realization together with the blocks it came from."""

    Z: np.ndarray
    G1: np.ndarray
    G2: np.ndarray
    G3: np.ndarray
    G4: np.ndarray
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    L: int
    diagnostics: dict = field(default_factory=dict)

    @property
    def n(self):
        return self.A.shape[0]

    @property
    def m(self):
        return self.B.shape[1]

    @property
    def p(self):
        return self.C.shape[0]

    @classmethod
    def from_matrices(cls, A, B, C, L=None):
        """Wrap known matrices (e.g. the truth) with the blocks they imply."""
        A = np.atleast_2d(np.asarray(A, dtype=float))
        B = np.atleast_2d(np.asarray(B, dtype=float))
        C = np.atleast_2d(np.asarray(C, dtype=float))
        L = A.shape[0] if L is None else int(L)
        Z = true_Z_from(A, B, C, L)
        G1, G2, G3, G4 = extract_blocks(Z, (L, A.shape[0], B.shape[1], C.shape[0]))
        return cls(Z=Z, G1=G1, G2=G2, G3=G3, G4=G4, A=A, B=B, C=C, L=L)

    def to_dict(self):
        return {
            "L": self.L,
            "A": self.A.tolist(),
            "B": self.B.tolist(),
            "C": self.C.tolist(),
            "Z": self.Z.tolist(),
            "diagnostics": dict(self.diagnostics),
        }

    @classmethod
    def from_dict(cls, d):
        L = int(d["L"])
        A, B, C = (np.asarray(d[k], dtype=float) for k in ("A", "B", "C"))
        Z = np.asarray(d["Z"], dtype=float)
        G1, G2, G3, G4 = extract_blocks(Z, (L, A.shape[0], B.shape[1], C.shape[0]))
        return cls(Z=Z, G1=G1, G2=G2, G3=G3, G4=G4, A=A, B=B, C=C, L=L, diagnostics=d.get("diagnostics", {}))

    def save_json(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    @classmethod
    def load_json(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))


def identify(batch: TrajectoryBatch) -> IdentifiedModel:
    """Full identification pipeline with conditioning diagnostics."""
    M = batch.regressor()
    sigma_M = np.linalg.svd(M, compute_uv=False)
    Z = estimate_Z(batch)
    blocks = extract_blocks(Z, batch.dims)
    A, B, C = recover_matrices(blocks)
    sigma_G1 = np.linalg.svd(blocks[0], compute_uv=False)
    diagnostics = {
        "sigma_min_regressor": float(sigma_M[-1]),
        "sigma_max_regressor": float(sigma_M[0]),
        "sigma_min_G1": float(sigma_G1[-1]),
        "residual_fro": float(np.linalg.norm(batch.Y - Z @ M)),
    }
    return IdentifiedModel(Z=Z, G1=blocks[0], G2=blocks[1], G3=blocks[2], G4=blocks[3],
                           A=A, B=B, C=C, L=batch.L, diagnostics=diagnostics)


def block_H(A, C, L):
    """((L+1)p x Ln) block lower-triangular matrix; block (h, j) is ``C A^{h-1-j}`` for j < h."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    C = np.atleast_2d(np.asarray(C, dtype=float))
    n, p = A.shape[0], C.shape[0]
    O = observability_matrix(A, C, max(L - 1, 0))
    H = np.zeros(((L + 1) * p, L * n))
    for h in range(1, L + 1):
        for j in range(h):
            d = h - 1 - j
            H[h * p : (h + 1) * p, j * n : (j + 1) * n] = O[d * p : (d + 1) * p]
    return H


def true_Z_from(A, B, C, L):
    """``[G, H (I_L kron B)]`` built from known matrices."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    C = np.atleast_2d(np.asarray(C, dtype=float))
    G = observability_matrix(A, C, L)
    HB = block_H(A, C, L) @ np.kron(np.eye(L), B)
    return np.hstack([G, HB])


def true_Z(sys, L):
    return true_Z_from(sys.A, sys.B, sys.C, L)


def identification_error(Z_hat, sys, L):
    """Spectral norm ``||Z# - Z||_2`` against the generating system."""
    return float(np.linalg.norm(np.asarray(Z_hat) - true_Z(sys, L), 2))
