"""Closed-form sample-complexity constants.

These are analysis tools: most inputs are ground-truth quantities (norms of
the true G, H, A, B and G1), so they are only meaningful in studies where the
generating system is known. Logarithms are natural.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy.linalg import solve_discrete_lyapunov

from .control import lmi_feasible
from .errors import ConstraintInfeasible, InstabilityError
from .identification import block_H
from .system import observability_matrix, spectral_radius


@dataclass(frozen=True)
class BoundsParams:
    """Scalar inputs of the bound formulas (isotropic noise levels)."""

    n: int
    m: int
    p: int
    L: int
    sigma_xi: float
    sigma_omega: float
    sigma_nu: float
    sigma_x0: float
    sigma_u: float
    rho_G: float
    rho_H: float
    norm_A: float
    norm_B: float
    norm_G1: float
    lam_min_G1: float

    @property
    def sigma_max(self):
        return max(self.sigma_x0, self.sigma_u)

    @property
    def sigma_min(self):
        return min(self.sigma_x0, self.sigma_u)


def _iso_sigma(M):
    """Standard deviation of an isotropic covariance; ``sqrt(lambda_max)`` otherwise."""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    return float(np.sqrt(max(np.linalg.eigvalsh(M)[-1], 0.0)))


def params_from_system(sys, L, sigma_x0=100.0, sigma_u=100.0, P_xi=None):
    """Collect :class:`BoundsParams` from a known plant.

    Non-isotropic covariances are summarized by the square root of their
    largest eigenvalue, which keeps the bounds conservative.
    """
    G = observability_matrix(sys.A, sys.C, L)
    H = block_H(sys.A, sys.C, L)
    G1 = G[: L * sys.p]
    return BoundsParams(
        n=sys.n,
        m=sys.m,
        p=sys.p,
        L=int(L),
        sigma_xi=_iso_sigma(sys.P0 if P_xi is None else P_xi),
        sigma_omega=_iso_sigma(sys.Q),
        sigma_nu=_iso_sigma(sys.R),
        sigma_x0=float(sigma_x0),
        sigma_u=float(sigma_u),
        rho_G=float(np.linalg.norm(G, 2)),
        rho_H=float(np.linalg.norm(H, 2)),
        norm_A=float(np.linalg.norm(sys.A, 2)),
        norm_B=float(np.linalg.norm(sys.B, 2)),
        norm_G1=float(np.linalg.norm(G1, 2)),
        lam_min_G1=float(np.linalg.eigvalsh(G1.T @ G1)[0]),
    )


def _check_delta(delta):
    if not 0.0 < delta < 1.0:
        raise ValueError(f"delta must lie in (0, 1), got {delta}")


def compute_MZ(params: BoundsParams) -> float:
    """``16 sqrt(L) s_max / s_min^2 [rho_G s_xi sqrt(2+m) + rho_H s_w sqrt(1+n+m) + s_v sqrt(1+2p+m)]``."""
    if params.sigma_min <= 0.0:
        raise ValueError("sigma_min must be positive")
    if params.L < 1:
        raise ValueError("L must be at least 1")
    n, m, p = params.n, params.m, params.p
    bracket = (
        params.rho_G * params.sigma_xi * math.sqrt(2 + m)
        + params.rho_H * params.sigma_omega * math.sqrt(1 + n + m)
        + params.sigma_nu * math.sqrt(1 + 2 * p + m)
    )
    return 16.0 * math.sqrt(params.L) * params.sigma_max / params.sigma_min**2 * bracket


def _dimension_term(params, log_arg):
    n, m, p, L = params.n, params.m, params.p, params.L
    return 8 * (n + L * m) + 2 * (L * p + L * m + L * n + p + n + 3) * math.log(log_arg)


def compute_NG(eps_G, delta, params: BoundsParams, M_Z=None) -> int:
    """Trajectories sufficient for ``||G_i - G_i#||_2 <= eps_G``, i = 1, 2, 3."""
    if eps_G <= 0.0:
        raise ValueError("eps_G must be positive")
    _check_delta(delta)
    M_Z = compute_MZ(params) if M_Z is None else M_Z
    first = _dimension_term(params, 12.0 / delta)
    second = params.L * math.log(108.0 / delta) * M_Z**2 / eps_G**2
    return int(math.ceil(max(first, second)))


def compute_epsilon0(G1) -> float:
    """``sqrt(||G1||^2 + lambda_min(G1^T G1)) - ||G1||``.

    Passing the identified G1# yields the data-only variant of the constant.
    """
    G1 = np.atleast_2d(np.asarray(G1, dtype=float))
    norm = float(np.linalg.norm(G1, 2))
    lam = max(float(np.linalg.eigvalsh(G1.T @ G1)[0]), 0.0)
    return math.sqrt(norm**2 + lam) - norm


def epsilon0_from_params(params: BoundsParams) -> float:
    return math.sqrt(params.norm_G1**2 + max(params.lam_min_G1, 0.0)) - params.norm_G1


@dataclass(frozen=True)
class N0Result:
    N0: int
    M_A: float
    M_B: float
    M_C: float
    M: float


def compute_N0(eps, delta, params: BoundsParams, M_Z=None) -> N0Result:
    """Trajectories sufficient for ``||A - A#||, ||B - B#||, ||C - C#|| <= eps``.

    Raises:
        ValueError: ``eps`` is not below epsilon0, i.e. G1# could lose rank.
    """
    _check_delta(delta)
    eps0 = epsilon0_from_params(params)
    gap = params.lam_min_G1 - eps**2 - 2.0 * eps * params.norm_G1
    if not 0.0 < eps < eps0 or gap <= 0.0:
        raise ValueError(
            f"eps={eps} must satisfy 0 < eps < epsilon0={eps0:.6g} so that G1# keeps full column rank"
        )
    M_Z = compute_MZ(params) if M_Z is None else M_Z
    root = math.sqrt(gap)
    M_A = (params.norm_A + 1.0) * M_Z / root
    M_B = (params.norm_B + 1.0) * M_Z / root
    M_C = M_Z
    M = max(M_A, M_B, M_C)
    first = _dimension_term(params, 36.0 / delta)
    second = params.L * math.log(324.0 / delta) * M**2 / eps**2
    return N0Result(int(math.ceil(max(first, second))), M_A, M_B, M_C, M)


def compute_epsilon1(model, K, Q1, Delta, epsilon0=None, output_feedback=True):
    """Perturbation margin preserving the certified Lyapunov decrease.

    With ``F = K C#`` (static) or ``F = K`` (state feedback),
    ``M_K = 1 + ||B# K|| + eps0 ||K|| + ||F||`` and
    ``eps1 = lambda_min(Delta) / (M_K (2 ||(A# + B# F) Q1|| + eps0 M_K ||Q1||))``.

    Args:
        epsilon0: defaults to the data-only value from ``model.G1``.

    Raises:
        ConstraintInfeasible: the certificate fails the LMI.
    """
    A = np.atleast_2d(model.A)
    B = np.atleast_2d(model.B)
    C = np.atleast_2d(model.C)
    K = np.atleast_2d(np.asarray(K, dtype=float))
    Q1 = np.atleast_2d(np.asarray(Q1, dtype=float))
    Delta = np.atleast_2d(np.asarray(Delta, dtype=float))
    F = K @ C if output_feedback else K
    ok, lam = lmi_feasible(Q1, F @ Q1, Delta, model)
    if not ok:
        raise ConstraintInfeasible(f"certificate is not feasible (min eigenvalue {lam:.3e})")
    eps0 = compute_epsilon0(model.G1) if epsilon0 is None else float(epsilon0)
    norm = lambda M: float(np.linalg.norm(M, 2))  # noqa: E731
    M_K = 1.0 + norm(B @ K) + eps0 * norm(K) + norm(F)
    lam_delta = float(np.linalg.eigvalsh(0.5 * (Delta + Delta.T))[0])
    return lam_delta / (M_K * (2.0 * norm((A + B @ F) @ Q1) + eps0 * M_K * norm(Q1)))


def compute_epsilon2(A1, L, C, epsilon0, P_breve=None):
    """Gap tolerated by the (state, error) loop before losing Schur stability.

    ``P_breve`` defaults to the solution of ``A1 P A1^T - P = -I``.

    Raises:
        InstabilityError: ``A1`` is not Schur stable.
    """
    A1 = np.atleast_2d(np.asarray(A1, dtype=float))
    rho = spectral_radius(A1)
    if rho >= 1.0:
        raise InstabilityError(f"block matrix is not Schur stable (spectral radius {rho:.6f})")
    if P_breve is None:
        P_breve = solve_discrete_lyapunov(A1, np.eye(A1.shape[0]))
    P_breve = 0.5 * (P_breve + P_breve.T)
    L = np.atleast_2d(L)
    C = np.atleast_2d(C)
    IL = float(np.linalg.norm(np.eye(C.shape[1]) - L @ C, 2))
    num = float(np.linalg.eigvalsh(P_breve - A1 @ P_breve @ A1.T)[0])
    return num / (IL * float(np.linalg.norm(P_breve, 2)) * (2.0 * float(np.linalg.norm(A1, 2)) + epsilon0 * IL))


@dataclass(frozen=True)
class BoundsReport:
    M_Z: float
    N_G: int
    epsilon0: float
    M_A: float
    M_B: float
    M_C: float
    M: float
    N0: int
    epsilon: float
    epsilon_G: float
    delta: float
    inputs: dict
    epsilon1: float | None = None
    epsilon2: float | None = None

    def to_dict(self):
        return asdict(self)

    def to_json(self, path=None):
        text = json.dumps(self.to_dict(), indent=2)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text


def bounds_report(params: BoundsParams, epsilon, delta, epsilon_G=None, epsilon1=None, epsilon2=None):
    """Evaluate every constant for one (epsilon, delta) pair.

    ``epsilon_G`` defaults to ``epsilon``.
    """
    epsilon_G = epsilon if epsilon_G is None else epsilon_G
    M_Z = compute_MZ(params)
    N_G = compute_NG(epsilon_G, delta, params, M_Z=M_Z)
    n0 = compute_N0(epsilon, delta, params, M_Z=M_Z)
    return BoundsReport(
        M_Z=M_Z,
        N_G=N_G,
        epsilon0=epsilon0_from_params(params),
        M_A=n0.M_A,
        M_B=n0.M_B,
        M_C=n0.M_C,
        M=n0.M,
        N0=n0.N0,
        epsilon=float(epsilon),
        epsilon_G=float(epsilon_G),
        delta=float(delta),
        inputs=asdict(params),
        epsilon1=epsilon1,
        epsilon2=epsilon2,
    )
