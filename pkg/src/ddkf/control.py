"""Data-driven feedback design on identified models.

Gains are designed on (A#, B#, C#) and certified by the LMI

    [[Q1 - Delta, A# Q1 + B# Q2],
     [(A# Q1 + B# Q2)^T, Q1]] > 0,

which, with ``Q2 = K Q1``, is the Schur complement of the Lyapunov
inequality ``(A# + B# K) Q1 (A# + B# K)^T - Q1 < -Delta``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_discrete_lyapunov

from .errors import ConstraintInfeasible, ConvergenceError, DimensionError, InstabilityError, SingularityError
from .filtering import covariance_step, steady_state_riccati
from .system import check_covariance, draw_online_noise, spectral_radius

DIVERGENCE_NORM = 1e12
STATIC_RESIDUAL_TOL = 1e-8


@dataclass(frozen=True)
class ControllerGain:
    """Feedback gain with the evidence it was accepted on.

    ``kind`` is ``"static"`` (u = K y), ``"dynamic"`` or ``"lqg"`` (u = K x_hat).
    """

    kind: str
    K: np.ndarray
    certificate: dict = field(default_factory=dict)
    spectral_radius: float | None = None


def _AB(model):
    A = np.atleast_2d(np.asarray(model.A, dtype=float))
    B = np.atleast_2d(np.asarray(model.B, dtype=float))
    return A, B


def _sym(M):
    return 0.5 * (M + M.T)


def lmi_feasible(Q1, Q2, Delta, model):
    """Check the certificate LMI and ``Q1 > 0``.

    Returns:
        (feasible, smaller of the two minimum eigenvalues)
    """
    A, B = _AB(model)
    Q1 = np.atleast_2d(np.asarray(Q1, dtype=float))
    Q2 = np.atleast_2d(np.asarray(Q2, dtype=float))
    Delta = np.atleast_2d(np.asarray(Delta, dtype=float))
    n, m = B.shape
    if Q1.shape != (n, n) or Delta.shape != (n, n) or Q2.shape != (m, n):
        raise DimensionError(f"certificate shapes Q1{Q1.shape} Q2{Q2.shape} Delta{Delta.shape} do not fit n={n}, m={m}")
    X = A @ Q1 + B @ Q2
    block = np.block([[Q1 - Delta, X], [X.T, Q1]])
    lam = min(float(np.linalg.eigvalsh(_sym(block))[0]), float(np.linalg.eigvalsh(_sym(Q1))[0]))
    return lam > 0.0, lam


def lyapunov_certificate(model, K, Delta=None, margin=1e-6):
    """Certificate ``(Q1, Q2, Delta)`` for a stabilizing state-feedback ``K``.

    Solves ``Acl P Acl^T - P = -(Delta + margin I)`` with ``Acl = A# + B# K``
    and returns ``Q1 = P``, ``Q2 = K P``.

    Raises:
        InstabilityError: ``A# + B# K`` is not Schur stable.
    """
    A, B = _AB(model)
    K = np.atleast_2d(np.asarray(K, dtype=float))
    n = A.shape[0]
    Delta = np.eye(n) if Delta is None else np.atleast_2d(np.asarray(Delta, dtype=float))
    Acl = A + B @ K
    rho = spectral_radius(Acl)
    if rho >= 1.0:
        raise InstabilityError(f"closed loop is not Schur stable (spectral radius {rho:.6f})")
    P = _sym(solve_discrete_lyapunov(Acl, Delta + margin * np.eye(n)))
    return P, K @ P, Delta


def construct_QK_via_lqr(model, S1, S2, margin=1e-6):
    """LQR gain on the identified model turned into a verified certificate.

    Raises:
        ConstraintInfeasible: the constructed certificate fails the LMI test.
    """
    gain = lqg_gain(model, S1, S2)
    Q1, Q2, Delta = lyapunov_certificate(model, gain.K, margin=margin)
    ok, lam = lmi_feasible(Q1, Q2, Delta, model)
    if not ok:
        raise ConstraintInfeasible(f"constructed certificate fails the LMI (min eigenvalue {lam:.3e})")
    return Q1, Q2, Delta


def static_gain(Q1, Q2, model, Delta=None, tol=STATIC_RESIDUAL_TOL):
    """Closed-form static output gain ``K_s = Q2 G4^T (G4 Q1 G4^T)^{-1}``.

    The formula solves ``K_s G4 Q1 = Q2`` only when the row space of ``Q2``
    is compatible, so the residual is checked and reported.

    Raises:
        SingularityError: ``G4 Q1 G4^T`` is singular.
        ConstraintInfeasible: the constraint residual exceeds ``tol * ||Q2||_F``,
            or ``Delta`` is given and the LMI fails.
    """
    G4 = np.atleast_2d(np.asarray(getattr(model, "G4", model.C), dtype=float))
    Q1 = np.atleast_2d(np.asarray(Q1, dtype=float))
    Q2 = np.atleast_2d(np.asarray(Q2, dtype=float))
    M = G4 @ Q1 @ G4.T
    s = np.linalg.svd(M, compute_uv=False)
    if s[-1] <= M.shape[0] * np.finfo(float).eps * max(s[0], np.finfo(float).tiny):
        raise SingularityError("G4 Q1 G4^T is singular; G4 must have full row rank", sigma_min=float(s[-1]))
    Ks = np.linalg.solve(M.T, (Q2 @ G4.T).T).T
    residual = float(np.linalg.norm(Ks @ G4 @ Q1 - Q2))
    scale = float(np.linalg.norm(Q2))
    if residual > tol * max(scale, np.finfo(float).tiny) and residual > 0.0:
        raise ConstraintInfeasible(
            f"K_s G4 Q1 = Q2 has no exact solution (residual {residual:.3e}, ||Q2||_F = {scale:.3e})"
        )
    cert = {"Q1": Q1, "Q2": Q2, "residual": residual}
    if Delta is not None:
        ok, lam = lmi_feasible(Q1, Q2, Delta, model)
        if not ok:
            raise ConstraintInfeasible(f"certificate LMI fails (min eigenvalue {lam:.3e})")
        cert.update(Delta=np.atleast_2d(Delta), min_eig=lam)
    A, B = _AB(model)
    rho = spectral_radius(A + B @ Ks @ np.atleast_2d(model.C))
    return ControllerGain("static", Ks, cert, rho)


def static_candidate(model, S1, S2, shrink=0.5, tries=30):
    """A stabilizing static output gain for certificate construction.

    Starts from the least-squares output projection of the LQR gain,
    ``K_lqr C#^+``, and shrinks it toward zero until ``A# + B# K C#`` is
    Schur stable (zero is accepted when A# itself is stable).

    Raises:
        ConstraintInfeasible: no stabilizing scaling found.
    """
    A, B = _AB(model)
    C = np.atleast_2d(np.asarray(model.C, dtype=float))
    K0 = lqg_gain(model, S1, S2).K @ np.linalg.pinv(C)
    alpha = 1.0
    for _ in range(tries):
        K = alpha * K0
        if spectral_radius(A + B @ K @ C) < 1.0:
            return K
        alpha *= shrink
    if spectral_radius(A) < 1.0:
        return np.zeros_like(K0)
    raise ConstraintInfeasible("no stabilizing static output gain found along the LQR projection")


def dynamic_gain(Q1, Q2, model=None):
    """``K_d = Q2 Q1^{-1}``; closed-loop spectral radius recorded when ``model`` is given."""
    Q1 = np.atleast_2d(np.asarray(Q1, dtype=float))
    Q2 = np.atleast_2d(np.asarray(Q2, dtype=float))
    try:
        np.linalg.cholesky(_sym(Q1))
    except np.linalg.LinAlgError:
        raise SingularityError("Q1 must be positive definite", sigma_min=float(np.linalg.eigvalsh(_sym(Q1))[0])) from None
    Kd = np.linalg.solve(Q1.T, Q2.T).T
    rho = None
    if model is not None:
        A, B = _AB(model)
        rho = spectral_radius(A + B @ Kd)
    return ControllerGain("dynamic", Kd, {"Q1": Q1, "Q2": Q2}, rho)


def dare_solve(A, B, S1, S2, tol=1e-12, max_iter=10000):
    """Fixed point of ``P = A^T (P^{-1} + B S2^{-1} B^T)^{-1} A + S1`` from ``P = S1``.

    The bracketed inverse is evaluated in the equivalent Woodbury form
    ``P - P B (S2 + B^T P B)^{-1} B^T P``, which needs no inverse of P.

    Returns:
        (P, residual, iterations)

    Raises:
        ConvergenceError: ``max_iter`` reached.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    S1 = np.atleast_2d(np.asarray(S1, dtype=float))
    S2 = np.atleast_2d(np.asarray(S2, dtype=float))
    check_covariance("S1", S1, strict=True)
    check_covariance("S2", S2, strict=True)
    P = S1.copy()
    residual = np.inf
    for it in range(1, max_iter + 1):
        PB = P @ B
        inner = P - PB @ np.linalg.solve(S2 + B.T @ PB, PB.T)
        P_new = _sym(A.T @ inner @ A + S1)
        residual = float(np.linalg.norm(P_new - P))
        P = P_new
        if residual < tol:
            return P, residual, it
    raise ConvergenceError(
        f"DARE iteration did not converge in {max_iter} steps (residual {residual:.3e})",
        residual=residual,
        iterations=max_iter,
    )


def lqg_gain(model, S1, S2, tol=1e-12, max_iter=10000):
    """Certainty-equivalence LQR gain ``K = -(B^T P B + S2)^{-1} B^T P A``.

    Raises:
        InstabilityError: ``A + B K`` is not Schur stable.
    """
    A, B = _AB(model)
    S2 = np.atleast_2d(np.asarray(S2, dtype=float))
    P, residual, iterations = dare_solve(A, B, S1, S2, tol=tol, max_iter=max_iter)
    K = -np.linalg.solve(B.T @ P @ B + S2, B.T @ P @ A)
    rho = spectral_radius(A + B @ K)
    if rho >= 1.0:
        raise InstabilityError(f"LQR closed loop is not Schur stable (spectral radius {rho:.6f})")
    return ControllerGain("lqg", K, {"P_u": P, "residual": residual, "iterations": iterations}, rho)


@dataclass(frozen=True)
class ClosedLoopRun:
    cost: float
    states: np.ndarray
    estimates: np.ndarray | None
    inputs: np.ndarray


def _batched(M, T):
    M = np.asarray(M, dtype=float)
    return np.broadcast_to(M, (T,) + M.shape[-2:]) if M.ndim == 2 else M


def closed_loop_ensemble(sys, gain, horizon, S1, S2, x0, W, V, filter_model=None,
                         filter_x0=None, filter_P0=None, Q=None, R=None, check_divergence=True):
    """Vectorized closed loop over T trials.

    Static gains use ``u_h = K y_h``; dynamic and LQG gains use
    ``u_h = K x_hat_h`` with a Kalman filter running on ``filter_model``
    (the plant matrices by default). Gains and filter matrices may be shared
    or per-trial (leading axis T).

    Args:
        x0: (T, n) true initial states.
        W: (T, horizon, n) process noise; V: (T, horizon+1, p) measurement
            noise, ``V[:, h]`` corrupting ``y_h``.
        filter_x0, filter_P0: filter prior; plant ``x0_mean``/``P0`` by default.

    Returns:
        per-trial costs ``sum_{h=0}^{horizon} x_h^T S1 x_h + u_h^T S2 u_h`` (T,),
        states (T, horizon+1, n), estimates (T, horizon+1, n) or None, inputs (T, horizon+1, m).

    Raises:
        InstabilityError: a state norm exceeds 1e12.
    """
    x = np.array(x0, dtype=float)
    T, n = x.shape
    S1 = np.atleast_2d(np.asarray(S1, dtype=float))
    S2 = np.atleast_2d(np.asarray(S2, dtype=float))
    K = _batched(gain.K, T)
    A, B, C = sys.A, sys.B, sys.C
    kind = gain.kind
    states = np.empty((T, horizon + 1, n))
    inputs = np.empty((T, horizon + 1, sys.m))
    estimates = None
    if kind == "static":
        y = x @ C.T + V[:, 0]
    else:
        fm = filter_model if filter_model is not None else sys
        Af, Bf = _batched(fm.A, T), _batched(fm.B, T)
        Cf = _batched(fm.C, T)
        Qf = sys.Q if Q is None else np.atleast_2d(Q)
        Rf = sys.R if R is None else np.atleast_2d(R)
        xh = np.array(np.broadcast_to(sys.x0_mean if filter_x0 is None else filter_x0, (T, n)), dtype=float)
        P = np.array(np.broadcast_to(sys.P0 if filter_P0 is None else filter_P0, (T, n, n)), dtype=float)
        estimates = np.empty((T, horizon + 1, n))
    for h in range(horizon + 1):
        states[:, h] = x
        if check_divergence and (not np.all(np.isfinite(x)) or np.max(np.abs(x)) > DIVERGENCE_NORM):
            raise InstabilityError(f"closed-loop state diverged at step {h}")
        if kind == "static":
            u = np.einsum("tij,tj->ti", K, y)
        else:
            estimates[:, h] = xh
            u = np.einsum("tij,tj->ti", K, xh)
        inputs[:, h] = u
        if h == horizon:
            break
        x = x @ A.T + u @ B.T + W[:, h]
        y = x @ C.T + V[:, h + 1]
        if kind != "static":
            _, L, P = covariance_step(Af, Cf, Qf, Rf, P)
            xp = np.einsum("tij,tj->ti", Af, xh) + np.einsum("tij,tj->ti", Bf, u)
            xh = xp + np.einsum("tij,tj->ti", L, y - np.einsum("tij,tj->ti", Cf, xp))
    cost = np.einsum("thi,ij,thj->t", states, S1, states) + np.einsum("thi,ij,thj->t", inputs, S2, inputs)
    return cost, states, estimates, inputs


def simulate_closed_loop(sys, gain, horizon, S1, S2, rng, filter_model=None, x0=None,
                         filter_x0=None, filter_P0=None, Q=None, R=None):
    """Single closed-loop trial.

    The initial state is ``x0`` if given, otherwise drawn from
    ``N(x0_mean, P0)``. Noise comes from :func:`ddkf.system.draw_online_noise`
    with ``horizon + 1`` steps (the extra measurement is y_0).

    Returns:
        :class:`ClosedLoopRun`
    """
    xi, W, V = draw_online_noise(sys, horizon + 1, rng)
    start = sys.x0_mean + xi if x0 is None else np.asarray(x0, dtype=float)
    # V[:, 0] corrupts y_0; W[h] drives step h
    cost, states, est, inputs = closed_loop_ensemble(
        sys, gain, horizon, S1, S2, start[None], W[None, :horizon], V[None],
        filter_model=filter_model, filter_x0=filter_x0, filter_P0=filter_P0, Q=Q, R=R,
    )
    return ClosedLoopRun(float(cost[0]), states[0], None if est is None else est[0], inputs[0])


def average_cost(costs):
    costs = np.asarray(costs, dtype=float).reshape(-1)
    if costs.size == 0:
        raise ValueError("average_cost needs at least one trial")
    return float(np.mean(costs))


def steady_filter_gain(model, Q, R):
    """Steady-state Kalman gain of a model (identified or true)."""
    return steady_state_riccati(model.A, model.C, Q, R).gain


def closed_loop_matrix(sys, model, K, L):
    """Exact noise-free closed loop in ``(x, x_hat)`` coordinates.

    The plant runs on the true (A, B, C); the estimator on (A#, B#, C#) with
    a fixed gain ``L`` and the control is ``u = K x_hat``.
    """
    A, B, C = sys.A, sys.B, sys.C
    As, Bs = _AB(model)
    Cs = np.atleast_2d(np.asarray(model.C, dtype=float))
    K = np.atleast_2d(K)
    L = np.atleast_2d(L)
    n = A.shape[0]
    I = np.eye(n)
    top = np.hstack([A, B @ K])
    bottom = np.hstack([L @ C @ A, (I - L @ Cs) @ (As + Bs @ K) + L @ C @ B @ K])
    return np.vstack([top, bottom])


def breve_matrices(sys, model, K, L):
    """Split of the (state, error) dynamics used in the stability margin analysis.

    Returns:
        (A1, A2) with A1 = [[A + B K, B K], [0, (I - L C) A#]] and
        A2 = [[0, 0], [(I - L C)(A# - A), 0]].
    """
    A, B, C = sys.A, sys.B, sys.C
    As, _ = _AB(model)
    K = np.atleast_2d(K)
    L = np.atleast_2d(L)
    n = A.shape[0]
    IL = np.eye(n) - L @ C
    Z = np.zeros((n, n))
    A1 = np.block([[A + B @ K, B @ K], [Z, IL @ As]])
    A2 = np.block([[Z, Z], [IL @ (As - A), Z]])
    return A1, A2
