"""Kalman recursion shared by the model-based filter and the data-driven filter.

Both filters run the same code; the data-driven one simply receives the
identified matrices (A#, B#, C#) in place of the true ones. Also provided:
steady-state Riccati analysis, a batch MMSE oracle that solves the
maximum-likelihood problem directly, and Monte Carlo error metrics.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConvergenceError, DimensionError, FilterDivergence
from .seeding import as_rng
from .system import check_covariance, draw_noise_ensemble, draw_online_noise, simulate_ensemble

DIVERGENCE_TOL = 1e-12
ORACLE_MAX_HORIZON = 50


def _mats(model):
    A = np.atleast_2d(np.asarray(model.A, dtype=float))
    B = np.atleast_2d(np.asarray(model.B, dtype=float))
    C = np.atleast_2d(np.asarray(model.C, dtype=float))
    n = A.shape[0]
    if A.shape != (n, n) or B.shape[0] != n or C.shape[1] != n:
        raise DimensionError(f"inconsistent model shapes A{A.shape} B{B.shape} C{C.shape}")
    return A, B, C


@dataclass(frozen=True)
class Matrices:
    """Plain (A, B, C) triple usable wherever a model is expected."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray


@dataclass(frozen=True)
class FilterState:
    """A posteriori estimate after ``k`` measurement updates."""

    x: np.ndarray
    P: np.ndarray
    k: int = 0
    gain: np.ndarray | None = None
    prior_x: np.ndarray | None = None
    prior_P: np.ndarray | None = None


def _T(M):
    return np.swapaxes(M, -1, -2)


def covariance_step(A, C, Q, R, P):
    """One prediction/measurement cycle of the covariance recursion.

    Works on single matrices or on stacks with a leading trial axis.

    Returns:
        (P_prior, gain, P_post) with a Joseph-form posterior update.

    Raises:
        FilterDivergence: the innovation covariance is numerically singular.
    """
    P_prior = A @ P @ _T(A) + Q
    S = C @ P_prior @ _T(C) + R
    S = 0.5 * (S + _T(S))
    lam = np.linalg.eigvalsh(S)
    scale = np.linalg.norm(S, ord=2, axis=(-2, -1)) if S.ndim == 3 else np.linalg.norm(S, 2)
    if np.any(lam[..., 0] <= DIVERGENCE_TOL * np.maximum(scale, np.finfo(float).tiny)):
        raise FilterDivergence(
            f"innovation covariance is singular (min eigenvalue {float(np.min(lam[..., 0])):.3e})"
        )
    gain = _T(np.linalg.solve(S, C @ P_prior))
    IKC = np.eye(A.shape[-1]) - gain @ C
    P_post = IKC @ P_prior @ _T(IKC) + gain @ R @ _T(gain)
    return P_prior, gain, 0.5 * (P_post + _T(P_post))


def kf_init(model, Q, R, x0_mean, P0):
    """Initial filter state ``x = x0_mean``, ``P = P0``.

    Raises:
        CovarianceError: Q or P0 not PSD, or R not PD.
    """
    A, B, C = _mats(model)
    n, p = A.shape[0], C.shape[0]
    Q, R, P0 = (np.atleast_2d(np.asarray(M, dtype=float)) for M in (Q, R, P0))
    if Q.shape != (n, n) or P0.shape != (n, n) or R.shape != (p, p):
        raise DimensionError(f"covariance shapes Q{Q.shape} R{R.shape} P0{P0.shape} do not fit n={n}, p={p}")
    check_covariance("Q", Q)
    check_covariance("R", R, strict=True)
    check_covariance("P0", P0)
    x0 = np.asarray(x0_mean, dtype=float).reshape(-1)
    if x0.shape != (n,):
        raise DimensionError(f"x0_mean must have length {n}, got {x0.shape}")
    return FilterState(x=x0.copy(), P=P0.copy(), k=0)


def kf_step(state: FilterState, model, Q, R, u, y) -> FilterState:
    """Consume input ``u_k`` and measurement ``y_{k+1}``."""
    A, B, C = _mats(model)
    u = np.asarray(u, dtype=float).reshape(-1)
    y = np.asarray(y, dtype=float).reshape(-1)
    if u.shape != (B.shape[1],) or y.shape != (C.shape[0],):
        raise DimensionError(f"expected u of length {B.shape[1]} and y of length {C.shape[0]}")
    P_prior, gain, P_post = covariance_step(A, C, np.asarray(Q, float), np.asarray(R, float), state.P)
    x_prior = A @ state.x + B @ u
    x_post = x_prior + gain @ (y - C @ x_prior)
    return FilterState(x=x_post, P=P_post, k=state.k + 1, gain=gain, prior_x=x_prior, prior_P=P_prior)


def run_filter(model, Q, R, x0_mean, P0, inputs, outputs, return_covariances=False):
    """Run :func:`kf_step` over a trajectory.

    Args:
        inputs: (K, m) inputs u_0..u_{K-1}.
        outputs: (K, p) measurements y_1..y_K.

    Returns:
        (K+1, n) estimates x_0..x_K, plus (K+1, n, n) covariances if requested.
    """
    inputs = np.asarray(inputs, dtype=float)
    outputs = np.asarray(outputs, dtype=float)
    if len(inputs) != len(outputs):
        raise DimensionError(f"{len(inputs)} inputs but {len(outputs)} outputs")
    state = kf_init(model, Q, R, x0_mean, P0)
    xs, Ps = [state.x], [state.P]
    for u, y in zip(inputs, outputs):
        state = kf_step(state, model, Q, R, u, y)
        xs.append(state.x)
        Ps.append(state.P)
    if return_covariances:
        return np.array(xs), np.array(Ps)
    return np.array(xs)


def filter_ensemble(A, B, C, Q, R, x0_mean, P0, inputs, outputs):
    """Vectorized filter over T trials.

    Matrices may be shared ((n, n) etc.) or per-trial ((T, n, n) etc.). With
    shared matrices the gain sequence is data independent and is computed
    once for all trials.

    Args:
        inputs: (K, m) shared or (T, K, m) per-trial inputs.
        outputs: (T, K, p) measurements, ``outputs[:, k] = y_{k+1}``.
        x0_mean: (n,) shared or (T, n) per-trial initial estimates.

    Returns:
        (T, K+1, n) estimates.
    """
    A, B, C = (np.asarray(M, dtype=float) for M in (A, B, C))
    Q, R, P0 = (np.atleast_2d(np.asarray(M, dtype=float)) for M in (Q, R, P0))
    outputs = np.asarray(outputs, dtype=float)
    T, K, _ = outputs.shape
    n = A.shape[-1]
    inputs = np.asarray(inputs, dtype=float)
    if inputs.ndim == 2:
        inputs = np.broadcast_to(inputs, (T,) + inputs.shape)
    check_covariance("R", R, strict=True)
    x = np.array(np.broadcast_to(np.asarray(x0_mean, dtype=float), (T, n)))
    out = np.empty((T, K + 1, n))
    out[:, 0] = x
    per_trial = A.ndim == 3 or B.ndim == 3 or C.ndim == 3
    if per_trial:
        A = np.broadcast_to(A, (T, n, n)) if A.ndim == 2 else A
        B = np.broadcast_to(B, (T,) + B.shape) if B.ndim == 2 else B
        C = np.broadcast_to(C, (T,) + C.shape) if C.ndim == 2 else C
        P = np.array(np.broadcast_to(P0, (T, n, n)))
        for k in range(K):
            _, gain, P = covariance_step(A, C, Q, R, P)
            xp = np.einsum("tij,tj->ti", A, x) + np.einsum("tij,tj->ti", B, inputs[:, k])
            innov = outputs[:, k] - np.einsum("tij,tj->ti", C, xp)
            x = xp + np.einsum("tij,tj->ti", gain, innov)
            out[:, k + 1] = x
    else:
        P = P0
        for k in range(K):
            _, gain, P = covariance_step(A, C, Q, R, P)
            xp = x @ A.T + inputs[:, k] @ B.T
            x = xp + (outputs[:, k] - xp @ C.T) @ gain.T
            out[:, k + 1] = x
    return out


@dataclass(frozen=True)
class SteadyRiccati:
    P_prior: np.ndarray
    P: np.ndarray
    gain: np.ndarray
    iterations: int
    residual: float


def is_detectable(A, C):
    """PBH test on the modes with |lambda| >= 1."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    C = np.atleast_2d(np.asarray(C, dtype=float))
    n = A.shape[0]
    for lam in np.linalg.eigvals(A):
        if abs(lam) >= 1.0:
            M = np.vstack([lam * np.eye(n) - A, C])
            s = np.linalg.svd(M, compute_uv=False)
            if s[-1] <= max(M.shape) * np.finfo(float).eps * max(s[0], 1.0):
                return False
    return True


def steady_state_riccati(A, C, Q, R, tol=1e-12, max_iter=10000):
    """Iterate the filter covariance recursion from ``P = Q`` to its fixed point.

    Raises:
        ValueError: (C, A) is not detectable.
        ConvergenceError: ``max_iter`` reached; carries the last residual.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    C = np.atleast_2d(np.asarray(C, dtype=float))
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    R = np.atleast_2d(np.asarray(R, dtype=float))
    if not is_detectable(A, C):
        raise ValueError("(C, A) is not detectable; the filter Riccati recursion has no stabilizing limit")
    P = Q.copy()
    residual = np.inf
    for it in range(1, max_iter + 1):
        P_prior, gain, P_new = covariance_step(A, C, Q, R, P)
        residual = float(np.linalg.norm(P_new - P))
        P = P_new
        if residual < tol:
            P_prior, gain, _ = covariance_step(A, C, Q, R, P)
            return SteadyRiccati(P_prior=P_prior, P=P, gain=gain, iterations=it, residual=residual)
    raise ConvergenceError(
        f"Riccati iteration did not converge in {max_iter} steps (residual {residual:.3e})",
        residual=residual,
        iterations=max_iter,
    )


def online_residuals(model, x0_hat, w_hat, inputs, outputs):
    """States and measurement residuals implied by ``(x0_hat, w_hat)``.

    ``x_{t+1} = A x_t + B u_t + w_t`` and ``nu_{t+1} = y_{t+1} - C x_{t+1}``.

    Returns:
        states (K+1, n), nu (K, p)
    """
    A, B, C = _mats(model)
    inputs = np.asarray(inputs, dtype=float).reshape(-1, B.shape[1])
    w_hat = np.asarray(w_hat, dtype=float).reshape(-1, A.shape[0])
    outputs = np.asarray(outputs, dtype=float).reshape(-1, C.shape[0])
    x = np.asarray(x0_hat, dtype=float).reshape(-1)
    states = [x]
    for u, w in zip(inputs, w_hat):
        x = A @ x + B @ u + w
        states.append(x)
    states = np.array(states)
    return states, outputs - states[1:] @ C.T


@dataclass(frozen=True)
class OracleSolution:
    states: np.ndarray
    x0: np.ndarray
    w: np.ndarray
    nu: np.ndarray


def batch_mmse_oracle(sys, inputs, outputs, model=None, max_horizon=ORACLE_MAX_HORIZON, full=False):
    """Solve the online maximum-likelihood problem by its normal equations.

    Decision variables are ``x0_hat`` and ``w_0..w_k``; the cost is

        1/2 |x0 - x0_mean|^2_{P0^-1} + 1/2 sum |w_t|^2_{Q^-1} + 1/2 sum_{t=1}^{k+1} |nu_t|^2_{R^-1}

    subject to the state recursion. The final implied state equals the
    recursive filter estimate; earlier ones are smoothed estimates.

    Args:
        sys: supplies Q, R, x0_mean, P0 (and A, B, C unless ``model`` is given).
        inputs: (K, m) u_0..u_{K-1}; outputs: (K, p) y_1..y_K.
        full: return an :class:`OracleSolution` instead of the state sequence.
    """
    A, B, C = _mats(model if model is not None else sys)
    n, m, p = A.shape[0], B.shape[1], C.shape[0]
    inputs = np.asarray(inputs, dtype=float).reshape(-1, m)
    outputs = np.asarray(outputs, dtype=float).reshape(-1, p)
    K = len(inputs)
    if len(outputs) != K:
        raise DimensionError(f"{K} inputs but {len(outputs)} outputs")
    if K > max_horizon:
        raise ValueError(f"oracle horizon {K} exceeds the cap {max_horizon}")
    for name, M in (("P0", sys.P0), ("Q", sys.Q), ("R", sys.R)):
        check_covariance(name, M, strict=True)
    P0i, Qi, Ri = (np.linalg.inv(M) for M in (sys.P0, sys.Q, sys.R))
    dim = n * (K + 1)
    # x_t = F_t z + c_t with z = (x0, w_0, ..., w_{K-1})
    F = np.zeros((K + 1, n, dim))
    c = np.zeros((K + 1, n))
    F[0, :, :n] = np.eye(n)
    for t in range(K):
        F[t + 1] = A @ F[t]
        F[t + 1, :, n * (t + 1) : n * (t + 2)] += np.eye(n)
        c[t + 1] = A @ c[t] + B @ inputs[t]
    H = np.zeros((dim, dim))
    g = np.zeros(dim)
    H[:n, :n] += P0i
    g[:n] += P0i @ sys.x0_mean
    for t in range(K):
        s = slice(n * (t + 1), n * (t + 2))
        H[s, s] += Qi
        CF = C @ F[t + 1]
        H += CF.T @ Ri @ CF
        g += CF.T @ Ri @ (outputs[t] - C @ c[t + 1])
    try:
        z = np.linalg.solve(H, g)
    except np.linalg.LinAlgError as exc:
        raise FilterDivergence(f"oracle normal matrix is singular: {exc}") from None
    states = np.einsum("tij,j->ti", F, z) + c
    if not full:
        return states
    w = z[n:].reshape(K, n)
    return OracleSolution(states=states, x0=z[:n], w=w, nu=outputs - states[1:] @ C.T)


def _quad(v, M_inv):
    v = np.asarray(v, dtype=float).reshape(-1, M_inv.shape[0])
    return 0.5 * float(np.einsum("ti,ij,tj->", v, M_inv, v))


def neg_log_likelihood(x0_hat, w_hat, nu_hat, x0_mean, P0, Q, R,
                       xi_p=None, w_p=None, nu_p=None, P_xi=None):
    """Quadratic exponent of the joint density (additive constant dropped).

    Online terms: ``x0_hat`` (n,), ``w_hat`` (k+1, n) and ``nu_hat`` (k+1, p)
    for nu_1..nu_{k+1}. The pre-collected terms are optional: ``xi_p`` (N, n),
    ``w_p`` (N, L, n), ``nu_p`` (N, L+1, p).
    """
    for name, M in (("P0", P0), ("Q", Q), ("R", R)):
        check_covariance(name, np.atleast_2d(M), strict=True)
    P0i, Qi, Ri = (np.linalg.inv(np.atleast_2d(np.asarray(M, dtype=float))) for M in (P0, Q, R))
    d = np.asarray(x0_hat, dtype=float) - np.asarray(x0_mean, dtype=float)
    total = _quad(d, P0i) + _quad(w_hat, Qi) + _quad(nu_hat, Ri)
    if xi_p is not None:
        if P_xi is None:
            raise ValueError("P_xi is required with xi_p")
        check_covariance("P_xi", np.atleast_2d(P_xi), strict=True)
        total += _quad(xi_p, np.linalg.inv(np.atleast_2d(P_xi)))
    if w_p is not None:
        total += _quad(w_p, Qi)
    if nu_p is not None:
        total += _quad(nu_p, Ri)
    return total


def empirical_error_covariance(sys, model, horizon, trials, rng, inputs=None, window=1, Q=None, R=None):
    """Monte Carlo second moment of ``e_k = x_k - x_hat_k``.

    The plant ``sys`` starts at ``x0 ~ N(x0_mean, P0)``; the filter runs on
    ``model``'s matrices with covariances (``Q``, ``R``) (the plant's by
    default), initialized at ``x0_mean`` and ``P0``.

    Args:
        rng: integer master seed (per-trial streams) or a Generator.
        inputs: (horizon, m) shared inputs; zeros by default.
        window: average the moment over the last ``window`` steps
            (1 gives the plain final-step estimate).

    Returns:
        (n, n) estimate of the error covariance.
    """
    if trials < 1 or horizon < 1:
        raise ValueError("trials and horizon must be positive")
    if not 1 <= window <= horizon:
        raise ValueError(f"window must lie in [1, horizon], got {window}")
    Q = sys.Q if Q is None else Q
    R = sys.R if R is None else R
    inputs = np.zeros((horizon, sys.m)) if inputs is None else np.asarray(inputs, dtype=float)
    if isinstance(rng, (int, np.integer)):
        xi, W, V = draw_noise_ensemble(sys, horizon, trials, int(rng))
    else:
        gen = as_rng(rng)
        draws = [draw_online_noise(sys, horizon, gen) for _ in range(trials)]
        xi, W, V = (np.array(a) for a in zip(*draws))
    states, outputs = simulate_ensemble(sys, sys.x0_mean + xi, inputs, W, V)
    A, B, C = _mats(model)
    est = filter_ensemble(A, B, C, Q, R, sys.x0_mean, sys.P0, inputs, outputs)
    e = (states - est)[:, -window:]
    return np.einsum("tki,tkj->ij", e, e) / (trials * window)


def mse_curve(true_states, estimates, component=0):
    """``MSE(k)``: mean over trials of the squared error of one state component.

    Args:
        true_states, estimates: (T, K) or (T, K, n) arrays.
    """
    t = np.asarray(true_states, dtype=float)
    e = np.asarray(estimates, dtype=float)
    if t.shape != e.shape:
        raise DimensionError(f"shape mismatch {t.shape} vs {e.shape}")
    if t.ndim < 2 or t.shape[0] == 0:
        raise ValueError("at least one trial is required")
    if t.ndim == 3:
        t, e = t[..., component], e[..., component]
    return np.mean((t - e) ** 2, axis=0)


def asee_window(horizon, start=101, reference_horizon=2000):
    """Steps ``start..horizon`` scaled from the reference 2000-step run.

    Returns:
        (first, last) inclusive step indices.
    """
    first = max(1, int(round(start * horizon / reference_horizon)))
    return min(first, horizon), horizon


def asee(true_states, estimates, component=0, window=None):
    """Average squared estimation error over trials and a window of steps.

    Args:
        true_states, estimates: (T, K+1) or (T, K+1, n), step k in column k.
        window: (first, last) inclusive; defaults to :func:`asee_window`.
    """
    curve = mse_curve(true_states, estimates, component)
    horizon = len(curve) - 1
    first, last = asee_window(horizon) if window is None else window
    return float(np.mean(curve[first : last + 1]))
