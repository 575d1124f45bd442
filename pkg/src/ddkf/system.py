"""Ground-truth linear Gaussian plant, simulation and structural checks.

The plant is

    x_{k+1} = A x_k + B u_k + w_k,   w_k ~ N(0, Q)
    y_k     = C x_k + v_k,           v_k ~ N(0, R)
    x_0 ~ N(x0_mean, P0)

Online trajectories follow the filtering convention: inputs u_0..u_k and
outputs y_1..y_{k+1}. Pre-collected batches (see :mod:`ddkf.data`) also record
y_0; the two conventions are kept separate on purpose.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import CovarianceError, DimensionError
from .seeding import ONLINE, child_rng

PSD_TOL = 1e-12


def _frozen(a, ndim=2):
    arr = np.array(a, dtype=float)
    if ndim == 2:
        arr = np.atleast_2d(arr)
    else:
        arr = np.atleast_1d(arr).reshape(-1)
    arr.setflags(write=False)
    return arr


def check_covariance(name, M, strict=False):
    """Validate that ``M`` is symmetric PSD (PD when ``strict``).

    Raises:
        CovarianceError: asymmetric, indefinite, or (strict) singular matrix.
    """
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise CovarianceError(f"{name} must be square, got shape {M.shape}")
    scale = max(1.0, float(np.max(np.abs(M))) if M.size else 1.0)
    if not np.allclose(M, M.T, atol=PSD_TOL * scale, rtol=0.0):
        raise CovarianceError(f"{name} is not symmetric")
    lam_min = float(np.min(np.linalg.eigvalsh(M))) if M.size else 0.0
    if strict and lam_min <= 0.0:
        raise CovarianceError(f"{name} must be positive definite (min eigenvalue {lam_min:.3e})")
    if lam_min < -PSD_TOL * scale:
        raise CovarianceError(f"{name} is indefinite (min eigenvalue {lam_min:.3e})")
    return lam_min


def covariance_factor(M):
    """Return F with ``F @ F.T == M``.

    Cholesky when possible; otherwise a symmetric square root with
    eigenvalues below 1e-12 clipped to zero (semidefinite covariances).
    """
    M = np.asarray(M, dtype=float)
    try:
        return np.linalg.cholesky(M)
    except np.linalg.LinAlgError:
        lam, V = np.linalg.eigh(0.5 * (M + M.T))
        lam = np.where(lam < PSD_TOL, 0.0, lam)
        return V * np.sqrt(lam)


@dataclass(frozen=True)
class LtiSystem:
    """Linear time-invariant Gaussian plant.

    Covariances are allowed to be semidefinite so that noise-free plants can
    be simulated; filters that need R > 0 check that themselves.
    """

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    x0_mean: np.ndarray
    P0: np.ndarray
    _factors: dict = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        for name in ("A", "B", "C", "Q", "R", "P0"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))
        object.__setattr__(self, "x0_mean", _frozen(self.x0_mean, ndim=1))
        n = self.A.shape[0]
        if self.A.shape != (n, n):
            raise DimensionError(f"A must be square, got {self.A.shape}")
        if self.B.shape[0] != n:
            raise DimensionError(f"B must have {n} rows, got {self.B.shape}")
        if self.C.shape[1] != n:
            raise DimensionError(f"C must have {n} columns, got {self.C.shape}")
        p = self.C.shape[0]
        if self.Q.shape != (n, n):
            raise DimensionError(f"Q must be {n}x{n}, got {self.Q.shape}")
        if self.R.shape != (p, p):
            raise DimensionError(f"R must be {p}x{p}, got {self.R.shape}")
        if self.P0.shape != (n, n):
            raise DimensionError(f"P0 must be {n}x{n}, got {self.P0.shape}")
        if self.x0_mean.shape != (n,):
            raise DimensionError(f"x0_mean must have length {n}, got {self.x0_mean.shape}")
        for name in ("Q", "R", "P0"):
            check_covariance(name, getattr(self, name))
        factors = {name: covariance_factor(getattr(self, name)) for name in ("Q", "R", "P0")}
        object.__setattr__(self, "_factors", factors)

    @property
    def n(self):
        return self.A.shape[0]

    @property
    def m(self):
        return self.B.shape[1]

    @property
    def p(self):
        return self.C.shape[0]

    def factor(self, name):
        """Cached noise factor for ``"Q"``, ``"R"`` or ``"P0"``."""
        return self._factors[name]

    def replace(self, **changes):
        kwargs = {k: getattr(self, k) for k in ("A", "B", "C", "Q", "R", "x0_mean", "P0")}
        kwargs.update(changes)
        return LtiSystem(**kwargs)

    def scaled_noise(self, factor, include_initial=False):
        """Copy with Q and R (and P0 when ``include_initial``) multiplied by ``factor``."""
        if include_initial:
            return self.replace(Q=factor * self.Q, R=factor * self.R, P0=factor * self.P0)
        return self.replace(Q=factor * self.Q, R=factor * self.R)

    def noise_free(self):
        """Copy with Q, R and P0 set to zero."""
        return self.replace(Q=np.zeros_like(self.Q), R=np.zeros_like(self.R), P0=np.zeros_like(self.P0))

    def to_dict(self):
        return {
            "A": self.A.tolist(),
            "B": self.B.tolist(),
            "C": self.C.tolist(),
            "Q": self.Q.tolist(),
            "R": self.R.tolist(),
            "x0_mean": self.x0_mean.tolist(),
            "P0": self.P0.tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        missing = {"A", "B", "C", "Q", "R"} - set(d)
        if missing:
            raise DimensionError(f"system document lacks keys {sorted(missing)}")
        n = np.atleast_2d(np.asarray(d["A"], dtype=float)).shape[0]
        return cls(
            A=d["A"],
            B=d["B"],
            C=d["C"],
            Q=d["Q"],
            R=d["R"],
            x0_mean=d.get("x0_mean", np.zeros(n)),
            P0=d.get("P0", np.eye(n)),
        )

    def save_json(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    @classmethod
    def load_json(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class OnlineTrajectory:
    """One online run: inputs u_0..u_{k}, outputs y_1..y_{k+1}, states x_0..x_{k+1}."""

    inputs: np.ndarray
    outputs: np.ndarray
    states: np.ndarray | None = None

    def __len__(self):
        return len(self.inputs)


def dc_motor_preset(x0_mean=(0.0, 0.0)):
    """Discrete DC motor (1 ms sampling): state (speed, current), input (load torque, voltage)."""
    return LtiSystem(
        A=[[0.9951, 0.2289], [-0.0177, 0.8672]],
        B=[[-0.4158, 0.0038], [-0.0038, 0.0301]],
        C=[[0.0, 1.0]],
        Q=[[0.20, 0.04], [0.04, 0.04]],
        R=[[0.03]],
        x0_mean=x0_mean,
        P0=np.eye(2),
    )


def simulate_step(sys, x, u, rng):
    """Advance the plant one step.

    A single standard-normal draw of length n + p is split into the process
    and measurement noise, so stepping k times consumes the generator exactly
    like one ``standard_normal((k, n + p))`` call.

    Returns:
        (x_next, y_next)
    """
    x = np.asarray(x, dtype=float).reshape(-1)
    u = np.asarray(u, dtype=float).reshape(-1)
    if x.shape != (sys.n,):
        raise DimensionError(f"state must have length {sys.n}, got {x.shape}")
    if u.shape != (sys.m,):
        raise DimensionError(f"input must have length {sys.m}, got {u.shape}")
    z = rng.standard_normal(sys.n + sys.p)
    x_next = sys.A @ x + sys.B @ u + sys.factor("Q") @ z[: sys.n]
    y_next = sys.C @ x_next + sys.factor("R") @ z[sys.n :]
    return x_next, y_next


def simulate_trajectory(sys, inputs, x0, rng, record_states=True):
    """Chain :func:`simulate_step` over ``inputs`` (shape (k, m)) from ``x0``."""
    inputs = np.asarray(inputs, dtype=float).reshape(-1, sys.m)
    x = np.asarray(x0, dtype=float).reshape(-1)
    if x.shape != (sys.n,):
        raise DimensionError(f"x0 must have length {sys.n}, got {x.shape}")
    states = [x]
    outputs = np.empty((len(inputs), sys.p))
    for k, u in enumerate(inputs):
        x, outputs[k] = simulate_step(sys, x, u, rng)
        states.append(x)
    return OnlineTrajectory(
        inputs=inputs,
        outputs=outputs,
        states=np.array(states) if record_states else None,
    )


def draw_online_noise(sys, horizon, rng):
    """Initial-state deviation and per-step noise for one trial.

    Returns:
        xi: (n,) initial deviation ~ N(0, P0);
        W: (horizon, n) process noise; V: (horizon, p) measurement noise.
    """
    xi = sys.factor("P0") @ rng.standard_normal(sys.n)
    z = rng.standard_normal((horizon, sys.n + sys.p))
    W = z[:, : sys.n] @ sys.factor("Q").T
    V = z[:, sys.n :] @ sys.factor("R").T
    return xi, W, V


def draw_noise_ensemble(sys, horizon, trials, seed, stream=ONLINE, first=0):
    """Stack :func:`draw_online_noise` over trials ``first..first+trials-1``.

    Trial i draws from ``child_rng(seed, stream, i)``, so its realization does
    not depend on how many other trials are run.

    Returns:
        xi (T, n), W (T, horizon, n), V (T, horizon, p)
    """
    xi = np.empty((trials, sys.n))
    W = np.empty((trials, horizon, sys.n))
    V = np.empty((trials, horizon, sys.p))
    for t in range(trials):
        xi[t], W[t], V[t] = draw_online_noise(sys, horizon, child_rng(seed, stream, first + t))
    return xi, W, V


def simulate_ensemble(sys, x0, inputs, W, V):
    """Open-loop simulation of T trials at once.

    Args:
        x0: (T, n) initial states.
        inputs: (K, m) shared or (T, K, m) per-trial inputs.
        W, V: (T, K, n) and (T, K, p) noise.

    Returns:
        states (T, K+1, n) and outputs (T, K, p) with outputs[:, k] = y_{k+1}.
    """
    x = np.array(x0, dtype=float)
    T, K = W.shape[0], W.shape[1]
    inputs = np.asarray(inputs, dtype=float)
    if inputs.ndim == 2:
        inputs = np.broadcast_to(inputs, (T,) + inputs.shape)
    states = np.empty((T, K + 1, sys.n))
    outputs = np.empty((T, K, sys.p))
    states[:, 0] = x
    for k in range(K):
        x = x @ sys.A.T + inputs[:, k] @ sys.B.T + W[:, k]
        states[:, k + 1] = x
        outputs[:, k] = x @ sys.C.T + V[:, k]
    return states, outputs


def observability_matrix(A, C, depth):
    """Stack ``C, CA, ..., CA^depth`` into a ((depth+1)p x n) matrix."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    C = np.atleast_2d(np.asarray(C, dtype=float))
    if depth < 0:
        raise ValueError("depth must be non-negative")
    if A.shape[0] != A.shape[1] or C.shape[1] != A.shape[0]:
        raise DimensionError(f"incompatible A {A.shape} and C {C.shape}")
    blocks = [C]
    for _ in range(depth):
        blocks.append(blocks[-1] @ A)
    return np.vstack(blocks)


def controllability_matrix(A, B, depth):
    """``[B, AB, ..., A^depth B]``."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    return observability_matrix(A.T, B.T, depth).T


def numerical_rank(M):
    """Rank with threshold ``max(M.shape) * eps * sigma_max``."""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.size == 0:
        return 0
    s = np.linalg.svd(M, compute_uv=False)
    if s[0] == 0.0:
        return 0
    tol = max(M.shape) * np.finfo(float).eps * s[0]
    return int(np.sum(s > tol))


def is_observable(sys):
    n = sys.A.shape[0]
    return numerical_rank(observability_matrix(sys.A, sys.C, n - 1)) == n


def is_controllable(sys):
    n = sys.A.shape[0]
    return numerical_rank(controllability_matrix(sys.A, sys.B, n - 1)) == n


def spectral_radius(M):
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.shape[0] != M.shape[1]:
        raise DimensionError(f"spectral radius needs a square matrix, got {M.shape}")
    return float(np.max(np.abs(np.linalg.eigvals(M))))
