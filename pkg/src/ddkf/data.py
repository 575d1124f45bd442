"""Pre-collected batches of N independent length-L experiments.

Matrices follow the column-per-experiment layout: column i of ``U`` is
``[u_0; ...; u_{L-1}]`` of experiment i, column i of ``Y`` is
``[y_0; ...; y_L]`` and column i of ``X0_mean`` is the known initial-state
mean of that experiment.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import AssumptionViolation, BatchParseError, DimensionError
from .seeding import as_rng
from .system import check_covariance, covariance_factor, numerical_rank

MAGIC = "DDKF-BATCH-1"


def _ro(a):
    if a is None:
        return None
    arr = np.array(a, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class TrajectoryBatch:
    U: np.ndarray
    Y: np.ndarray
    X0_mean: np.ndarray
    L: int
    seed: int | None = None
    sigma_x0: float | None = None
    sigma_u: float | None = None
    # noise realizations, kept only for diagnostics
    Xi: np.ndarray | None = None
    Omega: np.ndarray | None = None
    V: np.ndarray | None = None

    def __post_init__(self):
        for name in ("U", "Y", "X0_mean", "Xi", "Omega", "V"):
            object.__setattr__(self, name, _ro(getattr(self, name)))
        L = int(self.L)
        object.__setattr__(self, "L", L)
        if L < 1:
            raise AssumptionViolation(f"sequence length must be positive, got L={L}")
        if self.U.ndim != 2 or self.Y.ndim != 2 or self.X0_mean.ndim != 2:
            raise DimensionError("U, Y and X0_mean must be 2-D (rows x experiments)")
        N = self.X0_mean.shape[1]
        if self.U.shape[1] != N or self.Y.shape[1] != N:
            raise DimensionError(
                f"column counts differ: X0_mean {N}, U {self.U.shape[1]}, Y {self.Y.shape[1]}"
            )
        if self.U.shape[0] % L or self.Y.shape[0] % (L + 1):
            raise DimensionError(
                f"U rows ({self.U.shape[0]}) must be a multiple of L={L} and "
                f"Y rows ({self.Y.shape[0]}) a multiple of L+1={L + 1}"
            )
        n = self.n
        if L < n:
            raise AssumptionViolation(f"sequence length L={L} is shorter than the state dimension n={n}")
        expected = {"Xi": (n, N), "Omega": (L * n, N), "V": self.Y.shape}
        for name, shape in expected.items():
            arr = getattr(self, name)
            if arr is not None and arr.shape != shape:
                raise DimensionError(f"{name} must have shape {shape}, got {arr.shape}")

    @property
    def N(self):
        return self.X0_mean.shape[1]

    @property
    def n(self):
        return self.X0_mean.shape[0]

    @property
    def m(self):
        return self.U.shape[0] // self.L

    @property
    def p(self):
        return self.Y.shape[0] // (self.L + 1)

    @property
    def dims(self):
        """(N, L, n, m, p)"""
        return self.N, self.L, self.n, self.m, self.p

    @property
    def has_noise(self):
        return self.Xi is not None

    def regressor(self):
        """The stacked ``[X0_mean; U]`` matrix, (n + Lm) x N."""
        return np.vstack([self.X0_mean, self.U])

    def __eq__(self, other):
        if not isinstance(other, TrajectoryBatch):
            return NotImplemented
        if (self.L, self.seed, self.sigma_x0, self.sigma_u) != (other.L, other.seed, other.sigma_x0, other.sigma_u):
            return False
        for name in ("U", "Y", "X0_mean", "Xi", "Omega", "V"):
            a, b = getattr(self, name), getattr(other, name)
            if (a is None) != (b is None):
                return False
            if a is not None and not np.array_equal(a, b):
                return False
        return True

    __hash__ = None


def assemble_batch(sys, X0_mean, U, rng, P_xi=None, keep_noise=False, **gen_params):
    """Run one experiment per column of ``X0_mean`` (n x N) and ``U`` (Lm x N).

    Each experiment starts from ``x0 = x0_mean + xi`` with ``xi ~ N(0, P_xi)``
    (``P_xi`` defaults to ``sys.P0``) and records outputs y_0..y_L.
    """
    rng = as_rng(rng)
    X0_mean = np.atleast_2d(np.asarray(X0_mean, dtype=float))
    U = np.atleast_2d(np.asarray(U, dtype=float))
    n, m, p = sys.n, sys.m, sys.p
    if X0_mean.shape[0] != n:
        raise DimensionError(f"X0_mean must have {n} rows, got {X0_mean.shape}")
    N = X0_mean.shape[1]
    if U.shape[1] != N or U.shape[0] % m:
        raise DimensionError(f"U must be (L*{m}) x {N}, got {U.shape}")
    L = U.shape[0] // m
    if L < n:
        raise AssumptionViolation(f"sequence length L={L} is shorter than the state dimension n={n}")
    P_xi = sys.P0 if P_xi is None else np.atleast_2d(np.asarray(P_xi, dtype=float))
    check_covariance("P_xi", P_xi)

    xi = rng.standard_normal((N, n)) @ covariance_factor(P_xi).T
    W = rng.standard_normal((N, L, n)) @ sys.factor("Q").T
    V = rng.standard_normal((N, L + 1, p)) @ sys.factor("R").T
    inputs = U.T.reshape(N, L, m)

    x = X0_mean.T + xi
    Y = np.empty((N, L + 1, p))
    Y[:, 0] = x @ sys.C.T + V[:, 0]
    for h in range(L):
        x = x @ sys.A.T + inputs[:, h] @ sys.B.T + W[:, h]
        Y[:, h + 1] = x @ sys.C.T + V[:, h + 1]

    noise = {}
    if keep_noise:
        noise = dict(Xi=xi.T, Omega=W.reshape(N, L * n).T, V=V.reshape(N, (L + 1) * p).T)
    return TrajectoryBatch(U=U, Y=Y.reshape(N, (L + 1) * p).T, X0_mean=X0_mean, L=L, **gen_params, **noise)


def collect_batch(sys, N, L, sigma_x0=100.0, sigma_u=100.0, P_xi=None, rng=None, keep_noise=False):
    """Draw means and inputs with isotropic Gaussians, then run the experiments.

    ``x0_mean^i ~ N(0, sigma_x0^2 I)`` and ``u_h^i ~ N(0, sigma_u^2 I)``.
    ``rng`` may be a Generator or an integer seed (recorded in the batch).
    """
    if N < 1:
        raise ValueError(f"N must be at least 1, got {N}")
    if L < sys.n:
        raise AssumptionViolation(f"sequence length L={L} is shorter than the state dimension n={sys.n}")
    if sigma_x0 < 0 or sigma_u < 0:
        raise ValueError("excitation standard deviations must be non-negative")
    seed = int(rng) if isinstance(rng, (int, np.integer)) else None
    rng = as_rng(rng)
    X0_mean = sigma_x0 * rng.standard_normal((sys.n, N))
    U = sigma_u * rng.standard_normal((N, L * sys.m)).T
    return assemble_batch(
        sys, X0_mean, U, rng, P_xi=P_xi, keep_noise=keep_noise,
        seed=seed, sigma_x0=float(sigma_x0), sigma_u=float(sigma_u),
    )


def persistent_excitation_check(batch):
    """Full-row-rank test of ``[X0_mean; U]``.

    Returns:
        (satisfied, numerical rank, smallest singular value)
    """
    M = batch.regressor()
    rows = M.shape[0]
    s = np.linalg.svd(M, compute_uv=False)
    sigma_min = float(s[rows - 1]) if len(s) >= rows else 0.0
    rank = numerical_rank(M)
    return rank == rows, rank, sigma_min


def _fmt(values):
    return " ".join(repr(float(v)) for v in values)


def save_batch(batch, path):
    """Write ``batch`` as a versioned text file, one experiment per line per section."""
    sections = [("X0", batch.X0_mean), ("U", batch.U), ("Y", batch.Y)]
    for name, arr in (("XI", batch.Xi), ("OMEGA", batch.Omega), ("V", batch.V)):
        if arr is not None:
            sections.append((name, arr))
    N, L, n, m, p = batch.dims

    def opt(v):
        return "none" if v is None else repr(v)

    lines = [
        MAGIC,
        f"N={N} L={L} n={n} m={m} p={p} seed={opt(batch.seed)} "
        f"sigma_x0={opt(batch.sigma_x0)} sigma_u={opt(batch.sigma_u)}",
    ]
    for name, arr in sections:
        lines.append(f"[{name}] {arr.shape[1]}")
        lines.extend(_fmt(col) for col in arr.T)
    Path(path).write_text("\n".join(lines) + "\n")


def load_batch(path):
    """Inverse of :func:`save_batch`.

    Raises:
        BatchParseError: with the offending line (and field) number.
    """
    text = Path(path).read_text().splitlines()
    if not text or text[0].strip() != MAGIC:
        raise BatchParseError(f"missing magic header {MAGIC!r}", line=1)
    if len(text) < 2:
        raise BatchParseError("missing dimension header", line=2)
    header = {}
    for j, item in enumerate(text[1].split()):
        key, sep, value = item.partition("=")
        if not sep:
            raise BatchParseError(f"expected key=value, got {item!r}", line=2, offset=j)
        header[key] = value
    try:
        N, L, n, m, p = (int(header[k]) for k in ("N", "L", "n", "m", "p"))
    except (KeyError, ValueError) as exc:
        raise BatchParseError(f"bad dimension header: {exc}", line=2) from None

    def opt(key, conv):
        v = header.get(key, "none")
        return None if v == "none" else conv(v)

    widths = {
        "X0": (n, "n"),
        "U": (L * m, "L*m"),
        "Y": ((L + 1) * p, "(L+1)*p"),
        "XI": (n, "n"),
        "OMEGA": (L * n, "L*n"),
        "V": ((L + 1) * p, "(L+1)*p"),
    }
    arrays = {}
    i = 2
    while i < len(text):
        line = text[i].strip()
        if not line:
            i += 1
            continue
        if not (line.startswith("[") and "]" in line):
            raise BatchParseError(f"expected a section header, got {line[:40]!r}", line=i + 1)
        name, _, count = line[1:].partition("]")
        if name not in widths:
            raise BatchParseError(f"unknown section {name!r}", line=i + 1)
        width, label = widths[name]
        try:
            count = int(count)
        except ValueError:
            raise BatchParseError(f"section {name} lacks a row count", line=i + 1) from None
        if count != N:
            raise BatchParseError(f"section {name} has {count} experiments, header says N={N}", line=i + 1)
        block = np.empty((N, width))
        for r in range(N):
            lineno = i + 2 + r
            if lineno > len(text):
                raise BatchParseError(f"section {name} truncated after {r} experiments", line=lineno)
            fields = text[lineno - 1].split()
            if len(fields) != width:
                raise BatchParseError(
                    f"section {name} needs {label} = {width} values per experiment, got {len(fields)}",
                    line=lineno,
                )
            for j, f in enumerate(fields):
                try:
                    block[r, j] = float(f)
                except ValueError:
                    raise BatchParseError(f"not a number: {f!r}", line=lineno, offset=j) from None
        arrays[name] = block.T
        i += 1 + N
    for name in ("X0", "U", "Y"):
        if name not in arrays:
            raise BatchParseError(f"missing section [{name}]", line=len(text))
    return TrajectoryBatch(
        U=arrays["U"],
        Y=arrays["Y"],
        X0_mean=arrays["X0"],
        L=L,
        seed=opt("seed", int),
        sigma_x0=opt("sigma_x0", float),
        sigma_u=opt("sigma_u", float),
        Xi=arrays.get("XI"),
        Omega=arrays.get("OMEGA"),
        V=arrays.get("V"),
    )
