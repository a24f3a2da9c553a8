"""Stable Lyapunov equations with degenerate right-hand sides.

Solves U^T X + X U = -W (left orientation) or U X + X U^T = -W (right) for a
Hurwitz U, certifies positive definiteness of the solution when the forcing W
dominates the momentum block and the lower-left block of U is invertible, and
derives the stationary fluctuation covariance, the drift metric, and the
drift-metric radius from a model.
"""

from __future__ import annotations

import logging
import math
import threading
import warnings
import weakref
from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.linalg as sla

from .errors import (
    CertificationUnavailableWarning,
    DegenerateModelError,
    ParameterError,
    StabilityError,
)
from .model import ModelSpec, sample_ball

log = logging.getLogger(__name__)

_STABILITY_BAND = 1e-10


def _check_square(U, name):
    U = np.asarray(U, dtype=float)
    if U.ndim != 2 or U.shape[0] != U.shape[1]:
        raise ParameterError(f"{name} must be square, got shape {U.shape}")
    return U


@dataclass
class LyapunovSolution:
    X: np.ndarray
    residual_fro: float
    min_eig: float
    orientation: str
    certified_pd: bool = False

    @property
    def scale(self) -> float:
        return float(np.linalg.norm(self.X, "fro"))


def _schur_solve_left(U: np.ndarray, W: np.ndarray, ordering: str) -> np.ndarray:
    """Bartels-Stewart: U^T X + X U = -W via complex Schur back-substitution."""
    n = U.shape[0]
    sort = None
    if ordering in ("ascending_real", "descending_real"):
        median_re = float(np.median(np.linalg.eigvals(U).real))
        if ordering == "ascending_real":
            sort = lambda z: z.real < median_re
        else:
            sort = lambda z: z.real > median_re
    if sort is None:
        T, Q = sla.schur(U.astype(complex), output="complex")
    else:
        T, Q, _ = sla.schur(U.astype(complex), output="complex", sort=sort)
    Wt = Q.conj().T @ W.astype(complex) @ Q
    Xt = np.zeros((n, n), dtype=complex)
    L = T.conj().T  # lower triangular
    for j in range(n):
        rhs = -Wt[:, j]
        if j > 0:
            rhs = rhs - Xt[:, :j] @ T[:j, j]
        A = L + T[j, j] * np.eye(n)
        Xt[:, j] = sla.solve_triangular(A, rhs, lower=True)
    X = Q @ Xt @ Q.conj().T
    return X.real


def _kron_solve_left(U: np.ndarray, W: np.ndarray) -> np.ndarray:
    """Dense Kronecker vectorization of U^T X + X U = -W (column-major vec)."""
    n = U.shape[0]
    I = np.eye(n)
    # vec(A X B) = (B^T kron A) vec(X) with column-major vec.
    K = np.kron(I, U.T) + np.kron(U.T, I)
    x = np.linalg.solve(K, -W.reshape(-1, order="F"))
    return x.reshape((n, n), order="F")


def _momentum_forcing_floor(W: np.ndarray) -> float:
    """Largest a >= 0 with x.Wx >= a |p|^2, p the second half of x (0 if none)."""
    n = W.shape[0]
    if n % 2 != 0:
        return 0.0
    d = n // 2
    P = np.zeros((n, n))
    P[d:, d:] = np.eye(d)
    lo, hi = 0.0, float(np.max(np.linalg.eigvalsh(W))) + 1.0
    if np.min(np.linalg.eigvalsh(W)) < -1e-12 * max(1.0, np.trace(W)):
        return 0.0
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if np.min(np.linalg.eigvalsh(W - mid * P)) >= -1e-13 * max(1.0, np.trace(W)):
            lo = mid
        else:
            hi = mid
    return lo


def solve_lyapunov_stable(
    U,
    W,
    orientation: str = "left",
    method: str = "schur",
    ordering: str = "none",
    certify: bool = True,
) -> LyapunovSolution:
    """Unique solution of the stable Lyapunov equation, symmetrized on output.

    orientation "left" solves U^T X + X U = -W, "right" solves
    U X + X U^T = -W.  All eigenvalues of U must have strictly negative real
    part (a real part inside the tolerance band raises).  W must be symmetric
    positive semi-definite.  When certify is set, positive definiteness is
    certified from the structure (momentum-block forcing floor a > 0 and an
    invertible lower-left block of the coefficient matrix); if the block is
    singular a warning is emitted and the solution is still returned.
    """
    U = _check_square(U, "U")
    W = _check_square(W, "W")
    if U.shape != W.shape:
        raise ParameterError("U and W must have matching shapes")
    if orientation not in ("left", "right"):
        raise ParameterError(f"unknown orientation {orientation!r}")
    if np.linalg.norm(W - W.T, "fro") > 1e-10 * max(1.0, np.linalg.norm(W, "fro")):
        raise ParameterError("W must be symmetric")
    W = 0.5 * (W + W.T)
    if float(np.min(np.linalg.eigvalsh(W))) < -1e-10 * max(1.0, float(np.trace(W))):
        raise ParameterError("W must be positive semi-definite")

    eigs = np.linalg.eigvals(U)
    band = _STABILITY_BAND * max(1.0, np.linalg.norm(U, 2))
    if np.any(eigs.real >= -band):
        raise StabilityError(
            f"U is not (strictly) stable: max Re eigenvalue {np.max(eigs.real):.3e}"
        )

    Ueff = U if orientation == "left" else U.T
    if method == "schur":
        X = _schur_solve_left(Ueff, W, ordering)
    elif method == "kron":
        if U.shape[0] > 20:
            raise ParameterError("kron method is limited to matrices of size <= 20")
        X = _kron_solve_left(Ueff, W)
    else:
        raise ParameterError(f"unknown method {method!r}")
    X = 0.5 * (X + X.T)

    if orientation == "left":
        resid = U.T @ X + X @ U + W
    else:
        resid = U @ X + X @ U.T + W
    residual_fro = float(np.linalg.norm(resid, "fro"))
    min_eig = float(np.min(np.linalg.eigvalsh(X)))

    certified = False
    if certify:
        n = U.shape[0]
        if float(np.min(np.linalg.eigvalsh(W))) > 1e-12 * max(1.0, float(np.trace(W))):
            # strictly positive definite forcing certifies directly
            return LyapunovSolution(
                X=X,
                residual_fro=residual_fro,
                min_eig=min_eig,
                orientation=orientation,
                certified_pd=min_eig > 0,
            )
        a_floor = _momentum_forcing_floor(W)
        certified_possible = a_floor > 0 and n % 2 == 0
        if certified_possible:
            d = n // 2
            # For the right orientation the equation for X matches the left one
            # with U replaced by U^T, whose lower-left block is U12^T.
            B = U[n - d :, :d] if orientation == "left" else U[:d, n - d :].T
            sv = np.linalg.svd(B, compute_uv=False)
            if sv[-1] > 1e-12 * max(1.0, sv[0]):
                certified = min_eig > 0
            else:
                warnings.warn(
                    "lower-left block is singular; positive definiteness cannot be certified",
                    CertificationUnavailableWarning,
                )
    return LyapunovSolution(
        X=X,
        residual_fro=residual_fro,
        min_eig=min_eig,
        orientation=orientation,
        certified_pd=certified,
    )


def lyapunov_quadrature(U, W, T: float, orientation: str = "left", n_intervals: Optional[int] = None) -> np.ndarray:
    """Truncated integral representation of the Lyapunov solution.

    Computes int_0^T e^{U^T t} W e^{U t} dt (left orientation; the transpose
    pattern for right) by composite 8-node Gauss-Legendre, accumulating the
    interval propagators from a single matrix exponential per interval width.
    Serves as an independent cross-check of the algebraic solvers.
    """
    U = _check_square(U, "U")
    W = _check_square(W, "W")
    if orientation == "right":
        U = U.T
    if n_intervals is None:
        eigs = np.linalg.eigvals(U)
        rho = float(np.max(np.abs(eigs)))
        n_intervals = int(max(128, min(40000, math.ceil(3.0 * T * max(1.0, rho)))))
    h = T / n_intervals
    nodes, weights = np.polynomial.legendre.leggauss(8)
    # Map from [-1, 1] to [0, h].
    offs = 0.5 * h * (nodes + 1.0)
    w = 0.5 * h * weights
    E_off = [sla.expm(U * t) for t in offs]
    E_h = sla.expm(U * h)
    P = np.eye(U.shape[0])
    acc = np.zeros_like(W)
    for _ in range(n_intervals):
        for Ej, wj in zip(E_off, w):
            G = P @ Ej
            acc += wj * (G.T @ W @ G)
        P = P @ E_h
    return 0.5 * (acc + acc.T)


@dataclass
class DriftMetric:
    """Contraction metric Gamma with its norm-equivalence constant xi."""

    gamma_matrix: np.ndarray
    xi: float
    solution: LyapunovSolution


def gamma_matrix(A) -> DriftMetric:
    """Solve A^T Gamma + Gamma A = -I and report the tightest xi with
    xi |x|^2 <= <x, Gamma x> <= |x|^2 / xi."""
    A = _check_square(A, "A")
    sol = solve_lyapunov_stable(A, np.eye(A.shape[0]), orientation="left")
    eigs = np.linalg.eigvalsh(sol.X)
    xi = float(min(eigs[0], 1.0 / eigs[-1]))
    return DriftMetric(gamma_matrix=sol.X, xi=xi, solution=sol)


def drift_matrix_at_zero(spec: ModelSpec) -> np.ndarray:
    from .covflow import drift_matrix

    return drift_matrix(spec, np.zeros(spec.dim))


_cache_lock = threading.Lock()
_spec_cache: "weakref.WeakKeyDictionary[ModelSpec, dict]" = weakref.WeakKeyDictionary()


def _cache_for(spec: ModelSpec) -> dict:
    with _cache_lock:
        entry = _spec_cache.get(spec)
        if entry is None:
            entry = {}
            _spec_cache[spec] = entry
        return entry


def sigma_matrix(spec: ModelSpec) -> np.ndarray:
    """Stationary fluctuation covariance: the unique SPD solution of
    A Sigma + Sigma A^T = -J with A the linearization at the origin."""
    cache = _cache_for(spec)
    with _cache_lock:
        if "sigma" in cache:
            return cache["sigma"]
    A = drift_matrix_at_zero(spec)
    d = spec.dim
    DF0 = np.asarray(spec.force.eval_DF(np.zeros(d)), dtype=float).reshape(d, d)
    if np.any(np.linalg.eigvals(DF0).real <= 0):
        raise StabilityError(
            "DF(0) has an eigenvalue with non-positive real part; "
            "the model fails the linear stability verdict at the origin"
        )
    J = np.zeros((2 * d, 2 * d))
    J[d:, d:] = np.eye(d)
    sol = solve_lyapunov_stable(A, J, orientation="right")
    with _cache_lock:
        cache["sigma"] = sol.X
        cache["sigma_solution"] = sol
    return sol.X


def sigma_solution(spec: ModelSpec) -> LyapunovSolution:
    sigma_matrix(spec)
    return _cache_for(spec)["sigma_solution"]


def drift_metric(spec: ModelSpec) -> DriftMetric:
    cache = _cache_for(spec)
    with _cache_lock:
        if "drift_metric" in cache:
            return cache["drift_metric"]
    dm = gamma_matrix(drift_matrix_at_zero(spec))
    with _cache_lock:
        cache["drift_metric"] = dm
    return dm


_DELTA_CAP = 1.0
_DELTA_FLOOR = 1e-8


def drift_metric_delta(
    spec: ModelSpec, cap: float = _DELTA_CAP, n_directions: int = 64, store: bool = True
) -> float:
    """Largest sampled radius on which the linearization error stays metric-small.

    Finds by bisection the largest delta <= cap such that, over sampled
    directions |q| = delta, the symmetrized perturbation
    (A(q) - A)^T Gamma + Gamma (A(q) - A) has operator norm at most 1/2.  The
    result is stored on the spec as delta_nbhd.  Failure even at 1e-8 raises.
    """
    from .covflow import drift_matrix

    dm = drift_metric(spec)
    G = dm.gamma_matrix
    A0 = drift_matrix_at_zero(spec)
    dirs = sample_ball(spec.dim, 1.0, n_directions + 1)[1:]
    norms = np.linalg.norm(dirs, axis=1, keepdims=True)
    dirs = dirs / np.maximum(norms, 1e-300)

    def worst(delta: float) -> float:
        vals = []
        for u in dirs:
            D = drift_matrix(spec, delta * u) - A0
            S = D.T @ G + G @ D
            vals.append(np.linalg.norm(S, 2))
        return float(np.max(vals))

    if worst(cap) <= 0.5:
        delta = cap
    elif worst(_DELTA_FLOOR) > 0.5:
        raise DegenerateModelError(
            "the drift-metric condition fails even at radius 1e-8; "
            "the Jacobian is too irregular near the origin"
        )
    else:
        lo, hi = _DELTA_FLOOR, cap
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            if worst(mid) <= 0.5:
                lo = mid
            else:
                hi = mid
        delta = lo

    _spot_check_drift(spec, delta, dm)
    if store:
        spec.delta_nbhd = delta
    return delta


def _spot_check_drift(spec: ModelSpec, delta: float, dm: DriftMetric, n: int = 16):
    """Spot-verify 2 <y, Gamma A(q) y> <= -(xi/2) <y, Gamma y> at |q| = delta."""
    from .covflow import drift_matrix

    rng = np.random.default_rng(7)
    G, xi = dm.gamma_matrix, dm.xi
    for _ in range(n):
        u = rng.standard_normal(spec.dim)
        u *= delta / np.linalg.norm(u)
        Aq = drift_matrix(spec, u)
        y = rng.standard_normal(2 * spec.dim)
        lhs = 2.0 * float(y @ (G @ (Aq @ y)))
        rhs = -(xi / 2.0) * float(y @ (G @ y))
        if lhs > rhs + 1e-9 * (1.0 + abs(rhs)):
            log.warning(
                "drift inequality spot check failed at delta=%.3e: lhs=%.6g rhs=%.6g",
                delta,
                lhs,
                rhs,
            )
            return
