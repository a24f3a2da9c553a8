"""Stochastic simulation of the noisy dynamics and its Gaussian surrogate.

Ensembles are integrated in fixed blocks of paths, each block drawing its
noise from a counter-based generator keyed by (seed, block index), so results
are bitwise reproducible and independent of how blocks are scheduled.  Noise
enters the momentum equation only.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.linalg as sla
from scipy.spatial import cKDTree

from .covflow import drift_matrix
from .errors import MethodError, ParameterError
from .linear_stability import flow_zero_noise, lyapunov_H
from .model import ModelSpec

log = logging.getLogger(__name__)

#: paths per noise block; fixed so that partitioning does not change streams
BLOCK = 4096


def _block_rng(seed: int, block_index: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=[seed & 0xFFFFFFFFFFFFFFFF, block_index]))


def _block_normals(rng: np.random.Generator, m: int, width: int) -> np.ndarray:
    """Draw a full block of normals and slice to m rows.

    Always consuming BLOCK rows keeps every path's noise a pure function of
    (seed, block index, step), independent of how many paths the caller runs.
    """
    return rng.standard_normal((BLOCK, width))[:m]


@dataclass
class TrajectoryBatch:
    """Seeded ensemble of sample paths on a fixed output grid.

    states has shape (n_paths, n_times, 2d).  coupled, when present, holds the
    deterministic path "ode" (n_times, 2d) and the parallel ensembles "Y" and
    "Z" built from the same Brownian increments, with Z = ode + sqrt(2 eps) Y
    holding exactly on the grid.
    """

    grid: np.ndarray
    states: np.ndarray
    seed: int
    scheme: str
    epsilon: float
    excluded: int = 0
    coupled: Optional[dict] = None


_BLOWUP = 1e12


def integrate_sde(
    spec: ModelSpec,
    x0,
    t_end: float,
    dt: float,
    n_paths: int,
    seed: int,
    scheme: str = "baoab",
    store_every: int = 1,
    couple_fluctuation: bool = False,
    store_indices=None,
) -> TrajectoryBatch:
    """Simulate dq = p dt, dp = -F(q) dt - gamma p dt + sqrt(2 eps) dB.

    Schemes: "euler_maruyama" and "baoab" (the friction-noise substep is an
    exact Ornstein-Uhlenbeck update).  At eps = 0 both reduce to deterministic
    integrators of the zero-noise flow at their respective orders.  Paths that
    leave [-1e12, 1e12] or produce non-finite values are excluded and counted.
    With couple_fluctuation (Euler-Maruyama only) the Gaussian fluctuation Y
    and the surrogate Z share the Brownian increments of the main ensemble.
    """
    if scheme not in ("euler_maruyama", "baoab"):
        raise ParameterError(f"unknown scheme {scheme!r}")
    if couple_fluctuation and scheme != "euler_maruyama":
        raise ParameterError("coupled fluctuation runs require the euler_maruyama scheme")
    if dt <= 0 or t_end < 0 or n_paths < 1:
        raise ParameterError("need dt > 0, t_end >= 0, n_paths >= 1")
    d = spec.dim
    eps = spec.epsilon
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (2 * d,):
        raise ParameterError(f"x0 must have shape ({2 * d},)")
    n_steps = int(round(t_end / dt))
    if store_indices is None:
        store_idx = np.arange(0, n_steps + 1, store_every)
    else:
        store_idx = np.unique(np.concatenate([[0], np.asarray(store_indices, dtype=int)]))
        if store_idx[0] < 0 or store_idx[-1] > n_steps:
            raise ParameterError("store_indices must lie in [0, n_steps]")
    grid = store_idx * dt
    n_stored = len(store_idx)

    ode_path = None
    A_ode = None
    if couple_fluctuation:
        ode = flow_zero_noise(spec, x0, t_end, dt)
        ode_path = ode.states  # (n_steps+1, 2d)
        A_ode = [drift_matrix(spec, ode_path[k][:d]) for k in range(n_steps + 1)]

    F = spec.force.eval_F
    g = spec.gamma
    c_ou = math.exp(-g * dt)
    sig_ou = math.sqrt(max(eps / g * (1.0 - c_ou**2), 0.0))
    sqrt2eps_dt = math.sqrt(2.0 * eps * dt)

    states = np.empty((n_paths, n_stored, 2 * d))
    y_states = np.empty((n_paths, n_stored, 2 * d)) if couple_fluctuation else None
    alive_all = np.ones(n_paths, dtype=bool)

    n_blocks = (n_paths + BLOCK - 1) // BLOCK
    for b in range(n_blocks):
        lo, hi = b * BLOCK, min((b + 1) * BLOCK, n_paths)
        m = hi - lo
        rng = _block_rng(seed, b)
        q = np.tile(x0[:d], (m, 1))
        p = np.tile(x0[d:], (m, 1))
        y = np.zeros((m, 2 * d)) if couple_fluctuation else None
        alive = np.ones(m, dtype=bool)
        states[lo:hi, 0, :d] = q
        states[lo:hi, 0, d:] = p
        if couple_fluctuation:
            y_states[lo:hi, 0] = 0.0
        si = 1
        for k in range(1, n_steps + 1):
            xi = _block_normals(rng, m, d)
            if scheme == "baoab":
                p = p - (0.5 * dt) * np.asarray(F(q), dtype=float)
                q = q + (0.5 * dt) * p
                p = c_ou * p + sig_ou * xi
                q = q + (0.5 * dt) * p
                p = p - (0.5 * dt) * np.asarray(F(q), dtype=float)
            else:
                fq = np.asarray(F(q), dtype=float)
                dq = dt * p
                dp = dt * (-fq - g * p) + sqrt2eps_dt * xi
                if couple_fluctuation:
                    A = A_ode[k - 1]
                    dy = dt * (y @ A.T)
                    dy[:, d:] += math.sqrt(dt) * xi
                    y = y + dy
                q = q + dq
                p = p + dp
            with np.errstate(over="ignore", invalid="ignore"):
                bad = ~(
                    np.all(np.isfinite(q), axis=1)
                    & np.all(np.isfinite(p), axis=1)
                    & (np.sum(q * q, axis=1) + np.sum(p * p, axis=1) < _BLOWUP**2)
                )
            if np.any(bad):
                alive &= ~bad
                q[bad] = 0.0
                p[bad] = 0.0
            if si < n_stored and k == store_idx[si]:
                states[lo:hi, si, :d] = q
                states[lo:hi, si, d:] = p
                if couple_fluctuation:
                    y_states[lo:hi, si] = y
                si += 1
        alive_all[lo:hi] = alive

    excluded = int(np.sum(~alive_all))
    if excluded:
        log.warning("excluded %d exploded paths out of %d", excluded, n_paths)
        states = states[alive_all]
        if couple_fluctuation:
            y_states = y_states[alive_all]

    coupled = None
    if couple_fluctuation:
        ode_stored = ode_path[store_idx]
        z = ode_stored[None, :, :] + math.sqrt(2.0 * eps) * y_states
        coupled = {"ode": ode_stored, "Y": y_states, "Z": z}
    return TrajectoryBatch(
        grid=grid,
        states=states,
        seed=seed,
        scheme=scheme,
        epsilon=eps,
        excluded=excluded,
        coupled=coupled,
    )


def _vanloan_step_noise(A: np.ndarray, dt: float, J: np.ndarray):
    """Exact one-step propagator and noise covariance factor for frozen A.

    E = expm(A dt) and Q = int_0^dt e^{A s} J e^{A^T s} ds via the block
    exponential of [[A, J], [0, -A^T]] dt; returns (E, cholesky(Q)).
    """
    n = A.shape[0]
    C = np.zeros((2 * n, 2 * n))
    C[:n, :n] = A
    C[:n, n:] = J
    C[n:, n:] = -A.T
    Phi = sla.expm(C * dt)
    E = Phi[:n, :n]
    Q = Phi[:n, n:] @ E.T
    Q = 0.5 * (Q + Q.T)
    jitter = 1e-15 * max(np.trace(Q) / n, 1e-300)
    L = np.linalg.cholesky(Q + jitter * np.eye(n))
    return E, L


def integrate_fluctuation(
    spec: ModelSpec,
    x0,
    t_end: float,
    dt: float,
    n_paths: int,
    seed: int,
    method: str = "exact",
    store_every: int = 1,
) -> TrajectoryBatch:
    """Simulate the Gaussian fluctuation dY = A(q_t) Y dt + dB restricted to momenta.

    Y starts at zero and rides along the deterministic path from x0.  The
    "exact" method freezes A on each step and propagates with the matrix
    exponential and the exact one-step noise covariance, so the per-time law
    is unbiased for piecewise-constant A (and exactly right for linear
    forces); "em" uses shared-increment Euler-Maruyama updates.
    """
    if method not in ("exact", "em"):
        raise ParameterError(f"unknown method {method!r}")
    d = spec.dim
    x0 = np.asarray(x0, dtype=float)
    ode = flow_zero_noise(spec, x0, t_end, dt)
    n_steps = len(ode.grid) - 1
    store_idx = np.arange(0, n_steps + 1, store_every)
    grid = store_idx * dt
    n_stored = len(store_idx)
    J = np.zeros((2 * d, 2 * d))
    J[d:, d:] = np.eye(d)

    constant_A = spec.force.kind == "linear"
    if method == "exact":
        if constant_A:
            E0, L0 = _vanloan_step_noise(drift_matrix(spec, ode.states[0][:d]), dt, J)
            steps = [(E0, L0)] * n_steps
        else:
            steps = [
                _vanloan_step_noise(drift_matrix(spec, ode.states[k][:d]), dt, J)
                for k in range(n_steps)
            ]
    else:
        A_list = [drift_matrix(spec, ode.states[k][:d]) for k in range(n_steps)]

    states = np.empty((n_paths, n_stored, 2 * d))
    n_blocks = (n_paths + BLOCK - 1) // BLOCK
    sqrt_dt = math.sqrt(dt)
    for b in range(n_blocks):
        lo, hi = b * BLOCK, min((b + 1) * BLOCK, n_paths)
        m = hi - lo
        rng = _block_rng(seed, b)
        y = np.zeros((m, 2 * d))
        states[lo:hi, 0] = 0.0
        si = 1
        for k in range(1, n_steps + 1):
            if method == "exact":
                E, L = steps[k - 1]
                xi = _block_normals(rng, m, 2 * d)
                y = y @ E.T + xi @ L.T
            else:
                xi = _block_normals(rng, m, d)
                dy = dt * (y @ A_list[k - 1].T)
                dy[:, d:] += sqrt_dt * xi
                y = y + dy
            if si < n_stored and k == store_idx[si]:
                states[lo:hi, si] = y
                si += 1
    return TrajectoryBatch(
        grid=grid,
        states=states,
        seed=seed,
        scheme=f"fluctuation_{method}",
        epsilon=spec.epsilon,
        coupled={"ode": ode.states[store_idx]},
    )


def _omega(n: int, d: int) -> float:
    w = 1.0
    for j in range(2, n + 1):
        w *= d + 2 * (j - 1)
    return w


def moment_bound(spec: ModelSpec, x, t, n: int = 1) -> np.ndarray:
    """Bound kappa0^n omega_n (H(x) exp(-lam t) + d eps / lam)^n on E|X_t|^(2n)."""
    if n < 0:
        raise ParameterError("moment order must be nonnegative")
    t = np.asarray(t, dtype=float)
    h = float(lyapunov_H(spec, np.asarray(x, dtype=float)))
    core = h * np.exp(-spec.lam * t) + spec.dim * spec.epsilon / spec.lam
    return spec.kappa0**n * _omega(n, spec.dim) * core**n


def exp_moment_bound(spec: ModelSpec, x, t: float) -> float:
    """Largest a below which E[exp(a |X_t|^2)] < 2 is guaranteed."""
    h = float(lyapunov_H(spec, np.asarray(x, dtype=float)))
    core = h * math.exp(-spec.lam * t) + spec.dim * spec.epsilon / spec.lam
    return 1.0 / (2.0 * (spec.dim + 2) * spec.kappa0 * core)


@dataclass
class TVEstimate:
    estimate: float
    stderr: float
    method: str


def _knn_tv(s1: np.ndarray, s2: np.ndarray, k: int, seed: int) -> TVEstimate:
    rng = np.random.default_rng(seed)
    half1, half2 = len(s1) // 2, len(s2) // 2
    i1 = rng.permutation(len(s1))
    i2 = rng.permutation(len(s2))
    train = np.vstack([s1[i1[:half1]], s2[i2[:half2]]])
    labels = np.concatenate([np.zeros(half1, dtype=int), np.ones(half2, dtype=int)])
    tree = cKDTree(train)
    accs = []
    ns = []
    for cls, test in ((0, s1[i1[half1:]]), (1, s2[i2[half2:]])):
        _, idx = tree.query(test, k=k)
        votes = labels[idx].mean(axis=1) if k > 1 else labels[idx].astype(float)
        pred = (votes > 0.5).astype(int)
        ties = votes == 0.5
        if np.any(ties):
            pred[ties] = rng.integers(0, 2, size=int(np.sum(ties)))
        accs.append(float(np.mean(pred == cls)))
        ns.append(len(test))
    bal = 0.5 * (accs[0] + accs[1])
    est = max(0.0, 2.0 * bal - 1.0)
    var = sum(a * (1 - a) / n for a, n in zip(accs, ns)) / 4.0
    return TVEstimate(estimate=est, stderr=2.0 * math.sqrt(var), method="classifier_knn")


def empirical_tv(
    samples1,
    samples2,
    method: str = "gaussian_momentmatch",
    k: int = 5,
    seed: int = 0,
    n_bootstrap: int = 16,
) -> TVEstimate:
    """Total-variation estimate between two point clouds.

    "gaussian_momentmatch" fits a Gaussian to each cloud and evaluates the TV
    between the fits (deterministic quadrature in dimension <= 2, seeded Monte
    Carlo otherwise); its stderr comes from a small bootstrap over the clouds.
    "classifier_knn" converts the held-out balanced accuracy of a k-nearest
    neighbour two-sample classifier: TV ~ 2 accuracy - 1, clamped to [0, 1].
    """
    s1 = np.atleast_2d(np.asarray(samples1, dtype=float))
    s2 = np.atleast_2d(np.asarray(samples2, dtype=float))
    if s1.shape[1] != s2.shape[1]:
        raise ParameterError("sample clouds must share a dimension")
    if len(s1) < 4 or len(s2) < 4:
        raise ParameterError("need at least 4 points per cloud")
    if method == "classifier_knn":
        return _knn_tv(s1, s2, k, seed)
    if method != "gaussian_momentmatch":
        raise MethodError(f"unknown method {method!r}")

    from .gaussian_tv import Gaussian, tv_gaussian

    def fit_tv(a: np.ndarray, b: np.ndarray) -> float:
        ga = Gaussian(mean=a.mean(axis=0), cov=np.atleast_2d(np.cov(a, rowvar=False)))
        gb = Gaussian(mean=b.mean(axis=0), cov=np.atleast_2d(np.cov(b, rowvar=False)))
        if ga.dim <= 2:
            return tv_gaussian(ga, gb, method="cdf_quadrature").value
        return tv_gaussian(ga, gb, method="monte_carlo", n=100_000, seed=seed).value

    try:
        est = fit_tv(s1, s2)
    except np.linalg.LinAlgError:
        warnings.warn("degenerate sample covariance; falling back to the knn classifier")
        return _knn_tv(s1, s2, k, seed)
    rng = np.random.default_rng(seed)
    boots = []
    for _ in range(n_bootstrap):
        r1 = s1[rng.integers(0, len(s1), len(s1))]
        r2 = s2[rng.integers(0, len(s2), len(s2))]
        boots.append(fit_tv(r1, r2))
    return TVEstimate(
        estimate=est,
        stderr=float(np.std(boots, ddof=1)) if n_bootstrap > 1 else 0.0,
        method="gaussian_momentmatch",
    )


def pinsker_kl_bound(
    spec: ModelSpec,
    x0,
    t_end: float,
    dt: float,
    n_paths: int,
    seed: int,
    scheme: str = "euler_maruyama",
) -> float:
    """Monte Carlo KL-type bound whose square root dominates d_TV(X_t, Z_t).

    Estimates (1 / 2 eps) int_0^t E |F(q_s^eps) - F(q_s) - DF(q_s)(q_s^eps - q_s)|^2 ds
    by trapezoidal accumulation along simulated paths against the
    deterministic position path.  Identically zero for linear forces.
    """
    if spec.epsilon <= 0:
        raise ParameterError("the bound needs a positive noise level")
    d = spec.dim
    x0 = np.asarray(x0, dtype=float)
    ode = flow_zero_noise(spec, x0, t_end, dt)
    q_det = ode.states[:, :d]
    F = spec.force.eval_F
    f_det = np.asarray(F(q_det), dtype=float)
    DF_det = np.asarray(spec.force.eval_DF(q_det), dtype=float).reshape(-1, d, d)
    n_steps = len(ode.grid) - 1

    g = spec.gamma
    eps = spec.epsilon
    sqrt2eps_dt = math.sqrt(2.0 * eps * dt)
    total = 0.0
    n_blocks = (n_paths + BLOCK - 1) // BLOCK
    for b in range(n_blocks):
        lo, hi = b * BLOCK, min((b + 1) * BLOCK, n_paths)
        m = hi - lo
        rng = _block_rng(seed, b)
        q = np.tile(x0[:d], (m, 1))
        p = np.tile(x0[d:], (m, 1))
        acc = np.zeros(m)

        def integrand(k, qq):
            diff = qq - q_det[k]
            lin = f_det[k] + np.einsum("ij,nj->ni", DF_det[k], diff)
            rem = np.asarray(F(qq), dtype=float) - lin
            return np.sum(rem * rem, axis=1)

        prev = integrand(0, q)
        for k in range(1, n_steps + 1):
            xi = _block_normals(rng, m, d)
            fq = np.asarray(F(q), dtype=float)
            q = q + dt * p
            p = p + dt * (-fq - g * p) + sqrt2eps_dt * xi
            cur = integrand(k, q)
            acc += 0.5 * dt * (prev + cur)
            prev = cur
        total += float(np.sum(acc))
    return total / n_paths / (2.0 * eps)
