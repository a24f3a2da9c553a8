"""Force fields, model parameters, and sampled verification of the standing assumptions.

A force field packages the drift F of the momentum equation together with its
Jacobian and, when available, the split F = grad(U) + ell into a gradient part
and a non-gradient part.  All evaluators are pure and broadcast over leading
axes: F maps (..., d) -> (..., d), DF maps (..., d) -> (..., d, d).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.stats import norm, qmc

from .errors import (
    ConsistencyError,
    DecompositionMissingError,
    DimensionMismatchError,
    ParameterError,
)

DEFAULT_TOL = 1e-9

# Fixed seed for the low-discrepancy sampler: reproducibility over exploration.
_QMC_SEED = 20240117


def sample_ball(dim: int, radius: float, n: int, seed: int = _QMC_SEED) -> np.ndarray:
    """Quasi-random points in the closed ball of given radius, origin included.

    Uses a scrambled Sobol sequence (deterministic for a fixed seed): the first
    dim coordinates give a direction through the Gaussian inverse CDF, the last
    one gives the radius with the volume-uniform u**(1/dim) profile.  Returns an
    (n, dim) array whose first row is the origin.
    """
    if n < 1:
        raise ParameterError("need at least one sample")
    if n == 1 or radius == 0.0:
        return np.zeros((n, dim))
    m = n - 1
    sampler = qmc.Sobol(d=dim + 1, scramble=True, seed=seed)
    # Sobol balance wants powers of two; draw the next one and slice.
    u = sampler.random(2 ** int(math.ceil(math.log2(max(m, 2)))))[:m]
    u = np.clip(u, 1e-12, 1.0 - 1e-12)
    g = norm.ppf(u[:, :dim])
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    r = radius * u[:, dim] ** (1.0 / dim)
    pts = np.zeros((n, dim))
    pts[1:] = g * r[:, None]
    return pts


def central_difference_jacobian(f: Callable, q: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Centered O(h^2) finite-difference Jacobian of f at a single point q."""
    q = np.asarray(q, dtype=float)
    d = q.shape[-1]
    cols = []
    for j in range(d):
        e = np.zeros(d)
        e[j] = h
        cols.append((np.asarray(f(q + e), dtype=float) - np.asarray(f(q - e), dtype=float)) / (2 * h))
    return np.stack(cols, axis=-1)


def central_difference_gradient(f: Callable, q: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Centered O(h^2) finite-difference gradient of a scalar function at q."""
    q = np.asarray(q, dtype=float)
    d = q.shape[-1]
    out = np.empty(d)
    for j in range(d):
        e = np.zeros(d)
        e[j] = h
        out[j] = (float(f(q + e)) - float(f(q - e))) / (2 * h)
    return out


@dataclass(eq=False)
class ForceField:
    """Drift of the momentum equation together with derivatives and metadata.

    kind is one of "linear", "gradient", "general".  For kind "linear" the
    matrix attribute holds M with F(q) = M q.  eval_U / eval_gradU / eval_ell
    are optional; when U and ell are both present they must satisfy
    F = grad(U) + ell at sampled points.
    """

    dim: int
    eval_F: Callable[[np.ndarray], np.ndarray]
    eval_DF: Callable[[np.ndarray], np.ndarray]
    kind: str
    eval_U: Optional[Callable[[np.ndarray], np.ndarray]] = None
    eval_gradU: Optional[Callable[[np.ndarray], np.ndarray]] = None
    eval_ell: Optional[Callable[[np.ndarray], np.ndarray]] = None
    matrix: Optional[np.ndarray] = None
    quadratic_growth: bool = False

    def has_decomposition(self) -> bool:
        return self.eval_U is not None and self.eval_ell is not None


@dataclass(eq=False)
class ModelSpec:
    """A force field with friction, temperature, and the derived certificate constants.

    lam is the exponential decay rate of the Lyapunov function; kappa0 the
    norm-equivalence constant; kappa = kappa0**2 the stability constant;
    delta_nbhd the drift-metric radius (None until computed); theta_exp the
    time-horizon exponent in (0, 1/3).
    """

    force: ForceField
    gamma: float
    epsilon: float
    alpha: float
    beta: float
    lam: float
    kappa0: float
    kappa: float
    delta_nbhd: Optional[float] = None
    theta_exp: float = 0.25

    def __post_init__(self):
        g, a, b, lam = self.gamma, self.alpha, self.beta, self.lam
        if g <= 0:
            raise ParameterError("friction gamma must be positive")
        if self.epsilon < 0:
            raise ParameterError("noise level epsilon must be nonnegative")
        if a <= 0:
            raise ParameterError("coercivity alpha must be positive")
        if not (0.0 < b < g):
            raise ParameterError("beta must lie strictly inside (0, gamma)")
        if not (0.0 < self.theta_exp < 1.0 / 3.0):
            raise ParameterError("theta_exp must lie strictly inside (0, 1/3)")
        if lam <= 0 or lam >= g:
            raise ParameterError("lam must lie in (0, gamma)")
        ok = (
            lam * (g - lam) / 2.0 <= a + 1e-12
            and 2.0 * lam / (g - lam) <= a + 1e-12
            and b**2 <= g * (g - lam) + 1e-12
        )
        if not ok:
            raise ParameterError("lam violates one of its three admissibility conditions")

    @property
    def dim(self) -> int:
        return self.force.dim


def make_linear_force(M) -> ForceField:
    """Force field F(q) = M q with the symmetric / skew-symmetric split.

    U(q) = <M_s q, q>/2 and ell(q) = M_a q, where M_s and M_a are the symmetric
    and skew-symmetric parts of M.  For symmetric M this reduces to the pure
    gradient case ell = 0.
    """
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise DimensionMismatchError(f"force matrix must be square, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise ParameterError("force matrix has non-finite entries")
    M = M.copy()
    d = M.shape[0]
    Ms = 0.5 * (M + M.T)
    Ma = 0.5 * (M - M.T)

    def eval_F(q):
        return np.asarray(q, dtype=float) @ M.T

    def eval_DF(q):
        q = np.asarray(q, dtype=float)
        return np.broadcast_to(M, q.shape[:-1] + (d, d))

    def eval_U(q):
        q = np.asarray(q, dtype=float)
        return 0.5 * np.einsum("...i,ij,...j->...", q, Ms, q)

    def eval_gradU(q):
        return np.asarray(q, dtype=float) @ Ms.T

    def eval_ell(q):
        return np.asarray(q, dtype=float) @ Ma.T

    return ForceField(
        dim=d,
        eval_F=eval_F,
        eval_DF=eval_DF,
        kind="linear",
        eval_U=eval_U,
        eval_gradU=eval_gradU,
        eval_ell=eval_ell,
        matrix=M,
        quadratic_growth=True,
    )


_PROBE_COUNT = 9


def make_gradient_force(
    dim: int,
    U: Callable,
    gradU: Callable,
    hessU: Callable,
    probe_radius: float = 1.0,
    tol: float = 1e-6,
    quadratic_growth: bool = False,
) -> ForceField:
    """Force field F = grad(U) for a user-supplied potential.

    The three callables are cross-checked at quasi-random probe points:
    gradU against centered differences of U, and hessU against centered
    differences of gradU.  Inconsistency raises naming the worst point.
    """
    probes = sample_ball(dim, probe_radius, _PROBE_COUNT)
    worst = (0.0, None)
    for q in probes:
        fd = central_difference_gradient(U, q)
        err = float(np.linalg.norm(np.asarray(gradU(q), dtype=float) - fd))
        scale = 1.0 + float(np.linalg.norm(fd))
        if err / scale > worst[0]:
            worst = (err / scale, q)
    if worst[0] > tol:
        raise ConsistencyError(
            f"gradU disagrees with finite differences of U (relative error "
            f"{worst[0]:.3e} at q={np.array2string(worst[1], precision=4)})"
        )
    worst = (0.0, None)
    for q in probes:
        fd = central_difference_jacobian(gradU, q)
        err = float(np.linalg.norm(np.asarray(hessU(q), dtype=float) - fd))
        scale = 1.0 + float(np.linalg.norm(fd))
        if err / scale > worst[0]:
            worst = (err / scale, q)
    if worst[0] > tol:
        raise ConsistencyError(
            f"hessU disagrees with finite differences of gradU (relative error "
            f"{worst[0]:.3e} at q={np.array2string(worst[1], precision=4)})"
        )
    g0 = np.asarray(gradU(np.zeros(dim)), dtype=float)
    if np.linalg.norm(g0) > tol:
        raise ConsistencyError("the origin is not a critical point of U: grad U(0) != 0")

    def eval_ell(q):
        return np.zeros_like(np.asarray(q, dtype=float))

    return ForceField(
        dim=dim,
        eval_F=gradU,
        eval_DF=hessU,
        kind="gradient",
        eval_U=U,
        eval_gradU=gradU,
        eval_ell=eval_ell,
        quadratic_growth=quadratic_growth,
    )


@dataclass
class AssumptionReport:
    """Result of the sampled coercivity check."""

    holds_on_samples: bool
    worst_margin: float
    worst_point: np.ndarray
    n_samples: int
    tol: float
    quadratic_variant_holds: Optional[bool] = None
    quadratic_variant_worst_margin: Optional[float] = None


def check_assumption_main(
    spec: ModelSpec, radius: float, n_samples: int, tol: float = DEFAULT_TOL
) -> AssumptionReport:
    """Sampled verification of the coercivity inequality on a ball.

    Evaluates margin(q) = <F(q), q> - alpha (|q|^2 + U(q)) - |ell(q)|^2 / beta^2
    at quasi-random points (origin included) and reports the worst case.  The
    inequality is declared to hold on the samples when the worst margin is
    above -tol relative to the local scale of <F(q), q>.  When the potential is
    flagged as at most quadratic, the variant with U dropped from the right
    hand side is checked as well.
    """
    force = spec.force
    if not force.has_decomposition():
        raise DecompositionMissingError(
            "assumption check needs both U and ell; declare a decomposition first"
        )
    pts = sample_ball(force.dim, radius, n_samples)
    fq = force.eval_F(pts)
    inner = np.sum(fq * pts, axis=-1)
    u = np.asarray(force.eval_U(pts), dtype=float)
    ell = np.asarray(force.eval_ell(pts), dtype=float)
    ell2 = np.sum(ell * ell, axis=-1)
    q2 = np.sum(pts * pts, axis=-1)
    margin = inner - spec.alpha * (q2 + u) - ell2 / spec.beta**2
    i = int(np.argmin(margin))
    scale = 1.0 + float(np.max(np.abs(inner)))
    worst = float(margin[i])
    report = AssumptionReport(
        holds_on_samples=bool(worst >= -tol * scale),
        worst_margin=worst,
        worst_point=pts[i].copy(),
        n_samples=n_samples,
        tol=tol,
    )
    if force.quadratic_growth:
        margin2 = inner - spec.alpha * q2 - ell2 / spec.beta**2
        report.quadratic_variant_worst_margin = float(np.min(margin2))
        report.quadratic_variant_holds = bool(np.min(margin2) >= -tol * scale)
    return report


@dataclass
class JacobianGrowthReport:
    """Fitted constants of the sampled Jacobian growth bound |DF(q)| <= C exp(rho |q|^2)."""

    C_hat: float
    rho_hat: float
    n_samples: int
    max_ratio: float


def check_assumption_DF(spec: ModelSpec, radius: float, n_samples: int) -> JacobianGrowthReport:
    """Least-squares fit of (C, rho) on log |DF(q)| versus |q|^2 over ball samples.

    rho is clamped at zero (the bound cannot decay); when all samples sit at
    the same |q| (radius zero) the fit degenerates to rho = 0 with C the
    largest observed norm.  max_ratio reports the worst |DF| / (C exp(rho|q|^2))
    over the samples as a looseness diagnostic.
    """
    force = spec.force
    pts = sample_ball(force.dim, radius, n_samples)
    norms = np.array([np.linalg.norm(J, 2) for J in force.eval_DF(pts).reshape(-1, force.dim, force.dim)])
    norms = np.maximum(norms, 1e-300)
    u = np.sum(pts * pts, axis=-1)
    y = np.log(norms)
    if np.ptp(u) < 1e-14 or np.ptp(y) < 1e-12 * (1.0 + float(np.abs(y).max())):
        # constant |q| or constant Jacobian norm: the growth rate is zero
        c_hat, rho_hat = float(np.max(norms)), 0.0
    else:
        slope, intercept = np.polyfit(u, y, 1)
        rho_hat = float(max(slope, 0.0))
        c_hat = float(np.exp(np.max(y)) if rho_hat == 0.0 else np.exp(intercept))
    ratio = float(np.max(norms / (c_hat * np.exp(rho_hat * u))))
    return JacobianGrowthReport(C_hat=c_hat, rho_hat=rho_hat, n_samples=n_samples, max_ratio=ratio)


def _polynomial_gradient_force(coeffs) -> ForceField:
    c = np.asarray(coeffs, dtype=float)
    if c.ndim != 1 or c.size < 3:
        raise ParameterError("polynomial potential needs a 1-d coefficient table of degree >= 2")
    if abs(c[0]) > 0 or abs(c[1]) > 0:
        raise ParameterError("polynomial potential must have U(0) = 0 and U'(0) = 0")
    # np.polyval wants highest degree first.
    pu = c[::-1]
    pg = np.polyder(pu)
    ph = np.polyder(pg)

    def U(q):
        q = np.asarray(q, dtype=float)
        return np.polyval(pu, q[..., 0])

    def gradU(q):
        q = np.asarray(q, dtype=float)
        return np.polyval(pg, q)

    def hessU(q):
        q = np.asarray(q, dtype=float)
        return np.polyval(ph, q)[..., None]

    ff = make_gradient_force(1, U, gradU, hessU, quadratic_growth=bool(c.size <= 3))
    return ff


_BUILTIN_FORCES = {
    # U(q) = q^4/4 + q^2/2, the standard anharmonic 1-d test potential.
    "quartic_well": lambda: _polynomial_gradient_force([0.0, 0.0, 0.5, 0.0, 0.25]),
    # U(q) = q^2/2.
    "harmonic": lambda: make_linear_force([[1.0]]),
}


def force_from_config(cfg: dict) -> ForceField:
    """Build a force field from a config block.

    Supported blocks: {"type": "linear", "matrix": [[...]]},
    {"type": "polynomial_gradient", "coeffs": [c0, c1, ...]} with
    U(q) = sum c_k q^k in one dimension, and {"type": "builtin", "name": ...}.
    Unknown keys are errors.
    """
    if not isinstance(cfg, dict) or "type" not in cfg:
        raise ParameterError("force config must be a dict with a 'type' key")
    kind = cfg["type"]
    if kind == "linear":
        _require_keys(cfg, {"type", "matrix"})
        return make_linear_force(cfg["matrix"])
    if kind == "polynomial_gradient":
        _require_keys(cfg, {"type", "coeffs"})
        return _polynomial_gradient_force(cfg["coeffs"])
    if kind == "builtin":
        _require_keys(cfg, {"type", "name"})
        name = cfg["name"]
        if name not in _BUILTIN_FORCES:
            raise ParameterError(f"unknown builtin force {name!r}; have {sorted(_BUILTIN_FORCES)}")
        return _BUILTIN_FORCES[name]()
    raise ParameterError(f"unknown force type {kind!r}")


def _require_keys(cfg: dict, allowed: set):
    unknown = set(cfg) - allowed
    if unknown:
        raise ParameterError(f"unknown force config keys: {sorted(unknown)}")
    missing = allowed - set(cfg)
    if missing:
        raise ParameterError(f"missing force config keys: {sorted(missing)}")
