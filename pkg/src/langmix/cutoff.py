"""Jordan-structure constants of the linearized flow, mixing time, and cut-off profiles.

As t grows, the zero-noise path behaves like t^nu exp(-eta t) times an
almost-periodic combination sum_k exp(i theta_k t) v_k, where eta is the
smallest decay rate actually excited by the starting point, nu the associated
polynomial order, and the v_k come from the Jordan expansion of the starting
point (or of the point where the path first enters the linearization ball,
with the corresponding time shift tau).  These constants drive the mixing
time and the shape of the total-variation profile.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import DomainError, StabilityError
from .linear_stability import flow_zero_noise
from .model import ModelSpec

#: relative tolerance for rank decisions in the staircase algorithm
RANK_TOL = 1e-8
#: relative threshold below which an expansion coefficient is dropped
COEFF_TOL = 1e-10


@dataclass
class JordanChain:
    eigenvalue: complex  # eigenvalue mu of A (Re mu < 0 for stable models)
    vectors: np.ndarray  # (length, n) chain w_1..w_N with (A - mu) w_k = w_{k+1}

    @property
    def length(self) -> int:
        return self.vectors.shape[0]


def _orthonormal_kernel(B: np.ndarray, rank_tol: float):
    """Orthonormal kernel basis of B and a flag for ambiguous rank decisions."""
    u, s, vh = np.linalg.svd(B)
    smax = s[0] if s.size else 0.0
    thresh = rank_tol * max(smax, 1.0)
    rank = int(np.sum(s > thresh))
    ambiguous = bool(np.any((s > thresh / 10.0) & (s <= thresh * 10.0) & (s != 0)))
    return vh[rank:].conj().T, ambiguous


def _cluster_eigenvalues(eigs: np.ndarray, tol: float):
    """Single-linkage clustering of eigenvalues within distance tol."""
    remaining = list(range(len(eigs)))
    clusters = []
    while remaining:
        group = [remaining.pop(0)]
        changed = True
        while changed:
            changed = False
            for i in remaining[:]:
                if any(abs(eigs[i] - eigs[j]) <= tol for j in group):
                    group.append(i)
                    remaining.remove(i)
                    changed = True
        clusters.append(np.mean(eigs[group]))
    return clusters


def jordan_chains(A: np.ndarray, rank_tol: float = RANK_TOL):
    """Numerical Jordan chains of A via staircase rank decisions.

    Returns (chains, flagged).  Chains use the convention
    (A - mu) w_k = w_{k+1} with w_1 a generator and w_length an eigenvector.
    Conjugate eigenvalues reuse the conjugated chains of their mirror so that
    conjugate structure is exact.  flagged marks rank decisions that fell
    inside the tolerance band.
    """
    A = np.asarray(A)
    n = A.shape[0]
    scale = max(1.0, float(np.linalg.norm(A, 2)))
    tol = rank_tol * scale
    eigs = np.linalg.eigvals(A)
    centers = _cluster_eigenvalues(eigs, tol * 10)
    flagged = False
    chains: list[JordanChain] = []
    done_conjugates = {}
    for mu in centers:
        key = (round(mu.real / tol), round(abs(mu.imag) / tol))
        if mu.imag < -tol and key in done_conjugates:
            for ch in done_conjugates[key]:
                chains.append(JordanChain(eigenvalue=ch.eigenvalue.conjugate(), vectors=ch.vectors.conj()))
            continue
        mult = int(np.sum(np.abs(eigs - mu) <= tol * 10))
        B = A.astype(complex) - mu * np.eye(n)
        kernels = [np.zeros((n, 0), dtype=complex)]
        Bp = np.eye(n, dtype=complex)
        nullities = [0]
        p = 0
        while nullities[-1] < mult and p < n:
            p += 1
            Bp = Bp @ B
            K, amb = _orthonormal_kernel(Bp, rank_tol)
            flagged = flagged or amb
            kernels.append(K)
            nullities.append(K.shape[1])
        weyr = np.diff(nullities)  # weyr[k-1] = number of blocks of size >= k
        new_chains: list[JordanChain] = []
        for k in range(p, 0, -1):
            have = sum(1 for ch in new_chains if ch.length >= k)
            need = int(weyr[k - 1]) - have
            if need <= 0:
                continue
            # candidates live in ker(B^k); exclude ker(B^{k-1}) and the
            # level-k members of already-built longer chains
            exclude = [kernels[k - 1]]
            for ch in new_chains:
                if ch.length > k:
                    exclude.append(ch.vectors[ch.length - k][:, None])
            E = np.hstack(exclude) if exclude else np.zeros((n, 0), dtype=complex)
            if E.shape[1] > 0:
                Q, _ = np.linalg.qr(E)
                proj = kernels[k] - Q @ (Q.conj().T @ kernels[k])
            else:
                proj = kernels[k]
            u, s, vh = np.linalg.svd(proj, full_matrices=False)
            for i in range(need):
                gen = kernels[k] @ vh[i].conj()
                gen = gen / np.linalg.norm(gen)
                vecs = [gen]
                for _ in range(k - 1):
                    vecs.append(B @ vecs[-1])
                new_chains.append(JordanChain(eigenvalue=mu, vectors=np.asarray(vecs)))
        chains.extend(new_chains)
        if abs(mu.imag) > tol:
            done_conjugates[key] = new_chains
    return chains, flagged


@dataclass
class SpectralData:
    """Decay constants of the path from one starting point.

    eta: slowest excited decay rate; nu: polynomial order; tau: time shift to
    the linearization ball; phases/vectors: oscillation frequencies (true
    imaginary parts, sign carried) and limiting complex directions, conjugate
    pairs included; jordan_blocks: (eigenvalue of the linearization, size);
    generic_x: all expansion coefficients above threshold; flagged: a rank
    decision fell in its tolerance band.
    """

    eta: float
    nu: int
    tau: float
    phases: np.ndarray
    vectors: np.ndarray
    jordan_blocks: list
    generic_x: bool
    flagged: bool
    expansion_point: np.ndarray

    @property
    def m(self) -> int:
        return len(self.phases)


def _linearization_radius(spec: ModelSpec) -> float:
    if spec.delta_nbhd is not None:
        return spec.delta_nbhd
    from .matrix_eq import drift_metric_delta

    return drift_metric_delta(spec)


def spectral_data(
    spec: ModelSpec,
    x,
    rho_lin: Optional[float] = None,
    dt: float = 1e-3,
    coeff_tol: float = COEFF_TOL,
    rank_tol: float = RANK_TOL,
) -> SpectralData:
    """Jordan expansion of the starting point and the resulting decay constants.

    The expansion point is x itself when |x| <= rho_lin (tau = 0); otherwise
    the zero-noise flow is integrated until it first enters that ball and the
    point one time unit later is expanded, with tau = entry time + 1.
    Coefficients below coeff_tol * |x| are dropped; eta is the smallest decay
    rate among the retained chains, nu the largest polynomial order among
    those at rate eta, and the limiting vectors collect the top Jordan
    contribution of each retained chain at that rate and order.
    """
    from .covflow import drift_matrix

    x = np.asarray(x, dtype=float)
    if np.linalg.norm(x) == 0.0:
        raise DomainError("the decay constants are undefined at the equilibrium x = 0")
    if rho_lin is None:
        rho_lin = _linearization_radius(spec)

    if np.linalg.norm(x) <= rho_lin:
        tau = 0.0
        point = x
    else:
        u0 = float(np.asarray(spec.force.eval_U(x[: spec.dim]))) if spec.force.eval_U else 0.0
        t_guess = math.log(max(spec.kappa * (float(x @ x) + u0) / rho_lin**2, 2.0)) / spec.lam
        path = flow_zero_noise(spec, x, t_guess + 5.0, dt)
        norms = np.linalg.norm(path.states, axis=1)
        inside = np.nonzero(norms <= rho_lin)[0]
        if inside.size == 0:
            raise StabilityError(
                "the zero-noise flow never entered the linearization ball; "
                "the model looks unstable from this starting point"
            )
        t_entry = float(path.grid[inside[0]])
        tau = t_entry + 1.0
        idx = min(int(round(tau / dt)), len(path.grid) - 1)
        point = path.states[idx]

    A = drift_matrix(spec, np.zeros(spec.dim))
    chains, flagged = jordan_chains(A, rank_tol=rank_tol)
    W = np.hstack([ch.vectors.T for ch in chains])
    coeffs = np.linalg.solve(W, point.astype(complex))

    offsets = np.cumsum([0] + [ch.length for ch in chains])
    retained = np.abs(coeffs) > coeff_tol * np.linalg.norm(x)
    generic = bool(np.all(retained))

    # per chain: smallest retained index k (1-based), or None
    active = []
    for j, ch in enumerate(chains):
        sl = slice(offsets[j], offsets[j + 1])
        ks = np.nonzero(retained[sl])[0]
        if ks.size:
            active.append((j, int(ks[0]) + 1))
    if not active:
        raise DomainError("all expansion coefficients fall below threshold; x is numerically 0")

    scale = max(1.0, float(np.linalg.norm(A, 2)))
    re_tol = rank_tol * scale
    rates = {j: -chains[j].eigenvalue.real for j, _ in active}
    eta = min(rates.values())
    dominant = [(j, kmin) for j, kmin in active if rates[j] <= eta + re_tol]
    nu = max(chains[j].length - kmin for j, kmin in dominant)
    top = [(j, kmin) for j, kmin in dominant if chains[j].length - kmin == nu]

    phases = []
    vectors = []
    for j, kmin in top:
        ch = chains[j]
        c = coeffs[offsets[j] + kmin - 1]
        phases.append(ch.eigenvalue.imag)
        vectors.append(c * ch.vectors[-1] / math.factorial(nu))
    jordan_blocks = [(ch.eigenvalue, ch.length) for ch in chains]

    return SpectralData(
        eta=float(eta),
        nu=int(nu),
        tau=float(tau),
        phases=np.asarray(phases, dtype=float),
        vectors=np.asarray(vectors),
        jordan_blocks=jordan_blocks,
        generic_x=generic,
        flagged=bool(flagged),
        expansion_point=np.asarray(point, dtype=float),
    )


def mixing_time(sd: SpectralData, epsilon: float) -> float:
    """Cut-off time log(1/2eps)/(2 eta) + nu loglog(1/2eps)/eta + tau."""
    if not (0.0 < epsilon < 0.5):
        raise DomainError("epsilon must lie in (0, 1/2) for the mixing time to be defined")
    L = math.log(1.0 / (2.0 * epsilon))
    t = L / (2.0 * sd.eta) + sd.tau
    if sd.nu > 0:
        t += (sd.nu / sd.eta) * math.log(L)
    return t


def oscillating_sum(sd: SpectralData, s) -> np.ndarray:
    """Real part of sum_k exp(i theta_k s) v_k for scalar or array s."""
    s = np.asarray(s, dtype=float)
    phase = np.exp(1j * np.multiply.outer(s, sd.phases))
    return np.real(phase @ sd.vectors) if sd.m else np.zeros(s.shape + (0,))


def profile_vector(spec: ModelSpec, sd: SpectralData, t: float) -> np.ndarray:
    """Profile direction v(t, x) = (t-tau)^nu exp(-eta (t-tau)) Sigma^{-1/2} (oscillating sum)."""
    from .matrix_eq import sigma_matrix

    if t < sd.tau:
        raise DomainError(f"profile is defined for t >= tau = {sd.tau}")
    sigma = sigma_matrix(spec)
    eigs, vecs = np.linalg.eigh(sigma)
    inv_sqrt = (vecs / np.sqrt(eigs)) @ vecs.T
    s = t - sd.tau
    amp = s**sd.nu * math.exp(-sd.eta * s)
    return amp * (inv_sqrt @ oscillating_sum(sd, s))


def profile_D(spec: ModelSpec, sd: SpectralData, t: float, epsilon: float) -> float:
    """Gaussian shift profile D_eps(t) = tv_unit(v(t, x) / sqrt(2 eps))."""
    from .gaussian_tv import tv_unit

    if epsilon <= 0:
        raise DomainError("epsilon must be positive")
    v = profile_vector(spec, sd, t)
    return tv_unit(v / math.sqrt(2.0 * epsilon))


def profile_lambda(sd: SpectralData, w) -> np.ndarray:
    """Printed cut-off profile 2 int_0^{sqrt(2) (1/2eta)^nu exp(-w eta)} phi(t) dt."""
    from scipy.special import erf as _erf

    w = np.asarray(w, dtype=float)
    z = math.sqrt(2.0) * (1.0 / (2.0 * sd.eta)) ** sd.nu * np.exp(-w * sd.eta)
    return _erf(z / math.sqrt(2.0))


def profile_lambda_alt(sd: SpectralData, w, r: float) -> np.ndarray:
    """Alternative profile with the sqrt(2) constant replaced by r/2.

    This is the pointwise limit of D_eps at the mixing-time window when the
    oscillation limit r exists; the two profiles coincide exactly when
    r = 2 sqrt(2).
    """
    from scipy.special import erf as _erf

    w = np.asarray(w, dtype=float)
    z = (r / 2.0) * (1.0 / (2.0 * sd.eta)) ** sd.nu * np.exp(-w * sd.eta)
    return _erf(z / math.sqrt(2.0))


@dataclass
class ProfileLimit:
    exists: bool
    r: float
    oscillation: float


def profile_limit_r(
    spec: ModelSpec, sd: SpectralData, horizon: float = 200.0, tol: float = 1e-6
) -> ProfileLimit:
    """Existence and value of r = lim_t |Sigma^{-1/2} sum_k exp(i theta_k t) v_k|.

    When every retained phase vanishes the sum is constant and the limit
    exists exactly; otherwise the norm is scanned on a dense grid and the
    limit is declared to exist when the oscillation of the tail half stays
    below tol relative to its mean.
    """
    from .matrix_eq import sigma_matrix

    sigma = sigma_matrix(spec)
    eigs, vecs = np.linalg.eigh(sigma)
    inv_sqrt = (vecs / np.sqrt(eigs)) @ vecs.T

    if np.all(np.abs(sd.phases) < 1e-14):
        r = float(np.linalg.norm(inv_sqrt @ np.real(np.sum(sd.vectors, axis=0))))
        return ProfileLimit(exists=True, r=r, oscillation=0.0)

    max_phase = float(np.max(np.abs(sd.phases)))
    step = min(0.05, 2 * math.pi / (50.0 * max_phase))
    s = np.arange(0.0, horizon, step)
    vals = np.linalg.norm(oscillating_sum(sd, s) @ inv_sqrt.T, axis=1)
    tail = vals[len(vals) // 2 :]
    mean = float(np.mean(tail))
    osc = float(np.max(tail) - np.min(tail))
    exists = osc <= tol * max(mean, 1e-300)
    return ProfileLimit(exists=bool(exists), r=mean, oscillation=osc)
