"""Adaptive beamforming: interferer nulling, broadband MVDR/LCMV, and
low-rank covariance models with Woodbury inversion."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .arrays import ArrivalAngle, Scenario
from .errors import GeometryError, NumericalError
from .forward import ForwardModel, build_forward, raw_offsets
from .slepian import SlepianBasis, build_basis

RANK_CUTOFF = 1e-12


@dataclass
class NullProjector:
    """Orthogonal projector onto the complement of an interferer subspace."""

    range_basis: np.ndarray      # (MN, r) orthonormal columns spanning range(A_I)
    interferer_dim: int

    @property
    def rank(self) -> int:
        return self.range_basis.shape[1]

    def apply(self, x: np.ndarray) -> np.ndarray:
        """P_perp @ x."""
        q = self.range_basis
        return x - q @ (q.conj().T @ x)

    def complement_apply(self, x: np.ndarray) -> np.ndarray:
        """P @ x (projection onto the interferer subspace)."""
        q = self.range_basis
        return q @ (q.conj().T @ x)

    @property
    def matrix(self) -> np.ndarray:
        q = self.range_basis
        return np.eye(q.shape[0], dtype=complex) - q @ q.conj().T


def null_projector(a_interferer: np.ndarray) -> NullProjector:
    """P_perp = I - A_I (A_I^H A_I)^{-1} A_I^H, built from the SVD range of
    A_I with singular values below 1e-12 * sigma_max dropped."""
    a = np.asarray(a_interferer)
    u, s, _ = np.linalg.svd(a, full_matrices=False)
    keep = s > RANK_CUTOFF * s[0]
    return NullProjector(range_basis=np.ascontiguousarray(u[:, keep]),
                         interferer_dim=a.shape[1])


@dataclass
class CovarianceModel:
    """R = U C U^H + noise_power * I with K << MN."""

    low_rank_basis: np.ndarray    # (MN, K)
    core: np.ndarray              # (K, K) Hermitian PSD
    noise_power: float
    core_flagged: bool = False    # set when the core needed a pseudo-inverse

    @property
    def rank(self) -> int:
        return self.low_rank_basis.shape[1]

    @property
    def size(self) -> int:
        return self.low_rank_basis.shape[0]

    def dense(self) -> np.ndarray:
        """Explicit covariance; for oracles on small problems only."""
        u = self.low_rank_basis
        return u @ self.core @ u.conj().T + self.noise_power * np.eye(self.size)

    def scaled(self, factor: float) -> "CovarianceModel":
        return CovarianceModel(self.low_rank_basis, factor * self.core,
                               factor * self.noise_power)


def woodbury_apply(model: CovarianceModel, x: np.ndarray) -> np.ndarray:
    """R^{-1} x via the Woodbury identity:
    x / s2 - U (C^{-1} + U^H U / s2)^{-1} U^H x / s2^2."""
    if model.noise_power <= 0:
        raise ValueError("noise power must be positive for Woodbury inversion")
    s2 = model.noise_power
    x = np.asarray(x)
    if model.rank == 0:
        return x / s2
    u = model.low_rank_basis
    try:
        core_inv = np.linalg.inv(model.core)
    except np.linalg.LinAlgError:
        core_inv = np.linalg.pinv(model.core)
        model.core_flagged = True
    inner = core_inv + (u.conj().T @ u) / s2
    rhs = u.conj().T @ x
    try:
        mid = np.linalg.solve(inner, rhs)
    except np.linalg.LinAlgError:
        mid = np.linalg.pinv(inner) @ rhs
        model.core_flagged = True
    return x / s2 - (u @ mid) / s2 ** 2


@dataclass
class AdaptiveWeights:
    """W (D x MN) with the distortionless constraint W A = I."""

    weights: np.ndarray
    ridge_flagged: bool = False

    def apply(self, stacked: np.ndarray) -> np.ndarray:
        return self.weights @ stacked


def mvdr_weights(model: ForwardModel | np.ndarray,
                 cov: CovarianceModel) -> AdaptiveWeights:
    """Closed-form broadband MVDR: W = (A^H R^{-1} A)^{-1} A^H R^{-1}."""
    a = model.matrix if isinstance(model, ForwardModel) else np.asarray(model)
    ri_a = woodbury_apply(cov, a)
    gram = a.conj().T @ ri_a
    gram = (gram + gram.conj().T) / 2
    flagged = False
    try:
        w = np.linalg.solve(gram, ri_a.conj().T)
    except np.linalg.LinAlgError:
        flagged = True
        ridge = 1e-10 * np.trace(gram).real / gram.shape[0]
        w = np.linalg.solve(gram + ridge * np.eye(gram.shape[0]), ri_a.conj().T)
    return AdaptiveWeights(weights=w, ridge_flagged=flagged)


def lcmv_weights(model: ForwardModel | np.ndarray, cov: CovarianceModel,
                 extra_constraints: list = ()) -> AdaptiveWeights:
    """Equality-constrained minimum variance by block elimination.

    Constraints: W A = I plus W C_i = F_i for each (C_i, F_i) pair.  The
    stacked constraint matrix must have full column rank.
    """
    a = model.matrix if isinstance(model, ForwardModel) else np.asarray(model)
    d = a.shape[1]
    blocks = [a]
    rhs = [np.eye(d, dtype=complex)]
    for i, (c_i, f_i) in enumerate(extra_constraints):
        c_i = np.asarray(c_i)
        if c_i.shape[0] != a.shape[0]:
            raise GeometryError(f"constraint block {i} has {c_i.shape[0]} rows, "
                                f"expected {a.shape[0]}")
        f_i = np.asarray(f_i)
        if np.isscalar(f_i) or f_i.ndim == 0:
            f_i = np.full((d, c_i.shape[1]), complex(f_i))
        if f_i.shape != (d, c_i.shape[1]):
            raise GeometryError(f"constraint block {i} right-hand side shape "
                                f"{f_i.shape} does not match (D, {c_i.shape[1]})")
        blocks.append(c_i)
        rhs.append(f_i)
    c = np.concatenate(blocks, axis=1)
    f = np.concatenate(rhs, axis=1)
    sv = np.linalg.svd(c, compute_uv=False)
    if sv[-1] <= RANK_CUTOFF * sv[0]:
        sizes = np.cumsum([b.shape[1] for b in blocks])
        for i in range(len(blocks)):
            sub = np.concatenate(blocks[: i + 1], axis=1)
            ss = np.linalg.svd(sub, compute_uv=False)
            if ss[-1] <= RANK_CUTOFF * ss[0]:
                raise GeometryError(
                    f"stacked constraints become rank deficient at block {i} "
                    f"(columns 1..{sizes[i]})")
        raise GeometryError("stacked constraints are rank deficient")
    ri_c = woodbury_apply(cov, c)
    gram = c.conj().T @ ri_c
    gram = (gram + gram.conj().T) / 2
    w = f @ np.linalg.solve(gram, ri_c.conj().T)
    return AdaptiveWeights(weights=w)


def source_factor(scenario: Scenario, angle: ArrivalAngle, power: float,
                  tol: float = 1e-3, rank: int | None = None,
                  basis: SlepianBasis | None = None):
    """Low-rank factor (U, C) of one source's snapshot covariance.

    E[s(t) s(u)*] = power * sinc(2W(t-u)) for both the sum-of-sinusoids and
    flat-Slepian signal models, so the factor columns are the (phased)
    Slepian samples with core (power / 2W) * diag(lambda).
    """
    w = scenario.bandwidth
    off = raw_offsets(scenario, angle)
    span = off.max() - off.min()
    ts = 1.0 / (2 * w)
    interval = span + (2 * ts if span < 0.25 * ts else 0.0)
    if basis is None:
        basis = build_basis(w, interval, tol)
    if rank is None:
        rank = basis.dimension(tol)
    rank = min(rank, basis.n_funcs)
    slack = basis.interval_length - span
    shifted = off - off.min() + max(slack, 0.0) / 2
    tau = scenario.delays(angle)
    phases = np.tile(np.exp(-2j * np.pi * scenario.geometry.carrier_hz * tau),
                     scenario.n_snapshots)
    u = phases[:, None] * basis.evaluate(shifted, np.arange(rank))
    c = (power / (2 * w)) * np.diag(basis.eigenvalues[:rank])
    return u, c


def build_covariance(scenario: Scenario, interferers: list, noise_power: float,
                     tol: float = 1e-3, signal: tuple | None = None,
                     include_signal: bool = False,
                     rank: int | None = None) -> CovarianceModel:
    """Known-statistics covariance of the stacked snapshots.

    interferers: list of (angle, power); signal: optional (angle, power)
    included only when include_signal is True (the MPDR-vs-MVDR switch).
    Per-source ranks follow the d(WT) rule: the smallest count capturing
    1 - tol of each source's eigenvalue mass.
    """
    mn = scenario.n_elements * scenario.n_snapshots
    us, cs = [], []
    sources = list(interferers)
    if include_signal:
        if signal is None:
            raise ValueError("include_signal requires the signal (angle, power)")
        sources = [tuple(signal)] + sources
    for angle, power in sources:
        u, c = source_factor(scenario, angle, power, tol, rank)
        us.append(u)
        cs.append(c)
    if us:
        u = np.concatenate(us, axis=1)
        k = u.shape[1]
        core = np.zeros((k, k), dtype=complex)
        at = 0
        for c in cs:
            core[at:at + c.shape[0], at:at + c.shape[0]] = c
            at += c.shape[0]
    else:
        u = np.zeros((mn, 0), dtype=complex)
        core = np.zeros((0, 0), dtype=complex)
    return CovarianceModel(low_rank_basis=u, core=core, noise_power=noise_power)


def interpolate_basis_nonuniform(basis: SlepianBasis, target_times,
                                 count: int | None = None):
    """Low-rank covariance factors on non-uniform sample points.

    Interpolates the uniform-grid Slepian samples onto the targets and
    re-orthogonalizes by SVD, returning (U_nu, C_nu) with U_nu orthonormal
    and U_nu C_nu U_nu^H ~ sum_k lambda_k psi_k(t) psi_k(u).
    """
    count = basis.dimension() if count is None else count
    s_nu = basis.evaluate(target_times, np.arange(count))
    u, sig, vh = np.linalg.svd(s_nu, full_matrices=False)
    lam = basis.eigenvalues[:count]
    core = (vh * lam) @ vh.conj().T
    c_nu = (sig[:, None] * core) * sig[None, :]
    return u, c_nu
