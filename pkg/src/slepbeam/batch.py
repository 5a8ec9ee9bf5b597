"""Batch least-squares beamforming plus the delay-and-sum baseline."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .arrays import ArrivalAngle, Scenario
from .errors import GeometryError
from .forward import ForwardModel, build_synthesis
from .simulate import SnapshotBatch
from .slepian import SlepianBasis, build_basis

CONDITION_LIMIT = 1e10
AUTO_RIDGE_SCALE = 1e-8


@dataclass
class CoefficientVector:
    """Estimated Slepian coefficients alpha_hat."""

    values: np.ndarray
    basis: SlepianBasis
    residual: float = 0.0
    ridge: float = 0.0
    condition_flagged: bool = False

    def __len__(self):
        return len(self.values)


def _as_stacked(model: ForwardModel, data) -> np.ndarray:
    if isinstance(data, SnapshotBatch):
        return data.stacked()
    data = np.asarray(data)
    if data.ndim == 2:
        return model.stack(data)
    if data.shape != (model.matrix.shape[0],):
        raise ValueError("stacked data length does not match the model")
    return data


def solve_ls(model: ForwardModel, data, ridge: float = 0.0) -> CoefficientVector:
    """Least-squares coefficient estimate.

    ridge = 0 uses the SVD pseudo-inverse (minimum-norm on rank deficiency,
    flagged when the condition number exceeds 1e10, with an automatic small
    Tikhonov fallback); ridge > 0 solves (A^H A + 2*ridge*I) x = A^H y.
    """
    if ridge < 0:
        raise ValueError("ridge must be nonnegative")
    y = _as_stacked(model, data)
    flagged = False
    if ridge == 0.0:
        mn, d = model.matrix.shape
        rank_deficient = d > mn or model.condition_number > CONDITION_LIMIT
        if rank_deficient:
            # minimum-norm solution through a truncated-SVD pseudo-inverse,
            # flagged; equivalent to the tiny automatic Tikhonov fallback
            flagged = True
            u, s, vh = np.linalg.svd(model.matrix, full_matrices=False)
            keep = s > s[0] * math.sqrt(AUTO_RIDGE_SCALE)
            gain = np.where(keep, 1.0 / np.where(keep, s, 1.0), 0.0)
            alpha = vh.conj().T @ (gain * (u.conj().T @ y))
            res = float(np.linalg.norm(y - model.matrix @ alpha))
            return CoefficientVector(alpha, model.basis, res, 0.0, True)
        alpha = model.pseudo_inverse @ y
        res = float(np.linalg.norm(y - model.matrix @ alpha))
        return CoefficientVector(alpha, model.basis, res, 0.0, False)
    u, s, vh = np.linalg.svd(model.matrix, full_matrices=False)
    gain = s / (s ** 2 + 2 * ridge)
    alpha = vh.conj().T @ (gain * (u.conj().T @ y))
    res = float(np.linalg.norm(y - model.matrix @ alpha))
    return CoefficientVector(alpha, model.basis, res, ridge, flagged)


def snapshot_basis(scenario: Scenario, margin: int = 4, tol: float = 1e-3,
                   angle: ArrivalAngle | None = None) -> np.ndarray:
    """Orthonormal basis U (M x D_1) for the single-snapshot Slepian space.

    D_1 = ceil(2*W*T_1) + margin; raises when D_1 exceeds the element count
    (the spatial dimension would be undersampled).
    """
    angle = scenario.angle if angle is None else angle
    w = scenario.bandwidth
    tau = scenario.delays(angle)
    t1 = float(tau.max() - tau.min())
    d1 = math.ceil(2 * w * t1) + margin
    m = scenario.n_elements
    if d1 > m:
        raise GeometryError(f"single-snapshot dimension {d1} exceeds the "
                            f"element count {m}")
    ts = 1.0 / (2 * w)
    interval = t1 + 2 * ts          # pad so degenerate spans stay usable
    small = build_basis(w, interval, tol, grid_floor=512, n_keep=max(d1 + 8, 16))
    offs = (tau.max() - tau) + ts   # snapshot offsets shifted into the interval
    phases = np.exp(-2j * np.pi * scenario.geometry.carrier_hz * tau)
    s = phases[:, None] * small.evaluate(offs, np.arange(d1))
    q, _ = np.linalg.qr(s)
    return q


def encoded_solve(model: ForwardModel, data, snapshot_margin: int = 4,
                  ridge: float = 0.0, basis_u: np.ndarray | None = None
                  ) -> CoefficientVector:
    """Efficient least squares through per-snapshot encodings.

    Encodes each snapshot as beta_n = U^H y[n] with U an orthonormal basis
    for the single-snapshot Slepian space, factors A_n ~ U C_n, and solves
    the reduced problem min sum ||beta_n - C_n alpha||^2 + ridge ||alpha||^2.
    """
    if basis_u is None:
        basis_u = snapshot_basis(model.scenario, snapshot_margin,
                                 model.basis.tolerance, model.angle)
    y = _as_stacked(model, data)
    m = model.n_elements
    n = model.n_snapshots
    d = model.dimension
    uh = basis_u.conj().T
    beta = (uh @ y.reshape(n, m).T).T.reshape(-1)          # stacked encodings
    c = (uh @ model.matrix.reshape(n, m, d)).reshape(-1, d)
    u2, s2, vh2 = np.linalg.svd(c, full_matrices=False)
    keep = s2 > s2[0] * 1e-12
    gain = np.where(keep, s2 / (s2 ** 2 + 2 * ridge), 0.0)
    alpha = vh2.conj().T @ (gain * (u2.conj().T @ beta))
    res = float(np.linalg.norm(beta - c @ alpha))
    return CoefficientVector(alpha, model.basis, res, ridge, not np.all(keep))


def delay_and_sum(batch: SnapshotBatch, scenario: Scenario, taps: int,
                  angle: ArrivalAngle | None = None) -> np.ndarray:
    """Classic pre-steer + sum with R-tap truncated-sinc fractional delays.

    Per element: undo the carrier phase, advance the baseband stream by
    tau_m via sinc interpolation truncated to `taps` coefficients, then
    average across elements.  Edge samples see zero-padded history.
    """
    if taps < 1:
        raise ValueError("need at least one tap")
    angle = scenario.angle if angle is None else angle
    tau = scenario.delays(angle)
    ts = scenario.sampling.sample_interval
    fc = scenario.geometry.carrier_hz
    m, n = batch.samples.shape
    out = np.zeros(n, dtype=complex)
    half_lo = (taps - 1) // 2
    for i in range(m):
        z = batch.samples[i] * np.exp(2j * np.pi * fc * tau[i])
        shift = tau[i] / ts
        j0 = int(round(-shift)) - half_lo
        j = j0 + np.arange(taps)
        kernel = np.sinc(shift + j)
        acc = np.zeros(n, dtype=complex)
        for jj, cj in zip(j, kernel):
            lo = max(0, jj)
            hi = min(n, n + jj)
            if lo < hi:
                acc[lo:hi] += cj * z[lo - jj:hi - jj]
        out += acc
    return out / m


def ideal_fractional_delay(stream: np.ndarray, shift: float) -> np.ndarray:
    """Frequency-domain fractional advance (oracle for delay_and_sum).

    Zero-pads to 4x length to suppress circular wrap, applies e^{j2 pi f s}
    in the DFT domain, returns the original support.
    """
    n = len(stream)
    pad = 64 * n
    buf = np.zeros(pad, dtype=complex)
    buf[:n] = stream
    freqs = np.fft.fftfreq(pad)
    spec = np.fft.fft(buf) * np.exp(2j * np.pi * freqs * shift)
    return np.fft.ifft(spec)[:n]


def synthesize_samples(basis: SlepianBasis, coeffs, output_times) -> np.ndarray:
    """s_hat(t) = sum_k alpha_k psi_k(t) at the requested times."""
    values = coeffs.values if isinstance(coeffs, CoefficientVector) else np.asarray(coeffs)
    return build_synthesis(basis, output_times, len(values)) @ values
