"""Error budget: truncation bias, mismatch bias, variance, nulling bias, SNR."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import NumericalError
from .forward import ForwardModel, build_kernel_gram

SNR_CAP_DB = 300.0


@dataclass
class ErrorBudget:
    """The three error terms of the LS beamformer (interval-energy units),
    plus the optional nulling bias.  `normalizer` is the total expected
    signal energy 2*W*T_N used for the normalized forms."""

    truncation_bias: float
    mismatch_bias: float
    variance_multiplier: float
    normalizer: float
    nulling_bias: float | None = None

    @property
    def truncation_normalized(self) -> float:
        return self.truncation_bias / self.normalizer

    @property
    def mismatch_normalized(self) -> float:
        return self.mismatch_bias / self.normalizer

    def total_mse(self, noise_power: float) -> float:
        return (self.truncation_bias + self.mismatch_bias
                + noise_power * self.variance_multiplier)


def truncation_bias(basis, d: int, normalized: bool = False) -> float:
    """Eigenvalue tail mass beyond the first d functions."""
    if d > len(basis.eigenvalues):
        raise NumericalError(
            f"only {len(basis.eigenvalues)} eigenvalues kept; rebuild the basis "
            f"with more kept functions to budget dimension {d}")
    tail = basis.tail_mass(d)
    return tail / basis.eigenvalue_sum if normalized else tail


def mismatch_bias(full_model: ForwardModel, d: int, method: str = "tail") -> float:
    """trace(A^+ E[e e^H] A^{+H}) for the out-of-subspace leakage e.

    `full_model` must carry all kept basis functions as columns; the head
    A = columns[:d] is the solve matrix and the rest feed the tail.

    method "tail" sums lambda_k ||A^+ a_k||^2 over the kept tail (positive
    terms, numerically robust); method "gram" evaluates the closed-form
    trace(A^+(B - sum_{k<=d} lambda_k a_k a_k^H)A^{+H}) with the exact sinc
    Gram B, clipped at zero (it cancels 2W-scale terms, so keep it to small
    problems / cross-checks).
    """
    a_all = full_model.matrix
    if d >= a_all.shape[1]:
        return 0.0
    lam = full_model.basis.eigenvalues
    head = a_all[:, :d]
    pinv = np.linalg.pinv(head)
    if method == "tail":
        proj = pinv @ a_all[:, d:]
        return float(np.sum(lam[d:a_all.shape[1]] * np.sum(np.abs(proj) ** 2, axis=0)))
    if method == "gram":
        gram = build_kernel_gram(full_model.sample_offsets, full_model.basis.bandwidth)
        b = gram.phased(full_model.carrier_phases)
        tail_op = b - (a_all[:, :d] * lam[:d]) @ a_all[:, :d].conj().T
        val = float(np.real(np.trace(pinv @ tail_op @ pinv.conj().T)))
        return max(val, 0.0)
    raise ValueError(f"unknown method {method!r}")


def nulling_bias(model: ForwardModel, interferer_projector, d: int | None = None) -> float:
    """trace(Z Lambda Z^H) with Z = A^+ P(theta_I) A: expected coefficient
    error induced by projecting out the interferer subspace."""
    d = model.dimension if d is None else d
    a = model.matrix[:, :d]
    pinv = np.linalg.pinv(a)
    z = pinv @ interferer_projector.complement_apply(a)
    lam = model.basis.eigenvalues[:d]
    return float(np.sum(lam * np.sum(np.abs(z) ** 2, axis=0)))


def error_budget(full_model: ForwardModel, d: int,
                 nulling: float | None = None) -> ErrorBudget:
    basis = full_model.basis
    head = full_model.matrix[:, :d]
    s = np.linalg.svd(head, compute_uv=False)
    return ErrorBudget(
        truncation_bias=truncation_bias(basis, d),
        mismatch_bias=mismatch_bias(full_model, d),
        variance_multiplier=float(np.sum(1.0 / s ** 2)),
        normalizer=basis.eigenvalue_sum,
        nulling_bias=nulling,
    )


def beamformed_snr(estimate: np.ndarray, truth: np.ndarray) -> float:
    """10 log10(||truth||^2 / ||truth - estimate||^2), capped at 300 dB."""
    truth = np.asarray(truth)
    energy = float(np.sum(np.abs(truth) ** 2))
    if energy == 0.0:
        raise ValueError("SNR undefined for zero truth energy")
    err = float(np.sum(np.abs(truth - np.asarray(estimate)) ** 2))
    if err == 0.0:
        return SNR_CAP_DB
    return min(10 * math.log10(energy / err), SNR_CAP_DB)


def array_gain(nominal_snr_db: float, beamformed_snr_db: float) -> float:
    return beamformed_snr_db - nominal_snr_db


def ideal_gain_db(n_elements: int) -> float:
    return 10 * math.log10(n_elements)
