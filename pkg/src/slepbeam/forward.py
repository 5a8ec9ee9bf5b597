"""Measurement operator from Slepian coefficients to array samples.

Stacking is snapshot-major: row l = n * M + m corresponds to element m at
snapshot time t_n, matching y_bar = [y[1]; ...; y[N]].
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .arrays import ArrivalAngle, Scenario
from .errors import DomainError
from .slepian import SlepianBasis, build_basis, dimension

DEGENERATE_SPAN_FACTOR = 0.25   # spans below this fraction of T_s get padded


@dataclass
class ForwardModel:
    """A(theta): maps D Slepian coefficients to M*N array samples."""

    matrix: np.ndarray            # (M*N, D) complex
    basis: SlepianBasis
    scenario: Scenario
    angle: ArrivalAngle
    sample_offsets: np.ndarray    # (M*N,) offsets shifted into [0, T]
    carrier_phases: np.ndarray    # (M*N,) e^{-j 2 pi fc tau_m}
    offset_shift: float
    _pinv: np.ndarray | None = field(default=None, repr=False)
    _svals: np.ndarray | None = field(default=None, repr=False)

    @property
    def n_elements(self) -> int:
        return self.scenario.n_elements

    @property
    def n_snapshots(self) -> int:
        return self.scenario.n_snapshots

    @property
    def dimension(self) -> int:
        return self.matrix.shape[1]

    def per_snapshot(self, n: int) -> np.ndarray:
        m = self.n_elements
        return self.matrix[n * m:(n + 1) * m]

    @property
    def singular_values(self) -> np.ndarray:
        if self._svals is None:
            self._svals = np.linalg.svd(self.matrix, compute_uv=False)
        return self._svals

    @property
    def condition_number(self) -> float:
        s = self.singular_values
        return float(s[0] / s[-1]) if s[-1] > 0 else math.inf

    @property
    def pseudo_inverse(self) -> np.ndarray:
        """SVD pseudo-inverse; computed once, safe for shared reads."""
        if self._pinv is None:
            self._pinv = np.linalg.pinv(self.matrix)
        return self._pinv

    def variance_trace(self) -> float:
        """trace((A^H A)^{-1}): noise variance multiplier of the LS solve."""
        s = self.singular_values
        return float(np.sum(1.0 / s ** 2))

    def normalized_variance_trace(self) -> float:
        """Variance trace for the basis rescaled to a unit-length interval
        (the dimensionless form the error-budget tables use)."""
        return self.variance_trace() / self.basis.interval_length

    def stack(self, snapshots: np.ndarray) -> np.ndarray:
        """(M, N) snapshot matrix -> stacked (M*N,) vector."""
        snapshots = np.asarray(snapshots)
        if snapshots.shape != (self.n_elements, self.n_snapshots):
            raise ValueError("snapshot matrix shape mismatch")
        return snapshots.T.reshape(-1)


def raw_offsets(scenario: Scenario, angle: ArrivalAngle | None = None) -> np.ndarray:
    """Unshifted sample offsets t_n - tau_m, snapshot-major."""
    tau = scenario.delays(angle)
    t = scenario.sampling.times
    return (t[:, None] - tau[None, :]).reshape(-1)


def build_forward(scenario: Scenario, basis: SlepianBasis, dim: int | None = None,
                  angle: ArrivalAngle | None = None) -> ForwardModel:
    """Build A(theta) for the given basis.

    The earliest sample offset is anchored at t = 0; if the basis interval
    is longer than the offset span, the slack is split evenly so the samples
    sit centered in the interval.
    """
    angle = scenario.angle if angle is None else angle
    dim = basis.dimension() if dim is None else int(dim)
    if dim > basis.n_funcs:
        raise ValueError(f"requested dimension {dim} exceeds kept functions "
                         f"{basis.n_funcs}")
    off = raw_offsets(scenario, angle)
    span = off.max() - off.min()
    slack = basis.interval_length - span
    if slack < -1e-9 * max(span, basis.interval_length):
        m = scenario.n_elements
        worst = int(np.argmax(off) if abs(off.max()) > abs(off.min()) else np.argmin(off))
        raise DomainError(
            f"sample offsets span {span:g} s exceeds basis interval "
            f"{basis.interval_length:g} s; offending (element, snapshot) = "
            f"({worst % m}, {worst // m})")
    shift = -off.min() + max(slack, 0.0) / 2
    shifted = off + shift
    tau = scenario.delays(angle)
    phases = np.exp(-2j * np.pi * scenario.geometry.carrier_hz * tau)
    phases = np.tile(phases, scenario.n_snapshots)
    values = basis.evaluate(shifted, np.arange(dim))
    return ForwardModel(matrix=phases[:, None] * values, basis=basis,
                        scenario=scenario, angle=angle, sample_offsets=shifted,
                        carrier_phases=phases, offset_shift=shift)


def design_model(scenario: Scenario, tol: float = 1e-3, margin: int | None = None,
                 dim: int | None = None, angle: ArrivalAngle | None = None,
                 interval: float | None = None,
                 grid_density: int | None = None) -> ForwardModel:
    """One-stop builder: size the interval to T_N, build the basis, build A.

    dim defaults to d(W*T_N, tol); `margin` instead selects the swept form
    D = ceil(2*W*T_1) + margin + N - 1.  Degenerate spans (broadside, N = 1)
    are widened by one Nyquist interval on each side.
    """
    angle = scenario.angle if angle is None else angle
    w = scenario.bandwidth
    t_n = scenario.observation_span(angle)
    ts = 1.0 / (2 * w)
    if interval is None:
        interval = t_n + (2 * ts if t_n < DEGENERATE_SPAN_FACTOR * ts else 0.0)
    if dim is None and margin is not None:
        t1 = scenario.snapshot_span(angle)
        dim = math.ceil(2 * w * t1) + margin + scenario.n_snapshots - 1
    if dim is None:
        # dimension reflects the observation span T_N, not the padded interval
        dim = dimension(max(w * t_n, 1e-6), tol)
    kwargs = {} if grid_density is None else {"grid_density": grid_density}
    n_keep = max(dim + 8, dimension(max(w * interval, 1e-6), tol) + 8)
    basis = build_basis(w, interval, tol, n_keep=n_keep, **kwargs)
    return build_forward(scenario, basis, dim=dim, angle=angle)


@dataclass
class KernelGram:
    """B(theta): sinc-kernel Gram of the sample offsets (unphased, real)."""

    matrix: np.ndarray
    bandwidth: float

    def phased(self, carrier_phases: np.ndarray) -> np.ndarray:
        """Hermitian form conjugated by the carrier phases."""
        p = carrier_phases
        return (p[:, None] * p[None, :].conj()) * self.matrix


def build_kernel_gram(sample_offsets: np.ndarray, bandwidth: float) -> KernelGram:
    """B[l, l'] = sin(2 pi W (tau_l - tau_l')) / (pi (tau_l - tau_l')),
    diagonal 2W (the kernel limit)."""
    off = np.asarray(sample_offsets, dtype=float)
    if not np.all(np.isfinite(off)):
        raise ValueError("sample offsets must be finite")
    d = off[:, None] - off[None, :]
    return KernelGram(matrix=2 * bandwidth * np.sinc(2 * bandwidth * d),
                      bandwidth=bandwidth)


def build_synthesis(basis: SlepianBasis, output_times, dim: int) -> np.ndarray:
    """Psi[n, d] = psi_d(output_times[n]); s_hat = Psi @ alpha_hat."""
    return basis.evaluate(output_times, np.arange(dim))
