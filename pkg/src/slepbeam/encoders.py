"""Dimensionality-reducing measurement operators Phi and the encoded solve."""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .arrays import ArrivalAngle, Scenario
from .batch import CoefficientVector, snapshot_basis
from .errors import GeometryError
from .forward import ForwardModel


class EncoderKind(Enum):
    SUBARRAY = "subarray"
    SPATIAL_BLOCK = "spatial_block"
    SPATIAL_TEMPORAL = "spatial_temporal"
    RANDOM = "random"


@dataclass
class Encoder:
    """Linear measurement operator w = Phi y_bar (P x MN).

    Spatial structures are block-diagonal with one block per snapshot;
    block_layout records the per-snapshot block heights P_n.
    """

    matrix: np.ndarray
    kind: EncoderKind
    block_layout: list | None = None

    @property
    def n_measurements(self) -> int:
        return self.matrix.shape[0]

    def apply(self, stacked: np.ndarray) -> np.ndarray:
        return self.matrix @ stacked

    def save(self, path) -> None:
        """Binary layout mirroring the basis cache: int64 (rows, cols, kind
        tag), then row-major float64 interleaved real/imag entries."""
        kinds = list(EncoderKind)
        with open(path, "wb") as fh:
            fh.write(struct.pack("<qqq", self.matrix.shape[0],
                                 self.matrix.shape[1], kinds.index(self.kind)))
            np.ascontiguousarray(self.matrix, dtype="<c16").view("<f8").tofile(fh)

    @classmethod
    def load(cls, path) -> "Encoder":
        kinds = list(EncoderKind)
        with open(path, "rb") as fh:
            rows, cols, tag = struct.unpack("<qqq", fh.read(24))
            data = np.fromfile(fh, dtype="<f8", count=2 * rows * cols)
        matrix = data.view("<c16").reshape(rows, cols)
        return cls(matrix=matrix, kind=kinds[tag])


def _block_diagonal(blocks: list[np.ndarray]) -> np.ndarray:
    rows = sum(b.shape[0] for b in blocks)
    cols = sum(b.shape[1] for b in blocks)
    out = np.zeros((rows, cols), dtype=complex)
    r = c = 0
    for b in blocks:
        out[r:r + b.shape[0], c:c + b.shape[1]] = b
        r += b.shape[0]
        c += b.shape[1]
    return out


def make_subarray_encoder(scenario: Scenario, partition: list,
                          weights: np.ndarray | None = None,
                          angle: ArrivalAngle | None = None) -> Encoder:
    """Narrowband sub-beams: each block row m' sums w_m y_m over its subarray.

    partition: list of index sets covering 1..M disjointly.  Default weights
    are the conjugate steering phases e^{+j 2 pi f_c tau_m(theta)}.
    """
    m = scenario.n_elements
    seen = np.zeros(m, dtype=bool)
    for group in partition:
        for idx in group:
            if idx < 0 or idx >= m:
                raise GeometryError(f"subarray index {idx} outside 0..{m - 1}")
            if seen[idx]:
                raise GeometryError(f"element {idx} appears in two subarrays")
            seen[idx] = True
    if not np.all(seen):
        missing = int(np.nonzero(~seen)[0][0])
        raise GeometryError(f"element {missing} not covered by the partition")
    if weights is None:
        tau = scenario.delays(angle)
        weights = np.exp(2j * np.pi * scenario.geometry.carrier_hz * tau)
    block = np.zeros((len(partition), m), dtype=complex)
    for row, group in enumerate(partition):
        for idx in group:
            block[row, idx] = weights[idx]
    blocks = [block] * scenario.n_snapshots
    return Encoder(matrix=_block_diagonal(blocks), kind=EncoderKind.SUBARRAY,
                   block_layout=[block.shape[0]] * scenario.n_snapshots)


def contiguous_partition(n_elements: int, subarray_size: int) -> list:
    """Split 0..M-1 into contiguous subarrays of the given size."""
    if n_elements % subarray_size:
        raise GeometryError(f"{n_elements} elements do not split into "
                            f"subarrays of {subarray_size}")
    return [list(range(i, i + subarray_size))
            for i in range(0, n_elements, subarray_size)]


def make_spatial_slepian_encoder(scenario: Scenario, margin: int = 4,
                                 tol: float = 1e-3,
                                 angle: ArrivalAngle | None = None,
                                 basis_u: np.ndarray | None = None) -> Encoder:
    """Identical per-snapshot blocks U^H with U the single-snapshot Slepian
    basis; P = N * D_1."""
    if basis_u is None:
        basis_u = snapshot_basis(scenario, margin, tol, angle)
    if basis_u.shape[0] != scenario.n_elements:
        raise GeometryError("snapshot basis row count must equal the element count")
    gram = basis_u.conj().T @ basis_u
    if np.abs(gram - np.eye(basis_u.shape[1])).max() > 1e-8:
        raise GeometryError("snapshot basis columns must be orthonormal")
    blocks = [basis_u.conj().T] * scenario.n_snapshots
    return Encoder(matrix=_block_diagonal(blocks), kind=EncoderKind.SPATIAL_BLOCK,
                   block_layout=[basis_u.shape[1]] * scenario.n_snapshots)


def make_spatiotemporal_encoder(model: ForwardModel, mode: str = "pinv",
                                weights: np.ndarray | None = None) -> Encoder:
    """Phi = A^+ (coefficients directly), A^H (deferred solve), or a
    supplied weight matrix (nulling / MVDR)."""
    if mode == "pinv":
        phi = model.pseudo_inverse
    elif mode == "adjoint":
        phi = model.matrix.conj().T
    elif mode == "weights":
        if weights is None:
            raise ValueError("mode 'weights' needs the weight matrix")
        phi = np.asarray(weights)
        if phi.shape[1] != model.matrix.shape[0]:
            raise GeometryError("weight matrix columns must equal M*N")
    else:
        raise ValueError(f"unknown spatiotemporal mode {mode!r}")
    return Encoder(matrix=phi, kind=EncoderKind.SPATIAL_TEMPORAL)


def make_random_encoder(n_measurements: int, n_samples: int, seed: int,
                        min_dimension: int | None = None) -> Encoder:
    """Dense i.i.d. circular complex Gaussian Phi scaled by 1/sqrt(P);
    deterministic under the seed."""
    import warnings
    if min_dimension is not None and n_measurements < min_dimension:
        warnings.warn(f"P = {n_measurements} below the subspace dimension "
                      f"{min_dimension}; recovery may fail", stacklevel=2)
    rng = np.random.default_rng(seed)
    scale = 1.0 / math.sqrt(2 * n_measurements)
    phi = scale * (rng.standard_normal((n_measurements, n_samples))
                   + 1j * rng.standard_normal((n_measurements, n_samples)))
    return Encoder(matrix=phi, kind=EncoderKind.RANDOM)


def encoded_ls(encoder: Encoder, model: ForwardModel, measurements: np.ndarray,
               ridge: float = 0.0) -> CoefficientVector:
    """Minimize 0.5 || w - Phi A alpha ||^2 + ridge ||alpha||^2 via SVD."""
    w = np.asarray(measurements)
    if w.shape != (encoder.n_measurements,):
        raise ValueError("measurement vector length mismatch")
    composite = encoder.matrix @ model.matrix
    u, s, vh = np.linalg.svd(composite, full_matrices=False)
    flagged = False
    if ridge == 0.0:
        keep = s > s[0] * 1e-10
        flagged = not bool(np.all(keep)) or composite.shape[0] < composite.shape[1]
        gain = np.where(keep, 1.0 / np.where(keep, s, 1.0), 0.0)
    else:
        gain = s / (s ** 2 + 2 * ridge)
    alpha = vh.conj().T @ (gain * (u.conj().T @ w))
    res = float(np.linalg.norm(w - composite @ alpha))
    return CoefficientVector(alpha, model.basis, res, ridge, flagged)


def variance_multiplier(encoder: Encoder, model: ForwardModel) -> float:
    """trace(Psi^+ Phi Phi^H Psi^{+H}) with Psi = Phi A: the white-noise
    variance factor of the encoded solve.  For Phi = I this reduces to
    trace((A^H A)^{-1})."""
    composite = encoder.matrix @ model.matrix
    s = np.linalg.svd(composite, compute_uv=False)
    if s[-1] <= 1e-12 * s[0] or composite.shape[0] < composite.shape[1]:
        raise GeometryError("composite Phi A is rank deficient")
    pinv = np.linalg.pinv(composite)
    g = pinv @ encoder.matrix
    return float(np.sum(np.abs(g) ** 2))


def identity_encoder(n_samples: int) -> Encoder:
    return Encoder(matrix=np.eye(n_samples, dtype=complex),
                   kind=EncoderKind.SPATIAL_BLOCK)
