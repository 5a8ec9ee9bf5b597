"""Streaming least squares over lapped signal packets.

The signal is cut into packets of stride P = N * T_s with overlap 2*eta
around each cut; packet k carries D basis functions supported on
[kP - eta, (k+1)P + eta].  The functions come from unfolding an interval
Slepian basis on the packet core [0, P] through a smooth orthogonal fold,
which makes the whole family {psi_{k,d}} orthonormal in L2(R) while each
batch of N snapshots only touches two adjacent packets.  The chained
normal equations are block tridiagonal and are solved online with a
bounded backtracking buffer.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .arrays import ArrivalAngle, Scenario
from .errors import GeometryError, NumericalError
from .simulate import SnapshotBatch
from .slepian import SlepianBasis, build_basis, dimension

SAFETY_STEP = 0.1        # fraction of T_s kept clear of the exclusion zones


def rising_cutoff(u: np.ndarray) -> np.ndarray:
    """Half-iterated sine profile on [-1, 1]: r(-1) = 0, r(1) = 1 and
    r(u)^2 + r(-u)^2 = 1."""
    return np.sin(np.pi / 4 * (1 + np.sin(np.pi * np.clip(u, -1, 1) / 2)))


@dataclass
class PacketBasis:
    """Shift-invariant lapped packet basis plus the A/B/E solver blocks."""

    scenario: Scenario
    angle: ArrivalAngle
    stride: float                 # P = N * T_s
    overlap: float                # eta (half the inter-packet overlap)
    n_batch: int                  # snapshots per batch
    dim: int                      # functions per packet
    grid: np.ndarray              # support grid, local coords in [-eta, P+eta]
    samples: np.ndarray           # (G_support, dim)
    quad_weights: np.ndarray      # trapezoid weights on the support grid
    core_basis: SlepianBasis
    fold_origin: float            # absolute time of packet-0 left fold point
    a_block: np.ndarray           # (MN, dim) complex
    b_block: np.ndarray           # (MN, dim) complex
    e_block: np.ndarray           # (dim, dim) complex

    @property
    def support_length(self) -> float:
        return self.stride + 2 * self.overlap

    def evaluate(self, local_times, indices=None) -> np.ndarray:
        """Packet-function values in local coordinates; zero off support."""
        t = np.atleast_1d(np.asarray(local_times, dtype=float))
        cols = self.samples if indices is None else self.samples[:, indices]
        out = np.zeros((t.size, cols.shape[1]))
        lo, hi = self.grid[0], self.grid[-1]
        inside = (t >= lo) & (t <= hi)
        if np.any(inside):
            h = self.grid[1] - self.grid[0]
            pos = (t[inside] - lo) / h
            from .slepian import _interp_rows, _lagrange_stencil
            start, weights = _lagrange_stencil(pos, len(self.grid))
            out[inside] = _interp_rows(cols, start, weights)
        return out

    def fold_point(self, k: int) -> float:
        """Absolute time of the fold between packets k-1 and k."""
        return self.fold_origin + k * self.stride

    def batch_local_offsets(self, k: int) -> np.ndarray:
        """Batch-k sample offsets in packet-k local coordinates."""
        tau = self.scenario.delays(self.angle)
        ts = self.scenario.sampling.sample_interval
        t = (k * self.n_batch + np.arange(self.n_batch)) * ts
        return (t[:, None] - tau[None, :]).reshape(-1) - self.fold_point(k)

    def synthesize(self, coefficients: dict, times: np.ndarray) -> np.ndarray:
        """Sum packet expansions at absolute times; coefficients maps packet
        index -> complex coefficient vector."""
        times = np.asarray(times, dtype=float)
        out = np.zeros(times.shape, dtype=complex)
        for k, alpha in coefficients.items():
            local = times - self.fold_point(k)
            mask = (local >= self.grid[0]) & (local <= self.grid[-1])
            if np.any(mask):
                out[mask] += self.evaluate(local[mask]) @ alpha
        return out


def _fold_extended(ext_samples: np.ndarray, n_eta: int) -> np.ndarray:
    """Fold extended-interval samples into the packet core block.

    ext_samples live on a uniform grid over [-eta, P+eta] with the fold
    points at indices n_eta and G_ext-1-n_eta.  The fixed-polarity fold
    U(r, p): (Uf)(p+s) = r(s)f(p+s) + r(-s)f(p-s) applied at both cuts
    returns the block values on [0, P]; images of smooth functions vanish
    at the right cut, which keeps the unfolded functions continuous.
    """
    g_ext, d = ext_samples.shape
    g_core = g_ext - 2 * n_eta
    out = ext_samples[n_eta:n_eta + g_core].copy()
    if n_eta > 0:
        s = np.arange(1, n_eta + 1)
        u = s / n_eta
        r_plus = rising_cutoff(u)[:, None]
        r_minus = rising_cutoff(-u)[:, None]
        # left cut at index n_eta (block coordinate 0)
        out[s] = r_plus * ext_samples[n_eta + s] + r_minus * ext_samples[n_eta - s]
        out[0] = math.sqrt(2.0) * rising_cutoff(np.array([0.0]))[0] * ext_samples[n_eta]
        # right cut at index n_eta + g_core - 1 (block coordinate P)
        jr = g_core - 1
        out[jr - s] = (r_plus * ext_samples[n_eta + jr - s]
                       - r_minus * ext_samples[n_eta + jr + s])
        out[jr] = 0.0
    return out


def _unfold_block(block: np.ndarray, n_eta: int) -> np.ndarray:
    """Adjoint of the fold: block functions on [0, P] out to [-eta, P+eta].

    (U* g)(p+s) = r(s) g(p+s) - r(-s) g(p-s); with g supported on the block
    this tapers the interior by r and reflects r(-s)-weighted tails outside,
    with a sign flip past the right cut.
    """
    g_core, d = block.shape
    g_support = g_core + 2 * n_eta
    out = np.zeros((g_support, d))
    out[n_eta:n_eta + g_core] = block
    if n_eta > 0:
        s = np.arange(1, n_eta + 1)
        u = s / n_eta
        r_plus = rising_cutoff(u)[:, None]
        r_minus = rising_cutoff(-u)[:, None]
        r0 = rising_cutoff(np.array([0.0]))[0]
        out[n_eta + s] = r_plus * block[s]
        out[n_eta - s] = r_minus * block[s]
        out[n_eta] = r0 * block[0]
        jr = n_eta + g_core - 1
        out[jr - s] = r_plus * block[g_core - 1 - s]
        out[jr + s] = -r_minus * block[g_core - 1 - s]
        out[jr] = r0 * block[g_core - 1]
    return out


def _lapped_family(bandwidth: float, g_core: int, h: float, n_eta: int,
                   dim: int, tol: float):
    """Lapped orthonormal functions for one block of length (g_core-1)*h.

    Builds the Slepian basis of the extended interval, folds it into the
    block, orthonormalizes under the block quadrature, keeps the `dim`
    dominant directions, and unfolds back to the support grid.  Returns
    (support grid, samples, trapezoid weights, extended basis).
    """
    stride = (g_core - 1) * h
    support = stride + 2 * n_eta * h
    n_keep_ext = max(dim + 8, 16)
    ext = build_basis(bandwidth, support, tol, n_keep=n_keep_ext,
                      n_grid=g_core + 2 * n_eta)
    if n_eta == 0:
        # degenerate rectangular fold: the blocks are the interval basis
        samples = ext.basis_samples[:, :dim]
        grid = np.arange(g_core) * h
        wq = np.full(g_core, h)
        wq[0] = wq[-1] = h / 2
        return grid, samples, wq, ext
    folded = _fold_extended(ext.basis_samples, n_eta)
    wq_core = np.full(g_core, h)
    wq_core[0] = wq_core[-1] = h / 2
    sw = np.sqrt(wq_core)
    u_blk, _, _ = np.linalg.svd(sw[:, None] * folded, full_matrices=False)
    if dim > u_blk.shape[1]:
        raise GeometryError(f"packet dimension {dim} exceeds the folded family "
                            f"size {u_blk.shape[1]}")
    block = u_blk[:, :dim] / sw[:, None]
    samples = _unfold_block(block, n_eta)
    g_support = samples.shape[0]
    grid = (np.arange(g_support) - n_eta) * h
    wq = np.full(g_support, h)
    wq[0] = wq[-1] = h / 2
    return grid, samples, wq, ext


def build_packet_basis(scenario: Scenario, n_batch: int, dim: int | None = None,
                       tol: float = 1e-3, overlap: float | None = None,
                       margin: int | None = None,
                       angle: ArrivalAngle | None = None,
                       grid_density: int | None = None) -> PacketBasis:
    """Construct the lapped packet basis and the A/B/E blocks.

    A Slepian basis is built on the extended interval [-eta, P+eta], folded
    into the core block, orthonormalized, and unfolded; unitarity of the
    fold makes the shifted packet family orthonormal in L2(R).  The
    batch/packet layout must satisfy the touching constraint: batch k's
    samples are centered on the fold between packets k-1 and k, which
    requires span/2 < P - eta with span = (N-1)T_s + T_1.
    """
    angle = scenario.angle if angle is None else angle
    w = scenario.bandwidth
    ts = scenario.sampling.sample_interval
    t1 = scenario.snapshot_span(angle)
    stride = n_batch * ts
    span = (n_batch - 1) * ts + t1
    eta_hi = stride - span / 2 - SAFETY_STEP * ts
    eta_lo = t1 / 2
    if eta_lo > eta_hi:
        need = math.ceil((2 * t1 - ts + 2 * SAFETY_STEP * ts) / ts)
        raise GeometryError(
            f"batch of {n_batch} snapshots cannot satisfy the packet touching "
            f"constraint (span {span:g} s, stride {stride:g} s); increase the "
            f"batch size to at least ~{need}")
    if overlap is None:
        # a fold transition spanning several Nyquist intervals keeps the
        # folded family well concentrated; sharp folds leak badly
        overlap = min(max(eta_lo, 3.5 * ts), eta_hi)
    elif overlap < 0 or overlap > eta_hi:
        raise GeometryError(f"overlap {overlap:g} s outside the feasible range "
                            f"[0, {eta_hi:g}]")

    density = grid_density if grid_density is not None else 32
    g_core = max(1024, int(density * math.ceil(2 * w * stride)))
    h = stride / (g_core - 1)
    n_eta = min(int(round(overlap / h)), int(eta_hi / h))
    overlap = n_eta * h
    support = stride + 2 * overlap
    if dim is None:
        base_wt = max(w * support, 1e-6)
        dim = dimension(base_wt, tol) if margin is None else \
            math.ceil(2 * base_wt) + margin

    grid, samples, wq, ext = _lapped_family(w, g_core, h, n_eta, dim, tol)

    # batch-0 geometry: center the batch on the packet-0 left fold point
    tau = scenario.delays(angle)
    off0 = (np.arange(n_batch) * ts)[:, None] - tau[None, :]
    center = (off0.min() + off0.max()) / 2
    fold_origin = center

    basis = PacketBasis(scenario=scenario, angle=angle, stride=stride,
                        overlap=overlap, n_batch=n_batch, dim=dim, grid=grid,
                        samples=samples, quad_weights=wq, core_basis=ext,
                        fold_origin=fold_origin, a_block=None, b_block=None,
                        e_block=None)
    local = basis.batch_local_offsets(0)
    phases = np.tile(np.exp(-2j * np.pi * scenario.geometry.carrier_hz * tau),
                     n_batch)
    basis.a_block = phases[:, None] * basis.evaluate(local)
    basis.b_block = phases[:, None] * basis.evaluate(local + stride)
    basis.e_block = basis.a_block.conj().T @ basis.b_block
    return basis


def _stack(basis: PacketBasis, batch) -> np.ndarray:
    if isinstance(batch, SnapshotBatch):
        return batch.stacked()
    batch = np.asarray(batch)
    if batch.ndim == 2:
        return batch.T.reshape(-1)
    return batch


class PacketStream:
    """Online solver for the chained packet least-squares problem.

    Feed batches with step(); the newest packet estimate and the refreshed
    buffer estimates are returned each step.  Packets that leave the buffer
    are frozen and appended to `finalized`.  Single writer: one step() caller
    at a time; finalized packets are safe for concurrent readers.

    precompute_steady runs the data-independent Q/U recursion to its fixed
    point up front; each later step is then a fixed set of matrix-vector
    products (two (D x MN), a few (D x D)) with no fresh factorizations.
    """

    def __init__(self, basis: PacketBasis, batch0, batch1, ridge: float = 0.0,
                 buffer_len: int = 5, encoder=None,
                 precompute_steady: bool = False):
        import scipy.linalg as sla
        self.basis = basis
        self.ridge = float(ridge)
        self.buffer_len = int(buffer_len)
        if self.buffer_len < 1:
            raise ValueError("buffer length must be >= 1")
        a, b = basis.a_block, basis.b_block
        if encoder is not None:
            if encoder.matrix.shape[1] != a.shape[0]:
                raise GeometryError(
                    "encoder temporal support must cover exactly one batch "
                    f"({a.shape[0]} samples); got {encoder.matrix.shape[1]}")
            a = encoder.matrix @ a
            b = encoder.matrix @ b
        self.a = a
        self.b = b
        self.e = a.conj().T @ b
        self.encoder = encoder
        d = a.shape[1]
        self.dim = d
        self.aha = a.conj().T @ a
        q0 = self.aha + b.conj().T @ b + self.ridge * np.eye(d)
        try:
            np.linalg.cholesky(q0)
        except np.linalg.LinAlgError as exc:
            raise NumericalError("Q_0 is singular; pass ridge > 0") from exc
        self.q0 = q0
        self.op_counts = {"matvec_mn": 0, "matvec_dd": 0, "solve_dd": 0,
                          "factor_dd": 0}
        self._sla = sla
        self._factors = []         # precomputed (cho_factor(Q_k), U_k) per k
        self.q_deltas = []         # ||Q_k - Q_{k-1}||_F trace for diagnostics
        if precompute_steady:
            self._precompute_factors()
        y0 = self._encode(_stack(basis, batch0))
        y1 = self._encode(_stack(basis, batch1))
        u0, v0 = self._interior_solve(0, a.conj().T @ y0 + b.conj().T @ y1)
        self.u_hist = {0: u0}
        self.v_hist = {0: v0}
        self.k_interior = 0
        self.prev_batch = y1
        self.n_batches = 2
        self.estimates: dict[int, np.ndarray] = {}
        self.finalized: dict[int, np.ndarray] = {}
        self.packets_emitted = 0
        self._term_factor = None

    def _encode(self, stacked: np.ndarray) -> np.ndarray:
        if self.encoder is None:
            return stacked
        return self.encoder.matrix @ stacked

    def _precompute_factors(self, tol: float = 1e-12, max_iter: int = 500):
        sla = self._sla
        q = self.q0.copy()
        for _ in range(max_iter):
            fac = sla.cho_factor(q)
            u = sla.cho_solve(fac, self.e.conj().T)
            self._factors.append((fac, u))
            q_next = self.q0 - self.e @ u
            delta = np.linalg.norm(q_next - q, "fro")
            if delta < tol * np.linalg.norm(q_next, "fro"):
                break
            q = q_next

    def _interior_solve(self, k: int, rhs: np.ndarray):
        """(U_k, v_k) with Q_k = Q_0 - E U_{k-1} (Q_0 itself at k = 0)."""
        sla = self._sla
        if self._factors:
            fac, u_k = self._factors[min(k, len(self._factors) - 1)]
            v_k = sla.cho_solve(fac, rhs)
            self.op_counts["solve_dd"] += 1
            return u_k, v_k
        if k == 0:
            q_k = self.q0
        else:
            q_k = self.q0 - self.e @ self.u_hist[k - 1]
            self.q_deltas.append(float(np.linalg.norm(
                q_k - getattr(self, "_q_prev", self.q0), "fro")))
        self._q_prev = q_k
        try:
            fac = sla.cho_factor(q_k)
        except np.linalg.LinAlgError as exc:
            raise NumericalError(f"Q became non-positive at step {k}") from exc
        self.op_counts["factor_dd"] += 1
        u_k = sla.cho_solve(fac, self.e.conj().T)
        v_k = sla.cho_solve(fac, rhs)
        self.op_counts["solve_dd"] += 1
        return u_k, v_k

    @property
    def newest_packet(self) -> int:
        return self.n_batches - 1

    def step(self, batch):
        """Consume the next batch; returns (newest_index, newest_estimate,
        buffer_estimates dict)."""
        y_next = self._encode(_stack(self.basis, batch))
        k = self.k_interior + 1
        rhs = (self.a.conj().T @ self.prev_batch
               + self.b.conj().T @ y_next - self.e @ self.v_hist[k - 1])
        self.op_counts["matvec_mn"] += 2
        self.op_counts["matvec_dd"] += 1
        u_k, v_k = self._interior_solve(k, rhs)
        self.u_hist[k] = u_k
        self.v_hist[k] = v_k
        self.k_interior = k
        self.prev_batch = y_next
        self.n_batches += 1

        # terminal estimate for the newest packet
        newest = self.n_batches - 1
        if self._factors:
            if self._term_factor is None:
                term = (self.aha + self.ridge * np.eye(self.dim)
                        - self.e @ self._factors[-1][1])
                self._term_factor = self._sla.cho_factor(term)
            alpha = self._sla.cho_solve(
                self._term_factor, self.a.conj().T @ y_next - self.e @ v_k)
        else:
            term = self.aha + self.ridge * np.eye(self.dim) - self.e @ u_k
            alpha = np.linalg.solve(term, self.a.conj().T @ y_next - self.e @ v_k)
        self.op_counts["matvec_mn"] += 1
        self.op_counts["matvec_dd"] += 1
        self.op_counts["solve_dd"] += 1
        self.estimates[newest] = alpha

        # bounded backtracking over the buffer window; packets exiting the
        # window receive their one-time final refresh on the way out
        floor = max(0, newest - self.buffer_len)
        lowest_pending = self.packets_emitted      # smallest unfinalized index
        nxt = alpha
        for ell in range(newest - 1, lowest_pending - 1, -1):
            nxt = self.v_hist[ell] - self.u_hist[ell] @ nxt
            self.estimates[ell] = nxt
            self.op_counts["matvec_dd"] += 1

        # freeze packets falling out of the buffer
        for ell in [x for x in sorted(self.estimates) if x < floor]:
            self.finalized[ell] = self.estimates.pop(ell)
            self.packets_emitted += 1
        for ell in [x for x in self.u_hist if x < self.packets_emitted - 1]:
            self.u_hist.pop(ell)
            self.v_hist.pop(ell)
        return newest, alpha, dict(self.estimates)

    def all_estimates(self) -> dict:
        out = dict(self.finalized)
        out.update(self.estimates)
        return out


def stream_solve(basis: PacketBasis, batches, ridge: float = 0.0,
                 buffer_len: int = 5, encoder=None,
                 precompute_steady: bool = False) -> dict:
    """Run the full stream over an iterable of batches; returns the final
    per-packet coefficient estimates (finalized plus in-buffer)."""
    it = iter(batches)
    try:
        b0 = next(it)
        b1 = next(it)
    except StopIteration:
        raise ValueError("need at least two batches")
    stream = PacketStream(basis, b0, b1, ridge, buffer_len, encoder,
                          precompute_steady)
    for batch in it:
        stream.step(batch)
    return stream.all_estimates()


def dense_joint_solve(basis: PacketBasis, batches, ridge: float = 0.0,
                      encoder=None) -> dict:
    """Oracle: assemble and solve the chained problem exactly.

    Minimizes sum_k ||A alpha_k + B alpha_{k-1} - y_k||^2 + ridge sum ||alpha_k||^2
    with alpha_{-1} = 0, via the stacked dense least-squares system.
    """
    a, b = basis.a_block, basis.b_block
    if encoder is not None:
        a = encoder.matrix @ a
        b = encoder.matrix @ b
    ys = [(encoder.matrix @ _stack(basis, y)) if encoder is not None
          else _stack(basis, y) for y in batches]
    n_pkt = len(ys)
    mn, d = a.shape
    big = np.zeros((mn * n_pkt, d * n_pkt), dtype=complex)
    rhs = np.concatenate(ys)
    for k in range(n_pkt):
        big[k * mn:(k + 1) * mn, k * d:(k + 1) * d] = a
        if k >= 1:
            big[k * mn:(k + 1) * mn, (k - 1) * d:k * d] = b
    if ridge > 0:
        big = np.concatenate([big, math.sqrt(ridge) * np.eye(d * n_pkt)])
        rhs = np.concatenate([rhs, np.zeros(d * n_pkt)])
    sol, *_ = np.linalg.lstsq(big, rhs, rcond=None)
    return {k: sol[k * d:(k + 1) * d] for k in range(n_pkt)}


# ---------------------------------------------------------------------------
# packet merging
# ---------------------------------------------------------------------------

@dataclass
class MergeOperator:
    """Projection of B' consecutive packets onto a merged lapped subspace.

    The merged space is a super-packet: the same fold construction applied
    to the union block of length B'P, with the same cutoff and overlap, so
    the merged functions stay orthonormal against the untouched neighbours
    and lie (up to truncation) inside the span of the merged packets.
    """

    basis: PacketBasis
    n_merge: int
    merged_dim: int
    merged_grid: np.ndarray        # local coords of the super-packet support
    merged_samples: np.ndarray     # (G_merged, merged_dim)
    cross_gram: np.ndarray         # (B'*D, D') real: <psi_{j,d}, psi'_m>
    null_block: np.ndarray         # (B'*D, rank) low-rank update factor W_I

    @property
    def rank(self) -> int:
        return self.null_block.shape[1]

    def stack_coefficients(self, coefficients: dict, start: int) -> np.ndarray:
        return np.concatenate([coefficients[start + j]
                               for j in range(self.n_merge)])

    def project_direct(self, stacked: np.ndarray) -> np.ndarray:
        """Merged-space coefficients beta = M^T alpha."""
        return self.cross_gram.T @ stacked

    def project_low_rank(self, stacked: np.ndarray) -> np.ndarray:
        """Packet-frame approximation alpha - W_I W_I^T alpha; costs
        2 * (B'D) * rank operations."""
        return stacked - self.null_block @ (self.null_block.T @ stacked)

    def evaluate_merged(self, local_times) -> np.ndarray:
        t = np.atleast_1d(np.asarray(local_times, dtype=float))
        out = np.zeros((t.size, self.merged_dim))
        lo, hi = self.merged_grid[0], self.merged_grid[-1]
        inside = (t >= lo) & (t <= hi)
        if np.any(inside):
            h = self.merged_grid[1] - self.merged_grid[0]
            from .slepian import _interp_rows, _lagrange_stencil
            pos = (t[inside] - lo) / h
            st, wg = _lagrange_stencil(pos, len(self.merged_grid))
            out[inside] = _interp_rows(self.merged_samples, st, wg)
        return out

    def synthesize_merged(self, beta: np.ndarray, times: np.ndarray,
                          start: int) -> np.ndarray:
        local = np.asarray(times) - self.basis.fold_point(start)
        return self.evaluate_merged(local) @ beta


def build_merge_operator(basis: PacketBasis, n_merge: int,
                         merged_margin: int | None = None,
                         merged_dim: int | None = None,
                         tol: float = 1e-3) -> MergeOperator:
    """Merged lapped subspace over B' consecutive packets.

    Dimension defaults to d(W * (B'P + 2 eta)); merged_margin instead
    selects ceil(2 W (B'P + 2 eta)) + margin.  The low-rank factor W_I
    collects the near-null principal directions of the cross Gram, with
    rank fixed at B'*D - D'.
    """
    if n_merge < 1:
        raise ValueError("merge count must be >= 1")
    w = basis.scenario.bandwidth
    h = basis.grid[1] - basis.grid[0]
    g_core = int(round(basis.stride / h)) + 1
    n_eta = int(round(basis.overlap / h))
    g_core_merged = n_merge * (g_core - 1) + 1
    length = (n_merge * basis.stride) + 2 * basis.overlap
    if merged_dim is None:
        base_wt = max(w * length, 1e-6)
        merged_dim = dimension(base_wt, tol) if merged_margin is None else \
            math.ceil(2 * base_wt) + merged_margin
    m_grid, m_samples, m_wq, _ = _lapped_family(w, g_core_merged, h, n_eta,
                                                merged_dim, tol)

    d = basis.dim
    gram = np.zeros((n_merge * d, merged_dim))
    # grids align exactly: packet j occupies rows j*(g_core-1) .. +G_support
    g_support = basis.samples.shape[0]
    for j in range(n_merge):
        r0 = j * (g_core - 1)
        window = m_samples[r0:r0 + g_support]
        gram[j * d:(j + 1) * d] = (basis.samples * basis.quad_weights[:, None]).T \
            @ window
    gg = gram @ gram.T
    _, evecs = np.linalg.eigh(gg)
    rank = max(n_merge * d - merged_dim, 0)
    null_block = evecs[:, :rank]
    return MergeOperator(basis=basis, n_merge=n_merge, merged_dim=merged_dim,
                         merged_grid=m_grid, merged_samples=m_samples,
                         cross_gram=gram, null_block=null_block)


def merge_packets(basis: PacketBasis, coefficients: dict, start: int,
                  n_merge: int, times: np.ndarray,
                  operator: MergeOperator | None = None,
                  low_rank: bool = False) -> np.ndarray:
    """Synthesize the merged estimate of packets start..start+n_merge-1 at
    the given absolute times.  n_merge = 1 is the identity (no merge)."""
    if n_merge == 1:
        return basis.synthesize({start: coefficients[start]}, times)
    if operator is None:
        operator = build_merge_operator(basis, n_merge)
    stacked = operator.stack_coefficients(coefficients, start)
    if low_rank:
        approx = operator.project_low_rank(stacked)
        parts = {start + j: approx[j * basis.dim:(j + 1) * basis.dim]
                 for j in range(n_merge)}
        return basis.synthesize(parts, times)
    beta = operator.project_direct(stacked)
    return operator.synthesize_merged(beta, times, start)


def merge_operator_error(operator: MergeOperator) -> float:
    """Low-rank merge accuracy: because the lapped packets are orthonormal,
    the metric || P_S' P_S - (P_S - L L^H P_S) ||_F / || P_S' P_S ||_F
    reduces to coefficient-space operations through the cross Gram."""
    m = operator.cross_gram
    direct = m @ m.T
    approx = np.eye(m.shape[0]) - operator.null_block @ operator.null_block.T
    return float(np.linalg.norm(direct - approx, "fro")
                 / np.linalg.norm(direct, "fro"))


def interval_merge_error(scenario: Scenario, n_batch: int, n_merge: int,
                         packet_margin: int, merged_margin: int,
                         points_per_nyquist: int = 4,
                         angle: ArrivalAngle | None = None) -> float:
    """The same accuracy metric with plain interval-Slepian packet subspaces
    on overlapping intervals [k N T_s, k N T_s + T_N] (discrete frame)."""
    from scipy.linalg import eigh_tridiagonal

    def dpss_vecs(g, wt, k):
        ww = wt / g
        diag = (((g - 1) / 2 - np.arange(g)) ** 2) * np.cos(2 * np.pi * ww)
        off = np.arange(1, g) * np.arange(g - 1, 0, -1) / 2.0
        _, vecs = eigh_tridiagonal(diag, off, select="i",
                                   select_range=(g - k, g - 1))
        return vecs[:, ::-1]

    angle = scenario.angle if angle is None else angle
    w = scenario.bandwidth
    ts = scenario.sampling.sample_interval
    t1 = scenario.snapshot_span(angle)
    t_n = t1 + (n_batch - 1) * ts
    t_kn = t1 + (n_merge * n_batch - 1) * ts
    h = ts / points_per_nyquist
    g_union = int(round(t_kn / h))
    len_p = int(round(t_n / h))
    stride = n_batch * points_per_nyquist
    d_p = math.ceil(2 * w * t_n) + packet_margin
    d_m = math.ceil(2 * w * t_kn) + merged_margin
    vp = dpss_vecs(len_p, w * t_n, d_p)
    cols = []
    for k in range(n_merge):
        z = np.zeros((g_union, d_p))
        z[k * stride:k * stride + len_p] = vp
        cols.append(z)
    vs, _ = np.linalg.qr(np.concatenate(cols, axis=1))
    vsp = dpss_vecs(g_union, w * t_kn, d_m)
    gram = vs.T @ vsp
    gg = gram @ gram.T
    _, evecs = np.linalg.eigh(gg)
    rank = vs.shape[1] - d_m
    wi = evecs[:, :rank]
    l_fac = vs @ wi
    ps = vs @ vs.T
    psp = vsp @ vsp.T
    direct = psp @ ps
    approx = ps - l_fac @ (l_fac.T @ ps)
    return float(np.linalg.norm(direct - approx, "fro")
                 / np.linalg.norm(direct, "fro"))


def write_packet_records(basis: PacketBasis, estimates: dict, path,
                         samples_per_packet: int | None = None) -> None:
    """Append per-packet coefficient records and synthesized Nyquist samples
    to a CSV file: one row per packet with the complex coefficients followed
    by the packet's synthesized samples at the Nyquist rate."""
    import csv
    ts = 1.0 / (2 * basis.scenario.bandwidth)
    n_out = samples_per_packet or basis.n_batch
    new_file = not Path(path).exists()
    with open(path, "a", newline="") as fh:
        writer = csv.writer(fh)
        if new_file:
            head = ["packet"]
            head += [f"coeff{i}_{p}" for i in range(basis.dim)
                     for p in ("re", "im")]
            head += [f"sample{i}_{p}" for i in range(n_out)
                     for p in ("re", "im")]
            writer.writerow(head)
        for k in sorted(estimates):
            alpha = estimates[k]
            t = basis.fold_point(k) + (np.arange(n_out) - n_out / 2) * ts
            shat = basis.synthesize({k: alpha}, t)
            row = [k]
            for v in alpha:
                row += [v.real, v.imag]
            for v in shat:
                row += [v.real, v.imag]
            writer.writerow(row)


def batches_from_file(path, n_elements: int, n_snapshots: int):
    """Iterate (M, N) complex snapshot batches from a little-endian
    complex64 binary file, one M x N record at a time (row-major)."""
    record = n_elements * n_snapshots
    with open(path, "rb") as fh:
        while True:
            chunk = np.fromfile(fh, dtype="<c8", count=record)
            if chunk.size < record:
                return
            yield chunk.astype(np.complex128).reshape(n_elements, n_snapshots)
