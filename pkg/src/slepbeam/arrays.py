"""Array geometry, propagation delays, snapshot timing, and regime logic."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np
from scipy.constants import c as SPEED_OF_LIGHT

from .errors import GeometryError
from .slepian import dimension


class Regime(Enum):
    NARROWBAND = "narrowband"
    BROADBAND = "broadband"


@dataclass(frozen=True)
class ArrayGeometry:
    """Element positions (meters, relative to the phase center) plus carrier."""

    positions: np.ndarray          # (M, 3)
    carrier_hz: float
    speed: float = SPEED_OF_LIGHT

    def __post_init__(self):
        pos = np.atleast_2d(np.asarray(self.positions, dtype=float))
        if pos.shape[1] != 3:
            raise GeometryError("element positions must be 3-vectors")
        if pos.shape[0] < 1:
            raise GeometryError("need at least one element")
        if not np.all(np.isfinite(pos)):
            raise GeometryError("element positions must be finite")
        if self.carrier_hz <= 0:
            raise GeometryError("carrier frequency must be positive")
        object.__setattr__(self, "positions", pos)

    @property
    def n_elements(self) -> int:
        return self.positions.shape[0]

    @property
    def half_wavelength(self) -> float:
        return self.speed / (2 * self.carrier_hz)


@dataclass(frozen=True)
class ArrivalAngle:
    """Azimuth/elevation pair in radians."""

    azimuth: float
    elevation: float

    def unit_vector(self) -> np.ndarray:
        phi, el = self.azimuth, self.elevation
        v = np.array([math.cos(phi) * math.cos(el),
                      math.sin(phi) * math.cos(el),
                      math.sin(el)])
        # direction cosines of a unit vector by construction
        assert abs(v @ v - 1.0) < 1e-12
        return v

    @classmethod
    def from_degrees(cls, azimuth_deg: float, elevation_deg: float) -> "ArrivalAngle":
        return cls(math.radians(azimuth_deg), math.radians(elevation_deg))


@dataclass(frozen=True)
class SamplingPlan:
    """Snapshot times; default is uniform at the Nyquist interval 1/(2W)."""

    times: np.ndarray
    sample_interval: float

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        if t.ndim != 1 or t.size < 1:
            raise GeometryError("snapshot times must be a nonempty vector")
        if t.size > 1 and np.any(np.diff(t) <= 0):
            raise GeometryError("snapshot times must be strictly increasing")
        object.__setattr__(self, "times", t)

    @property
    def count(self) -> int:
        return self.times.size

    @classmethod
    def uniform(cls, count: int, bandwidth: float, t0: float = 0.0) -> "SamplingPlan":
        ts = 1.0 / (2.0 * bandwidth)
        return cls(times=t0 + np.arange(count) * ts, sample_interval=ts)


def ula(n_elements: int, carrier_hz: float, speed: float = SPEED_OF_LIGHT) -> ArrayGeometry:
    """Uniform linear array along x at half-wavelength spacing, centered."""
    spacing = speed / (2 * carrier_hz)
    x = (np.arange(n_elements) - (n_elements - 1) / 2) * spacing
    pos = np.zeros((n_elements, 3))
    pos[:, 0] = x
    return ArrayGeometry(pos, carrier_hz, speed)


def upa(nx: int, ny: int, carrier_hz: float, speed: float = SPEED_OF_LIGHT) -> ArrayGeometry:
    """Uniform planar array on the z = 0 plane at half-wavelength spacing."""
    spacing = speed / (2 * carrier_hz)
    gx = (np.arange(nx) - (nx - 1) / 2) * spacing
    gy = (np.arange(ny) - (ny - 1) / 2) * spacing
    xx, yy = np.meshgrid(gx, gy, indexing="ij")
    pos = np.column_stack([xx.ravel(), yy.ravel(), np.zeros(nx * ny)])
    return ArrayGeometry(pos, carrier_hz, speed)


def load_geometry(path, carrier_hz: float, speed: float = SPEED_OF_LIGHT) -> ArrayGeometry:
    """Geometry file: one element per line, three floats in meters."""
    rows = []
    for ln, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#")[0].strip()
        if not line:
            continue
        parts = line.replace(",", " ").split()
        if len(parts) != 3:
            raise GeometryError(f"{path}:{ln}: expected three floats, got {line!r}")
        rows.append([float(p) for p in parts])
    if not rows:
        raise GeometryError(f"{path}: no elements found")
    return ArrayGeometry(np.array(rows), carrier_hz, speed)


def delays(geometry: ArrayGeometry, angle: ArrivalAngle) -> np.ndarray:
    """Per-element propagation delays tau_m = p_m . v(theta) / c."""
    return geometry.positions @ angle.unit_vector() / geometry.speed


def aperture_span(geometry: ArrayGeometry, angle: ArrivalAngle) -> float:
    """Temporal spread of one snapshot across the aperture: max tau - min tau."""
    tau = delays(geometry, angle)
    return float(tau.max() - tau.min())


def regime(bandwidth: float, t1: float) -> tuple[Regime, float]:
    """Classify narrowband vs broadband; also returns the scalar 2*W*T1.

    Broadband iff 2*W*T1 >= 1 (snapshot spread at least one Nyquist interval);
    the boundary is inclusive.
    """
    if bandwidth <= 0:
        raise ValueError("bandwidth must be positive")
    x = 2.0 * bandwidth * t1
    return (Regime.BROADBAND if x >= 1.0 else Regime.NARROWBAND), x


@dataclass(frozen=True)
class Scenario:
    """Geometry + look direction + signal band + snapshot plan."""

    geometry: ArrayGeometry
    angle: ArrivalAngle
    bandwidth: float
    sampling: SamplingPlan

    def __post_init__(self):
        if self.bandwidth <= 0:
            raise ValueError("bandwidth must be positive")

    @property
    def n_elements(self) -> int:
        return self.geometry.n_elements

    @property
    def n_snapshots(self) -> int:
        return self.sampling.count

    def delays(self, angle: ArrivalAngle | None = None) -> np.ndarray:
        return delays(self.geometry, self.angle if angle is None else angle)

    def snapshot_span(self, angle: ArrivalAngle | None = None) -> float:
        return aperture_span(self.geometry, self.angle if angle is None else angle)

    def observation_span(self, angle: ArrivalAngle | None = None) -> float:
        """T_N = T_1 + (t_N - t_1): total interval touched by the batch."""
        t = self.sampling.times
        return self.snapshot_span(angle) + float(t[-1] - t[0])

    @classmethod
    def uniform(cls, geometry, angle, bandwidth, n_snapshots) -> "Scenario":
        return cls(geometry, angle, bandwidth,
                   SamplingPlan.uniform(n_snapshots, bandwidth))


MIN_TIME_BANDWIDTH = 1e-6   # degenerate-interval proxy for broadside, N = 1


def representation_dim(geometry: ArrayGeometry, angle: ArrivalAngle,
                       bandwidth: float, n_snapshots: int, tol: float = 1e-3) -> int:
    """Subspace dimension D_N = d(W * T_N) for N uniform Nyquist snapshots.

    T_N = T_1 + (N - 1)/(2W).  A degenerate interval (broadside, N = 1) is
    clamped to a tiny positive time-bandwidth product, giving dimension 1.
    """
    if n_snapshots < 1:
        raise ValueError("need at least one snapshot")
    t1 = aperture_span(geometry, angle)
    t_n = t1 + (n_snapshots - 1) / (2.0 * bandwidth)
    wt = max(bandwidth * t_n, MIN_TIME_BANDWIDTH)
    return dimension(wt, tol)


def dimension_margin(geometry: ArrayGeometry, angle: ArrivalAngle,
                     bandwidth: float, n_snapshots: int, tol: float = 1e-3) -> int:
    """L = D_N - ceil(2*W*T_1) - N + 1, the margin above the sample count."""
    d = representation_dim(geometry, angle, bandwidth, n_snapshots, tol)
    t1 = aperture_span(geometry, angle)
    return d - math.ceil(2 * bandwidth * t1) - n_snapshots + 1
