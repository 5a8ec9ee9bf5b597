"""Test-signal generation, array snapshot simulation, experiment configs."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from .arrays import ArrivalAngle, Scenario, load_geometry, ula, upa
from .errors import ConfigError, DomainError
from .slepian import SlepianBasis

DEFAULT_TONES = 256


def trial_rng(seed: int, trial: int = 0) -> np.random.Generator:
    """Independent deterministic stream per (seed, trial)."""
    return np.random.default_rng([seed & 0xFFFFFFFF, trial])


@dataclass
class TestSignal:
    """Bandlimited random signal with exact closed-form evaluation.

    sum_of_sinusoids: 256 tones, frequencies uniform in [-W, W], complex
    Gaussian amplitudes rescaled so the tone powers sum to `power` exactly
    (keeps configured SNR/SIR calibrated per draw).
    """

    bandwidth: float
    duration: float
    kind: str
    seed: int
    power: float = 1.0
    _freqs: np.ndarray = field(default=None, repr=False)
    _amps: np.ndarray = field(default=None, repr=False)
    _basis: SlepianBasis = field(default=None, repr=False)
    _coeffs: np.ndarray = field(default=None, repr=False)
    origin: float = 0.0

    def evaluate(self, times) -> np.ndarray:
        t = np.asarray(times, dtype=float)
        if self.kind == "sum_of_sinusoids":
            return (np.exp(2j * np.pi * np.outer(t, self._freqs)) @ self._amps)
        rel = t - self.origin
        tolr = 1e-9 * self._basis.interval_length
        if np.any(rel < -tolr) or np.any(rel > self._basis.interval_length + tolr):
            raise DomainError("slepian-model signal evaluated outside its interval")
        vals = self._basis.evaluate(np.clip(rel, 0, self._basis.interval_length),
                                    np.arange(len(self._coeffs)))
        return vals @ self._coeffs


def generate_signal(bandwidth: float, duration: float, kind: str = "sum_of_sinusoids",
                    seed: int = 0, power: float = 1.0, n_tones: int = DEFAULT_TONES,
                    basis: SlepianBasis | None = None, origin: float = 0.0,
                    rng: np.random.Generator | None = None) -> TestSignal:
    if bandwidth <= 0 or duration <= 0:
        raise ValueError("bandwidth and duration must be positive")
    rng = trial_rng(seed) if rng is None else rng
    sig = TestSignal(bandwidth, duration, kind, seed, power, origin=origin)
    if kind == "sum_of_sinusoids":
        freqs = rng.uniform(-bandwidth, bandwidth, n_tones)
        amps = rng.standard_normal(n_tones) + 1j * rng.standard_normal(n_tones)
        amps *= math.sqrt(power) / np.linalg.norm(amps)
        sig._freqs, sig._amps = freqs, amps
    elif kind == "random_slepian":
        if basis is None:
            raise ValueError("random_slepian signals need a basis")
        lam = basis.eigenvalues[: basis.n_funcs]
        coeffs = np.sqrt(lam / 2) * (rng.standard_normal(len(lam))
                                     + 1j * rng.standard_normal(len(lam)))
        sig._basis, sig._coeffs = basis, coeffs
    else:
        raise ValueError(f"unknown signal kind {kind!r}")
    return sig


@dataclass
class SnapshotBatch:
    """N snapshots off an M-element array; samples[m, n] = y_m(t_n)."""

    samples: np.ndarray         # (M, N) complex
    times: np.ndarray           # (N,)

    @property
    def n_elements(self) -> int:
        return self.samples.shape[0]

    @property
    def n_snapshots(self) -> int:
        return self.samples.shape[1]

    def stacked(self) -> np.ndarray:
        """Snapshot-major vector [y[1]; ...; y[N]]."""
        return self.samples.T.reshape(-1)


def sample_array(signal: TestSignal, scenario: Scenario, noise_power: float = 0.0,
                 interferers: list[tuple[TestSignal, ArrivalAngle]] = (),
                 rng: np.random.Generator | None = None,
                 angle: ArrivalAngle | None = None) -> SnapshotBatch:
    """Demodulated array observation:
    y_m(t_n) = e^{-j2\\pi f_c tau_m} s(t_n - tau_m) + interferers + noise."""
    t = scenario.sampling.times
    fc = scenario.geometry.carrier_hz
    out = np.zeros((scenario.n_elements, scenario.n_snapshots), dtype=complex)
    for sig, ang in [(signal, angle or scenario.angle)] + [tuple(x) for x in interferers]:
        tau = scenario.delays(ang)
        phases = np.exp(-2j * np.pi * fc * tau)
        offs = t[None, :] - tau[:, None]
        out += phases[:, None] * sig.evaluate(offs.ravel()).reshape(offs.shape)
    if noise_power > 0:
        rng = trial_rng(0) if rng is None else rng
        scale = math.sqrt(noise_power / 2)
        out += scale * (rng.standard_normal(out.shape)
                        + 1j * rng.standard_normal(out.shape))
    return SnapshotBatch(samples=out, times=t.copy())


def interferer_power(signal_power: float, sir_db: float) -> float:
    """Interferer power for a given signal-to-interferer ratio in dB."""
    return signal_power * 10 ** (-sir_db / 10)


# ---------------------------------------------------------------------------
# experiment configuration (flat key = value text format)
# ---------------------------------------------------------------------------

@dataclass
class ExperimentConfig:
    geometry: str = "ula:64"
    carrier_hz: float = 20e9
    bandwidth_hz: float = 5e9
    azimuth_deg: float = 0.0
    elevation_deg: float = 0.0
    interferers: list = field(default_factory=list)   # (az_deg, el_deg, sir_db)
    snr_db: list = field(default_factory=lambda: [0.0, 10.0, 20.0, 30.0, 40.0])
    sir_db: list = field(default_factory=lambda: [-30.0])
    snapshots: int = 32
    trials: int = 50
    seed: int = 20240801
    tolerance: float = 1e-3
    margin: int | None = 8
    snapshot_margin: int = 4
    taps: list = field(default_factory=lambda: [16, 32, 64])
    subarrays: list = field(default_factory=list)      # subarray sizes
    methods: list = field(default_factory=list)
    encoder: str = "spatiotemporal"
    measurements: list = field(default_factory=list)   # P sweep for encoders
    buffer: int = 5
    merge: list = field(default_factory=lambda: [1, 3, 5])
    packets: int = 120
    grid_density: int | None = None

    def angle(self) -> ArrivalAngle:
        return ArrivalAngle.from_degrees(self.azimuth_deg, self.elevation_deg)

    def build_geometry(self):
        kind, _, arg = self.geometry.partition(":")
        if kind == "ula":
            return ula(int(arg), self.carrier_hz)
        if kind == "upa":
            nx, _, ny = arg.partition("x")
            return upa(int(nx), int(ny), self.carrier_hz)
        if kind == "file":
            return load_geometry(arg, self.carrier_hz)
        raise ConfigError(f"unknown geometry spec {self.geometry!r}")

    def scenario(self) -> Scenario:
        return Scenario.uniform(self.build_geometry(), self.angle(),
                                self.bandwidth_hz, self.snapshots)

    def to_dict(self) -> dict:
        return asdict(self)


_FLOAT_KEYS = {"carrier_hz", "bandwidth_hz", "azimuth_deg", "elevation_deg",
               "tolerance"}
_INT_KEYS = {"snapshots", "trials", "seed", "margin", "snapshot_margin",
             "buffer", "packets", "grid_density"}
_FLOAT_LIST_KEYS = {"snr_db", "sir_db"}
_INT_LIST_KEYS = {"taps", "subarrays", "merge", "measurements"}
_STR_KEYS = {"geometry", "encoder"}
_STR_LIST_KEYS = {"methods"}


def _parse_list(text: str, cast):
    return [cast(p.strip()) for p in text.split(",") if p.strip()]


def parse_config(text: str) -> ExperimentConfig:
    cfg = ExperimentConfig()
    for ln, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#")[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {ln}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        try:
            if key in _FLOAT_KEYS:
                setattr(cfg, key, float(value))
            elif key in _INT_KEYS:
                setattr(cfg, key, int(value) if value.lower() != "none" else None)
            elif key in _FLOAT_LIST_KEYS:
                setattr(cfg, key, _parse_list(value, float))
            elif key in _INT_LIST_KEYS:
                setattr(cfg, key, _parse_list(value, int))
            elif key in _STR_KEYS:
                setattr(cfg, key, value)
            elif key in _STR_LIST_KEYS:
                setattr(cfg, key, _parse_list(value, str))
            elif key == "interferers":
                trips = []
                for part in value.split(";"):
                    part = part.strip()
                    if not part:
                        continue
                    az, el, sir = (float(x) for x in part.split(","))
                    trips.append((az, el, sir))
                cfg.interferers = trips
            else:
                raise ConfigError(f"line {ln}: unknown key {key!r}")
        except ConfigError:
            raise
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"line {ln}: bad value for {key!r}: {value!r}") from exc
    _validate(cfg)
    return cfg


def _validate(cfg: ExperimentConfig) -> None:
    if cfg.carrier_hz <= 0 or cfg.bandwidth_hz <= 0:
        raise ConfigError("carrier_hz and bandwidth_hz must be positive")
    if not 0 < cfg.tolerance < 0.5:
        raise ConfigError("tolerance must lie in (0, 1/2)")
    if cfg.snapshots < 1 or cfg.trials < 1 or cfg.packets < 1 or cfg.buffer < 1:
        raise ConfigError("snapshots, trials, packets, buffer must be >= 1")
    cfg.build_geometry()   # validates the geometry spec eagerly


def load_config(path) -> ExperimentConfig:
    return parse_config(Path(path).read_text())
