"""Signal generation, array sampling, and config parsing."""

import math

import numpy as np
import pytest

from slepbeam.arrays import ArrivalAngle, Scenario, ula, upa
from slepbeam.errors import ConfigError
from slepbeam.simulate import (ExperimentConfig, SnapshotBatch, generate_signal,
                               interferer_power, parse_config, sample_array,
                               trial_rng)
from slepbeam.slepian import build_basis

ENDFIRE = ArrivalAngle(0.0, 0.0)
BROADSIDE = ArrivalAngle(0.0, math.pi / 2)


class TestSignals:
    def test_seed_determinism(self):
        t = np.linspace(0, 1e-8, 64)
        a = generate_signal(1e9, 1e-8, seed=42).evaluate(t)
        b = generate_signal(1e9, 1e-8, seed=42).evaluate(t)
        assert np.array_equal(a, b)
        c = generate_signal(1e9, 1e-8, seed=43).evaluate(t)
        assert not np.allclose(a, c)

    def test_spectral_confinement(self):
        # windowed periodogram of dense sampling: out-of-band floor >= 120 dB
        w = 1e9
        sig = generate_signal(w, 1e-6, seed=3)
        fs = 8 * w
        n = 16384
        t = np.arange(n) / fs
        x = sig.evaluate(t) * np.kaiser(n, 38.0)
        spec = np.abs(np.fft.fft(x)) ** 2
        freqs = np.fft.fftfreq(n, 1 / fs)
        inband = spec[np.abs(freqs) <= w].max()
        out = spec[np.abs(freqs) > 1.15 * w].max()
        assert 10 * math.log10(inband / out) >= 120

    def test_tone_power_normalized(self):
        sig = generate_signal(1e9, 1e-8, seed=5, power=2.5)
        assert np.sum(np.abs(sig._amps) ** 2) == pytest.approx(2.5, rel=1e-12)

    def test_random_slepian_energy(self):
        # Monte-Carlo interval energy approaches 2*W*T within 5 percent
        w, t_len = 1.0, 3.0
        basis = build_basis(w, t_len, tol=1e-3)
        tq = basis.grid_times
        acc = 0.0
        n_draws = 200
        for k in range(n_draws):
            sig = generate_signal(w, t_len, kind="random_slepian", basis=basis,
                                  rng=trial_rng(77, k))
            vals = sig.evaluate(tq)
            acc += float(basis.quad_weights @ np.abs(vals) ** 2)
        assert acc / n_draws == pytest.approx(2 * w * t_len, rel=0.05)

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            generate_signal(1.0, 1.0, kind="chirp")


class TestSampleArray:
    def test_broadside_rows_identical(self):
        sc = Scenario.uniform(upa(4, 4, 10e9), BROADSIDE, 1e9, 8)
        sig = generate_signal(1e9, 1e-8, seed=9)
        batch = sample_array(sig, sc)
        assert np.abs(batch.samples - batch.samples[0]).max() < 1e-12

    def test_zero_delay_matches_evaluator(self):
        geo_sc = Scenario.uniform(ula(1, 10e9), ENDFIRE, 1e9, 16)
        sig = generate_signal(1e9, 1e-8, seed=2)
        batch = sample_array(sig, geo_sc)
        assert np.allclose(batch.samples[0], sig.evaluate(geo_sc.sampling.times))

    def test_narrowband_spread_example(self):
        sc = Scenario.uniform(upa(4, 4, 5e9), ArrivalAngle.from_degrees(30, 10),
                              10e6, 3)
        assert sc.snapshot_span() == pytest.approx(0.4e-9, rel=0.02)
        assert sc.sampling.sample_interval == pytest.approx(50e-9)

    def test_sir_calibration(self):
        # measured interferer/signal power ratio within 0.1 dB over a long batch
        sc = Scenario.uniform(ula(4, 10e9), ENDFIRE, 1e9, 4096)
        sir_db = -12.0
        sig = generate_signal(1e9, 1e-5, seed=21, power=1.0)
        intf = generate_signal(1e9, 1e-5, seed=22,
                               power=interferer_power(1.0, sir_db))
        ang_i = ArrivalAngle(0.9, 0.2)
        b_sig = sample_array(sig, sc)
        b_int = sample_array(intf, sc, angle=ang_i)
        p_s = np.mean(np.abs(b_sig.samples) ** 2)
        p_i = np.mean(np.abs(b_int.samples) ** 2)
        measured = 10 * math.log10(p_s / p_i)
        assert measured == pytest.approx(sir_db, abs=0.1)

    def test_noise_independent_and_white(self):
        sc = Scenario.uniform(ula(8, 10e9), ENDFIRE, 1e9, 2048)
        sig = generate_signal(1e9, 1.1e-6, seed=1, power=0.0)
        sig._amps[:] = 0.0
        batch = sample_array(sig, sc, noise_power=2.0, rng=trial_rng(5))
        x = batch.samples
        cov = x @ x.conj().T / x.shape[1]
        assert np.allclose(np.diag(cov).real, 2.0, rtol=0.05)
        off = cov - np.diag(np.diag(cov))
        assert np.abs(off).max() < 0.1 * 2.0

    def test_stacking_order(self):
        batch = SnapshotBatch(np.arange(6).reshape(2, 3) + 0j, np.arange(3.0))
        assert np.array_equal(batch.stacked(), [0, 3, 1, 4, 2, 5])


class TestConfig:
    def test_parse_and_defaults(self):
        cfg = parse_config("""
            geometry = ula:8
            bandwidth_hz = 1e9
            snr_db = 0, 10
            interferers = 30, 0, -30; 45, 10, -20
            trials = 3
        """)
        assert cfg.geometry == "ula:8"
        assert cfg.snr_db == [0.0, 10.0]
        assert cfg.interferers == [(30.0, 0.0, -30.0), (45.0, 10.0, -20.0)]
        assert cfg.trials == 3
        assert cfg.snapshots == 32          # default preserved
        assert cfg.scenario().n_elements == 8

    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigError, match="unknown key"):
            parse_config("geometry = ula:8\nwavelength = 3\n")

    def test_bad_value_rejected(self):
        with pytest.raises(ConfigError, match="bad value"):
            parse_config("snapshots = many\n")

    def test_invalid_ranges_rejected(self):
        with pytest.raises(ConfigError):
            parse_config("bandwidth_hz = -1\n")
        with pytest.raises(ConfigError):
            parse_config("tolerance = 0.9\n")

    def test_geometry_specs(self):
        assert ExperimentConfig(geometry="upa:4x4").build_geometry().n_elements == 16
        with pytest.raises(ConfigError):
            ExperimentConfig(geometry="ring:9").build_geometry()
