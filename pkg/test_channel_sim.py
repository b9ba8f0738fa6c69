#!/usr/bin/env python3
"""
Tests for steering vectors, the DFT codebook and channel synthesis.
"""

import os
import sys

import numpy as np
import pytest

# Add the src directory to the path
sys.path.append(os.path.join(os.path.dirname(__file__), 'src'))

from models.channel import ArrayGeometry, ChannelResponse, PathComponent, SubcarrierGrid  # noqa: E402
from models.errors import DimensionError  # noqa: E402
from simulation.channel_simulator import (  # noqa: E402
    ChannelSimulator, beam_snr_db, beam_sweep_powers, channel_response, codebook_hash, dft_codebook,
    downsample_beam_index, optimal_beam, received_power, simulate_rx, steering_matrix,
    steering_vector,
)

GEOM = ArrayGeometry()
GRID = SubcarrierGrid()


def _random_channel(rng, n_subcarriers=16, n_elements=64):
    h = rng.standard_normal((n_subcarriers, n_elements)) + 1j * rng.standard_normal((n_subcarriers, n_elements))
    return ChannelResponse(h)


class TestSteeringVector:

    def test_unit_norm(self):
        rng = np.random.default_rng(42)
        for az, el in rng.uniform(0, np.pi, size=(20, 2)):
            assert abs(np.linalg.norm(steering_vector(az, el, GEOM)) - 1.0) < 1e-12

    def test_broadside_is_constant(self):
        # theta = 0 and phi = pi/2 zero both phase terms
        np.testing.assert_allclose(steering_vector(0.0, np.pi / 2, GEOM), np.full(64, 1 / 8), atol=1e-12)

    def test_known_entry(self):
        theta, phi = np.pi / 6, np.pi / 3
        a = steering_vector(theta, phi, GEOM)
        expected = np.exp(1j * np.pi * (np.cos(phi) + np.sin(theta) * np.sin(phi))) / 8
        assert abs(a[1 * 8 + 1] - expected) < 1e-12

    def test_matrix_matches_vectors(self):
        az = np.array([0.1, 1.2, 2.5])
        el = np.array([0.4, 1.5, 2.9])
        stacked = np.stack([steering_vector(a, e, GEOM) for a, e in zip(az, el)])
        np.testing.assert_allclose(steering_matrix(az, el, GEOM), stacked, atol=1e-14)


class TestCodebook:

    def test_unitary(self):
        f = dft_codebook(GEOM).matrix
        assert f.shape == (64, 64)
        np.testing.assert_allclose(f.conj().T @ f, np.eye(64), atol=1e-12)

    def test_dc_beam(self):
        np.testing.assert_allclose(dft_codebook(GEOM).beams[0], np.full(64, 1 / 8), atol=1e-14)

    def test_matches_direct_construction(self):
        cb = dft_codebook(GEOM)
        hv = np.arange(8)
        for p in range(8):
            for q in range(8):
                direct = np.outer(np.exp(-2j * np.pi * hv * p / 8), np.exp(-2j * np.pi * hv * q / 8)).reshape(-1) / 8
                np.testing.assert_allclose(cb.beams[p * 8 + q], direct, atol=1e-12)

    def test_oversampled_size_and_norms(self):
        cb = dft_codebook(GEOM, oversampling=(2, 2))
        assert cb.size == 256 and cb.n_elements == 64
        np.testing.assert_allclose(np.linalg.norm(cb.beams, axis=1), 1.0, atol=1e-12)

    def test_hash_is_stable_and_geometry_sensitive(self):
        assert codebook_hash(dft_codebook(GEOM)) == codebook_hash(dft_codebook(GEOM))
        assert codebook_hash(dft_codebook(GEOM)) != codebook_hash(dft_codebook(ArrayGeometry(n_h=4, n_v=4)))

    def test_downsample_index(self):
        assert downsample_beam_index(13, 4) == 3
        assert downsample_beam_index(13, 1) == 13
        with pytest.raises(ValueError):
            downsample_beam_index(3, 0)


class TestChannelResponse:

    def test_single_los_path(self):
        path = PathComponent(attenuation=1.0, delay=0.0, phase=0.0, azimuth=0.7, elevation=1.1)
        h = channel_response([path], GRID, GEOM)
        assert h.h.shape == (16, 64)
        expected = steering_vector(0.7, 1.1, GEOM)
        for k in range(16):
            np.testing.assert_allclose(h.h[k], expected, atol=1e-14)

    def test_empty_path_set(self):
        h = channel_response([], GRID, GEOM)
        np.testing.assert_array_equal(h.h, 0.0)

    def test_additive_over_paths(self):
        p1 = PathComponent(attenuation=0.5, delay=1e-7, phase=0.3, azimuth=0.2, elevation=1.0)
        p2 = PathComponent(attenuation=0.2, delay=3e-7, phase=2.0, azimuth=1.4, elevation=1.3, bounces=1)
        both = channel_response([p1, p2], GRID, GEOM).h
        parts = channel_response([p1], GRID, GEOM).h + channel_response([p2], GRID, GEOM).h
        np.testing.assert_allclose(both, parts, atol=1e-14)

    def test_negative_attenuation_rejected(self):
        with pytest.raises(ValueError):
            PathComponent(attenuation=-1.0, delay=0.0, phase=0.0, azimuth=0.0, elevation=0.0)


class TestReceivedPower:

    def test_aligned_and_orthogonal_beams(self):
        cb = dft_codebook(GEOM)
        f_m = cb.beams[10]
        h = ChannelResponse(np.tile(f_m.conj(), (16, 1)))
        assert abs(received_power(h, f_m) - 1.0) < 1e-12
        assert received_power(h, cb.beams[11]) < 1e-24

    def test_zero_channel(self):
        cb = dft_codebook(GEOM)
        h = ChannelResponse(np.zeros((16, 64), dtype=complex))
        assert received_power(h, cb.beams[5]) == 0.0
        assert optimal_beam(h, cb) == 0

    def test_mismatched_beam_length(self):
        with pytest.raises(DimensionError):
            received_power(ChannelResponse(np.ones((16, 64), dtype=complex)), np.ones(16))

    def test_sweep_matches_per_beam_power(self):
        rng = np.random.default_rng(0)
        cb = dft_codebook(GEOM)
        h = _random_channel(rng)
        sweep = beam_sweep_powers(h, cb)
        for m in (0, 17, 63):
            assert abs(sweep[m] - received_power(h, cb.beams[m])) < 1e-9


class TestOptimalBeam:

    def test_exhaustive_oracle(self):
        rng = np.random.default_rng(42)
        cb = dft_codebook(GEOM)
        for _ in range(25):
            h = _random_channel(rng)
            powers = [np.mean(np.abs(h.h @ cb.beams[m]) ** 2) for m in range(cb.size)]
            assert optimal_beam(h, cb) == int(np.argmax(powers))

    def test_invariant_to_channel_scaling(self):
        rng = np.random.default_rng(7)
        cb = dft_codebook(GEOM)
        h = _random_channel(rng)
        for c in (1e-6, 3.0, 2.0 * np.exp(1j * 0.8)):
            assert optimal_beam(h.scaled(c), cb) == optimal_beam(h, cb)

    def test_los_label_points_at_the_path(self):
        cb = dft_codebook(GEOM)
        f = cb.beams[27]
        h = ChannelResponse(np.tile(f.conj(), (16, 1)) * 0.01)
        assert optimal_beam(h, cb) == 27


class TestSimulateRx:

    def test_noiseless_reception(self):
        rng = np.random.default_rng(3)
        h = _random_channel(rng)
        f = dft_codebook(GEOM).beams[4]
        x = np.exp(1j * rng.uniform(0, 2 * np.pi, 16))
        rx = simulate_rx(h, f, x, sigma2=0.0, seed=1)
        np.testing.assert_allclose(rx.y, (h.h @ f) * x, atol=1e-14)

    def test_noise_only(self):
        h = ChannelResponse(np.zeros((16, 64), dtype=complex))
        rx = simulate_rx(h, np.ones(64) / 8, np.ones(16), sigma2=0.5, seed=9)
        np.testing.assert_array_equal(rx.y, rx.noise)

    def test_noise_variance(self):
        n = 10_000
        h = ChannelResponse(np.zeros((n, 64), dtype=complex))
        rx = simulate_rx(h, np.ones(64) / 8, np.ones(n), sigma2=0.25, seed=0)
        assert abs(np.mean(np.abs(rx.noise) ** 2) - 0.25) < 0.25 * 0.05

    def test_seeded_noise_is_reproducible(self):
        h = ChannelResponse(np.zeros((16, 64), dtype=complex))
        a = simulate_rx(h, np.ones(64) / 8, np.ones(16), sigma2=1.0, seed=5).noise
        b = simulate_rx(h, np.ones(64) / 8, np.ones(16), sigma2=1.0, seed=5).noise
        np.testing.assert_array_equal(a, b)

    def test_invalid_inputs(self):
        h = ChannelResponse(np.zeros((16, 64), dtype=complex))
        with pytest.raises(ValueError):
            simulate_rx(h, np.ones(64), np.ones(16), sigma2=-1.0)
        with pytest.raises(DimensionError):
            simulate_rx(h, np.ones(64), np.ones(8), sigma2=1.0)

    def test_snr_of_aligned_beam(self):
        f = dft_codebook(GEOM).beams[0]
        h = ChannelResponse(np.tile(f.conj(), (16, 1)))
        assert abs(beam_snr_db(h, f, tx_power=1.0, sigma2=0.01) - 20.0) < 1e-9


class TestChannelSimulator:

    def test_label_matches_the_oracle(self):
        rng = np.random.default_rng(11)
        sim = ChannelSimulator(GEOM, GRID)
        for _ in range(5):
            paths = [
                PathComponent(attenuation=a, delay=d, phase=p, azimuth=az, elevation=el)
                for a, d, p, az, el in zip(
                    rng.uniform(0.1, 1.0, 3), rng.uniform(0, 1e-7, 3), rng.uniform(0, 2 * np.pi, 3),
                    rng.uniform(-np.pi, np.pi, 3), rng.uniform(0.2, np.pi - 0.2, 3),
                )
            ]
            h = channel_response(paths, GRID, GEOM)
            assert sim.label(paths) == optimal_beam(h, sim.codebook)
            np.testing.assert_allclose(sim.sweep(paths), beam_sweep_powers(h, sim.codebook), atol=1e-15)

    def test_default_codebook_and_hash(self):
        sim = ChannelSimulator(GEOM, GRID)
        assert sim.codebook.size == 64
        assert sim.codebook_hash == codebook_hash(dft_codebook(GEOM))

    def test_receive_on_a_beam(self):
        sim = ChannelSimulator(GEOM, GRID)
        path = PathComponent(attenuation=1.0, delay=0.0, phase=0.0, azimuth=0.3, elevation=1.2)
        x = np.ones(16, dtype=np.complex128)
        rx = sim.receive([path], 5, x, sigma2=0.0)
        expected = channel_response([path], GRID, GEOM).h @ sim.codebook.beams[5]
        np.testing.assert_allclose(rx.y, expected, atol=1e-14)
        with pytest.raises(DimensionError):
            sim.receive([path], 64, x, sigma2=0.0)

    def test_codebook_must_fit_the_array(self):
        with pytest.raises(DimensionError):
            ChannelSimulator(ArrayGeometry(n_h=4, n_v=4), GRID, dft_codebook(GEOM))
