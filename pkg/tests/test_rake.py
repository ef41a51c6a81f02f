import math

import numpy as np
import pytest
from scipy import stats

from impulse_rake.channel import ChannelRealization, propagate, sample_channel, ChannelParams
from impulse_rake.exceptions import ConfigError, EstimationError, NumericalError, StructureError
from impulse_rake.phy import HopCode, LinkConfig, gen_th_code, modulate_ook
from impulse_rake.rake import (FingerSet, FrameStatistics, correlate, correlate_fingers, estimate_finger_noise,
                               link_stats, mrc_combine, mui_variance, ppm_to_ook, sample_frame_statistics,
                               select_paths, statistic_model_sample)

UNIT_TAP = ChannelRealization(0, np.zeros(1), np.ones(1))


def _real(delays, gains):
    return ChannelRealization(0, np.asarray(delays, float), np.asarray(gains, float))


class TestSelectPaths:
    def test_strongest_first(self):
        f = select_paths(_real([0, 1, 2], np.sqrt([0.5, 0.3, 0.2])), 2)
        np.testing.assert_allclose(f.delays, [0, 1])

    def test_all_taps(self):
        real = sample_channel(ChannelParams(), 0, 0)
        f = select_paths(real, real.n_taps)
        assert sorted(f.delays.tolist()) == sorted(real.delays.tolist())
        assert np.all(np.diff(f.gains**2) <= 0)

    def test_tie_prefers_earlier(self):
        f = select_paths(_real([7.0, 3.0], [0.5, -0.5]), 1)
        assert f.delays[0] == 3.0

    def test_too_many_fingers(self):
        with pytest.raises(ConfigError):
            select_paths(_real([0.0], [1.0]), 2)


class TestCorrelate:
    def test_zero_bit_gives_zero(self):
        cfg = LinkConfig(n_frames=2)
        code = gen_th_code(0, 0, cfg, 1)
        rx = propagate([modulate_ook([0], code, cfg)], [UNIT_TAP], cfg, n_bits=1)
        assert abs(correlate(rx, code, 0.0, cfg, 0, 1)) < 1e-6

    def test_two_pulse_template(self):
        cfg = LinkConfig(n_frames=1, n_pulses=2, symbol_energy=4.0)
        code = gen_th_code(3, 0, cfg, 1)
        rx = propagate([modulate_ook([1], code, cfg)], [UNIT_TAP], cfg)
        assert correlate(rx, code, 0.0, cfg, 0, 0) == pytest.approx(2 * 2.0, rel=1e-4)

    def test_noiseless_single_tap_gain(self):
        cfg = LinkConfig(n_frames=3, n_pulses=3, guard=10.0)
        code = gen_th_code(1, 0, cfg, 2)
        rx = propagate([modulate_ook([1, 1], code, cfg)], [_real([4.0], [-0.7])], cfg)
        y = correlate_fingers(rx, code, FingerSet(0, np.array([4.0]), np.array([-0.7])), cfg)
        np.testing.assert_allclose(y, -0.7 * 3, rtol=1e-4)

    def test_noise_only_variance(self):
        cfg = LinkConfig(n_frames=10, n_pulses=3, noise_psd=0.4)
        code = gen_th_code(2, 0, cfg, 1000)
        rx = propagate([modulate_ook(np.zeros(1000, int), code, cfg)], [UNIT_TAP], cfg, seed=5, n_bits=1000)
        y = correlate_fingers(rx, code, FingerSet(0, np.zeros(1), np.ones(1)), cfg)
        assert y.var() == pytest.approx(3 * 0.4 / 2, rel=0.05)

    def test_template_outside_frame(self):
        cfg = LinkConfig(n_frames=1)
        code = HopCode(0, 0, np.array([[[49]]]))
        rx = propagate([modulate_ook([0], code, cfg)], [UNIT_TAP], cfg, n_bits=1)
        with pytest.raises(StructureError):
            correlate(rx, code, 3.0, cfg, 0, 0)

    def test_scalar_matches_vectorized(self):
        cfg = LinkConfig(n_frames=2, n_pulses=2, noise_psd=0.1, guard=60.0)
        real = sample_channel(ChannelParams(), 0, 0)
        code = gen_th_code(0, 0, cfg, 3)
        rx = propagate([modulate_ook([1, 0, 1], code, cfg)], [real], cfg, seed=0)
        f = select_paths(real, 3)
        y = correlate_fingers(rx, code, f, cfg)
        assert y[2, 1, 2] == pytest.approx(correlate(rx, code, f.delays[2], cfg, 2, 1))


class TestMRC:
    def test_identity(self):
        y = np.random.default_rng(0).normal(size=(4, 3, 1))
        np.testing.assert_array_equal(mrc_combine(y, [1.0]), y[..., 0])

    def test_hand_example(self):
        assert mrc_combine(np.array([0.1, 0.2]), [2.0, 3.0]) == pytest.approx(0.8)

    def test_linear_in_weights(self):
        y = np.random.default_rng(1).normal(size=(5, 3, 2))
        np.testing.assert_allclose(mrc_combine(y, [2.0, -1.0]) * 3, mrc_combine(y, [6.0, -3.0]))

    def test_shape_mismatch(self):
        with pytest.raises(StructureError):
            mrc_combine(np.zeros((2, 3)), [1.0, 2.0])

    def test_weights_require_positive_variance(self):
        with pytest.raises(NumericalError):
            FingerSet(0, np.zeros(1), np.ones(1)).with_noise(0.0).weights

    def test_configured_weights_maximize_output_snr(self):
        cfg = LinkConfig(n_frames=1, noise_psd=1.0, guard=30.0)
        real = _real([0.0, 10.0, 25.0], [0.8, -0.5, 0.33])
        f = select_paths(real, 3).with_noise(0.5)
        n = 20_000
        code = gen_th_code(0, 0, cfg, n)
        bits = np.tile([0, 1], n // 2)
        rx = propagate([modulate_ook(bits, code, cfg)], [real], cfg, seed=3)
        y = correlate_fingers(rx, code, f, cfg)[:, 0, :]

        def snr(w):
            z = y @ w
            return (z[bits == 1].mean() - z[bits == 0].mean()) ** 2 / z[bits == 0].var()

        best = snr(f.weights)
        for i in range(3):
            for eps in (-0.5, -0.25, 0.25, 0.5):
                w = f.weights.copy()
                w[i] += eps * abs(w[i])
                assert snr(w) < best


class TestLinkStats:
    def test_single_finger(self):
        f = FingerSet(0, np.zeros(1), np.ones(1)).with_noise(1.0)
        mu, sigma = link_stats(f, LinkConfig(symbol_energy=4.0))
        assert (mu, sigma) == (2.0, 1.0)

    def test_pulse_count_doubles_both(self):
        f = FingerSet(0, np.zeros(2), np.array([0.6, 0.8])).with_noise([0.5, 2.0])
        mu1, s1 = link_stats(f, LinkConfig(n_pulses=1))
        mu2, s2 = link_stats(f, LinkConfig(n_pulses=2))
        assert mu2 == pytest.approx(2 * mu1) and s2**2 == pytest.approx(2 * s1**2)

    def test_derived_mode(self):
        f = FingerSet(0, np.zeros(1), np.ones(1)).with_noise(0.5)
        mu, sigma = link_stats(f, LinkConfig(n_pulses=3), "derived")
        assert mu == pytest.approx(6.0) and sigma == pytest.approx(math.sqrt(2.0))

    def test_zero_energy(self):
        f = FingerSet(0, np.zeros(1), np.ones(1)).with_noise(1.0)
        assert link_stats(f, LinkConfig(symbol_energy=0.0))[0] == 0.0

    def test_zero_variance(self):
        f = FingerSet(0, np.zeros(1), np.ones(1)).with_noise(0.0)
        with pytest.raises(NumericalError):
            link_stats(f, LinkConfig())

    def test_moments_match_waveform(self):
        # AWGN, multipath with separated taps: the as-printed moments are exact here
        cfg = LinkConfig(n_frames=1, n_pulses=2, noise_psd=0.5, guard=30.0)
        real = _real([0.0, 12.0], [0.8, 0.6])
        f = select_paths(real, 2).with_noise(0.25)
        mu, sigma = link_stats(f, cfg)
        n = 20_000
        code = gen_th_code(1, 0, cfg, n)
        bits = np.tile([0, 1], n // 2)
        rx = propagate([modulate_ook(bits, code, cfg)], [real], cfg, seed=9)
        z = mrc_combine(correlate_fingers(rx, code, f, cfg), f.weights)[:, 0]
        assert z[bits == 1].mean() == pytest.approx(mu, rel=0.02)
        assert z[bits == 0].std() == pytest.approx(sigma, rel=0.02)


class TestSampling:
    def test_zero_bit_mean(self):
        y = statistic_model_sample(np.zeros(100_000), 3.0, 1.5, seed=0)
        assert abs(y.mean()) < 3 * 1.5 / math.sqrt(1e5)

    def test_degenerate_sigma(self):
        np.testing.assert_array_equal(statistic_model_sample(np.ones(4), 2.5, 0.0, seed=0), 2.5)

    def test_seeded(self):
        b = np.array([0, 1, 1, 0])
        np.testing.assert_array_equal(statistic_model_sample(b, 1, 1, seed=4), statistic_model_sample(b, 1, 1, seed=4))

    def test_frame_statistics_shape(self):
        s = sample_frame_statistics(np.ones((3, 10)), [1, 2, 3], 0.5, 5, seed=0)
        assert s.Y.shape == (3, 10, 5) and s.n_users == 3

    def test_frame_statistics_csv(self, tmp_path):
        s = sample_frame_statistics(np.ones((2, 2)), 1.0, 1.0, 3, seed=0)
        path = tmp_path / "y.csv"
        s.to_csv(path)
        lines = path.read_text().splitlines()
        assert lines[0] == "k,n,j,Y" and len(lines) == 13

    def test_sigma_must_be_positive(self):
        with pytest.raises(NumericalError):
            FrameStatistics(np.zeros((1, 1, 1)), 1.0, 0.0)


class TestNoiseEstimation:
    def _rx(self, cfg, n_users=1, n_bits=40, seed=0, p=0.0):
        rng = np.random.default_rng(seed)
        codes = [gen_th_code(seed, k, cfg, n_bits) for k in range(n_users)]
        bits = [(rng.random(n_bits) < (p if k else 0.0)).astype(int) for k in range(n_users)]
        trains = [modulate_ook(b, c, cfg) for b, c in zip(bits, codes)]
        return propagate(trains, [UNIT_TAP] * n_users, cfg, seed=seed, n_bits=n_bits), codes[0]

    def test_noiseless(self):
        cfg = LinkConfig(n_frames=1)
        rx, code = self._rx(cfg)
        assert estimate_finger_noise(rx, code, 0.0, cfg) < 1e-20

    def test_awgn_thirty_samples(self):
        # a 30-sample variance lands within 20% only as often as chi-square(29) allows
        cfg = LinkConfig(n_frames=1, n_pulses=2, noise_psd=0.6)
        reps = 300
        hits = 0
        for seed in range(reps):
            rx, code = self._rx(cfg, n_bits=1, seed=seed)
            est = estimate_finger_noise(rx, code, 0.0, cfg, max_samples=30)
            hits += abs(est / 0.6 - 1) <= 0.2
        chi = stats.chi2(29)
        expected = chi.cdf(1.2 * 29) - chi.cdf(0.8 * 29)
        assert abs(hits / reps - expected) < 4 * math.sqrt(expected * (1 - expected) / reps)

    def test_awgn_many_samples(self):
        cfg = LinkConfig(n_frames=2, n_pulses=3, noise_psd=0.6)
        rx, code = self._rx(cfg, n_bits=100)
        assert estimate_finger_noise(rx, code, 0.0, cfg) == pytest.approx(3 * 0.3, rel=0.05)

    def test_interference_raises_estimate(self):
        cfg = LinkConfig(n_frames=1, noise_psd=0.2, n_users=4)
        clean, code = self._rx(cfg, n_users=1, n_bits=400, seed=2)
        busy, code4 = self._rx(cfg, n_users=4, n_bits=400, seed=2, p=0.8)
        assert estimate_finger_noise(busy, code4, 0.0, cfg) > estimate_finger_noise(clean, code, 0.0, cfg)

    def test_too_few_chips(self):
        cfg = LinkConfig(n_frames=1, n_pulses=45)
        rx, code = self._rx(cfg, n_bits=2)
        with pytest.raises(EstimationError):
            estimate_finger_noise(rx, code, 0.0, cfg)


def test_mui_variance_matches_simulation():
    cfg = LinkConfig(n_frames=1, n_users=5, guard=0.0)
    n = 20_000
    rng = np.random.default_rng(0)
    trains, codes = [], []
    for k in range(5):
        codes.append(gen_th_code(0, k, cfg, n))
        bits = np.zeros(n, int) if k == 0 else (rng.random(n) < 0.5).astype(int)
        trains.append(modulate_ook(bits, codes[k], cfg))
    rx = propagate(trains, [UNIT_TAP] * 5, cfg, n_bits=n)
    y = correlate_fingers(rx, codes[0], FingerSet(0, np.zeros(1), np.ones(1)), cfg)
    # chips are aligned, so a collision adds exactly the unit correlation
    assert y.var() == pytest.approx(4 * 0.5 / cfg.n_chips, rel=0.08)
    # the random-timing model applies to asynchronous arrivals
    assert mui_variance(cfg, [0.5] * 4) > 0


def test_gaussian_fidelity_of_waveform_statistics():
    cfg = LinkConfig(n_frames=1, n_users=4, noise_psd=1.0, guard=60.0)
    n = 10_000
    reals = [sample_channel(ChannelParams(), 8, k) for k in range(4)]
    rng = np.random.default_rng(4)
    codes = [gen_th_code(4, k, cfg, 2 * n) for k in range(4)]
    bits = [np.tile([0, 1], n)] + [(rng.random(2 * n) < 0.1).astype(int) for _ in range(3)]
    rx = propagate([modulate_ook(b, c, cfg) for b, c in zip(bits, codes)], reals, cfg, seed=4)
    f = select_paths(reals[0], 5).with_noise(0.5)
    z = mrc_combine(correlate_fingers(rx, codes[0], f, cfg), f.weights)[:, 0]
    for cls in (0, 1):
        assert stats.jarque_bera(z[bits[0] == cls]).pvalue > 1e-3


def test_ppm_mapping():
    y, mu, sigma = ppm_to_ook(np.array([-1.0, 1.0]), 1.0, 2.0)
    np.testing.assert_allclose(y, [0.0, 2.0])
    assert mu == 2.0 and sigma == pytest.approx(2 * math.sqrt(2))
