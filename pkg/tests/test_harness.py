import math
from dataclasses import replace

import numpy as np
import pytest

from impulse_rake.datasets import load_toy_dataset
from impulse_rake.exceptions import ConfigError
from impulse_rake.harness import (ExperimentConfig, analytic_collision_probability, config_hash, e2e_input,
                                  parse_config, prepare_e2e_models, run_ber_sweep, run_collision_analysis,
                                  run_e2e_trial, validate, wilson_interval, write_records)
from impulse_rake.snn import LIFClassifier, encode_digital

RESOLVABLE = "[channel]\nray_rate = 0.1\nn_clusters = 2\nrays_per_cluster = 3\n"


def _overlap(a, b):
    return a.ci_low <= b.ci_high and b.ci_low <= a.ci_high


class TestConfig:
    def test_defaults(self):
        cfg = parse_config("[experiment]\nscheme = ook-digital\n")
        assert (cfg.link.frame_duration, cfg.link.chip_duration, cfg.link.n_frames) == (100, 2, 9)
        assert cfg.channel_preset == "cm1-fallback"

    def test_even_frames_rejected(self):
        with pytest.raises(ConfigError, match="N_f must be odd"):
            parse_config("[link]\nN_f = 4\n")

    def test_too_many_pulses(self):
        with pytest.raises(ConfigError, match="N_p"):
            parse_config("[link]\nN_p = 60\n")

    def test_unknown_keys_and_sections(self):
        with pytest.raises(ConfigError) as info:
            parse_config("[link]\nT_x = 3\n[extra]\na = 1\n[experiment]\nfoo = 2\n")
        assert len(info.value.errors) == 3

    def test_all_errors_reported(self):
        with pytest.raises(ConfigError) as info:
            parse_config("[experiment]\ntrials = 0\nscheme = fsk\nsnr_db =\n")
        assert len(info.value.errors) >= 3

    def test_ppm_single_pulse_only(self):
        with pytest.raises(ConfigError, match="OOK"):
            parse_config("[link]\nN_p = 2\n[experiment]\nscheme = ppm-digital\n")

    def test_bad_value(self):
        with pytest.raises(ConfigError):
            parse_config("[link]\nN_f = three\n")

    def test_channel_overrides(self):
        cfg = parse_config("[channel]\npreset = single-tap\nm_nakagami = 2\n")
        assert cfg.channel.n_clusters == 1 and cfg.channel.m_nakagami == 2

    def test_delay_spread_checked(self):
        assert validate(replace(ExperimentConfig(), channel=replace(ExperimentConfig().channel, max_delay=99)))

    def test_hash_stable(self):
        assert config_hash(ExperimentConfig()) == config_hash(ExperimentConfig())
        assert config_hash(ExperimentConfig()) != config_hash(ExperimentConfig(seed=1))


class TestWilson:
    def test_brackets(self):
        for k, n in [(0, 10), (3, 10), (10, 10), (500, 100_000)]:
            lo, hi = wilson_interval(k, n)
            assert 0 <= lo <= k / n <= hi <= 1

    def test_known_value(self):
        lo, hi = wilson_interval(10, 100, 0.95)
        assert lo == pytest.approx(0.05522, abs=1e-4) and hi == pytest.approx(0.17437, abs=1e-4)


class TestBerSweep:
    def test_statistic_single_user_matches_analytic(self):
        cfg = parse_config("[link]\nK = 1\nN_f = 3\n[experiment]\nsnr_db = 0 4 8\ntrials = 20\nn_bits = 5000\n")
        for r in run_ber_sweep(cfg):
            assert r.ci_low <= r.analytic <= r.ci_high

    def test_dry_run_is_analytic_only(self):
        cfg = parse_config("[link]\nK = 2\nN_f = 3\n[experiment]\nsnr_db = 0 5\ntrials = 2\ndry_run = true\n")
        recs = run_ber_sweep(cfg)
        assert all(math.isnan(r.value) and r.analytic > 0 for r in recs)

    def test_reproducible_across_workers(self):
        text = "[link]\nK = 4\nN_f = 3\n[experiment]\nsnr_db = 3 6\ntrials = 6\nn_bits = 500\nsparsity = em\n"
        cfg = parse_config(text)
        one = write_records(run_ber_sweep(cfg), cfg)
        many = write_records(run_ber_sweep(replace(cfg, workers=3)), cfg)
        assert one == many

    def test_csv_layout(self, tmp_path):
        cfg = parse_config("[link]\nK = 1\nN_f = 1\n[experiment]\nsnr_db = 5\ntrials = 1\nn_bits = 100\n")
        path = tmp_path / "out.csv"
        write_records(run_ber_sweep(cfg), cfg, path)
        lines = path.read_text().splitlines()
        header = [l for l in lines if l.startswith("#")]
        assert any(l.startswith("# config_hash: ") for l in header)
        assert any("E_s/N_0" in l for l in header)
        body = [l for l in lines if not l.startswith("#")]
        assert body[0] == "snr_db,p,lambda_star,eta,analytic_ber,empirical_ber,ci_low,ci_high"
        assert len(body) == 2 and len(body[1].split(",")) == 8

    def test_analog_scheme_rejected(self):
        with pytest.raises(ConfigError):
            run_ber_sweep(parse_config("[experiment]\nscheme = ook-analog\n"))

    def test_fast_path_single_user_multipath(self):
        cfg = parse_config("[link]\nK = 1\nN_f = 3\nL = 3\n" + RESOLVABLE +
                           "[experiment]\nsnr_db = 6\ntrials = 8\nn_bits = 5000\nlevel = waveform\n")
        wave = run_ber_sweep(cfg)[0]
        stat = run_ber_sweep(replace(cfg, level="statistic"))[0]
        assert _overlap(wave, stat)

    def test_fast_path_four_users(self):
        cfg = parse_config("[link]\nK = 4\nN_f = 3\nL = 3\n" + RESOLVABLE +
                           "[experiment]\nsnr_db = 3\ntrials = 8\nn_bits = 5000\nlevel = waveform\n")
        wave = run_ber_sweep(cfg)[0]
        stat = run_ber_sweep(replace(cfg, level="statistic"))[0]
        assert _overlap(wave, stat)

    def test_estimated_noise_close_to_oracle(self):
        cfg = parse_config("[link]\nK = 1\nN_f = 1\nL = 1\n[channel]\npreset = single-tap\n"
                           "[experiment]\nsnr_db = 8\ntrials = 2\nn_bits = 4000\nlevel = waveform\n"
                           "noise_estimation = estimated\n")
        est = run_ber_sweep(cfg)[0]
        assert est.ci_low <= est.analytic <= est.ci_high

    def test_ppm_waveform_matches_statistic(self):
        cfg = parse_config("[link]\nK = 1\nN_f = 1\nL = 1\n[channel]\npreset = single-tap\n"
                           "[experiment]\nscheme = ppm-digital\nsnr_db = 5\ntrials = 2\nn_bits = 5000\n"
                           "level = waveform\n")
        wave = run_ber_sweep(cfg)[0]
        assert wave.ci_low <= wave.analytic <= wave.ci_high

    def test_estimated_sparsity(self):
        cfg = parse_config("[link]\nK = 2\nN_f = 3\n[experiment]\nsnr_db = 8\ntrials = 5\nn_bits = 4000\n"
                           "sparsity = moment\n")
        oracle = run_ber_sweep(replace(cfg, sparsity="oracle"))[0]
        moment = run_ber_sweep(cfg)[0]
        assert _overlap(oracle, moment)


class TestCollisions:
    def test_two_users(self):
        cfg = parse_config("[link]\nK = 2\nN_f = 1\n[experiment]\nactivation_rate = 1\ntrials = 2\n"
                           "n_bits = 20000\n")
        r = run_collision_analysis(cfg)
        assert r.analytic == pytest.approx(0.02)
        assert abs(r.value - 0.02) < 3 * math.sqrt(0.02 * 0.98 / r.total)

    def test_single_user(self):
        cfg = parse_config("[link]\nK = 1\nN_f = 1\n[experiment]\nactivation_rate = 1\ntrials = 1\nn_bits = 1000\n")
        r = run_collision_analysis(cfg)
        assert r.value == 0.0 and r.analytic == 0.0

    def test_more_pulses_more_collisions(self):
        base = "[link]\nK = 4\nN_f = 1\nN_p = {}\n[experiment]\nactivation_rate = 0.3\ntrials = 2\nn_bits = 10000\n"
        one = run_collision_analysis(parse_config(base.format(1)))
        four = run_collision_analysis(parse_config(base.format(4)))
        assert four.ci_low > one.ci_high
        assert four.analytic == pytest.approx(analytic_collision_probability(4, 50, 4, 0.3))

    def test_ook_below_ppm_at_every_snr(self):
        text = "[link]\nK = 16\nN_f = 1\n[experiment]\nactivation_rate = 0.1\ntrials = 1\nn_bits = 20000\n"
        ook = parse_config(text)
        ppm = replace(ook, scheme="ppm-digital")
        for snr in (0.0, 10.0, 20.0):
            a, b = run_collision_analysis(ook, snr), run_collision_analysis(ppm, snr)
            assert a.ci_high < b.ci_low
            assert a.ci_low <= a.analytic <= a.ci_high and b.ci_low <= b.analytic <= b.ci_high


@pytest.fixture(scope="module")
def toy_models():
    X_train, y_train, X_test, y_test = load_toy_dataset()
    cfg = parse_config("[link]\nK = 4\nN_f = 3\n[experiment]\nsnr_db = 0 10 20\ntrials = 40\nheight = 16\n"
                       "width = 16\nsteps_per_slice = 4\nanalog_epochs = 15\n")
    digital, analog = prepare_e2e_models(cfg, X_train, y_train, epochs=20)
    return cfg, digital, analog, X_test, y_test


class TestEndToEnd:
    def test_noiseless_digital_equals_baseline(self, toy_models):
        cfg, digital, _, X, y = toy_models
        cfg = replace(cfg, trials=len(X))
        noiseless = run_e2e_trial(cfg, digital, X, y, math.inf, "ook-digital")
        baseline = run_e2e_trial(cfg, digital, X, y, math.inf, "baseline")
        assert noiseless.value == baseline.value

    def test_noiseless_input_is_clean_frame(self, toy_models):
        cfg, _, _, X, _ = toy_models
        np.testing.assert_array_equal(e2e_input(cfg, X[0], math.inf), encode_digital(X[0], 3))

    def test_chance_level_in_noise(self, toy_models):
        cfg, digital, analog, X, y = toy_models
        cfg = replace(cfg, trials=200)
        for clf, scheme in ((digital, "ook-digital"), (analog, "ook-analog")):
            r = run_e2e_trial(cfg, clf, X, y, -60.0, scheme)
            assert r.ci_low <= 0.25 <= r.ci_high

    def test_analog_high_snr_not_worse(self, toy_models):
        cfg, digital, analog, X, y = toy_models
        a = run_e2e_trial(cfg, analog, X, y, 20.0, "ook-analog")
        d = run_e2e_trial(cfg, digital, X, y, 20.0, "ook-digital")
        assert a.value >= d.value

    def test_missing_weights(self, toy_models):
        cfg, _, _, X, y = toy_models
        with pytest.raises(ConfigError):
            run_e2e_trial(cfg, None, X, y, 10.0)

    def test_non_square_users_rejected(self, toy_models):
        cfg, digital, _, X, y = toy_models
        with pytest.raises(ConfigError, match="perfect square"):
            run_e2e_trial(replace(cfg, link=replace(cfg.link, n_users=2)), digital, X, y, 10.0)

    def test_ppm_path_runs(self, toy_models):
        cfg, digital, _, X, y = toy_models
        r = run_e2e_trial(replace(cfg, trials=10), digital, X, y, 20.0, "ppm-digital")
        assert r.metric == "accuracy" and 0 <= r.value <= 1
