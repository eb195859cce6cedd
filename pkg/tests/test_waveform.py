import math

import numpy as np
import pytest

import isac_atr.waveform as wf
from isac_atr.errors import ConfigError, PilotZeroError, SizingError

C = 299792458.0


class TestRadioConfig:
    def test_full_scale_preset_values(self):
        cfg = wf.full_scale_preset()
        assert cfg.f_c == 27.4e9
        assert cfg.delta_f == 120e3
        assert cfg.N == 1584
        assert cfg.M == 1120
        assert cfg.T_O == 8.33e-6
        assert cfg.T_CP == 0.59e-6
        assert cfg.T_s == 8.92e-6
        assert cfg.tdd.period_symbols == 140
        assert cfg.tdd.dl_symbols == 104
        assert cfg.bandwidth == pytest.approx(190.08e6)

    def test_symbol_time_consistency(self):
        for cfg in (wf.full_scale_preset(), wf.desk_preset()):
            assert abs(cfg.T_s - (cfg.T_O + cfg.T_CP)) <= 1e-12 * cfg.T_s

    def test_tdd_period_spans_1p25_ms(self):
        cfg = wf.full_scale_preset()
        assert cfg.tdd.period_symbols * cfg.T_s == pytest.approx(1.25e-3, rel=1e-3)

    def test_inconsistent_symbol_time_rejected(self):
        with pytest.raises(ConfigError):
            wf.RadioConfig(27.4e9, 120e3, 8, 8, 8e-6, 1e-6, 10e-6, wf.TddPattern(4, 2))

    def test_m_not_multiple_of_period_rejected(self):
        with pytest.raises(ConfigError):
            wf.RadioConfig(27.4e9, 120e3, 8, 10, 8e-6, 1e-6, 9e-6, wf.TddPattern(4, 2))

    def test_bad_tdd_pattern(self):
        with pytest.raises(ConfigError):
            wf.TddPattern(4, 0)
        with pytest.raises(ConfigError):
            wf.TddPattern(4, 5)


def small_config(n=8, m=8, period=4, dl=2) -> wf.RadioConfig:
    return wf.RadioConfig(
        f_c=27.4e9, delta_f=120e3, N=n, M=m,
        T_O=8.33e-6, T_CP=0.59e-6, T_s=8.92e-6,
        tdd=wf.TddPattern(period, dl),
    )


class TestSynthesize:
    def test_empty_scene_gives_zero_channel(self):
        cfg = small_config()
        h = wf.synthesize_channel(wf.Scene(4, (), 15.0, 0), cfg)
        assert np.all(h.data == 0)
        assert not h.mask_applied

    def test_zero_delay_zero_doppler_is_all_ones(self):
        cfg = small_config()
        sc = wf.Scatterer(range_m=0.0, velocity_mps=0.0, amplitude=1.0, phase_rad=0.0)
        h = wf.synthesize_channel(wf.Scene(0, (sc,), 15.0, 0), cfg)
        assert np.allclose(h.data, 1.0, atol=1e-12)

    def test_single_scatterer_matches_scalar_formula(self):
        cfg = wf.full_scale_preset()
        sc = wf.Scatterer(range_m=15.0, velocity_mps=1.5, amplitude=1.0, phase_rad=0.0)
        f_d = 2 * 1.5 * cfg.f_c / C
        assert 274.0 < f_d < 274.4  # walking-pace Doppler at 27.4 GHz
        tau = 2 * 15.0 / C
        h = wf.synthesize_channel(wf.Scene(0, (sc,), 15.0, 0), cfg)
        rng = np.random.default_rng(0)
        for k, l in zip(rng.integers(0, cfg.N, 12), rng.integers(0, cfg.M, 12)):
            expected = np.exp(-2j * np.pi * k * cfg.delta_f * tau) * np.exp(
                2j * np.pi * f_d * l * cfg.T_s
            )
            assert abs(h.data[k, l] - expected) < 1e-9

    def test_doppler_phase_ramp(self):
        cfg = wf.desk_preset()
        sc = wf.Scatterer(range_m=9.0, velocity_mps=3.3, amplitude=2.0, phase_rad=0.7)
        h = wf.synthesize_channel(wf.Scene(0, (sc,), 15.0, 0), cfg)
        f_d = sc.doppler_hz(cfg.f_c)
        expected = np.angle(np.exp(2j * np.pi * f_d * cfg.T_s))
        ratio = h.data[:, 1:] * np.conj(h.data[:, :-1])
        assert np.abs(np.angle(ratio) - expected).max() < 1e-9

    def test_delay_phase_ramp(self):
        cfg = wf.desk_preset()
        sc = wf.Scatterer(range_m=17.0, velocity_mps=-1.2, amplitude=1.0)
        h = wf.synthesize_channel(wf.Scene(0, (sc,), 15.0, 0), cfg)
        expected = np.angle(np.exp(-2j * np.pi * cfg.delta_f * sc.delay_s()))
        ratio = h.data[1:, :] * np.conj(h.data[:-1, :])
        assert np.abs(np.angle(ratio) - expected).max() < 1e-9

    def test_linearity_over_scatterer_union(self):
        cfg = wf.desk_preset()
        rng = np.random.default_rng(3)
        mk = lambda: wf.Scatterer(
            float(rng.uniform(1, 40)), float(rng.uniform(-8, 8)),
            float(rng.uniform(0.2, 2.0)), float(rng.uniform(0, 2 * np.pi)),
        )
        a = tuple(mk() for _ in range(3))
        b = tuple(mk() for _ in range(4))
        h_union = wf.synthesize_channel(wf.Scene(0, a + b, 15.0, 0), cfg).data
        h_sum = (
            wf.synthesize_channel(wf.Scene(0, a, 15.0, 0), cfg).data
            + wf.synthesize_channel(wf.Scene(0, b, 15.0, 0), cfg).data
        )
        assert np.abs(h_union - h_sum).max() <= 1e-12 * np.abs(h_sum).max()

    def test_element_budget(self):
        cfg = small_config()
        with pytest.raises(SizingError):
            wf.synthesize_channel(wf.Scene(0, (), 15.0, 0), cfg, max_elements=63)

    def test_scatterer_validation(self):
        with pytest.raises(ConfigError):
            wf.Scatterer(range_m=-1.0, velocity_mps=0.0, amplitude=1.0)
        with pytest.raises(ConfigError):
            wf.Scatterer(range_m=1.0, velocity_mps=0.0, amplitude=-0.1)


class TestTddMask:
    def test_all_downlink_is_identity(self):
        cfg = small_config(period=4, dl=4)
        h = wf.synthesize_channel(
            wf.Scene(0, (wf.Scatterer(5.0, 1.0, 1.0),), 15.0, 0), cfg
        )
        masked = wf.apply_tdd_mask(h)
        assert np.array_equal(masked.data, h.data)
        assert masked.mask_applied

    def test_period4_dl2_zeroes_expected_columns(self):
        cfg = small_config(n=8, m=8, period=4, dl=2)
        h = wf.ChannelMatrix(np.ones((8, 8), dtype=complex), cfg)
        masked = wf.apply_tdd_mask(h)
        zero_cols = np.nonzero(~masked.data.any(axis=0))[0]
        assert list(zero_cols) == [2, 3, 6, 7]

    def test_full_scale_mask_zeroes_288_columns(self):
        cfg = wf.full_scale_preset()
        h = wf.ChannelMatrix(np.ones((cfg.N, cfg.M), dtype=complex), cfg)
        masked = wf.apply_tdd_mask(h)
        n_zero = int((~masked.data.any(axis=0)).sum())
        assert n_zero == 8 * 36 == 288

    def test_mask_never_alters_dl_columns_and_is_idempotent_on_zeros(self):
        cfg = small_config(n=4, m=8, period=4, dl=3)
        rng = np.random.default_rng(0)
        data = rng.normal(size=(4, 8)) + 1j * rng.normal(size=(4, 8))
        h = wf.ChannelMatrix(data.copy(), cfg)
        masked = wf.apply_tdd_mask(h)
        dl = cfg.dl_columns()
        assert np.array_equal(masked.data[:, dl], data[:, dl])
        twice = wf.apply_tdd_mask(wf.ChannelMatrix(masked.data.copy(), cfg))
        assert np.array_equal(twice.data, masked.data)

    def test_double_masking_flag_rejected(self):
        cfg = small_config()
        h = wf.ChannelMatrix(np.ones((8, 8), dtype=complex), cfg)
        with pytest.raises(ConfigError):
            wf.apply_tdd_mask(wf.apply_tdd_mask(h))


class TestNoise:
    def test_infinite_snr_is_identity(self):
        cfg = small_config()
        h = wf.synthesize_channel(
            wf.Scene(0, (wf.Scatterer(5.0, 1.0, 1.0),), math.inf, 0), cfg
        )
        noisy = wf.add_noise(h, math.inf, 3)
        assert np.array_equal(noisy.data, h.data)

    def test_empty_scene_unit_variance_at_0db(self):
        cfg = wf.RadioConfig(
            27.4e9, 1e6, 256, 256, 8.33e-6, 0.59e-6, 8.92e-6, wf.TddPattern(1, 1)
        )
        h = wf.synthesize_channel(wf.Scene(4, (), 0.0, 0), cfg)
        noisy = wf.add_noise(h, 0.0, 42)
        var = float(np.mean(np.abs(noisy.data) ** 2))
        assert abs(var - 1.0) < 0.05

    def test_deterministic_per_seed(self):
        cfg = small_config()
        h = wf.synthesize_channel(
            wf.Scene(0, (wf.Scatterer(5.0, 1.0, 1.0),), 10.0, 0), cfg
        )
        a = wf.add_noise(h, 10.0, 7).data
        b = wf.add_noise(h, 10.0, 7).data
        assert np.array_equal(a, b)
        c = wf.add_noise(h, 10.0, 8).data
        assert not np.array_equal(a, c)

    def test_uplink_columns_untouched(self):
        cfg = small_config(n=8, m=8, period=4, dl=2)
        h = wf.apply_tdd_mask(
            wf.synthesize_channel(wf.Scene(0, (wf.Scatterer(5.0, 0.0, 1.0),), 0.0, 0), cfg)
        )
        noisy = wf.add_noise(h, 0.0, 5)
        ul = [2, 3, 6, 7]
        assert np.all(noisy.data[:, ul] == 0)
        dl = [0, 1, 4, 5]
        assert not np.array_equal(noisy.data[:, dl], h.data[:, dl])

    def test_variance_referenced_to_dl_signal_power(self):
        cfg = small_config(n=64, m=64, period=4, dl=2)
        sc = wf.Scatterer(range_m=20.0, velocity_mps=0.0, amplitude=3.0)
        h = wf.apply_tdd_mask(wf.synthesize_channel(wf.Scene(0, (sc,), 0.0, 0), cfg))
        dl = cfg.dl_columns()
        p_sig = np.mean(np.abs(h.data[:, dl]) ** 2)
        noisy = wf.add_noise(h, 0.0, 9)
        noise = noisy.data[:, dl] - h.data[:, dl]
        assert np.mean(np.abs(noise) ** 2) == pytest.approx(p_sig, rel=0.1)


class TestEstimateChannel:
    def test_identity_pilots(self):
        cfg = small_config(n=4, m=4, period=4, dl=4)
        rng = np.random.default_rng(2)
        y = rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4))
        h = wf.estimate_channel(y, np.ones((4, 4), dtype=complex), cfg)
        assert np.array_equal(h.data, y)

    def test_constant_ratio(self):
        cfg = small_config(n=4, m=4, period=4, dl=4)
        rng = np.random.default_rng(3)
        x = rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4))
        h = wf.estimate_channel(2 * x, x, cfg)
        assert np.allclose(h.data, 2.0, atol=1e-12)

    def test_round_trip_recovery(self):
        cfg = small_config(n=8, m=8, period=4, dl=4)
        rng = np.random.default_rng(4)
        x = rng.normal(size=(8, 8)) + 1j * rng.normal(size=(8, 8))
        h_true = rng.normal(size=(8, 8)) + 1j * rng.normal(size=(8, 8))
        h = wf.estimate_channel(h_true * x, x, cfg)
        assert np.abs(h.data - h_true).max() <= 1e-12 * np.abs(h_true).max()

    def test_zero_pilot_on_downlink_reports_position(self):
        cfg = small_config(n=4, m=8, period=4, dl=2)
        x = np.ones((4, 8), dtype=complex)
        x[2, 5] = 0.0  # column 5 is downlink (period 4, dl 2 -> cols 4,5)
        with pytest.raises(PilotZeroError) as err:
            wf.estimate_channel(np.ones((4, 8), dtype=complex), x, cfg)
        assert err.value.k == 2 and err.value.l == 5

    def test_zero_pilot_on_uplink_is_tolerated(self):
        cfg = small_config(n=4, m=8, period=4, dl=2)
        x = np.ones((4, 8), dtype=complex)
        x[:, [2, 3, 6, 7]] = 0.0
        h = wf.estimate_channel(np.ones((4, 8), dtype=complex), x, cfg)
        assert np.all(h.data[:, [2, 3, 6, 7]] == 0)
        assert np.all(h.data[:, [0, 1, 4, 5]] == 1)

    def test_shape_mismatch(self):
        cfg = small_config(n=4, m=4, period=4, dl=4)
        with pytest.raises(ConfigError):
            wf.estimate_channel(np.ones((4, 4)), np.ones((4, 5)), cfg)


class TestSceneFiles:
    def test_round_trip(self, tmp_path):
        scene = wf.Scene(
            class_id=3,
            scatterers=(
                wf.Scatterer(15.0, 1.5, 1.0, 0.25),
                wf.Scatterer(9.5, -0.75, 0.5, 2.0),
            ),
            snr_db=12.5,
            seed=99,
        )
        path = tmp_path / "scene.cfg"
        wf.save_scene(scene, path)
        loaded = wf.load_scene(path)
        assert loaded == scene

    def test_infinite_snr_round_trip(self, tmp_path):
        scene = wf.Scene(0, (), math.inf, 1)
        path = tmp_path / "scene.cfg"
        wf.save_scene(scene, path)
        assert math.isinf(wf.load_scene(path).snr_db)

    def test_missing_key_rejected(self, tmp_path):
        path = tmp_path / "scene.cfg"
        path.write_text("class_id = 1\nsnr_db = 10\n")
        with pytest.raises(ConfigError):
            wf.load_scene(path)

    def test_malformed_scatterer_rejected(self, tmp_path):
        path = tmp_path / "scene.cfg"
        path.write_text("class_id = 1\nsnr_db = 10\nseed = 2\nscatterer = range_m=5\n")
        with pytest.raises(ConfigError):
            wf.load_scene(path)
