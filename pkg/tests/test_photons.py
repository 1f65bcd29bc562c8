"""Detection-model tests: count statistics, sifting, closed-form agreement."""
import numpy as np
import pytest

from scatterkey.channel import ChannelCalibration, generate_channel
from scatterkey.masks import PhaseMask
from scatterkey.photons import (
    CountRecord,
    DetectorConfig,
    EvaluationFailedError,
    PhotonCountOracle,
    PolarizationState,
    SourceConfig,
    expected_gain,
    expected_qber,
    fitness_from_counts,
    pulses_for_fitness_snr,
    random_state_sequence,
    sample_fitness_counts,
    sift_and_tally,
    simulate_counts,
)

SRC = SourceConfig(pulses_per_evaluation=100_000)
DET = DetectorConfig()


def rng_for(seed: int) -> np.random.Generator:
    return np.random.default_rng(seed)


class TestConfigs:
    def test_source_ordering(self):
        with pytest.raises(ValueError):
            SourceConfig(mu=0.2, nu=0.6)

    def test_detector_ranges(self):
        with pytest.raises(ValueError):
            DetectorConfig(efficiency=0.0)
        with pytest.raises(ValueError):
            DetectorConfig(dark_rate_hz=-1)
        with pytest.raises(ValueError):
            DetectorConfig(misalignment_error=0.6)

    def test_default_background_yield(self):
        assert DET.background_yield == pytest.approx(2.0e-7, rel=1e-12)

    def test_state_enum(self):
        assert PolarizationState.H.basis == "Z"
        assert PolarizationState.MINUS.basis == "X"
        assert PolarizationState.H.conjugate is PolarizationState.V
        assert PolarizationState.PLUS.conjugate is PolarizationState.MINUS
        assert len(PolarizationState) == 4


class TestSimulateCounts:
    def test_dark_and_signal_free_channel_is_silent(self):
        det = DetectorConfig(dark_rate_hz=0.0)
        states = random_state_sequence(20_000, rng_for(0))
        record = simulate_counts(0.0, states, 0.6, SRC, det, rng_for(1))
        assert record.total_clicks == 0
        assert record.d0 > 0

    def test_saturation_clicks_correct_detector(self):
        det = DetectorConfig(efficiency=1.0, dark_rate_hz=0.0, misalignment_error=0.0)
        states = random_state_sequence(20_000, rng_for(2))
        record = simulate_counts(1.0, states, 1e3, SRC, det, rng_for(3))
        assert record.total_clicks == record.pulses
        summary = sift_and_tally(record)
        assert summary.errors == 0
        assert summary.qber == 0.0
        # matched-basis pulses land on the sent state's own detector
        for s in range(4):
            assert record.tallies[s, s ^ 1] == 0

    def test_gain_matches_closed_form(self):
        # eta chosen so 1 - exp(-mu*eta_total) is about 3.2e-3
        eta = 3.2e-3 / (0.6 * DET.efficiency)
        n = 2_000_000
        states = random_state_sequence(n, rng_for(4))
        record = simulate_counts(eta, states, 0.6, SRC, DET, rng_for(5))
        q_expected = expected_gain(0.6, eta * DET.efficiency, DET.background_yield)
        gain = sift_and_tally(record).gain
        sigma = np.sqrt(q_expected * (1 - q_expected) / n)
        assert abs(gain - q_expected) < 3 * sigma

    def test_empty_sequence_rejected(self):
        with pytest.raises(ValueError):
            simulate_counts(0.5, [], 0.6, SRC, DET, rng_for(0))

    def test_deterministic(self):
        states = random_state_sequence(50_000, rng_for(6))
        a = simulate_counts(1e-3, states, 0.6, SRC, DET, rng_for(7))
        b = simulate_counts(1e-3, states, 0.6, SRC, DET, rng_for(7))
        assert a.d0 == b.d0
        assert np.array_equal(a.detector_counts, b.detector_counts)
        assert np.array_equal(a.tallies, b.tallies)

    def test_accepts_enum_states(self):
        states = [PolarizationState.H, PolarizationState.PLUS, PolarizationState.V]
        record = simulate_counts(0.5, states, 0.6, SRC, DET, rng_for(8))
        assert record.pulses == 3

    def test_darks_alone_give_background_yield_and_half_qber(self):
        det = DetectorConfig(dark_rate_hz=8.4, pulse_rate_hz=8.4e4)  # p_dark = 1e-4
        n = 4_000_000
        states = random_state_sequence(n, rng_for(30))
        record = simulate_counts(0.0, states, 0.6, SRC, det, rng_for(31))
        summary = sift_and_tally(record)
        y0 = det.background_yield
        assert abs(summary.gain - y0) < 3 * np.sqrt(y0 / n)
        sigma = np.sqrt(0.25 / summary.sifted)
        assert abs(summary.qber - 0.5) < 3 * sigma

    def test_record_json_round_trip(self):
        states = random_state_sequence(10_000, rng_for(32))
        record = simulate_counts(1e-2, states, 0.6, SRC, DET, rng_for(33))
        clone = CountRecord.from_jsonable(record.to_jsonable())
        assert clone.d0 == record.d0
        assert np.array_equal(clone.detector_counts, record.detector_counts)
        assert np.array_equal(clone.tallies, record.tallies)


class TestFitness:
    def test_ratio(self):
        record = CountRecord(
            pulses=10_000, intensity=0.6, d0=1000, detector_counts=[10, 20, 30, 40]
        )
        assert fitness_from_counts(record) == pytest.approx(0.1)

    def test_zero_clicks(self):
        record = CountRecord(pulses=100, intensity=0.6, d0=50, detector_counts=[0, 0, 0, 0])
        assert fitness_from_counts(record) == 0.0

    def test_dead_monitor_raises(self):
        record = CountRecord(pulses=100, intensity=0.6, d0=0, detector_counts=[1, 0, 0, 0])
        with pytest.raises(EvaluationFailedError):
            fitness_from_counts(record)

    def test_variance_scales_inverse_sqrt_pulses(self):
        eta = 1e-4
        reps = 300
        stds = []
        for pulses in (100_000, 10_000_000):
            rng = rng_for(9)
            samples = [
                fitness_from_counts(
                    sample_fitness_counts(eta, 0.6, pulses, SRC, DET, rng)
                )
                for _ in range(reps)
            ]
            stds.append(np.std(samples, ddof=1))
        ratio = stds[0] / stds[1]
        assert ratio == pytest.approx(10.0, rel=0.2)

    def test_mean_proportional_to_transmittance(self):
        # with dark counts off, doubling the transmittance doubles the mean
        det = DetectorConfig(dark_rate_hz=0.0)
        rng = rng_for(10)
        reps = 400

        def mean_fitness(eta):
            return np.mean(
                [
                    fitness_from_counts(
                        sample_fitness_counts(eta, 0.6, 1_000_000, SRC, det, rng)
                    )
                    for _ in range(reps)
                ]
            )

        m1, m2 = mean_fitness(2e-4), mean_fitness(4e-4)
        assert m2 / m1 == pytest.approx(2.0, rel=0.05)


class TestAggregateSampler:
    def test_matches_per_pulse_means(self):
        eta, n = 2e-3, 200_000
        rng = rng_for(11)
        agg = [
            sample_fitness_counts(eta, 0.6, n, SRC, DET, rng).total_clicks
            for _ in range(200)
        ]
        p_sig = 1 - np.exp(-0.6 * eta * DET.efficiency)
        p_any = 1 - (1 - p_sig) * (1 - DET.dark_prob) ** 4
        expected = n * p_any
        sigma = np.sqrt(n * p_any * (1 - p_any) / len(agg))
        assert abs(np.mean(agg) - expected) < 3 * sigma

    def test_monitor_counts_track_intensity(self):
        rng = rng_for(12)
        rec = sample_fitness_counts(1e-3, 0.6, 1_000_000, SRC, DET, rng)
        p0 = 1 - np.exp(-0.6 * SRC.monitor_transmittance)
        assert rec.d0 == pytest.approx(1_000_000 * p0, rel=0.02)

    def test_no_tallies(self):
        rec = sample_fitness_counts(1e-3, 0.6, 1000, SRC, DET, rng_for(13))
        assert rec.tallies is None
        with pytest.raises(ValueError):
            sift_and_tally(rec)

    def test_deterministic(self):
        a = sample_fitness_counts(1e-3, 0.6, 10**9, SRC, DET, rng_for(14))
        b = sample_fitness_counts(1e-3, 0.6, 10**9, SRC, DET, rng_for(14))
        assert a.d0 == b.d0 and a.total_clicks == b.total_clicks


class TestSiftAndTally:
    def test_all_correct_clicks(self):
        tallies = np.zeros((4, 4), dtype=np.int64)
        np.fill_diagonal(tallies, 25)
        record = CountRecord(
            pulses=1000, intensity=0.6, d0=500, detector_counts=[25, 25, 25, 25], tallies=tallies
        )
        summary = sift_and_tally(record)
        assert summary.qber == 0.0
        assert summary.gain == pytest.approx(0.1)
        assert all(v == 0.0 for v in summary.per_state_qber.values())

    def test_symmetric_routing_gives_half(self):
        det = DetectorConfig(efficiency=1.0, dark_rate_hz=0.0, misalignment_error=0.5)
        states = random_state_sequence(200_000, rng_for(15))
        record = simulate_counts(1.0, states, 1e3, SRC, det, rng_for(16))
        summary = sift_and_tally(record)
        assert summary.qber == pytest.approx(0.5, abs=0.01)

    def test_qber_none_without_matched_clicks(self):
        tallies = np.zeros((4, 4), dtype=np.int64)
        tallies[0, 2] = 5  # H pulses resolved in the X basis only
        record = CountRecord(
            pulses=100, intensity=0.6, d0=10, detector_counts=[0, 0, 5, 0], tallies=tallies
        )
        summary = sift_and_tally(record)
        assert summary.qber is None
        assert summary.per_state_qber["H"] is None

    def test_session_agrees_with_closed_forms(self):
        e_d = 0.02
        det = DetectorConfig(misalignment_error=e_d, dark_rate_hz=8.4)
        eta_ch = 1e-2
        n = 2_000_000
        states = random_state_sequence(n, rng_for(17))
        record = simulate_counts(eta_ch, states, 0.6, SRC, det, rng_for(18))
        summary = sift_and_tally(record)
        eta_tot = eta_ch * det.efficiency
        q = expected_gain(0.6, eta_tot, det.background_yield)
        e = expected_qber(0.6, eta_tot, det.background_yield, e_d)
        sigma_q = np.sqrt(q / n)
        assert abs(summary.gain - q) < 3 * sigma_q
        sigma_e = np.sqrt(e * (1 - e) / summary.sifted)
        assert abs(summary.qber - e) < 3 * sigma_e


class TestClosedForms:
    def test_vacuum_gain_is_background(self):
        assert expected_gain(0.0, 0.5, 2e-7) == pytest.approx(2e-7)

    def test_saturated_gain(self):
        assert expected_gain(1e9, 1.0, 2e-7) == pytest.approx(1.0 + 2e-7)

    def test_strong_scattering_gain_order(self):
        eta_tot = 10 ** (-6.21) * 0.55
        q = expected_gain(0.6, eta_tot, 2e-7)
        assert q == pytest.approx(4.0e-7, rel=0.02)
        # same order as the measured 2.2e-7 raw-channel gain
        assert 1e-7 < q < 1e-6

    def test_qber_without_background_is_misalignment(self):
        assert expected_qber(0.6, 1e-3, 0.0, 0.008) == pytest.approx(0.008)

    def test_background_dominated_qber_is_half(self):
        assert expected_qber(0.6, 1e-15, 2e-7, 0.008) == pytest.approx(0.5, rel=1e-6)

    def test_low_loss_qber_near_misalignment(self):
        # ~14.6 dB channel: QBER consistent with the chosen e_d
        e = expected_qber(0.6, 3.2e-3 / 0.6, 2e-7, 0.008)
        assert e == pytest.approx(0.0080, rel=0.01)

    def test_qber_undefined_at_zero_gain(self):
        with pytest.raises(ValueError):
            expected_qber(0.0, 0.5, 0.0, 0.01)


class TestOracle:
    def _channel(self):
        cal = ChannelCalibration(30.0, 16)
        return generate_channel(cal, 1.0, seed=20)

    def test_snr_sizing(self):
        n = pulses_for_fitness_snr(5.0, 1e-3, SRC, DET)
        p = 1 - np.exp(-0.6 * 1e-3 * DET.efficiency) + DET.background_yield
        assert n * p == pytest.approx(25.0, rel=0.01)

    def test_oracle_evaluates(self):
        ch = self._channel()
        oracle = PhotonCountOracle(ch, SourceConfig(pulses_per_evaluation=1_000_000), DET)
        value = oracle.evaluate(PhaseMask.blank(4, 4), rng_for(21))
        assert value >= 0.0

    def test_oracle_deterministic(self):
        ch = self._channel()
        oracle = PhotonCountOracle(ch, SourceConfig(pulses_per_evaluation=1_000_000), DET)
        mask = PhaseMask.blank(4, 4)
        assert oracle.evaluate(mask, rng_for(22)) == oracle.evaluate(mask, rng_for(22))

    def test_dead_monitor_arm_fails(self):
        ch = self._channel()
        src = SourceConfig(pulses_per_evaluation=100, monitor_transmittance=0.0)
        oracle = PhotonCountOracle(ch, src, DET)
        with pytest.raises(EvaluationFailedError):
            oracle.evaluate(PhaseMask.blank(4, 4), rng_for(23))
