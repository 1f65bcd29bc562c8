"""Acceptance suite: one test per release criterion, each printing a
PASS/FAIL line with its runtime (run with ``pytest tests/test_acceptance.py
-v -s`` to see the lines).

Criteria covered:
  1. reference-table reproduction at Y0 = 2e-7 (tolerances per row class)
  2. formula agreement with an extended-precision oracle to 1e-12
  3. channel ensemble physics (blank calibration, conjugate optimum,
     quantization penalty)
  4. optimizer convergence with a noiseless oracle (monotone, >= 50x)
  5. end-to-end key-rate recovery on the strong-scattering preset
  6. counting statistics against closed forms and 1/sqrt(n) fitness noise
  7. byte-identical artifacts across reruns and parallel evaluation
"""
import json
import math
import os
import time

import numpy as np
import pytest

import scatterkey as sk
from scatterkey.cli import main as cli_main
from scatterkey.ga import GAConfig, run as run_ga
from scatterkey.io_formats import read_json
from scatterkey.keyrate import (
    DecoyObservation,
    KeyRateParams,
    gllp_rate,
    load_reference_table,
    table_batch,
)
from scatterkey.photons import (
    ChannelEfficiencyOracle,
    DetectorConfig,
    SourceConfig,
    expected_gain,
    expected_qber,
    fitness_from_counts,
    random_state_sequence,
    sample_fitness_counts,
    sift_and_tally,
    simulate_counts,
)

from decimal_oracle import oracle_bounds, oracle_h2


def _stamp(criterion: int, name: str, t0: float, limit: float) -> None:
    elapsed = time.time() - t0
    print(f"\nACCEPTANCE {criterion} [{name}]: PASS ({elapsed:.1f}s, limit {limit:.0f}s)")
    assert elapsed < limit, f"criterion {criterion} exceeded its {limit}s budget"


SPOT_TOLERANCES = {
    "600grit-shaped-14.6dB": 0.01,
    "600grit-raw-36.8dB": 0.01,
    "clear-11.9dB": 0.01,
    "120grit-shaped-38.0dB": 0.10,
    "600grit-shaped-44.6dB": 0.05,
}


def test_criterion_1_reference_table_reproduction():
    t0 = time.time()
    rows = load_reference_table()
    assert len(rows) == 15
    assert all(r.observation.y0 == pytest.approx(2.0e-7) for r in rows)

    report = table_batch(rows, KeyRateParams(), tolerance=0.15)
    for entry in report.entries:
        if entry.reference_rate is None:
            assert entry.result.rate == 0.0, f"{entry.label} must yield exactly 0"
        else:
            assert entry.rel_deviation <= 0.15, f"{entry.label}: {entry.rel_deviation:.1%}"
            spot = SPOT_TOLERANCES.get(entry.label)
            if spot is not None:
                assert entry.rel_deviation <= spot, (
                    f"{entry.label}: {entry.rel_deviation:.2%} > {spot:.0%}"
                )

    # every row individually admits a background yield in [1e-7, 3e-7]
    # bringing it within 5% of the reference
    for row in rows:
        if row.reference_rate is None:
            continue
        best = min(
            abs(gllp_rate(row.with_y0(y0).observation).rate - row.reference_rate)
            / row.reference_rate
            for y0 in np.linspace(1e-7, 3e-7, 201)
        )
        assert best <= 0.05, f"{row.label}: best deviation {best:.1%}"

    _stamp(1, "reference table reproduction", t0, 1.0)


def test_criterion_2_formula_oracle_agreement():
    t0 = time.time()
    rng = np.random.default_rng(20240817)
    bare = KeyRateParams(min_margin=0.0)

    for x in rng.uniform(0.0, 1.0, 500):
        assert sk.h2(float(x)) == pytest.approx(oracle_h2(float(x)), rel=1e-12, abs=1e-15)

    checked = 0
    for _ in range(10_000):
        mu = rng.uniform(0.35, 0.9)
        nu = mu * rng.uniform(0.12, 0.6)
        eta = 10 ** rng.uniform(-7, -0.5)
        y0 = 10 ** rng.uniform(-8, -5)
        e_d = rng.uniform(0.0, 0.08)
        q_mu = y0 + 1 - math.exp(-eta * mu)
        q_nu = y0 + 1 - math.exp(-eta * nu)
        obs = DecoyObservation(
            mu=mu,
            nu=nu,
            q_mu=q_mu,
            e_mu=(0.5 * y0 + e_d * (1 - math.exp(-eta * mu))) / q_mu,
            q_nu=q_nu,
            e_nu=(0.5 * y0 + e_d * (1 - math.exp(-eta * nu))) / q_nu,
            y0=y0,
        )
        got = gllp_rate(obs, bare)
        want = oracle_bounds(obs.mu, obs.nu, obs.q_mu, obs.e_mu, obs.q_nu, obs.e_nu, obs.y0)
        assert got.y1_lower == pytest.approx(want["y1"], rel=1e-12, abs=1e-30)
        if want["e1"] is not None:
            assert got.e1_upper == pytest.approx(want["e1"], rel=1e-12, abs=1e-30)
            assert got.delta1 == pytest.approx(want["delta1"], rel=1e-12, abs=1e-30)
            # the rate bracket subtracts two O(1) entropy terms, so at its
            # zero crossing only an absolute machine-precision bound is
            # attainable in doubles; everywhere else 1e-12 relative binds
            assert got.margin == pytest.approx(want["margin"], rel=1e-12, abs=1e-13)
            rate_floor = max(1e-12 * want["rate"], 1e-13 * obs.q_mu)
            assert abs(got.rate - want["rate"]) <= rate_floor
            checked += 1
    assert checked > 5000

    _stamp(2, "formula oracle agreement", t0, 10.0)


def test_criterion_3_channel_physics_ensemble():
    t0 = time.time()
    n_blocks = 256
    cal = sk.ChannelCalibration(30.0, n_blocks)
    target = cal.blank_transmittance
    blank = sk.PhaseMask.blank(16, 16)

    blanks, enhancements, quant_ratios = [], [], []
    for seed in range(5000, 5400):
        ch = sk.generate_channel(cal, 1.0, seed=seed)
        blanks.append(sk.coupled_efficiency(ch, blank))
        enhancements.append(ch.max_transmittance / target)
        conj = sk.conjugate_mask(ch)
        quant_ratios.append(
            sk.coupled_efficiency(ch, sk.quantize(conj))
            / sk.coupled_efficiency(ch, conj)
        )

    assert len(blanks) >= 200
    assert np.mean(blanks) == pytest.approx(target, rel=0.10)
    ideal = np.pi / 4 * (n_blocks - 1) + 1
    assert ideal == pytest.approx(201.3, abs=0.1)
    assert np.mean(enhancements) == pytest.approx(ideal, rel=0.10)
    sinc_sq = (np.sin(np.pi / 10) / (np.pi / 10)) ** 2
    assert sinc_sq == pytest.approx(0.9675, abs=1e-4)
    assert np.mean(quant_ratios) == pytest.approx(sinc_sq, rel=0.05)

    _stamp(3, "channel physics ensemble", t0, 60.0)


def test_criterion_4_ga_noiseless_convergence():
    t0 = time.time()
    cal = sk.ChannelCalibration(30.0, 400)
    ch = sk.generate_channel(cal, 1.0, seed=11, grid=(20, 20))
    oracle = ChannelEfficiencyOracle(ch)
    config = GAConfig(
        generations=2000,
        population_size=20,
        r0=0.1,
        r_end=0.013,
        decay=200.0,
        seed=42,
        reevaluate_survivors=False,
        width=20,
        height=20,
    )
    history = run_ga(config, oracle)
    assert history.error is None
    assert len(history.records) == 2001

    best = [r.best_fitness for r in history.records]
    assert all(b >= a for a, b in zip(best, best[1:])), "best fitness must never decrease"

    blank_fitness = sk.coupled_efficiency(ch, sk.PhaseMask.blank(20, 20))
    enhancement = history.best_fitness / blank_fitness
    assert enhancement >= 50.0, f"enhancement {enhancement:.1f} below 50"

    _stamp(4, "noiseless GA convergence", t0, 60.0)


def test_criterion_5_end_to_end_key_rate_recovery(tmp_path):
    t0 = time.time()
    base = [
        "--preset", "grit120",
        "--set", "ga.generations=1200",
        "--set", "source.pulses_per_evaluation=2000000000",
    ]
    chan_dir = tmp_path / "chan"
    assert cli_main(["channel", *base, "--outdir", str(chan_dir)]) == 0
    channel_path = str(chan_dir / "channel.json")

    before_dir = tmp_path / "before"
    assert cli_main(["qkd", *base, "--channel", channel_path, "--outdir", str(before_dir)]) == 0
    before = read_json(before_dir / "qkd_report.json")
    assert before["points"][0]["rate"] == 0.0, "raw strong-scattering channel must yield no key"

    opt_dir = tmp_path / "opt"
    assert cli_main(["optimize", *base, "--channel", channel_path, "--outdir", str(opt_dir)]) == 0
    manifest = read_json(opt_dir / "optimize_manifest.json")
    blank_db = manifest["metrics"]["blank_loss_db"]
    optimized_db = manifest["metrics"]["optimized_loss_db"]
    assert optimized_db <= blank_db - 10.0, (
        f"only {blank_db - optimized_db:.1f} dB of improvement"
    )

    after_dir = tmp_path / "after"
    assert cli_main(
        [
            "qkd", *base,
            "--channel", channel_path,
            "--mask", str(opt_dir / "best_mask.txt"),
            "--outdir", str(after_dir),
        ]
    ) == 0
    after = read_json(after_dir / "qkd_report.json")
    assert after["points"][0]["rate"] > 0.0, "optimized channel must distill a key"

    print(
        f"\n  end-to-end: blank {blank_db:.1f} dB -> optimized {optimized_db:.1f} dB, "
        f"R {before['points'][0]['rate']:.2e} -> {after['points'][0]['rate']:.2e}"
    )
    _stamp(5, "end-to-end key-rate recovery", t0, 600.0)


def test_criterion_6_counting_statistics():
    t0 = time.time()
    src = SourceConfig(pulses_per_evaluation=1_000_000)
    det = DetectorConfig(misalignment_error=0.01)
    eta_ch = 1e-3
    eta_tot = eta_ch * det.efficiency
    n = 10_000_000

    for intensity in (src.mu, src.nu):
        rng = np.random.default_rng(int(intensity * 1000))
        states = random_state_sequence(n, rng)
        record = simulate_counts(eta_ch, states, intensity, src, det, rng)
        summary = sift_and_tally(record)

        q = expected_gain(intensity, eta_tot, det.background_yield)
        sigma_q = math.sqrt(q * (1 - q) / n)
        assert abs(summary.gain - q) < 3 * sigma_q, f"gain off at intensity {intensity}"

        e = expected_qber(intensity, eta_tot, det.background_yield, det.misalignment_error)
        sigma_e = math.sqrt(e * (1 - e) / summary.sifted)
        assert abs(summary.qber - e) < 3 * sigma_e, f"QBER off at intensity {intensity}"

    # fitness noise scales as 1/sqrt(pulses) across a 100x sweep
    reps = 300
    stds = []
    for pulses in (200_000, 20_000_000):
        rng = np.random.default_rng(55)
        samples = [
            fitness_from_counts(sample_fitness_counts(1e-4, src.mu, pulses, src, det, rng))
            for _ in range(reps)
        ]
        stds.append(np.std(samples, ddof=1))
    ratio = stds[0] / stds[1]
    assert ratio == pytest.approx(10.0, rel=0.20), f"std ratio {ratio:.2f} not ~10"

    _stamp(6, "counting statistics", t0, 120.0)


def test_criterion_7_artifact_determinism(tmp_path):
    t0 = time.time()
    fast = [
        "--set", "channel.width=8",
        "--set", "channel.height=8",
        "--set", "channel.blank_loss_db=20.0",
        "--set", "channel.output_width=16",
        "--set", "channel.output_height=16",
        "--set", "ga.generations=30",
        "--set", "ga.population_size=6",
        "--set", "source.pulses_per_evaluation=300000",
        "--set", "run.pulses_per_session=300000",
        "--seed", "9",
    ]

    def pipeline(root: str, workers: int) -> dict:
        chan = os.path.join(root, "chan")
        assert cli_main(["channel", *fast, "--outdir", chan]) == 0
        channel_path = os.path.join(chan, "channel.json")
        opt = os.path.join(root, "opt")
        assert cli_main(
            ["optimize", *fast, "--channel", channel_path, "--workers", str(workers), "--outdir", opt]
        ) == 0
        prof = os.path.join(root, "prof")
        assert cli_main(
            ["profile", *fast, "--channel", channel_path,
             "--mask", os.path.join(opt, "best_mask.txt"), "--outdir", prof]
        ) == 0
        qkd = os.path.join(root, "qkd")
        assert cli_main(
            ["qkd", *fast, "--channel", channel_path,
             "--mask", os.path.join(opt, "best_mask.txt"),
             "--extra-loss-db", "0", "5", "--outdir", qkd]
        ) == 0
        kr = os.path.join(root, "keyrate")
        assert cli_main(["keyrate", "--outdir", kr, "--no-figure"]) == 0

        artifacts = {}
        for sub, names in {
            "chan": ["channel.json", "channel_manifest.json"],
            "opt": ["convergence.csv", "best_mask.txt", "optimize_manifest.json"],
            "prof": [
                "intensity_blank.pgm",
                "intensity_blank.pgm.json",
                "intensity_mask.pgm",
                "intensity_mask.pgm.json",
                "profile_manifest.json",
            ],
            "qkd": ["qkd_report.json", "qkd_sessions.csv", "qkd_manifest.json"],
            "keyrate": ["keyrate_report.json"],
        }.items():
            for name in names:
                with open(os.path.join(root, sub, name), "rb") as fh:
                    artifacts[f"{sub}/{name}"] = fh.read()
        return artifacts

    first = pipeline(str(tmp_path / "run1"), workers=1)
    second = pipeline(str(tmp_path / "run2"), workers=1)
    parallel = pipeline(str(tmp_path / "run3"), workers=4)

    for name, blob in first.items():
        assert second[name] == blob, f"rerun changed {name}"
        assert parallel[name] == blob, f"parallel evaluation changed {name}"

    _stamp(7, "artifact determinism", t0, 120.0)
