"""Weak-coherent-pulse source, monitor and receiver detector simulation.

Models the counting chain of a polarization-encoded BB84 receiver behind a
lossy channel: a monitor detector D0 taps the source, and four receiver
detectors D1..D4 (H, V, +, -) sit behind a passive basis choice.  Clicks
come from the attenuated signal (aggregate probability ``1 - exp(-mu*eta)``)
and from per-detector dark counts; a pulse that fires several detectors is
resolved to one of them uniformly at random, so every pulse contributes at
most one count per detector and at most one sifted outcome.

Two samplers share this model: a per-pulse vectorized one that keeps the
full sent-state x clicked-detector tally (QKD sessions), and an aggregate
one drawing only the count totals in O(1) per evaluation (the optimizer's
fitness oracle, where pulse counts can reach 1e9).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np

from .channel import ScatteringChannel, coupled_efficiency
from .masks import PhaseMask

_CHUNK = 1 << 19


class EvaluationFailedError(RuntimeError):
    """A fitness evaluation produced no usable signal (dead monitor arm)."""


class PolarizationState(IntEnum):
    """BB84 states: Z basis = {H, V}, X basis = {PLUS, MINUS}."""

    H = 0
    V = 1
    PLUS = 2
    MINUS = 3

    @property
    def basis(self) -> str:
        return "Z" if self < 2 else "X"

    @property
    def conjugate(self) -> "PolarizationState":
        """The orthogonal state in the same basis (the wrong detector)."""
        return PolarizationState(int(self) ^ 1)


@dataclass(frozen=True)
class SourceConfig:
    """Pulsed weak-coherent source with signal/decoy intensities.

    Attributes:
        mu: signal mean photon number.
        nu: decoy mean photon number (0 < nu < mu).
        pulses_per_evaluation: pulses integrated per fitness sample.
        monitor_transmittance: effective transmittance of the D0 monitor arm.
    """

    mu: float = 0.6
    nu: float = 0.2
    pulses_per_evaluation: int = 50_000_000
    monitor_transmittance: float = 0.1

    def __post_init__(self):
        if not 0.0 < self.nu < self.mu:
            raise ValueError(f"need 0 < nu < mu, got nu={self.nu}, mu={self.mu}")
        if self.pulses_per_evaluation < 1:
            raise ValueError("pulses_per_evaluation must be >= 1")
        if not 0.0 <= self.monitor_transmittance <= 1.0:
            raise ValueError("monitor_transmittance must be in [0, 1]")


@dataclass(frozen=True)
class DetectorConfig:
    """Single-photon detector bank parameters.

    The per-pulse dark probability is dark_rate_hz / pulse_rate_hz; the
    default pulse rate makes the four-detector background yield
    4 * dark_rate_hz / pulse_rate_hz equal to 2.0e-7.
    """

    efficiency: float = 0.55
    dark_rate_hz: float = 8.4
    pulse_rate_hz: float = 1.68e8
    misalignment_error: float = 0.01

    def __post_init__(self):
        if not 0.0 < self.efficiency <= 1.0:
            raise ValueError("efficiency must be in (0, 1]")
        if self.dark_rate_hz < 0:
            raise ValueError("dark_rate_hz must be >= 0")
        if self.pulse_rate_hz <= 0:
            raise ValueError("pulse_rate_hz must be positive")
        if not 0.0 <= self.misalignment_error <= 0.5:
            raise ValueError("misalignment_error must be in [0, 0.5]")
        if self.dark_prob >= 1.0:
            raise ValueError("per-pulse dark probability must be < 1")

    @property
    def dark_prob(self) -> float:
        return self.dark_rate_hz / self.pulse_rate_hz

    @property
    def background_yield(self) -> float:
        """Default Y0: four independent dark channels per pulse."""
        return 4.0 * self.dark_prob


@dataclass
class CountRecord:
    """Counts accumulated over one session or fitness evaluation.

    ``detector_counts[d]`` is the number of pulses resolved to detector d
    (order H, V, +, -).  ``tallies[s, d]`` is the sent-state x resolved-
    detector matrix needed for sifting; aggregate fitness samples omit it.
    """

    pulses: int
    intensity: float
    d0: int
    detector_counts: np.ndarray
    tallies: np.ndarray | None = None

    def __post_init__(self):
        self.detector_counts = np.asarray(self.detector_counts, dtype=np.int64)
        if self.detector_counts.shape != (4,):
            raise ValueError("detector_counts must have four entries")
        if self.d0 < 0 or self.d0 > self.pulses:
            raise ValueError("d0 must lie in [0, pulses]")
        if np.any(self.detector_counts < 0) or np.any(self.detector_counts > self.pulses):
            raise ValueError("detector counts must lie in [0, pulses]")
        if self.tallies is not None:
            self.tallies = np.asarray(self.tallies, dtype=np.int64)
            if self.tallies.shape != (4, 4):
                raise ValueError("tallies must be a 4x4 matrix")

    @property
    def total_clicks(self) -> int:
        return int(self.detector_counts.sum())

    def to_jsonable(self) -> dict:
        return {
            "pulses": self.pulses,
            "intensity": self.intensity,
            "d0": self.d0,
            "detector_counts": [int(v) for v in self.detector_counts],
            "tallies": None if self.tallies is None else self.tallies.tolist(),
        }

    @classmethod
    def from_jsonable(cls, doc: dict) -> "CountRecord":
        return cls(
            pulses=doc["pulses"],
            intensity=doc["intensity"],
            d0=doc["d0"],
            detector_counts=np.array(doc["detector_counts"]),
            tallies=None if doc.get("tallies") is None else np.array(doc["tallies"]),
        )


def random_state_sequence(n: int, rng: np.random.Generator) -> np.ndarray:
    """Uniformly random BB84 state codes for n pulses."""
    if n < 1:
        raise ValueError("state sequence must not be empty")
    return rng.integers(0, 4, size=n, dtype=np.int8)


def _state_codes(states) -> np.ndarray:
    codes = np.asarray(states, dtype=np.int8)
    if codes.ndim != 1 or codes.size == 0:
        raise ValueError("state sequence must be a non-empty 1-d sequence")
    if codes.min() < 0 or codes.max() > 3:
        raise ValueError("state codes must be in 0..3")
    return codes


def simulate_counts(
    channel_transmittance: float,
    states,
    intensity: float,
    source: SourceConfig,
    det: DetectorConfig,
    rng: np.random.Generator,
) -> CountRecord:
    """Per-pulse simulation of one session at a single intensity.

    Args:
        channel_transmittance: end-to-end optical transmittance (before
            detector efficiency), in [0, 1].
        states: sequence of sent PolarizationState values (or codes 0..3).
        intensity: mean photon number per pulse.
        rng: generator consumed in a fixed chunked order, so identical seeds
            reproduce the record bit for bit.
    """
    if not 0.0 <= channel_transmittance <= 1.0:
        raise ValueError("channel_transmittance must be in [0, 1]")
    if intensity < 0:
        raise ValueError("intensity must be >= 0")
    codes = _state_codes(states)
    n = codes.size

    p0 = -np.expm1(-intensity * source.monitor_transmittance)
    p_sig = -np.expm1(-intensity * channel_transmittance * det.efficiency)
    p_dark = det.dark_prob
    e_d = det.misalignment_error

    d0 = 0
    detector_counts = np.zeros(4, dtype=np.int64)
    tallies = np.zeros((4, 4), dtype=np.int64)

    for start in range(0, n, _CHUNK):
        chunk = codes[start : start + _CHUNK]
        m = chunk.size
        d0 += int(rng.binomial(m, p0))

        sig = rng.random(m) < p_sig
        bob_basis = rng.integers(0, 2, size=m, dtype=np.int8)
        err = rng.random(m) < e_d
        coin = rng.integers(0, 2, size=m, dtype=np.int8)
        darks = rng.random((m, 4)) < p_dark
        priority = rng.random((m, 4))

        matched = (chunk >> 1) == bob_basis
        dest = np.where(matched, np.where(err, chunk ^ 1, chunk), 2 * bob_basis + coin)

        clicks = darks
        rows = np.nonzero(sig)[0]
        clicks[rows, dest[rows]] = True

        any_click = clicks.any(axis=1)
        priority[~clicks] = -1.0
        resolved = priority.argmax(axis=1)

        hit_states = chunk[any_click]
        hit_dets = resolved[any_click]
        np.add.at(tallies, (hit_states, hit_dets), 1)
        detector_counts += np.bincount(hit_dets, minlength=4).astype(np.int64)

    return CountRecord(
        pulses=n,
        intensity=float(intensity),
        d0=d0,
        detector_counts=detector_counts,
        tallies=tallies,
    )


def sample_fitness_counts(
    channel_transmittance: float,
    intensity: float,
    pulses: int,
    source: SourceConfig,
    det: DetectorConfig,
    rng: np.random.Generator,
) -> CountRecord:
    """Aggregate sampler for fitness evaluations: exact in the totals.

    Draws D0 and the number of pulses with at least one receiver click from
    their binomial laws, then splits the total over the four detectors with a
    symmetric multinomial (exchangeable under uniformly random states).  Cost
    is independent of the pulse count.  No per-state tally is produced.
    """
    if not 0.0 <= channel_transmittance <= 1.0:
        raise ValueError("channel_transmittance must be in [0, 1]")
    if pulses < 1:
        raise ValueError("pulses must be >= 1")
    p0 = -np.expm1(-intensity * source.monitor_transmittance)
    p_sig = -np.expm1(-intensity * channel_transmittance * det.efficiency)
    p_none = (1.0 - p_sig) * (1.0 - det.dark_prob) ** 4

    d0 = int(rng.binomial(pulses, p0))
    total = pulses - int(rng.binomial(pulses, p_none))
    counts = rng.multinomial(total, [0.25, 0.25, 0.25, 0.25])
    return CountRecord(
        pulses=pulses,
        intensity=float(intensity),
        d0=d0,
        detector_counts=counts,
        tallies=None,
    )


def fitness_from_counts(record: CountRecord) -> float:
    """Total receiver counts normalized by the monitor: (D1+D2+D3+D4)/D0.

    Normalizing by D0 cancels source intensity fluctuations out of the
    optimizer's feedback signal.
    """
    if record.d0 <= 0:
        raise EvaluationFailedError("monitor detector D0 recorded no counts")
    return record.total_clicks / record.d0


@dataclass(frozen=True)
class SiftSummary:
    """Gain and error rates extracted from one session's tally matrix."""

    intensity: float
    pulses: int
    gain: float
    sifted: int
    errors: int
    qber: float | None
    per_state_qber: dict = field(default_factory=dict)


def sift_and_tally(record: CountRecord) -> SiftSummary:
    """Sift the tally matrix of a session into gain and QBER.

    Gain counts every resolved click; QBER is evaluated on matched-basis
    clicks only (wrong-detector clicks / matched-basis clicks).  With no
    matched-basis clicks the QBER is reported as absent (None).
    """
    if record.tallies is None:
        raise ValueError("record carries no per-state tallies; use simulate_counts")
    t = record.tallies
    gain = float(t.sum()) / record.pulses

    sifted = 0
    errors = 0
    per_state: dict = {}
    for s in range(4):
        correct = int(t[s, s])
        wrong = int(t[s, s ^ 1])
        sifted += correct + wrong
        errors += wrong
        name = PolarizationState(s).name
        per_state[name] = wrong / (correct + wrong) if (correct + wrong) > 0 else None

    qber = errors / sifted if sifted > 0 else None
    return SiftSummary(
        intensity=record.intensity,
        pulses=record.pulses,
        gain=gain,
        sifted=sifted,
        errors=errors,
        qber=qber,
        per_state_qber=per_state,
    )


def expected_gain(intensity: float, eta_total: float, y0: float) -> float:
    """Closed-form gain of the aggregate click model:
    Q = Y0 + 1 - exp(-eta_total * intensity)."""
    if intensity < 0 or eta_total < 0 or y0 < 0:
        raise ValueError("intensity, eta_total and y0 must be >= 0")
    return float(y0 - np.expm1(-eta_total * intensity))


def expected_qber(
    intensity: float,
    eta_total: float,
    y0: float,
    e_d: float,
    e0: float = 0.5,
) -> float:
    """Closed-form QBER: E = (e0*Y0 + e_d*(1 - exp(-eta*mu))) / Q."""
    if not 0.0 <= e_d <= 0.5:
        raise ValueError("e_d must be in [0, 0.5]")
    if not 0.0 <= e0 <= 0.5:
        raise ValueError("e0 must be in [0, 0.5]")
    q = expected_gain(intensity, eta_total, y0)
    if q <= 0.0:
        raise ValueError("gain is zero; QBER undefined")
    signal = -np.expm1(-eta_total * intensity)
    return float((e0 * y0 + e_d * signal) / q)


def pulses_for_fitness_snr(
    snr: float,
    eta_channel: float,
    source: SourceConfig,
    det: DetectorConfig,
) -> int:
    """Pulses per evaluation so the total-count SNR at a given channel
    transmittance reaches ``snr`` (counting the dark floor as part of the
    shot noise)."""
    if snr <= 0:
        raise ValueError("snr must be positive")
    p_sig = -np.expm1(-source.mu * eta_channel * det.efficiency)
    p_total = p_sig + det.background_yield
    if p_total <= 0:
        raise ValueError("no counts expected at this transmittance")
    return int(np.ceil(snr ** 2 / p_total))


@dataclass(frozen=True)
class PhotonCountOracle:
    """Fitness oracle: one noisy photon-count sample per mask.

    Evaluates the candidate mask's coupled efficiency on the channel, then
    draws the session totals with the aggregate sampler and returns the
    D-normalized fitness.  Pure function of (mask, rng): safe to evaluate
    concurrently with independent generators.
    """

    channel: ScatteringChannel
    source: SourceConfig
    det: DetectorConfig
    pulses: int | None = None
    intensity: float | None = None

    def evaluate(self, mask: PhaseMask, rng: np.random.Generator) -> float:
        eta = coupled_efficiency(self.channel, mask)
        record = sample_fitness_counts(
            eta,
            self.intensity if self.intensity is not None else self.source.mu,
            self.pulses if self.pulses is not None else self.source.pulses_per_evaluation,
            self.source,
            self.det,
            rng,
        )
        return fitness_from_counts(record)


@dataclass(frozen=True)
class ChannelEfficiencyOracle:
    """Noiseless oracle returning the coupled efficiency directly."""

    channel: ScatteringChannel

    def evaluate(self, mask: PhaseMask, rng: np.random.Generator) -> float:
        return coupled_efficiency(self.channel, mask)
