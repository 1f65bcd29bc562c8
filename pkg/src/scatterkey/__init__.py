"""scatterkey: wavefront-shaped quantum key distribution through scattering
channels.

A simulation laboratory with three layers: a random-transmission-matrix
scattering channel with phase-mask control (``channel``, ``masks``), a
genetic optimizer fed by simulated single-photon counting (``ga``,
``photons``), and a decoy-state BB84 key-rate engine with a batch table mode
(``keyrate``).  The ``scatterkey`` CLI chains them into full experiments.
"""

from .channel import (
    ChannelCalibration,
    ScatteringChannel,
    conjugate_mask,
    coupled_efficiency,
    enhancement,
    generate_channel,
    load_channel,
    loss_db,
    output_intensity,
    save_channel,
)
from .ga import GAConfig, OptimizationHistory, RankedPopulation, run as run_ga
from .keyrate import (
    DecoyObservation,
    KeyRateParams,
    KeyRateResult,
    delta1,
    e1_upper,
    gllp_rate,
    h2,
    table_batch,
    y1_lower,
)
from .masks import PhaseMask, quantize
from .photons import (
    ChannelEfficiencyOracle,
    CountRecord,
    DetectorConfig,
    PhotonCountOracle,
    PolarizationState,
    SourceConfig,
    expected_gain,
    expected_qber,
    fitness_from_counts,
    sift_and_tally,
    simulate_counts,
)

__version__ = "0.1.0"

__all__ = [
    "ChannelCalibration",
    "ChannelEfficiencyOracle",
    "CountRecord",
    "DecoyObservation",
    "DetectorConfig",
    "GAConfig",
    "KeyRateParams",
    "KeyRateResult",
    "OptimizationHistory",
    "PhaseMask",
    "PhotonCountOracle",
    "PolarizationState",
    "RankedPopulation",
    "ScatteringChannel",
    "SourceConfig",
    "conjugate_mask",
    "coupled_efficiency",
    "delta1",
    "e1_upper",
    "enhancement",
    "expected_gain",
    "expected_qber",
    "fitness_from_counts",
    "generate_channel",
    "gllp_rate",
    "h2",
    "load_channel",
    "loss_db",
    "output_intensity",
    "quantize",
    "run_ga",
    "save_channel",
    "sift_and_tally",
    "simulate_counts",
    "table_batch",
    "y1_lower",
]
