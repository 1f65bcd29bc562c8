"""Experiment configuration: JSON schema, validation and channel presets.

A config file is a JSON object with ``channel``, ``ga``, ``source``,
``detector`` and ``run`` blocks (see docs/config_reference.md).  Unknown
keys are rejected so typos fail loudly.  The bundled presets encode the two
diffuser scenarios and the clear channel:

* ``grit120``: fully developed speckle (s = 1) calibrated to 62.1 dB blank
  loss; strong-scattering regime where the raw channel supports no key.
* ``grit600``: weak scattering (s = 0.001) calibrated to 16.8 dB blank
  loss, leaving a few dB of shaping headroom.
* ``clear``: no scattering, 1.9 dB coupling loss.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace as dc_replace

import numpy as np

from .channel import DEFAULT_OUTPUT_SHAPE, ChannelCalibration, ScatteringChannel, generate_channel
from .ga import GAConfig
from .masks import TWO_PI
from .photons import DetectorConfig, SourceConfig

_SEED_TAG_CHANNEL = 100
_SEED_TAG_GA = 101
_SEED_TAG_SESSION = 102


class ConfigError(ValueError):
    """Invalid or unknown configuration content."""


@dataclass(frozen=True)
class ChannelBlock:
    blank_loss_db: float = 62.1
    width: int = 60
    height: int = 60
    scattering_fraction: float = 1.0
    seed: int = 1
    output_width: int = DEFAULT_OUTPUT_SHAPE[0]
    output_height: int = DEFAULT_OUTPUT_SHAPE[1]

    def calibration(self) -> ChannelCalibration:
        return ChannelCalibration(self.blank_loss_db, self.width * self.height)

    def generate(self) -> ScatteringChannel:
        return generate_channel(
            self.calibration(),
            self.scattering_fraction,
            self.seed,
            grid=(self.width, self.height),
            output_shape=(self.output_width, self.output_height),
        )


@dataclass(frozen=True)
class GABlock:
    population_size: int = 20
    generations: int = 3000
    r0: float = 0.1
    r_end: float = 0.013
    decay: float = 200.0
    quant_levels: int = 10
    seed: int = 2
    reevaluate_survivors: bool = True
    workers: int = 1

    def ga_config(self, width: int, height: int) -> GAConfig:
        return GAConfig(
            generations=self.generations,
            population_size=self.population_size,
            r0=self.r0,
            r_end=self.r_end,
            decay=self.decay,
            quant_step=TWO_PI / self.quant_levels,
            seed=self.seed,
            reevaluate_survivors=self.reevaluate_survivors,
            width=width,
            height=height,
        )


@dataclass(frozen=True)
class RunBlock:
    pulses_per_session: int = 10_000_000
    session_seed: int = 3
    emit_figures: bool = True
    y0_override: float | None = None


@dataclass(frozen=True)
class ExperimentConfig:
    channel: ChannelBlock = field(default_factory=ChannelBlock)
    ga: GABlock = field(default_factory=GABlock)
    source: SourceConfig = field(default_factory=SourceConfig)
    detector: DetectorConfig = field(default_factory=DetectorConfig)
    run: RunBlock = field(default_factory=RunBlock)

    def ga_config(self) -> GAConfig:
        return self.ga.ga_config(self.channel.width, self.channel.height)

    def background_yield(self) -> float:
        if self.run.y0_override is not None:
            return self.run.y0_override
        return self.detector.background_yield

    def to_dict(self) -> dict:
        return {
            "channel": asdict(self.channel),
            "ga": asdict(self.ga),
            "source": asdict(self.source),
            "detector": asdict(self.detector),
            "run": asdict(self.run),
        }

    def with_master_seed(self, seed: int) -> "ExperimentConfig":
        """Derive all sub-seeds deterministically from one master seed."""
        return dc_replace(
            self,
            channel=dc_replace(self.channel, seed=_derive_seed(seed, _SEED_TAG_CHANNEL)),
            ga=dc_replace(self.ga, seed=_derive_seed(seed, _SEED_TAG_GA)),
            run=dc_replace(self.run, session_seed=_derive_seed(seed, _SEED_TAG_SESSION)),
        )


def _derive_seed(master: int, tag: int) -> int:
    return int(np.random.SeedSequence((int(master), tag)).generate_state(1, np.uint64)[0])


_BLOCK_TYPES = {
    "channel": ChannelBlock,
    "ga": GABlock,
    "source": SourceConfig,
    "detector": DetectorConfig,
    "run": RunBlock,
}


def config_from_dict(doc: dict) -> ExperimentConfig:
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    unknown = set(doc) - set(_BLOCK_TYPES)
    if unknown:
        raise ConfigError(f"unknown config blocks: {sorted(unknown)}")
    kwargs = {}
    for name, cls in _BLOCK_TYPES.items():
        block = doc.get(name, {})
        if not isinstance(block, dict):
            raise ConfigError(f"config block {name!r} must be an object")
        valid = {f for f in cls.__dataclass_fields__}
        bad = set(block) - valid
        if bad:
            raise ConfigError(f"unknown keys in {name!r} block: {sorted(bad)}")
        try:
            kwargs[name] = cls(**block)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid {name!r} block: {exc}") from exc
    return ExperimentConfig(**kwargs)


def load_config(path) -> ExperimentConfig:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
    return config_from_dict(doc)


# Per-preset fitness integration lengths keep the total-count SNR at the
# blank-mask level comfortably above 5 (see photons.pulses_for_fitness_snr).
# The weak-scattering preset also needs a far gentler mutation schedule: its
# blank mask is already near-coherent, per-block gains are ~0.1%, and the
# strong-scattering defaults (47 redrawn blocks per offspring) destroy more
# alignment than they can discover.
_PRESETS = {
    "grit120": {
        "channel": {"blank_loss_db": 62.1, "scattering_fraction": 1.0},
        "ga": {"generations": 3000},
        "source": {"pulses_per_evaluation": 1_000_000_000},
        "detector": {"misalignment_error": 0.016},
    },
    "grit600": {
        "channel": {"blank_loss_db": 16.8, "scattering_fraction": 0.001},
        "ga": {"generations": 7000, "r0": 0.01, "r_end": 0.0003, "decay": 400.0},
        "source": {"pulses_per_evaluation": 2_000_000_000},
        "detector": {"misalignment_error": 0.008},
    },
    "clear": {
        "channel": {"blank_loss_db": 1.9, "scattering_fraction": 0.0},
        "ga": {"generations": 0},
        "source": {"pulses_per_evaluation": 1_000_000},
        "detector": {"misalignment_error": 0.010},
    },
}


def preset_names() -> list:
    return sorted(_PRESETS)


def preset_config(name: str) -> ExperimentConfig:
    if name not in _PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {preset_names()}")
    return config_from_dict(json.loads(json.dumps(_PRESETS[name])))


def merge_config(base: ExperimentConfig, overrides: dict) -> ExperimentConfig:
    """Overlay a (possibly partial) config dict onto an existing config."""
    merged = base.to_dict()
    unknown = set(overrides) - set(_BLOCK_TYPES)
    if unknown:
        raise ConfigError(f"unknown config blocks: {sorted(unknown)}")
    for name, block in overrides.items():
        if not isinstance(block, dict):
            raise ConfigError(f"config block {name!r} must be an object")
        merged[name].update(block)
    return config_from_dict(merged)
