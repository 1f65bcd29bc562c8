"""Random-transmission-matrix model of a strongly scattering quantum channel.

The channel couples each block of the transmitter's phase mask to the
receiver's single-mode fiber through one row of complex field coefficients
``t_j``, and to an output-plane pixel grid through further rows.  The row is
drawn as a ballistic/scattered mixture

    t_j = sqrt(1 - s) * a_j + sqrt(s) * g_j

where ``a_j`` is a constant-phase deterministic profile, ``g_j`` are i.i.d.
circular complex Gaussians and ``s`` is the scattering fraction (1 = fully
developed speckle).  The common scale is calibrated so the *expected*
blank-mask transmittance equals the configured loss target; individual
realizations fluctuate around it.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .masks import DEFAULT_QUANT_STEP, PhaseMask, phase_levels, wrap_phase

#: Output-plane pixel grid (width, height); the fiber mode maps to the
#: center pixel.
DEFAULT_OUTPUT_SHAPE = (64, 64)

CHANNEL_FORMAT = "scatterkey-channel 1"

# Sub-stream tags so the fiber row and the output-plane rows are drawn from
# independent, reproducible generators for one channel seed.
_STREAM_FIBER = 0
_STREAM_OUTPUT = 1

_OUTPUT_CHUNK_ROWS = 256


class ChannelDimensionError(ValueError):
    """Mask and channel block grids do not match."""


@dataclass(frozen=True)
class ChannelCalibration:
    """Loss target for the blank (unmodulated) mask.

    Attributes:
        blank_loss_db: target loss in dB; expected blank-mask transmittance
            is 10**(-blank_loss_db/10).
        num_blocks: number of independently controlled mask blocks.
    """

    blank_loss_db: float
    num_blocks: int

    def __post_init__(self):
        if self.blank_loss_db < 0:
            raise ValueError(f"blank_loss_db must be >= 0, got {self.blank_loss_db}")
        if self.num_blocks < 1:
            raise ValueError(f"num_blocks must be >= 1, got {self.num_blocks}")

    @property
    def blank_transmittance(self) -> float:
        return 10.0 ** (-self.blank_loss_db / 10.0)


@dataclass(frozen=True)
class ScatteringChannel:
    """Immutable realization of the scattering channel.

    ``fiber_row`` holds the complex couplings from each mask block to the
    fiber mode.  Output-plane rows are not stored; they are regenerated
    deterministically from ``seed`` on demand (see ``output_intensity``).
    """

    calibration: ChannelCalibration
    scattering_fraction: float
    seed: int
    width: int
    height: int
    fiber_row: np.ndarray
    rescaled: bool = False
    scale_factor: float = 1.0
    output_shape: tuple[int, int] = DEFAULT_OUTPUT_SHAPE

    def __post_init__(self):
        row = np.asarray(self.fiber_row, dtype=np.complex128)
        if row.shape != (self.width * self.height,):
            raise ValueError(
                f"fiber_row length {row.shape} does not match grid "
                f"{self.width}x{self.height}"
            )
        row.flags.writeable = False
        object.__setattr__(self, "fiber_row", row)
        object.__setattr__(self, "output_shape", tuple(self.output_shape))

    @property
    def n_blocks(self) -> int:
        return self.width * self.height

    @property
    def max_transmittance(self) -> float:
        """Transmittance of the phase-conjugate mask, (sum |t_j|)**2: the
        global optimum over all phase-only masks."""
        return float(np.abs(self.fiber_row).sum() ** 2)

    @property
    def n_output_pixels(self) -> int:
        return self.output_shape[0] * self.output_shape[1]

    @property
    def fiber_pixel(self) -> int:
        """Flat index of the output-plane pixel carrying the fiber mode."""
        w, h = self.output_shape
        return (h // 2) * w + (w // 2)

    def _check_mask(self, mask: PhaseMask) -> None:
        if (mask.width, mask.height) != (self.width, self.height):
            raise ChannelDimensionError(
                f"mask {mask.width}x{mask.height} does not match channel "
                f"{self.width}x{self.height}"
            )


def _grid_for_blocks(num_blocks: int) -> tuple[int, int]:
    root = round(num_blocks ** 0.5)
    if root * root == num_blocks:
        return root, root
    return num_blocks, 1


def generate_channel(
    calibration: ChannelCalibration,
    scattering_fraction: float,
    seed: int,
    grid: tuple[int, int] | None = None,
    output_shape: tuple[int, int] = DEFAULT_OUTPUT_SHAPE,
) -> ScatteringChannel:
    """Draw a channel realization.

    The fiber row is ``sqrt(1-s)*a + sqrt(s)*g`` with the scale chosen so the
    expected blank-mask transmittance equals the calibration target.  If the
    draw violates the physical bound (sum |t_j|)**2 <= 1 it is rescaled onto
    the bound and flagged.

    Identical (calibration, scattering_fraction, seed) always produce a
    bit-identical channel.
    """
    s = float(scattering_fraction)
    if not 0.0 <= s <= 1.0:
        raise ValueError(f"scattering_fraction must be in [0, 1], got {s}")
    n = calibration.num_blocks
    if grid is None:
        grid = _grid_for_blocks(n)
    width, height = grid
    if width * height != n:
        raise ValueError(f"grid {width}x{height} does not hold {n} blocks")

    t0 = calibration.blank_transmittance
    ballistic = np.full(n, np.sqrt(t0) / n, dtype=np.complex128)
    rng = np.random.default_rng(np.random.SeedSequence((int(seed), _STREAM_FIBER)))
    sigma = np.sqrt(t0 / n)
    gauss = (rng.standard_normal(n) + 1j * rng.standard_normal(n)) * (sigma / np.sqrt(2.0))
    row = np.sqrt(1.0 - s) * ballistic + np.sqrt(s) * gauss

    rescaled = False
    scale = 1.0
    amp_sum = np.abs(row).sum()
    if amp_sum ** 2 > 1.0:
        scale = 1.0 / amp_sum
        row = row * scale
        rescaled = True

    return ScatteringChannel(
        calibration=calibration,
        scattering_fraction=s,
        seed=int(seed),
        width=width,
        height=height,
        fiber_row=row,
        rescaled=rescaled,
        scale_factor=scale,
        output_shape=tuple(output_shape),
    )


def coupled_efficiency(channel: ScatteringChannel, mask: PhaseMask) -> float:
    """Transmittance into the fiber mode for a candidate mask:
    |sum_j t_j * exp(i*phi_j)|**2."""
    channel._check_mask(mask)
    field = np.sum(channel.fiber_row * np.exp(1j * mask.phases))
    return float(np.abs(field) ** 2)


def conjugate_mask(channel: ScatteringChannel) -> PhaseMask:
    """Phase-conjugate mask, phi_j = -arg(t_j) mod 2*pi.

    Aligns every phasor, so it attains ``channel.max_transmittance`` exactly
    and dominates every other mask.
    """
    phases = wrap_phase(-np.angle(channel.fiber_row))
    return PhaseMask(channel.width, channel.height, phases)


def _background_scale(channel: ScatteringChannel) -> float:
    """Per-block std dev of the scattered field feeding non-fiber pixels."""
    cal = channel.calibration
    sigma = np.sqrt(channel.scattering_fraction * cal.blank_transmittance / cal.num_blocks)
    return float(sigma * channel.scale_factor)


def output_intensity(channel: ScatteringChannel, mask: PhaseMask) -> np.ndarray:
    """Intensity map over the output-plane pixel grid for a mask.

    Returns an array of shape (height, width) of the output grid.  The
    designated fiber pixel equals ``coupled_efficiency(channel, mask)``;
    every other pixel sees only the scattered field, regenerated
    deterministically from the channel seed.
    """
    channel._check_mask(mask)
    n = channel.n_blocks
    n_pix = channel.n_output_pixels
    phasor = np.exp(1j * mask.phases)
    sigma = _background_scale(channel)

    rng = np.random.default_rng(np.random.SeedSequence((channel.seed, _STREAM_OUTPUT)))
    intensities = np.empty(n_pix, dtype=np.float64)
    done = 0
    while done < n_pix:
        count = min(_OUTPUT_CHUNK_ROWS, n_pix - done)
        rows = (rng.standard_normal((count, n)) + 1j * rng.standard_normal((count, n))) * (
            sigma / np.sqrt(2.0)
        )
        intensities[done : done + count] = np.abs(rows @ phasor) ** 2
        done += count

    intensities[channel.fiber_pixel] = coupled_efficiency(channel, mask)
    w, h = channel.output_shape
    return intensities.reshape(h, w)


def loss_db(transmittance: float) -> float:
    """Loss in decibels, -10*log10(transmittance)."""
    if transmittance <= 0:
        raise ValueError(f"transmittance must be positive, got {transmittance}")
    if transmittance > 1:
        raise ValueError(f"transmittance must be <= 1, got {transmittance}")
    return float(-10.0 * np.log10(transmittance))


def enhancement(eta_after: float, eta_before: float) -> float:
    """Transmittance ratio after/before an optimization."""
    if eta_before <= 0:
        raise ValueError(f"eta_before must be positive, got {eta_before}")
    return float(eta_after / eta_before)


def quantized_optimum_factor(levels: int = phase_levels(DEFAULT_QUANT_STEP)) -> float:
    """Expected efficiency ratio of the level-quantized conjugate mask to the
    continuous one, (sin(pi/L)/(pi/L))**2 for large block counts."""
    x = np.pi / levels
    return float((np.sin(x) / x) ** 2)


def ideal_enhancement(num_blocks: int) -> float:
    """Ensemble-mean conjugate-mask enhancement over fully developed speckle:
    pi/4*(N-1) + 1 for N controlled blocks."""
    return float(np.pi / 4.0 * (num_blocks - 1) + 1.0)


def save_channel(channel: ScatteringChannel, path, include_coefficients: bool = True) -> None:
    """Write the channel to a versioned JSON file.

    The file always carries (calibration, scattering fraction, seed), which
    suffice to regenerate the channel exactly; with
    ``include_coefficients=True`` the fiber-row coefficients are embedded as
    well for replay without the generator.
    """
    doc = {
        "format": CHANNEL_FORMAT,
        "blank_loss_db": channel.calibration.blank_loss_db,
        "num_blocks": channel.calibration.num_blocks,
        "scattering_fraction": channel.scattering_fraction,
        "seed": channel.seed,
        "grid": [channel.width, channel.height],
        "output_shape": list(channel.output_shape),
        "rescaled": channel.rescaled,
    }
    if include_coefficients:
        doc["fiber_row_re"] = [float(v) for v in channel.fiber_row.real]
        doc["fiber_row_im"] = [float(v) for v in channel.fiber_row.imag]
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True)
        fh.write("\n")


def load_channel(path) -> ScatteringChannel:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("format") != CHANNEL_FORMAT:
        raise ValueError(f"unrecognized channel file format: {doc.get('format')!r}")
    calibration = ChannelCalibration(doc["blank_loss_db"], doc["num_blocks"])
    regenerated = generate_channel(
        calibration,
        doc["scattering_fraction"],
        doc["seed"],
        grid=tuple(doc["grid"]),
        output_shape=tuple(doc["output_shape"]),
    )
    if "fiber_row_re" in doc:
        row = np.array(doc["fiber_row_re"]) + 1j * np.array(doc["fiber_row_im"])
        if not np.allclose(row, regenerated.fiber_row, rtol=0, atol=1e-15):
            raise ValueError("stored coefficients disagree with regeneration; file corrupt?")
    return regenerated
