"""Quantized phase masks driving the spatial phase modulator.

A mask is a rectangular grid of blocks, each carrying one phase in
[0, 2*pi).  The modulator hardware only realizes a discrete set of phase
levels, so masks produced by the optimizer always live on the lattice
``{0, step, 2*step, ...}`` with ``step`` dividing 2*pi exactly.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

TWO_PI = 2.0 * np.pi

#: Phase precision of the reference modulator: 0.2*pi, i.e. 10 levels.
DEFAULT_QUANT_STEP = 0.2 * np.pi

DEFAULT_WIDTH = 60
DEFAULT_HEIGHT = 60


def phase_levels(step: float) -> int:
    """Number of discrete levels for a quantization step, validating that
    ``step`` divides 2*pi into an integer count."""
    if step <= 0:
        raise ValueError(f"quantization step must be positive, got {step}")
    levels = TWO_PI / step
    rounded = round(levels)
    if rounded < 1 or abs(levels - rounded) > 1e-9 * rounded:
        raise ValueError(f"step {step} does not divide 2*pi into an integer number of levels")
    return rounded


@dataclass(frozen=True)
class PhaseMask:
    """A width x height grid of block phases, flattened row-major.

    Attributes:
        width: number of blocks along x.
        height: number of blocks along y.
        phases: float array of length width*height, each value in [0, 2*pi).
    """

    width: int
    height: int
    phases: np.ndarray = field(repr=False)

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError(f"mask dimensions must be positive, got {self.width}x{self.height}")
        phases = np.asarray(self.phases, dtype=np.float64)
        if phases.ndim == 2:
            if phases.shape != (self.height, self.width):
                raise ValueError(
                    f"2-d phase array shape {phases.shape} does not match "
                    f"(height, width)=({self.height}, {self.width})"
                )
            phases = phases.ravel()
        if phases.shape != (self.width * self.height,):
            raise ValueError(
                f"expected {self.width * self.height} phases, got {phases.shape}"
            )
        if np.any(phases < 0.0) or np.any(phases >= TWO_PI):
            raise ValueError("phases must lie in [0, 2*pi)")
        phases.flags.writeable = False
        object.__setattr__(self, "phases", phases)

    @property
    def n_blocks(self) -> int:
        return self.width * self.height

    @property
    def shape(self) -> tuple[int, int]:
        return (self.width, self.height)

    def grid(self) -> np.ndarray:
        """Phases reshaped to (height, width)."""
        return self.phases.reshape(self.height, self.width)

    @classmethod
    def blank(cls, width: int = DEFAULT_WIDTH, height: int = DEFAULT_HEIGHT) -> "PhaseMask":
        """The all-zero mask, equivalent to no modulation."""
        return cls(width, height, np.zeros(width * height))

    @classmethod
    def random(
        cls,
        width: int,
        height: int,
        rng: np.random.Generator,
        step: float = DEFAULT_QUANT_STEP,
    ) -> "PhaseMask":
        """A mask with every block drawn uniformly from the quantized levels."""
        levels = phase_levels(step)
        idx = rng.integers(0, levels, size=width * height)
        return cls(width, height, idx * step)

    def with_phases(self, phases: np.ndarray) -> "PhaseMask":
        return PhaseMask(self.width, self.height, phases)

    def is_on_lattice(self, step: float = DEFAULT_QUANT_STEP, tol: float = 1e-9) -> bool:
        levels = phase_levels(step)
        idx = self.phases / step
        near = np.round(idx)
        return bool(np.all(np.abs(idx - near) <= tol) and np.all(near <= levels))

    def level_indices(self, step: float = DEFAULT_QUANT_STEP) -> np.ndarray:
        """Integer level index per block; raises if the mask is off-lattice."""
        levels = phase_levels(step)
        idx = np.round(self.phases / step).astype(np.int64) % levels
        if not np.allclose(idx * step, np.where(self.phases >= TWO_PI - step / 2, 0.0, self.phases), atol=1e-9):
            raise ValueError("mask phases are not aligned to the quantization lattice")
        return idx


def quantize(mask: PhaseMask, step: float = DEFAULT_QUANT_STEP) -> PhaseMask:
    """Round every phase to the nearest multiple of ``step``, wrapping 2*pi to 0.

    Exact mid-points round up, so 0.31*pi with a 0.2*pi step lands on 0.4*pi.
    """
    levels = phase_levels(step)
    idx = np.floor(mask.phases / step + 0.5).astype(np.int64) % levels
    return mask.with_phases(idx * step)


def wrap_phase(phases: np.ndarray) -> np.ndarray:
    """Map arbitrary phases into [0, 2*pi)."""
    out = np.mod(phases, TWO_PI)
    # mod can return 2*pi for inputs within one ulp below a multiple of 2*pi
    out[out >= TWO_PI] = 0.0
    return out


def mask_to_text(mask: PhaseMask, step: float = DEFAULT_QUANT_STEP) -> str:
    """Serialize a mask as structured text.

    When the mask sits on the quantization lattice the file stores integer
    level indices; otherwise it stores raw phases in radians.
    """
    lines = ["scatterkey-mask 1", f"width {mask.width}", f"height {mask.height}"]
    if mask.is_on_lattice(step):
        lines.append(f"levels {phase_levels(step)}")
        grid = mask.level_indices(step).reshape(mask.height, mask.width)
        for row in grid:
            lines.append(" ".join(str(v) for v in row))
    else:
        lines.append("radians")
        grid = mask.grid()
        for row in grid:
            lines.append(" ".join(repr(float(v)) for v in row))
    return "\n".join(lines) + "\n"


def mask_from_text(text: str) -> PhaseMask:
    lines = [ln.strip() for ln in text.strip().splitlines() if ln.strip()]
    if not lines or not lines[0].startswith("scatterkey-mask"):
        raise ValueError("not a scatterkey mask file")
    header = {}
    body_start = 1
    for i, ln in enumerate(lines[1:], start=1):
        parts = ln.split()
        if parts[0] in ("width", "height", "levels"):
            header[parts[0]] = int(parts[1])
        elif parts[0] == "radians":
            header["radians"] = True
        else:
            body_start = i
            break
    else:
        raise ValueError("mask file has no data rows")
    width, height = header["width"], header["height"]
    rows = []
    for ln in lines[body_start:]:
        rows.extend(ln.split())
    values = np.array([float(v) for v in rows])
    if values.size != width * height:
        raise ValueError(f"expected {width * height} values, found {values.size}")
    if header.get("radians"):
        return PhaseMask(width, height, values)
    levels = header["levels"]
    step = TWO_PI / levels
    return PhaseMask(width, height, (values.astype(np.int64) % levels) * step)
