"""1D Gaussian random column masks and k-space simulation."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numeric import DimensionError


class ConfigError(ValueError):
    """Raised for infeasible or inconsistent configuration values."""


@dataclass(frozen=True)
class SamplingMask:
    """Column mask in the unshifted DFT layout (column 0 is the DC frequency).

    Every row of the expanded ``height x width`` mask equals ``columns``.
    """
    columns: np.ndarray
    height: int
    reduction: float
    seed: int | None = None
    center_fraction: float = 0.0

    def __post_init__(self):
        cols = np.asarray(self.columns, dtype=bool)
        cols.flags.writeable = False
        object.__setattr__(self, "columns", cols)
        if cols.ndim != 1:
            raise DimensionError("mask columns must be one-dimensional")

    @property
    def width(self) -> int:
        return self.columns.size

    @property
    def shape(self) -> tuple[int, int]:
        return self.height, self.width

    @property
    def n_sampled(self) -> int:
        return int(self.columns.sum())

    @property
    def achieved_reduction(self) -> float:
        return self.width / self.n_sampled if self.n_sampled else float("inf")

    def array(self) -> np.ndarray:
        return np.broadcast_to(self.columns, self.shape).copy()

    def centered(self) -> np.ndarray:
        """Expanded mask with the DC column moved to the middle, for display."""
        return np.fft.fftshift(self.array(), axes=-1)

    @classmethod
    def full(cls, height: int, width: int) -> SamplingMask:
        return cls(np.ones(width, dtype=bool), height, 1.0)

    @classmethod
    def empty(cls, height: int, width: int) -> SamplingMask:
        return cls(np.zeros(width, dtype=bool), height, float("inf"))


def center_count(width: int, center_fraction: float) -> int:
    return int(round(center_fraction * width))


def gaussian_weights(width: int) -> np.ndarray:
    """Unnormalized sampling weight of each column in centered layout (s = W/6)."""
    d = np.arange(width) - width // 2
    s = width / 6.0
    return np.exp(-(d ** 2) / (2.0 * s * s))


def center_columns(width: int, n_center: int) -> np.ndarray:
    c0 = width // 2
    start = c0 - n_center // 2
    return np.arange(start, start + n_center)


def gaussian1d_mask(width: int, reduction: float, center_fraction: float = 0.04, seed: int = 0,
                    height: int | None = None) -> SamplingMask:
    """Draw ``round(W/R)`` fully sampled columns.

    The ``round(center_fraction * W)`` columns around DC are always kept; the
    rest are drawn without replacement with probability proportional to
    ``exp(-d**2 / (2 s**2))``, ``d`` the distance from DC and ``s = W/6``.
    """
    height = width if height is None else height
    if width < 1:
        raise ConfigError("mask width must be positive")
    if reduction < 1:
        raise ConfigError(f"reduction factor must be >= 1, got {reduction}")
    if reduction == 1:
        return SamplingMask(np.ones(width, dtype=bool), height, 1.0, seed, center_fraction)
    n_total = int(round(width / reduction))
    n_center = center_count(width, center_fraction)
    if n_total < 1:
        raise ConfigError(f"R={reduction} leaves no sampled columns out of {width}")
    if n_center > n_total:
        raise ConfigError(f"center band of {n_center} columns exceeds the {n_total} allowed at R={reduction}")
    centered = np.zeros(width, dtype=bool)
    centered[center_columns(width, n_center)] = True
    pool = np.flatnonzero(~centered)
    w = gaussian_weights(width)[pool]
    rng = np.random.default_rng(seed)
    picks = rng.choice(pool, size=n_total - n_center, replace=False, p=w / w.sum())
    centered[picks] = True
    return SamplingMask(np.fft.ifftshift(centered), height, float(reduction), seed, center_fraction)


def _mask_array(mask, shape) -> np.ndarray:
    m = mask.array() if isinstance(mask, SamplingMask) else np.asarray(mask, dtype=bool)
    if m.shape[-2:] != tuple(shape[-2:]):
        raise DimensionError(f"mask shape {m.shape} does not match image {tuple(shape[-2:])}")
    return m


def undersample(img, mask) -> np.ndarray:
    """``mask * dft2(img)``, zero outside the sampled set."""
    img = np.asarray(img)
    m = _mask_array(mask, img.shape)
    return np.where(m, np.fft.fft2(img, norm="ortho"), 0.0)
