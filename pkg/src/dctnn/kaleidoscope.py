"""Kaleidoscope transform with smear factor 1.

A ``nu``-KT splits an ``H x W`` image into ``nu**2`` low-resolution copies of
size ``(H/nu) x (W/nu)``. Copy ``c = a*nu + b`` holds ``img[a::nu, b::nu]``.
Both directions are pure gathers, so round trips are bitwise exact.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .numeric import DimensionError, Tensor, gather, reshape


@dataclass(frozen=True)
class KtParams:
    nu: int
    height: int
    width: int
    sigma: int = 1

    def __post_init__(self):
        if self.sigma != 1:
            raise ValueError("only smear factor sigma=1 is supported")
        if self.nu < 1:
            raise DimensionError(f"nu must be positive, got {self.nu}")
        if self.height % self.nu or self.width % self.nu:
            raise DimensionError(f"nu={self.nu} does not divide image size {self.height}x{self.width}")

    @property
    def copy_shape(self) -> tuple[int, int]:
        return self.height // self.nu, self.width // self.nu

    @property
    def n_copies(self) -> int:
        return self.nu * self.nu


@dataclass(frozen=True)
class KtStack:
    copies: np.ndarray | Tensor  # (..., nu*nu, H/nu, W/nu)
    params: KtParams


@lru_cache(maxsize=64)
def _index_map(nu: int, height: int, width: int) -> np.ndarray:
    h, w = height // nu, width // nu
    a, b, i, j = np.meshgrid(np.arange(nu), np.arange(nu), np.arange(h), np.arange(w), indexing="ij")
    perm = ((i * nu + a) * width + (j * nu + b)).reshape(-1)
    perm.flags.writeable = False
    return perm


def kt_index_map(params: KtParams) -> np.ndarray:
    """Flat source-pixel index for every element of the flattened stack."""
    return _index_map(params.nu, params.height, params.width)


@lru_cache(maxsize=64)
def _inverse_map(nu: int, height: int, width: int) -> np.ndarray:
    inv = np.argsort(_index_map(nu, height, width))
    inv.flags.writeable = False
    return inv


def _check_image(shape, params: KtParams):
    if tuple(shape[-2:]) != (params.height, params.width):
        raise DimensionError(f"image shape {tuple(shape[-2:])} does not match KT params "
                             f"{params.height}x{params.width}")


def kt_forward(img, params: KtParams) -> KtStack:
    _check_image(img.shape, params)
    lead = tuple(img.shape[:-2])
    out_shape = lead + (params.n_copies,) + params.copy_shape
    perm = kt_index_map(params)
    if isinstance(img, Tensor):
        flat = reshape(img, lead + (-1,))
        return KtStack(reshape(gather(flat, perm, axis=-1), out_shape), params)
    img = np.asarray(img)
    flat = img.reshape(lead + (-1,))
    return KtStack(np.take(flat, perm, axis=-1).reshape(out_shape), params)


def kt_inverse(stack: KtStack):
    params = stack.params
    copies = stack.copies
    expected = (params.n_copies,) + params.copy_shape
    if tuple(copies.shape[-3:]) != expected:
        raise DimensionError(f"stack shape {tuple(copies.shape[-3:])} inconsistent with {expected}")
    lead = tuple(copies.shape[:-3])
    inv = _inverse_map(params.nu, params.height, params.width)
    out_shape = lead + (params.height, params.width)
    if isinstance(copies, Tensor):
        flat = reshape(copies, lead + (-1,))
        return reshape(gather(flat, inv, axis=-1), out_shape)
    flat = np.asarray(copies).reshape(lead + (-1,))
    return np.take(flat, inv, axis=-1).reshape(out_shape)


def mosaic(stack: KtStack, gap: int = 0, fill: float = 1.0) -> np.ndarray:
    """Tile the copies into a ``nu x nu`` grid in copy order (raster over offsets)."""
    copies = np.asarray(stack.copies.data if isinstance(stack.copies, Tensor) else stack.copies)
    if copies.ndim != 3:
        raise DimensionError("mosaic expects a single (unbatched) stack")
    nu = stack.params.nu
    h, w = stack.params.copy_shape
    out = np.full((nu * h + (nu - 1) * gap, nu * w + (nu - 1) * gap), fill, dtype=copies.dtype)
    for c in range(nu * nu):
        a, b = divmod(c, nu)
        r0, c0 = a * (h + gap), b * (w + gap)
        out[r0:r0 + h, c0:c0 + w] = copies[c]
    return out
