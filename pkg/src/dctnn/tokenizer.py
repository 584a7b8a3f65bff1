"""Image <-> token-sequence layouts and the linear token embedding.

Spatial layouts are exact bijections built from reshape/transpose/gather, so
they are bitwise invertible and differentiable on the tape. Every function
accepts either a numpy array or a :class:`Tensor` with optional leading batch
axes, and returns the same kind it was given.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .kaleidoscope import KtParams, KtStack, kt_forward, kt_inverse
from .numeric import DimensionError, Tensor, add, matmul, reshape, swapaxes, transpose, trunc_normal

PATCH = "patch"
KD = "kd"
AXIAL_ROWS = "axial_rows"
AXIAL_COLS = "axial_cols"


@dataclass(frozen=True)
class TokenKind:
    name: str
    p: int | None = None

    def __post_init__(self):
        if self.name in (PATCH, KD):
            if not self.p or self.p < 1:
                raise ValueError(f"{self.name} tokens need a positive side length p")
        elif self.name in (AXIAL_ROWS, AXIAL_COLS):
            if self.p is not None:
                raise ValueError("axial tokens take no side length")
        else:
            raise ValueError(f"unknown token kind {self.name!r}")

    @classmethod
    def patch(cls, p: int) -> TokenKind:
        return cls(PATCH, p)

    @classmethod
    def kaleidoscope(cls, p: int) -> TokenKind:
        return cls(KD, p)

    def check(self, height: int, width: int) -> None:
        if self.name in (PATCH, KD) and (height % self.p or width % self.p):
            raise DimensionError(f"token side {self.p} does not divide {height}x{width}")
        if self.name == KD and height != width:
            raise DimensionError(f"kaleidoscope tokens need a square image, got {height}x{width}")

    def n_tokens(self, height: int, width: int) -> int:
        self.check(height, width)
        if self.name in (PATCH, KD):
            return (height // self.p) * (width // self.p)
        return height if self.name == AXIAL_ROWS else width

    def token_dim(self, height: int, width: int) -> int:
        self.check(height, width)
        if self.name in (PATCH, KD):
            return self.p * self.p
        return width if self.name == AXIAL_ROWS else height

    def __str__(self) -> str:
        return self.name if self.p is None else f"{self.name}{self.p}"


AxialRows = TokenKind(AXIAL_ROWS)
AxialCols = TokenKind(AXIAL_COLS)


def _wrap(x):
    return (x, False) if isinstance(x, Tensor) else (Tensor(x, dtype=np.asarray(x).dtype), True)


def _unwrap(t: Tensor, was_array: bool):
    return np.array(t.data) if was_array else t


def patchify(img, p: int):
    """Non-overlapping ``p x p`` blocks in raster order, each flattened row-major."""
    x, arr = _wrap(img)
    H, W = x.shape[-2:]
    if H % p or W % p:
        raise DimensionError(f"patch size {p} does not divide {H}x{W}")
    lead = x.shape[:-2]
    k = len(lead)
    t = reshape(x, lead + (H // p, p, W // p, p))
    t = transpose(t, tuple(range(k)) + (k, k + 2, k + 1, k + 3))
    return _unwrap(reshape(t, lead + ((H // p) * (W // p), p * p)), arr)


def unpatchify(tokens, p: int, height: int, width: int):
    x, arr = _wrap(tokens)
    if height % p or width % p:
        raise DimensionError(f"patch size {p} does not divide {height}x{width}")
    gh, gw = height // p, width // p
    if tuple(x.shape[-2:]) != (gh * gw, p * p):
        raise DimensionError(f"token block {tuple(x.shape[-2:])} inconsistent with {height}x{width}, p={p}")
    lead = x.shape[:-2]
    k = len(lead)
    t = reshape(x, lead + (gh, gw, p, p))
    t = transpose(t, tuple(range(k)) + (k, k + 2, k + 1, k + 3))
    return _unwrap(reshape(t, lead + (height, width)), arr)


def kd_tokenize(img, p: int):
    """Token ``c = a*nu + b`` is ``img[a::nu, b::nu]`` flattened, with ``nu = H/p``."""
    x, arr = _wrap(img)
    H, W = x.shape[-2:]
    TokenKind.kaleidoscope(p).check(H, W)
    stack = kt_forward(x, KtParams(H // p, H, W))
    lead = x.shape[:-2]
    return _unwrap(reshape(stack.copies, lead + (stack.params.n_copies, p * p)), arr)


def kd_detokenize(tokens, p: int, height: int, width: int):
    x, arr = _wrap(tokens)
    TokenKind.kaleidoscope(p).check(height, width)
    params = KtParams(height // p, height, width)
    if tuple(x.shape[-2:]) != (params.n_copies, p * p):
        raise DimensionError(f"token block {tuple(x.shape[-2:])} inconsistent with {height}x{width}, p={p}")
    lead = x.shape[:-2]
    copies = reshape(x, lead + (params.n_copies, p, p))
    return _unwrap(kt_inverse(KtStack(copies, params)), arr)


def axial_tokenize(img, orientation: str):
    """Rows: token i is row i. Cols: token j is column j."""
    x, arr = _wrap(img)
    if orientation in ("rows", AXIAL_ROWS):
        return _unwrap(reshape(x, x.shape), arr)
    if orientation in ("cols", AXIAL_COLS):
        return _unwrap(swapaxes(x, -1, -2), arr)
    raise ValueError(f"orientation must be 'rows' or 'cols', got {orientation!r}")


def axial_detokenize(tokens, orientation: str):
    # both layouts are involutions
    return axial_tokenize(tokens, orientation)


def tokenize(img, kind: TokenKind):
    if kind.name == PATCH:
        return patchify(img, kind.p)
    if kind.name == KD:
        return kd_tokenize(img, kind.p)
    return axial_tokenize(img, kind.name)


def detokenize(tokens, kind: TokenKind, height: int, width: int):
    if kind.name == PATCH:
        return unpatchify(tokens, kind.p, height, width)
    if kind.name == KD:
        return kd_detokenize(tokens, kind.p, height, width)
    out = axial_detokenize(tokens, kind.name)
    if tuple(out.shape[-2:]) != (height, width):
        raise DimensionError(f"axial tokens {tuple(tokens.shape[-2:])} inconsistent with {height}x{width}")
    return out


@dataclass
class EmbeddingParams:
    projection: Tensor          # token_dim x d_model
    inverse_projection: Tensor  # d_model x token_dim
    positional: Tensor          # n_tokens x d_model


@dataclass
class TokenSequence:
    tokens: Tensor  # (..., n_tokens, d_model)
    kind: TokenKind
    geometry: tuple[int, int]

    @property
    def n_tokens(self) -> int:
        return self.tokens.shape[-2]


def init_embedding(rng: np.random.Generator, kind: TokenKind, height: int, width: int, d_model: int,
                   std: float = 0.02, zero_inverse: bool = True) -> dict[str, np.ndarray]:
    token_dim = kind.token_dim(height, width)
    n = kind.n_tokens(height, width)
    inv = np.zeros((d_model, token_dim)) if zero_inverse else trunc_normal(rng, (d_model, token_dim), std)
    return {
        "projection": trunc_normal(rng, (token_dim, d_model), std),
        "inverse_projection": inv,
        "positional": rng.normal(0.0, std, size=(n, d_model)),
    }


def embed(raw_tokens, params: EmbeddingParams, kind: TokenKind | None = None,
          geometry: tuple[int, int] | None = None) -> TokenSequence:
    raw = raw_tokens if isinstance(raw_tokens, Tensor) else Tensor(raw_tokens)
    if raw.shape[-1] != params.projection.shape[0]:
        raise DimensionError(f"token dim {raw.shape[-1]} != projection rows {params.projection.shape[0]}")
    if raw.shape[-2] != params.positional.shape[0]:
        raise DimensionError(f"{raw.shape[-2]} tokens but positional table has {params.positional.shape[0]}")
    return TokenSequence(add(matmul(raw, params.projection), params.positional), kind, geometry)


def unembed(seq: TokenSequence, params: EmbeddingParams):
    if seq.tokens.shape[-1] != params.inverse_projection.shape[0]:
        raise DimensionError(f"d_model {seq.tokens.shape[-1]} != inverse projection rows "
                             f"{params.inverse_projection.shape[0]}")
    raw = matmul(seq.tokens, params.inverse_projection)
    height, width = seq.geometry
    return detokenize(raw, seq.kind, height, width)
