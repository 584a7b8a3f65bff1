"""Transformer denoiser blocks: tokenize -> embed -> encoder layers -> unembed -> residual add."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .numeric import (DimensionError, ParamStore, Tensor, add, gather, gelu, layer_norm, matmul, mul,
                      reshape, softmax, swapaxes, trunc_normal)
from .tokenizer import AxialCols, AxialRows, EmbeddingParams, TokenKind, TokenSequence, embed, init_embedding, \
    tokenize, unembed

BLOCK_KINDS = ("patch", "kd", "axial")

LAYER_FIELDS = ("wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo",
                "ln1_g", "ln1_b", "ln2_g", "ln2_b", "w1", "b1", "w2", "b2")


@dataclass
class EncoderLayerParams:
    wq: Tensor
    bq: Tensor
    wk: Tensor
    bk: Tensor
    wv: Tensor
    bv: Tensor
    wo: Tensor
    bo: Tensor
    ln1_g: Tensor
    ln1_b: Tensor
    ln2_g: Tensor
    ln2_b: Tensor
    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor
    n_heads: int = 8

    @classmethod
    def from_store(cls, store: ParamStore, prefix: str, n_heads: int) -> EncoderLayerParams:
        return cls(**{f: store[f"{prefix}.{f}"] for f in LAYER_FIELDS}, n_heads=n_heads)


def init_encoder_layer(rng: np.random.Generator, d_model: int, d_ff: int, mode: str = "identity",
                       std: float = 0.02) -> dict[str, np.ndarray]:
    """Weights for one pre-norm encoder layer.

    ``mode="identity"`` zeros both sublayer output projections so the layer is
    an exact residual identity; ``mode="random"`` fills every tensor (biases and
    layer-norm affine included) with small noise, which tests use to reach all
    parameters with a nonzero gradient.
    """
    d = d_model
    p = {
        "wq": trunc_normal(rng, (d, d), std), "bq": np.zeros(d),
        "wk": trunc_normal(rng, (d, d), std), "bk": np.zeros(d),
        "wv": trunc_normal(rng, (d, d), std), "bv": np.zeros(d),
        "wo": np.zeros((d, d)), "bo": np.zeros(d),
        "ln1_g": np.ones(d), "ln1_b": np.zeros(d),
        "ln2_g": np.ones(d), "ln2_b": np.zeros(d),
        "w1": trunc_normal(rng, (d, d_ff), std), "b1": np.zeros(d_ff),
        "w2": np.zeros((d_ff, d)), "b2": np.zeros(d),
    }
    if mode == "random":
        for name, value in p.items():
            scale = 0.3 if name.startswith("w") else 0.1
            p[name] = value + rng.normal(0.0, scale, size=value.shape)
    elif mode != "identity":
        raise ValueError(f"unknown init mode {mode!r}")
    return p


def mha(seq, params: EncoderLayerParams, return_attention: bool = False):
    """Full bidirectional multi-head scaled dot-product attention over ``(..., n, d_model)``."""
    x = seq if isinstance(seq, Tensor) else Tensor(seq)
    d = x.shape[-1]
    h = params.n_heads
    if d % h:
        raise DimensionError(f"d_model={d} not divisible by n_heads={h}")
    if params.wq.shape != (d, d):
        raise DimensionError(f"projection shape {params.wq.shape} does not match d_model={d}")
    dh = d // h
    lead = x.shape[:-1]

    def heads(w, b):
        t = reshape(add(matmul(x, w), b), lead + (h, dh))
        return swapaxes(t, -2, -3)  # (..., h, n, dh)

    q, k, v = heads(params.wq, params.bq), heads(params.wk, params.bk), heads(params.wv, params.bv)
    scores = mul(matmul(q, swapaxes(k, -1, -2)), 1.0 / math.sqrt(dh))
    attn = softmax(scores, axis=-1)
    ctx = reshape(swapaxes(matmul(attn, v), -2, -3), lead + (d,))
    out = add(matmul(ctx, params.wo), params.bo)
    return (out, attn) if return_attention else out


def feed_forward(x: Tensor, params: EncoderLayerParams) -> Tensor:
    return add(matmul(gelu(add(matmul(x, params.w1), params.b1)), params.w2), params.b2)


def encoder_layer(seq, params: EncoderLayerParams, eps: float = 1e-5) -> Tensor:
    x = seq if isinstance(seq, Tensor) else Tensor(seq)
    x = add(x, mha(layer_norm(x, params.ln1_g, params.ln1_b, eps), params))
    return add(x, feed_forward(layer_norm(x, params.ln2_g, params.ln2_b, eps), params))


@dataclass(frozen=True)
class BlockSpec:
    """Geometry and width of one TNN denoiser block.

    ``kind`` is ``"patch"``, ``"kd"`` or ``"axial"``. An axial block runs a rows
    pass and then a cols pass, each with ``ceil(n_t / 2)`` encoder layers and
    its own embedding, so it spends the same layer budget as a patch block.
    """
    kind: str
    height: int
    width: int
    d_model: int
    n_t: int = 2
    p: int | None = None
    n_heads: int = 8
    d_ff: int | None = None

    def __post_init__(self):
        if self.kind not in BLOCK_KINDS:
            raise ValueError(f"unknown block kind {self.kind!r}")
        if self.n_t < 1:
            raise ValueError("n_t must be >= 1")
        if self.d_model % self.n_heads:
            raise DimensionError(f"d_model={self.d_model} not divisible by n_heads={self.n_heads}")
        for kind, _ in self.passes():
            kind.check(self.height, self.width)

    @property
    def ff_dim(self) -> int:
        return self.d_ff if self.d_ff is not None else 4 * self.d_model

    def passes(self) -> list[tuple[TokenKind, int]]:
        if self.kind == "axial":
            per = math.ceil(self.n_t / 2)
            return [(AxialRows, per), (AxialCols, per)]
        kind = TokenKind.patch(self.p) if self.kind == "patch" else TokenKind.kaleidoscope(self.p)
        return [(kind, self.n_t)]

    def manifest(self) -> str:
        return (f"kind={self.kind} n_t={self.n_t} d_model={self.d_model} p={self.p} "
                f"H={self.height} W={self.width} n_heads={self.n_heads} d_ff={self.ff_dim}")


_PASS_NAMES = {"axial_rows": "rows", "axial_cols": "cols", "patch": "tokens", "kd": "tokens"}


@dataclass
class TnnBlock:
    spec: BlockSpec
    prefix: str
    names: list[str] = field(default_factory=list)

    def _pass_prefix(self, kind: TokenKind) -> str:
        return f"{self.prefix}.{_PASS_NAMES[kind.name]}"

    def init(self, store: ParamStore, rng: np.random.Generator, mode: str = "identity") -> None:
        s = self.spec
        for kind, n_layers in s.passes():
            pp = self._pass_prefix(kind)
            emb = init_embedding(rng, kind, s.height, s.width, s.d_model, zero_inverse=(mode == "identity"))
            for name, value in emb.items():
                self.names.append(store.add(f"{pp}.embed.{name}", value).name)
            for i in range(n_layers):
                for name, value in init_encoder_layer(rng, s.d_model, s.ff_dim, mode).items():
                    self.names.append(store.add(f"{pp}.layer{i}.{name}", value).name)

    def embedding(self, store: ParamStore, kind: TokenKind) -> EmbeddingParams:
        pp = self._pass_prefix(kind)
        return EmbeddingParams(store[f"{pp}.embed.projection"], store[f"{pp}.embed.inverse_projection"],
                               store[f"{pp}.embed.positional"])

    def layers(self, store: ParamStore, kind: TokenKind, n_layers: int) -> list[EncoderLayerParams]:
        pp = self._pass_prefix(kind)
        return [EncoderLayerParams.from_store(store, f"{pp}.layer{i}", self.spec.n_heads) for i in range(n_layers)]

    def __call__(self, img, store: ParamStore) -> Tensor:
        return tnn_denoise(img, self, store)


def tnn_denoise(img, block: TnnBlock, store: ParamStore, token_order: np.ndarray | None = None) -> Tensor:
    """Residual transformer denoising of ``(..., H, W)`` images.

    ``token_order`` optionally permutes the token sequence before the encoder
    and restores it afterwards (positional table permuted alongside); it exists
    to probe permutation equivariance.
    """
    x = img if isinstance(img, Tensor) else Tensor(img)
    s = block.spec
    if tuple(x.shape[-2:]) != (s.height, s.width):
        raise DimensionError(f"image {tuple(x.shape[-2:])} does not match block geometry {s.height}x{s.width}")
    for kind, n_layers in s.passes():
        emb = block.embedding(store, kind)
        raw = tokenize(x, kind)
        if token_order is not None:
            raw = gather(raw, token_order, axis=-2)
            emb = EmbeddingParams(emb.projection, emb.inverse_projection, gather(emb.positional, token_order, 0))
        seq = embed(raw, emb, kind, (s.height, s.width))
        tokens = seq.tokens
        for layer in block.layers(store, kind, n_layers):
            tokens = encoder_layer(tokens, layer)
        if token_order is not None:
            tokens = gather(tokens, np.argsort(token_order), axis=-2)
        x = add(x, unembed(TokenSequence(tokens, kind, (s.height, s.width)), emb))
    return x


def param_count(model) -> int:
    """Number of learnable scalars in a store, block, model, or mapping of arrays."""
    if model is None:
        return 0
    if isinstance(model, ParamStore):
        return model.count()
    if hasattr(model, "params") and isinstance(model.params, ParamStore):
        return model.params.count()
    if isinstance(model, dict):
        return int(sum(np.asarray(v).size for v in model.values()))
    raise TypeError(f"cannot count parameters of {type(model).__name__}")


def block_param_count(spec: BlockSpec) -> int:
    """Closed-form count for one block, without allocating it."""
    d, f = spec.d_model, spec.ff_dim
    layer = 4 * (d * d + d) + (d * f + f) + (f * d + d) + 4 * d
    total = 0
    for kind, n_layers in spec.passes():
        td = kind.token_dim(spec.height, spec.width)
        n = kind.n_tokens(spec.height, spec.width)
        total += 2 * td * d + n * d + n_layers * layer
    return total
