"""Deep cascade of transformer denoisers and data-consistency blocks."""
from __future__ import annotations

import math
import os
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np

from . import tensorio
from .denoiser import BLOCK_KINDS, BlockSpec, TnnBlock, tnn_denoise
from .masks import ConfigError, SamplingMask
from .numeric import (DimensionError, ParamStore, Tensor, add, as_tensor, dft2, div, exp, idft2, mul, real)

LEARNABLE = "learnable"
NOISELESS = "noiseless"


@dataclass(frozen=True)
class DcConfig:
    """Cascade layout and block hyperparameters.

    ``kinds`` is cycled when it is shorter than ``n_d``. ``axial_d_model`` and
    ``axial_d_ff`` default to the patch/KD values when unset.
    """
    n_d: int
    kinds: tuple[str, ...]
    height: int = 320
    width: int = 320
    p: int = 16
    d_model: int = 256
    axial_d_model: int | None = None
    n_t: int = 2
    n_heads: int = 8
    d_ff: int | None = None
    axial_d_ff: int | None = None
    lambda_mode: str = LEARNABLE
    lambda0: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "kinds", tuple(self.kinds))
        if self.n_d < 1:
            raise ConfigError("n_d must be >= 1")
        if not self.kinds:
            raise ConfigError("kind list must be nonempty")
        bad = [k for k in self.kinds if k not in BLOCK_KINDS]
        if bad:
            raise ConfigError(f"unknown block kinds {bad}; expected any of {BLOCK_KINDS}")
        if self.lambda_mode not in (LEARNABLE, NOISELESS):
            raise ConfigError(f"lambda_mode must be {LEARNABLE!r} or {NOISELESS!r}")
        if self.lambda_mode == LEARNABLE and not self.lambda0 > 0:
            raise ConfigError("lambda0 must be positive")

    def stage_kinds(self) -> list[str]:
        return [self.kinds[i % len(self.kinds)] for i in range(self.n_d)]

    def block_spec(self, kind: str) -> BlockSpec:
        if kind == "axial":
            d = self.axial_d_model or self.d_model
            ff = self.axial_d_ff if self.axial_d_ff is not None else (
                None if self.d_ff is None else self.d_ff * d // self.d_model)
            return BlockSpec("axial", self.height, self.width, d, self.n_t, None, self.n_heads, ff)
        return BlockSpec(kind, self.height, self.width, self.d_model, self.n_t, self.p, self.n_heads, self.d_ff)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["kinds"] = ",".join(self.kinds)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> DcConfig:
        d = dict(d)
        if isinstance(d.get("kinds"), str):
            d["kinds"] = tuple(k.strip() for k in d["kinds"].split(",") if k.strip())
        return cls(**d)


# Widths at the published scale. The encoder feed-forward width is unpublished;
# 16x d_model lands the parameter totals at the reported order of magnitude.
_PAPER = dict(height=320, width=320, p=16, d_model=256, axial_d_model=320, n_t=2, n_heads=8,
              d_ff=16 * 256, axial_d_ff=16 * 320)

PRESETS: dict[str, DcConfig] = {
    "patch4": DcConfig(4, ("patch",), **_PAPER),
    "kd4": DcConfig(4, ("kd",), **_PAPER),
    "axial3": DcConfig(3, ("axial",), **_PAPER),
    "ax-kd-p": DcConfig(3, ("axial", "kd", "patch"), **_PAPER),
}


def preset(name: str, **overrides) -> DcConfig:
    try:
        base = PRESETS[name]
    except KeyError:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
    return replace(base, **overrides)


def _mask_float(mask, shape) -> np.ndarray:
    m = mask.array() if isinstance(mask, SamplingMask) else np.asarray(mask, dtype=bool)
    if m.shape[-2:] != tuple(shape[-2:]):
        raise DimensionError(f"mask {m.shape} does not match image {tuple(shape[-2:])}")
    return m.astype(np.float64)


def dc_kspace(xhat_k, y, mask, lam=None) -> Tensor:
    """Blend predicted coefficients with measurements on the sampled set.

    Off the mask the prediction is kept. On the mask the result is
    ``(X + lam*y) / (1 + lam)``, or ``y`` itself when ``lam`` is None.
    """
    X = as_tensor(xhat_k)
    y = as_tensor(y)
    if X.shape[-2:] != y.shape[-2:]:
        raise DimensionError(f"k-space shapes differ: {X.shape} vs {y.shape}")
    m = _mask_float(mask, X.shape)
    keep = mul(X, 1.0 - m)
    if lam is None:
        return add(keep, mul(y, m))
    lam = as_tensor(lam)
    blended = div(add(X, mul(lam, y)), add(lam, 1.0))
    return add(keep, mul(blended, m))


def mirror(a: np.ndarray) -> np.ndarray:
    """``a(-k)`` on the DFT grid, over the last two axes."""
    return np.roll(np.flip(a, (-2, -1)), 1, axis=(-2, -1))


def hermitian_completion(y, mask) -> tuple[np.ndarray, np.ndarray]:
    """Measurements and sampled set as seen by a real-valued image.

    The spectrum of a real image satisfies ``Y(-k) = conj(Y(k))``, so a sampled
    coefficient also fixes its mirror. Returns ``(y_eff, m_eff)`` where
    ``m_eff = m | m(-k)`` and ``y_eff`` fills mirrored coefficients with
    ``conj(y(-k))``; measured values take precedence.
    """
    y = np.asarray(y.data if isinstance(y, Tensor) else y)
    m = _mask_float(mask, y.shape) > 0
    m_mirror = mirror(m)
    m = np.broadcast_to(m, y.shape)
    y_eff = np.where(m, y, np.where(np.broadcast_to(m_mirror, y.shape), np.conj(mirror(y)), 0.0))
    return y_eff, (m | m_mirror)


def dc_apply(xhat, y, mask, lam=None) -> Tensor:
    """Data consistency in image space for real images.

    Runs ``dc_kspace`` on the Hermitian completion of ``(y, mask)`` so the
    blended spectrum stays conjugate-symmetric and its inverse DFT is real.
    """
    x = as_tensor(xhat)
    if x.shape[-2:] != np.shape(y.data if isinstance(y, Tensor) else y)[-2:]:
        raise DimensionError("image and k-space shapes differ")
    y_eff, m_eff = hermitian_completion(y, mask)
    return real(idft2(dc_kspace(dft2(x), y_eff, m_eff, lam)))


def zero_filled(y, mask=None) -> np.ndarray:
    """Real image whose spectrum is the (Hermitian-completed) measurement, zero elsewhere."""
    y = np.asarray(y.data if isinstance(y, Tensor) else y)
    if mask is not None:
        y, _ = hermitian_completion(y, mask)
    return np.real(np.fft.ifft2(y, norm="ortho"))


class DcTnnModel:
    def __init__(self, config: DcConfig, params: ParamStore, blocks: list[TnnBlock],
                 mask: SamplingMask | None = None, seed: int | None = None):
        self.config = config
        self.params = params
        self.blocks = blocks
        self.mask = mask
        self.seed = seed

    @property
    def geometry(self) -> tuple[int, int]:
        return self.config.height, self.config.width

    def lam(self, n: int) -> Tensor | None:
        if self.config.lambda_mode == NOISELESS:
            return None
        return exp(self.params[f"stage{n}.log_lambda"])

    def lambdas(self) -> list[float]:
        if self.config.lambda_mode == NOISELESS:
            return [math.inf] * self.config.n_d
        return [float(np.exp(self.params[f"stage{n}.log_lambda"].data)) for n in range(self.config.n_d)]

    def __call__(self, y, mask=None) -> Tensor:
        return dctnn_forward(self, y, mask)

    def reconstruct(self, y, mask=None) -> np.ndarray:
        return np.array(dctnn_forward(self, y, mask).data)


def build_model(config: DcConfig, seed: int = 0, mask: SamplingMask | None = None,
                init_mode: str = "identity") -> DcTnnModel:
    """Deterministic construction from ``seed``; stage n gets its own block and lambda."""
    rng = np.random.default_rng(seed)
    store = ParamStore()
    blocks = []
    for n, kind in enumerate(config.stage_kinds()):
        block = TnnBlock(config.block_spec(kind), f"stage{n}.{kind}")
        block.init(store, rng, init_mode)
        blocks.append(block)
        if config.lambda_mode == LEARNABLE:
            store.add(f"stage{n}.log_lambda", np.asarray(math.log(config.lambda0)))
    if mask is not None and mask.shape != (config.height, config.width):
        raise DimensionError(f"mask {mask.shape} does not match model geometry {config.height}x{config.width}")
    return DcTnnModel(config, store, blocks, mask, seed)


def dctnn_forward(model: DcTnnModel, y, mask=None) -> Tensor:
    mask = model.mask if mask is None else mask
    if mask is None:
        raise ConfigError("no sampling mask given and the model carries none")
    y_arr = np.asarray(y.data if isinstance(y, Tensor) else y)
    if y_arr.shape[-2:] != model.geometry:
        raise DimensionError(f"k-space {y_arr.shape[-2:]} does not match model geometry {model.geometry}")
    x = Tensor(zero_filled(y_arr, mask))
    for n, block in enumerate(model.blocks):
        x = dc_apply(tnn_denoise(x, block, model.params), y_arr, mask, model.lam(n))
    return x


# -- checkpoints ---------------------------------------------------------------

MANIFEST = "manifest.txt"


class CheckpointError(RuntimeError):
    def __init__(self, message: str, diff: list[str] | None = None):
        super().__init__(message)
        self.diff = diff or []


def _manifest_lines(model: DcTnnModel) -> list[str]:
    lines = ["format=dctnn-checkpoint-1"]
    lines += [f"config.{k}={v}" for k, v in model.config.to_dict().items()]
    lines.append(f"seed={model.seed}")
    for n, block in enumerate(model.blocks):
        lines.append(f"block.{n}={block.spec.manifest()}")
    if model.mask is not None:
        m = model.mask
        lines.append(f"mask=height={m.height} width={m.width} R={m.reduction} seed={m.seed} "
                     f"center_fraction={m.center_fraction} sampled={m.n_sampled}")
    for name, t in model.params.items():
        lines.append(f"tensor.{name}={'x'.join(map(str, t.shape)) or 'scalar'}")
    return lines


def _tensor_file(root: Path, name: str) -> Path:
    return root / "tensors" / f"{name}.ktns"


def save_checkpoint(model: DcTnnModel, path: str | os.PathLike) -> Path:
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    for name, t in model.params.items():
        tensorio.save(_tensor_file(root, name), t.data)
    if model.mask is not None:
        tensorio.save(root / "mask.ktns", model.mask.columns)
    (root / MANIFEST).write_text("\n".join(_manifest_lines(model)) + "\n")
    return root


def _parse_value(text: str):
    if text == "None":
        return None
    for conv in (int, float):
        try:
            return conv(text)
        except ValueError:
            pass
    return text


def _parse_mask_line(text: str) -> dict:
    return {k: v for k, v in (item.split("=", 1) for item in text.split())}


def load_checkpoint(path: str | os.PathLike) -> DcTnnModel:
    root = Path(path)
    mf = root / MANIFEST
    if not mf.is_file():
        raise CheckpointError(f"no {MANIFEST} in {root}")
    entries = dict(line.split("=", 1) for line in mf.read_text().splitlines() if "=" in line)
    cfg = {k[len("config."):]: _parse_value(v) for k, v in entries.items() if k.startswith("config.")}
    try:
        config = DcConfig.from_dict(cfg)
    except (TypeError, ConfigError) as exc:
        raise CheckpointError(f"bad config in manifest: {exc}") from exc
    seed = _parse_value(entries.get("seed", "None"))
    mask = None
    if "mask" in entries:
        info = _parse_mask_line(entries["mask"])
        try:
            cols = tensorio.load(root / "mask.ktns").astype(bool)
        except (OSError, tensorio.TensorFormatError) as exc:
            raise CheckpointError(f"mask tensor unreadable: {exc}") from exc
        mask = SamplingMask(cols, int(info["height"]), float(info["R"]), _parse_value(info["seed"]),
                            float(info["center_fraction"]))
    model = build_model(config, seed or 0, mask)
    arch = ("block.", "tensor.")
    expected = {k: v for k, v in entries.items() if k.startswith(arch)}
    actual = {k: v for k, v in (line.split("=", 1) for line in _manifest_lines(model)) if k.startswith(arch)}
    diff = [f"- {k}={expected[k]}" for k in sorted(expected) if actual.get(k) != expected[k]]
    diff += [f"+ {k}={actual[k]}" for k in sorted(actual) if expected.get(k) != actual[k]]
    if diff:
        raise CheckpointError("checkpoint manifest does not match the architecture it describes", diff)
    for name, t in list(model.params.items()):
        try:
            value = tensorio.load(_tensor_file(root, name))
        except (OSError, tensorio.TensorFormatError) as exc:
            raise CheckpointError(f"tensor {name} unreadable: {exc}", [f"- tensor.{name}"]) from exc
        if value.shape != t.shape:
            raise CheckpointError(f"tensor {name} has shape {value.shape}, manifest says {t.shape}",
                                  [f"- tensor.{name}={'x'.join(map(str, t.shape))}",
                                   f"+ tensor.{name}={'x'.join(map(str, value.shape))}"])
        model.params.assign(name, value)
    return model
