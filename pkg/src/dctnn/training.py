"""Training and evaluation loops around :class:`DcTnnModel`."""
from __future__ import annotations

import csv
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import metrics
from .masks import ConfigError, SamplingMask, gaussian1d_mask, undersample
from .numeric import ParamStore, Tensor, backward, mean, sub, tabs
from .pipeline import DcConfig, DcTnnModel, build_model, dctnn_forward, save_checkpoint, zero_filled

log = logging.getLogger(__name__)

HISTORY_FIELDS = ("epoch", "train_mae", "val_mae", "val_psnr", "val_ssim")


class NonFiniteLossError(FloatingPointError):
    def __init__(self, message: str, diagnostics: dict):
        super().__init__(message)
        self.diagnostics = diagnostics


class Adam:
    def __init__(self, params: ParamStore, lr: float = 1e-4, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.m = {n: np.zeros_like(t.data) for n, t in params.items()}
        self.v = {n: np.zeros_like(t.data) for n, t in params.items()}

    def step(self) -> None:
        p = self.params
        p.step += 1
        if self.lr == 0:
            return
        c1 = 1.0 - self.b1 ** p.step
        c2 = 1.0 - self.b2 ** p.step
        for name, t in list(p.items()):
            g = p.grads[name]
            self.m[name] = self.b1 * self.m[name] + (1 - self.b1) * g
            self.v[name] = self.b2 * self.v[name] + (1 - self.b2) * g * g
            update = self.lr * (self.m[name] / c1) / (np.sqrt(self.v[name] / c2) + self.eps)
            p.assign(name, t.data - update)


@dataclass
class TrainConfig:
    model: DcConfig
    epochs: int = 30
    batch_size: int = 4
    lr: float = 1e-4
    loss: str = "mae"
    seed: int = 0
    reduction: float = 4.0
    center_fraction: float = 0.04
    n_images: int = 200
    splits: tuple[float, float, float] = (0.8, 0.1, 0.1)
    per_image_masks: bool = False
    threads: int = 1

    def __post_init__(self):
        self.splits = tuple(float(s) for s in self.splits)
        if len(self.splits) != 3 or not math.isclose(sum(self.splits), 1.0, abs_tol=1e-9):
            raise ConfigError(f"split fractions must sum to 1, got {self.splits}")
        if self.loss != "mae":
            raise ConfigError(f"unsupported loss {self.loss!r}")
        if self.epochs < 0 or self.batch_size < 1:
            raise ConfigError("epochs must be >= 0 and batch_size >= 1")
        if self.lr < 0:
            raise ConfigError("learning rate must be >= 0")


@dataclass
class Split:
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray


def split_dataset(images: np.ndarray, splits=(0.8, 0.1, 0.1)) -> Split:
    """Contiguous split in dataset order; sizes round down except for the test remainder."""
    n = len(images)
    n_train = int(round(splits[0] * n))
    n_val = int(round(splits[1] * n))
    return Split(images[:n_train], images[n_train:n_train + n_val], images[n_train + n_val:])


@dataclass
class TrainResult:
    model: DcTnnModel
    history: list[dict] = field(default_factory=list)
    best_epoch: int = 0
    mask: SamplingMask | None = None
    split: Split | None = None


def mae_loss(pred: Tensor, target) -> Tensor:
    return mean(tabs(sub(pred, target)))


def _masks_for(batch_idx, cfg: TrainConfig, width, height, shared: SamplingMask):
    if not cfg.per_image_masks:
        return shared
    # one mask per image, seeded by its index
    return np.stack([gaussian1d_mask(width, cfg.reduction, cfg.center_fraction, cfg.seed * 7919 + int(i),
                                     height).array() for i in batch_idx])


def _map(fn, items, threads: int):
    if threads <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def validate(model: DcTnnModel, images: np.ndarray, mask, batch_size: int = 8, threads: int = 1) -> dict:
    if len(images) == 0:
        return dict(mae=math.nan, psnr=math.nan, ssim=math.nan)
    recons = reconstruct_batch(model, images, mask, batch_size)
    scores = _map(lambda i: (metrics.mae(recons[i], images[i]), metrics.psnr(recons[i], images[i]),
                             metrics.ssim(recons[i], images[i])), range(len(images)), threads)
    arr = np.array(scores)
    return dict(mae=float(arr[:, 0].mean()), psnr=float(arr[:, 1].mean()), ssim=float(arr[:, 2].mean()))


def reconstruct_batch(model: DcTnnModel, images: np.ndarray, mask, batch_size: int = 8) -> np.ndarray:
    out = []
    for s in range(0, len(images), batch_size):
        y = undersample(images[s:s + batch_size], mask)
        out.append(np.array(dctnn_forward(model, y, mask).data))
    return np.concatenate(out) if out else np.zeros((0,) + tuple(images.shape[1:]))


def write_history(history: list[dict], path: str | os.PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=HISTORY_FIELDS)
        writer.writeheader()
        for row in history:
            writer.writerow({k: row[k] for k in HISTORY_FIELDS})
    return path


def read_history(path: str | os.PathLike) -> list[dict]:
    with Path(path).open() as fh:
        return [{k: (int(v) if k == "epoch" else float(v)) for k, v in row.items()} for row in csv.DictReader(fh)]


def train(cfg: TrainConfig, images: np.ndarray, out_dir: str | os.PathLike | None = None,
          model: DcTnnModel | None = None) -> TrainResult:
    """Minimize MAE(dctnn_forward(y), x) with Adam.

    ``images`` is the whole dataset ``(N, H, W)``; it is split by
    ``cfg.splits``. A single mask drawn from ``cfg.seed`` is shared by every
    image unless ``cfg.per_image_masks`` is set. When ``out_dir`` is given the
    best-validation checkpoint is kept in ``out_dir/checkpoint`` (the initial
    model counts as epoch 0) and the history in ``out_dir/history.csv``.
    """
    images = np.asarray(images, dtype=np.float64)
    if images.ndim != 3 or len(images) == 0:
        raise ConfigError("dataset must be a nonempty (N, H, W) stack")
    H, W = images.shape[1:]
    if (H, W) != (cfg.model.height, cfg.model.width):
        raise ConfigError(f"dataset images {H}x{W} do not match model geometry "
                          f"{cfg.model.height}x{cfg.model.width}")
    split = split_dataset(images, cfg.splits)
    if len(split.train) == 0:
        raise ConfigError("training split is empty")
    mask = gaussian1d_mask(W, cfg.reduction, cfg.center_fraction, cfg.seed, H)
    if model is None:
        model = build_model(cfg.model, cfg.seed, mask)
    else:
        model.mask = mask
    opt = Adam(model.params, cfg.lr)
    rng = np.random.default_rng(cfg.seed + 1)
    out = Path(out_dir) if out_dir is not None else None
    ckpt = out / "checkpoint" if out is not None else None
    if ckpt is not None:
        save_checkpoint(model, ckpt)

    history: list[dict] = []
    best_val, best_epoch = math.inf, 0
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(len(split.train))
        losses = []
        for s in range(0, len(order), cfg.batch_size):
            idx = order[s:s + cfg.batch_size]
            x = split.train[idx]
            m = _masks_for(idx, cfg, W, H, mask)
            y = undersample(x, m)
            model.params.zero_grad()
            loss = mae_loss(dctnn_forward(model, y, m), x)
            value = float(loss.data)
            if not np.isfinite(value):
                diag = dict(epoch=epoch, batch=s // cfg.batch_size, loss=value, step=model.params.step,
                            lambdas=model.lambdas(), checkpoint=str(ckpt) if ckpt else None)
                raise NonFiniteLossError(f"non-finite loss at epoch {epoch}", diag)
            backward(loss, model.params)
            opt.step()
            losses.append(value * len(idx))
        train_mae = float(np.sum(losses) / len(split.train))
        val = validate(model, split.val, mask, threads=cfg.threads)
        row = dict(epoch=epoch, train_mae=train_mae, val_mae=val["mae"], val_psnr=val["psnr"], val_ssim=val["ssim"])
        history.append(row)
        log.info("epoch %d train_mae=%.5f val_mae=%.5f val_psnr=%.2f", epoch, train_mae, val["mae"], val["psnr"])
        score = val["mae"] if np.isfinite(val["mae"]) else train_mae
        if score < best_val:
            best_val, best_epoch = score, epoch
            if ckpt is not None:
                save_checkpoint(model, ckpt)
    if out is not None:
        write_history(history, out / "history.csv")
    return TrainResult(model, history, best_epoch, mask, split)


def evaluate(model: DcTnnModel, images: np.ndarray, mask: SamplingMask | None = None, batch_size: int = 8,
             threads: int = 1, predictions: np.ndarray | None = None) -> dict:
    """Mean PSNR/SSIM/MAE over ``images`` plus the zero-filled baseline.

    ``predictions`` bypasses the model, which lets ground truth be scored
    against itself.
    """
    images = np.asarray(images, dtype=np.float64)
    mask = model.mask if mask is None and model is not None else mask
    if mask is None:
        raise ConfigError("evaluation needs a sampling mask")
    if model is not None and tuple(images.shape[1:]) != model.geometry:
        raise ConfigError(f"test images {images.shape[1:]} do not match model geometry {model.geometry}")
    if predictions is None:
        predictions = reconstruct_batch(model, images, mask, batch_size)
    zf = np.stack([zero_filled(undersample(img, mask), mask) for img in images])

    def score(i):
        return (metrics.psnr(predictions[i], images[i]), metrics.ssim(predictions[i], images[i]),
                metrics.mae(predictions[i], images[i]), metrics.psnr(zf[i], images[i]),
                metrics.ssim(zf[i], images[i]))

    arr = np.array(_map(score, range(len(images)), threads), dtype=np.float64)
    return dict(R=mask.reduction, n_images=len(images), psnr=float(arr[:, 0].mean()),
                ssim=float(arr[:, 1].mean()), mae=float(arr[:, 2].mean()),
                zf_psnr=float(arr[:, 3].mean()), zf_ssim=float(arr[:, 4].mean()),
                n_params=model.params.count() if model is not None else 0)


METRIC_FIELDS = ("method", "blocks", "R", "psnr", "ssim", "zf_psnr", "zf_ssim", "mae", "n_images", "n_params")


def write_metrics(rows: list[dict], path: str | os.PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=METRIC_FIELDS, extrasaction="ignore")
        writer.writeheader()
        writer.writerows(rows)
    return path


def smoothed(values, window: int = 5) -> np.ndarray:
    """Trailing moving average; the first ``window - 1`` entries average what is available."""
    v = np.asarray(values, dtype=np.float64)
    c = np.cumsum(np.insert(v, 0, 0.0))
    out = np.empty_like(v)
    for i in range(len(v)):
        lo = max(0, i + 1 - window)
        out[i] = (c[i + 1] - c[lo]) / (i + 1 - lo)
    return out


def desk_config(kind: str = "kd", **overrides) -> DcConfig:
    """The 64x64 desk-scale layout: n_d=2, n_t=1, d_model=64, p=8."""
    kinds = {"kd": ("kd",), "patch": ("patch",), "axial": ("axial",), "ax-kd-p": ("axial", "kd", "patch")}[kind]
    base = dict(n_d=3 if kind == "ax-kd-p" else 2, kinds=kinds, height=64, width=64, p=8, d_model=64,
                n_t=1, n_heads=8)
    base.update(overrides)
    return DcConfig(**base)
