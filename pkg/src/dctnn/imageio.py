"""PNG and tensor-file I/O for images, datasets and plots."""
from __future__ import annotations

import os
from pathlib import Path

import numpy as np
from PIL import Image

from . import tensorio


def fit_to(img: np.ndarray, height: int, width: int) -> np.ndarray:
    """Center-crop or center-pad (with zeros) to ``height x width``."""
    out = np.zeros((height, width), dtype=img.dtype)
    h, w = img.shape
    sy, sx = max(0, (h - height) // 2), max(0, (w - width) // 2)
    dy, dx = max(0, (height - h) // 2), max(0, (width - w) // 2)
    ch, cw = min(h, height), min(w, width)
    out[dy:dy + ch, dx:dx + cw] = img[sy:sy + ch, sx:sx + cw]
    return out


def read_png(path, size: tuple[int, int] | None = None) -> np.ndarray:
    """8-bit grayscale (RGB is converted) scaled to [0, 1]."""
    with Image.open(path) as im:
        arr = np.asarray(im.convert("L"), dtype=np.float64) / 255.0
    return fit_to(arr, *size) if size is not None else arr


def write_png(path, img: np.ndarray) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arr = np.clip(np.rint(np.asarray(img, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(arr, mode="L").save(path, format="PNG", optimize=False)
    return path


def read_image(path, size: tuple[int, int] | None = None) -> np.ndarray:
    path = Path(path)
    if path.suffix.lower() == ".png":
        return read_png(path, size)
    arr = np.asarray(tensorio.load(path), dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"{path} holds a rank-{arr.ndim} tensor, expected an image")
    return fit_to(arr, *size) if size is not None else arr


def read_dataset(path, size: tuple[int, int] | None = None) -> np.ndarray:
    """A ``(N, H, W)`` tensor file, or a directory of ``.ktns``/``.png`` images in name order."""
    path = Path(path)
    if path.is_dir():
        files = sorted(p for p in path.iterdir() if p.suffix.lower() in (".ktns", ".png"))
        if not files:
            raise FileNotFoundError(f"no .ktns or .png images in {path}")
        return np.stack([read_image(f, size) for f in files])
    arr = np.asarray(tensorio.load(path), dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[None]
    if arr.ndim != 3:
        raise ValueError(f"{path}: expected (N, H, W), got shape {arr.shape}")
    if size is not None:
        arr = np.stack([fit_to(a, *size) for a in arr])
    return arr


def write_dataset(images: np.ndarray, directory, prefix: str = "image") -> list[Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    return [tensorio.save(directory / f"{prefix}_{i:04d}.ktns", img) for i, img in enumerate(images)]


def plot_history(history: list[dict], path: str | os.PathLike, title: str = "validation MAE") -> Path:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig, ax = plt.subplots(figsize=(5, 3.5), dpi=100)
    epochs = [r["epoch"] for r in history]
    ax.plot(epochs, [r["train_mae"] for r in history], label="train")
    ax.plot(epochs, [r["val_mae"] for r in history], label="validation")
    ax.set_xlabel("epoch")
    ax.set_ylabel("MAE")
    ax.set_title(title)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, format="png", metadata={"Software": None})
    plt.close(fig)
    return path
