"""Synthetic piecewise-constant phantoms standing in for brain slices."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class Phantom:
    image: np.ndarray
    seed: int
    shapes: list[dict] = field(default_factory=list)
    bias: dict = field(default_factory=dict)


def _ellipse(yy, xx, cy, cx, ry, rx, theta):
    c, s = np.cos(theta), np.sin(theta)
    u = (xx - cx) * c + (yy - cy) * s
    v = -(xx - cx) * s + (yy - cy) * c
    return (u / rx) ** 2 + (v / ry) ** 2 <= 1.0


def _rectangle(yy, xx, cy, cx, ry, rx, theta):
    c, s = np.cos(theta), np.sin(theta)
    u = (xx - cx) * c + (yy - cy) * s
    v = -(xx - cx) * s + (yy - cy) * c
    return (np.abs(u) <= rx) & (np.abs(v) <= ry)


def phantom_generate(height: int, width: int, seed: int) -> Phantom:
    """5 to 12 ellipses/rectangles on a head-like support, times a smooth bias field.

    Coordinates are normalized to [-1, 1] so shapes scale with the grid.
    """
    if height < 16 or width < 16:
        raise ValueError("phantoms need H, W >= 16")
    rng = np.random.default_rng(seed)
    yy, xx = np.meshgrid(np.linspace(-1, 1, height), np.linspace(-1, 1, width), indexing="ij")
    img = np.zeros((height, width))
    shapes = []

    # outer support first, so inner structures sit inside a "head"
    head = dict(kind="ellipse", cy=rng.uniform(-0.05, 0.05), cx=rng.uniform(-0.05, 0.05),
                ry=rng.uniform(0.75, 0.9), rx=rng.uniform(0.6, 0.8), theta=rng.uniform(-0.2, 0.2),
                value=rng.uniform(0.5, 0.8))
    n_shapes = int(rng.integers(5, 13))
    for i in range(n_shapes):
        if i == 0:
            spec = head
        else:
            spec = dict(kind="ellipse" if rng.random() < 0.7 else "rectangle",
                        cy=head["cy"] + rng.uniform(-0.55, 0.55) * head["ry"],
                        cx=head["cx"] + rng.uniform(-0.55, 0.55) * head["rx"],
                        ry=rng.uniform(0.05, 0.35), rx=rng.uniform(0.05, 0.35),
                        theta=rng.uniform(0, np.pi), value=rng.uniform(0.0, 1.0))
        draw = _ellipse if spec["kind"] == "ellipse" else _rectangle
        region = draw(yy, xx, spec["cy"], spec["cx"], spec["ry"], spec["rx"], spec["theta"])
        if i > 0:
            region &= _ellipse(yy, xx, head["cy"], head["cx"], head["ry"], head["rx"], head["theta"])
        img[region] = spec["value"]
        shapes.append(spec)

    coef = rng.uniform(-0.15, 0.15, size=5)
    bias = 1.0 + coef[0] * xx + coef[1] * yy + coef[2] * xx * yy + coef[3] * xx ** 2 + coef[4] * yy ** 2
    img = img * bias
    peak = img.max()
    if peak > 0:
        img = img / peak
    img = np.clip(img, 0.0, 1.0)
    return Phantom(img, seed, shapes, dict(coefficients=coef.tolist()))


def phantom_dataset(n: int, height: int, width: int, seed: int = 0) -> np.ndarray:
    """``(n, H, W)`` stack; image ``i`` uses seed ``seed * 100003 + i``."""
    return np.stack([phantom_generate(height, width, seed * 100003 + i).image for i in range(n)])
