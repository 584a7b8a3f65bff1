"""INI-style run configuration for ``dctnn train``.

Example::

    [model]
    preset = kd4          ; optional, fields below override it
    kinds = kd
    n_d = 2
    height = 64
    width = 64
    p = 8
    d_model = 64
    n_t = 1

    [data]
    dataset = phantoms    ; or a path to a .ktns stack / directory of images
    n_images = 200
    phantom_seed = 0
    reduction = 4
    center_fraction = 0.04

    [train]
    epochs = 30
    batch_size = 4
    lr = 1e-3
    seed = 0
    splits = 0.8, 0.1, 0.1

    [paths]
    out = runs/kd
"""
from __future__ import annotations

import configparser
import os
from dataclasses import dataclass, field, fields
from pathlib import Path

from .masks import ConfigError
from .pipeline import DcConfig, preset
from .training import TrainConfig

_MODEL_KEYS = {f.name for f in fields(DcConfig)} | {"preset"}
_DATA_KEYS = {"dataset", "n_images", "phantom_seed", "reduction", "center_fraction", "per_image_masks"}
_TRAIN_KEYS = {"epochs", "batch_size", "lr", "seed", "splits", "loss"}
_PATH_KEYS = {"out"}
SECTIONS = {"model": _MODEL_KEYS, "data": _DATA_KEYS, "train": _TRAIN_KEYS, "paths": _PATH_KEYS}

OUTPUT_ENV = "DCTNN_OUTPUT_DIR"


@dataclass
class RunConfig:
    model: DcConfig
    train: TrainConfig
    dataset: str = "phantoms"
    phantom_seed: int = 0
    out: Path = field(default_factory=lambda: Path(os.environ.get(OUTPUT_ENV, "runs")) / "train")


def _num(text: str):
    text = text.strip()
    if text.lower() in ("none", ""):
        return None
    if text.lower() in ("true", "false", "yes", "no", "on", "off"):
        return text.lower() in ("true", "yes", "on")
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        return text


def parse_sections(text: str) -> dict[str, dict[str, str]]:
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"), interpolation=None)
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    out: dict[str, dict[str, str]] = {}
    for section in cp.sections():
        if section not in SECTIONS:
            raise ConfigError(f"unknown section [{section}]")
        unknown = set(cp[section]) - SECTIONS[section]
        if unknown:
            raise ConfigError(f"unknown keys in [{section}]: {', '.join(sorted(unknown))}")
        out[section] = dict(cp[section])
    return out


def build_run_config(sections: dict[str, dict[str, str]], overrides: dict | None = None) -> RunConfig:
    """Assemble configs; ``overrides`` maps ``section.key`` to already-typed values."""
    sections = {k: dict(v) for k, v in sections.items()}
    for dotted, value in (overrides or {}).items():
        if value is None:
            continue
        section, key = dotted.split(".", 1)
        if key not in SECTIONS[section]:
            raise ConfigError(f"unknown override {dotted}")
        sections.setdefault(section, {})[key] = str(value)

    m = {k: _num(v) for k, v in sections.get("model", {}).items()}
    if "kinds" in m:
        m["kinds"] = tuple(s.strip() for s in str(m["kinds"]).split(",") if s.strip())
    name = m.pop("preset", None)
    try:
        model = preset(name, **m) if name else DcConfig(**{"n_d": 1, "kinds": ("kd",), **m})
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc

    d = {k: _num(v) for k, v in sections.get("data", {}).items()}
    t = {k: _num(v) for k, v in sections.get("train", {}).items()}
    if "splits" in t:
        t["splits"] = tuple(float(s) for s in str(sections["train"]["splits"]).split(","))
    tc = TrainConfig(model=model, reduction=d.get("reduction", 4.0), center_fraction=d.get("center_fraction", 0.04),
                     n_images=d.get("n_images", 200), per_image_masks=bool(d.get("per_image_masks", False)), **t)
    run = RunConfig(model=model, train=tc, dataset=str(d.get("dataset", "phantoms")),
                    phantom_seed=d.get("phantom_seed", 0))
    if "out" in sections.get("paths", {}):
        run.out = Path(sections["paths"]["out"])
    return run


def load_run_config(path, overrides: dict | None = None) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file {path} not found")
    return build_run_config(parse_sections(path.read_text()), overrides)


def validate_paths(run: RunConfig) -> None:
    """Fail fast before any long computation."""
    if run.dataset != "phantoms" and not Path(run.dataset).exists():
        raise ConfigError(f"dataset {run.dataset} does not exist")
    parent = run.out
    while not parent.exists():
        parent = parent.parent
    if not os.access(parent, os.W_OK):
        raise ConfigError(f"output directory {run.out} is not writable")
