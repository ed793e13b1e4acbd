"""Run configuration: defaults, TOML overlay, and the resolved-config echo.

Every command that trains or evaluates writes the fully resolved config
next to its outputs, so a run is reproducible from its artifacts alone.
Unknown sections or keys in a config file are rejected outright.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

from . import toml_io
from .errors import UsageError
from .losses import LossWeights
from .models import GeneratorConfig, UNetConfig
from .training import TrainConfig, desk_scale_config


@dataclass
class RunConfig:
    """TrainConfig plus the data-pipeline knobs owned by the CLI."""

    train: TrainConfig
    crop_size: int = 224
    split_seed: int = 0


def _to_sections(cfg: RunConfig) -> dict:
    t = cfg.train
    return {
        "data": {"crop_size": cfg.crop_size, "split_seed": cfg.split_seed},
        "train": {
            "lr_g": t.lr_g,
            "lr_h": t.lr_h,
            "lr_d": t.lr_d,
            "lr_seg": t.lr_seg,
            "beta1": t.beta1,
            "beta2": t.beta2,
            "batch_size": t.batch_size,
            "epochs_synthesis": t.epochs_synthesis,
            "epochs_joint": t.epochs_joint,
            "seed": t.seed,
            "num_patches": t.num_patches,
            "detach_synth_for_seg": t.detach_synth_for_seg,
        },
        "weights": {
            "use_identity": t.weights.use_identity,
            "lambda_x": t.weights.lambda_x,
            "lambda_y": t.weights.lambda_y,
            "tau": t.weights.tau,
            "lam": t.weights.lam,
        },
        "generator": {
            "base_width": t.generator.base_width,
            "disc_width": t.generator.disc_width,
            "n_blocks": t.generator.n_blocks,
            "nce_layers": list(t.generator.nce_layers),
            "embed_dim": t.generator.embed_dim,
        },
        "segmentor": {
            "base_width": t.segmentor.base_width,
            "depth": t.segmentor.depth,
        },
    }


def _from_sections(sections: dict) -> RunConfig:
    train_kw = dict(sections["train"])
    weights = LossWeights(**sections["weights"])
    generator = GeneratorConfig(
        **{**sections["generator"], "nce_layers": tuple(sections["generator"]["nce_layers"])}
    )
    segmentor = UNetConfig(**sections["segmentor"])
    train = TrainConfig(
        **train_kw, weights=weights, generator=generator, segmentor=segmentor
    )
    return RunConfig(
        train=train,
        crop_size=sections["data"]["crop_size"],
        split_seed=sections["data"]["split_seed"],
    )


def default_run_config(desk_scale: bool = False) -> RunConfig:
    train = desk_scale_config() if desk_scale else TrainConfig()
    return RunConfig(train=train)


def load_run_config(path: str | Path | None, desk_scale: bool = False) -> RunConfig:
    """Defaults (full or desk profile) overlaid with an optional TOML file."""
    base = _to_sections(default_run_config(desk_scale))
    if path is not None:
        overlay = toml_io.load(path)
        for section, entries in overlay.items():
            if section not in base:
                raise UsageError(f"unknown config section [{section}]")
            if not isinstance(entries, dict):
                raise UsageError(f"top-level keys are not allowed: {section!r}")
            for key, value in entries.items():
                if key not in base[section]:
                    raise UsageError(f"unknown config key {section}.{key}")
                base[section][key] = value
        # A flipped use_identity re-derives the lambdas unless set explicitly.
        touched = set(overlay.get("weights", {}))
        if "use_identity" in touched:
            for lam_key in ("lambda_x", "lambda_y"):
                if lam_key not in touched:
                    base["weights"][lam_key] = None
    return _from_sections(base)


def write_run_config(cfg: RunConfig, path: str | Path) -> None:
    toml_io.dump(_to_sections(cfg), path)


def read_run_config(path: str | Path) -> RunConfig:
    """Read back a resolved config echo (strict: all keys must be present)."""
    return _from_sections(toml_io.load(path))
