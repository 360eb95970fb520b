"""Run configuration: the adaptation knobs plus dataset/artifact paths.

A run config is a flat JSON document. Unknown keys are rejected so typos
fail loudly; every default is printable via the CLI.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path

from .adapt import AdaptationConfig


class ConfigError(ValueError):
    """Malformed run configuration."""


@dataclass
class RunConfig:
    # adaptation
    lr: float = 5e-3
    lambdas: tuple[float, ...] = (0.2, 0.4, 0.6, 0.8)
    beta: float = 0.1
    k: int = 5
    w_global: float = 1.0
    w_local: float = 1.0
    w_style: float = 1.0
    mode: str = "episodic"      # episodic | online | both
    seed: int = 0
    full_style_lambda: float = 1.0
    update: bool = True
    # source training
    epochs: int = 25
    train_lr: float = 0.02
    train_batch: int = 64
    augment: bool = True
    # style bank (desk-scale subsample of the training set)
    bank_size: int = 32
    # paths
    train_images: str | None = None
    train_labels: str | None = None
    val_images: str | None = None
    val_labels: str | None = None
    test_images: str | None = None
    test_labels: str | None = None
    bank_dir: str | None = None
    checkpoint: str | None = None
    output_dir: str | None = None

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    @classmethod
    def from_dict(cls, raw: dict) -> "RunConfig":
        known = set(cls.field_names())
        unknown = sorted(set(raw) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        cfg = cls(**raw)
        if isinstance(cfg.lambdas, list):
            cfg.lambdas = tuple(cfg.lambdas)
        if cfg.mode not in ("online", "episodic", "both"):
            raise ConfigError(f"mode must be online, episodic or both, got {cfg.mode!r}")
        return cfg

    @classmethod
    def from_file(cls, path: str | Path) -> "RunConfig":
        try:
            raw = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
        if not isinstance(raw, dict):
            raise ConfigError(f"{path}: config must be a JSON object")
        return cls.from_dict(raw)

    def override(self, **updates) -> "RunConfig":
        """New config with the non-None updates applied."""
        data = asdict(self)
        for key, value in updates.items():
            if value is not None:
                if key not in data:
                    raise ConfigError(f"unknown config key: {key}")
                data[key] = value
        return RunConfig.from_dict(data)

    def adaptation(self, mode: str | None = None) -> AdaptationConfig:
        """AdaptationConfig view; ``mode`` resolves a 'both' run to one leg."""
        resolved = mode or self.mode
        if resolved == "both":
            raise ConfigError("adaptation() needs a concrete mode when mode='both'")
        return AdaptationConfig(
            lr=self.lr, lambdas=tuple(self.lambdas), beta=self.beta, k=self.k,
            w_global=self.w_global, w_local=self.w_local, w_style=self.w_style,
            mode=resolved, seed=self.seed, full_style_lambda=self.full_style_lambda,
            update=self.update).validate()

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, indent=1)
