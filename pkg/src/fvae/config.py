"""Flat ``key = value`` run configs.

One entry per line, ``#`` starts a comment, dotted keys group related
settings (``model.flow_layers = 8``). Unknown keys are rejected by name.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path

from .model import MODE_ALIASES, MODES, ModelConfig
from .training import TrainConfig


class ConfigError(ValueError):
    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


DATA_KINDS = ("two_moons", "gaussian_ring", "shapes", "file")

# key -> (type, default)
SCHEMA: dict[str, tuple[type, object]] = {
    "mode": (str, "fvae"),
    "data.kind": (str, "two_moons"),
    "data.n": (int, 8192),
    "data.seed": (int, 1),
    "data.noise": (float, 0.1),
    "data.k": (int, 8),
    "data.radius": (float, 2.0),
    "data.sd": (float, 0.1),
    "data.side": (int, 8),
    "data.path": (str, ""),
    "model.latent_dim": (int, 0),
    "model.flow_layers": (int, 4),
    "model.hidden": (int, 64),
    "model.encoder_blocks": (int, 2),
    "model.decoder_blocks": (int, 2),
    "model.coupling_hidden": (int, 32),
    "model.coupling_blocks": (int, 1),
    "model.log_scale_clamp": (float, 2.0),
    "model.noise_sigma": (float, 0.05),
    "model.tanh_output": (bool, False),
    "model.seed": (int, 0),
    "train.steps": (int, 2000),
    "train.batch": (int, 256),
    "train.lr": (float, 3e-3),
    "train.seed": (int, 0),
    "train.beta1": (float, 0.9),
    "train.beta2": (float, 0.999),
    "train.eps": (float, 1e-8),
    "train.log_every": (int, 1),
    "train.checkpoint_every": (int, 0),
    "sample.temperature": (float, 1.0),
    "sample.n": (int, 64),
    "output.dir": (str, "out"),
}


def _convert(key: str, raw: str, typ: type):
    try:
        if typ is bool:
            low = raw.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        return typ(raw.strip())
    except ValueError:
        raise ConfigError(key, f"cannot parse {raw!r} as {typ.__name__}") from None


def parse_config(text: str) -> dict[str, object]:
    values = {k: default for k, (_, default) in SCHEMA.items()}
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(f"line {lineno}", f"expected 'key = value', got {body!r}")
        key, raw = (s.strip() for s in body.split("=", 1))
        if key not in SCHEMA:
            raise ConfigError(key, "unknown config key")
        values[key] = _convert(key, raw, SCHEMA[key][0])
    mode = MODE_ALIASES.get(values["mode"], values["mode"])
    if mode not in MODES:
        raise ConfigError("mode", f"unknown mode {values['mode']!r} (expected one of {sorted(MODES)})")
    values["mode"] = mode
    if values["data.kind"] not in DATA_KINDS:
        raise ConfigError("data.kind", f"unknown kind {values['data.kind']!r}")
    if values["data.kind"] == "file" and not values["data.path"]:
        raise ConfigError("data.path", "required when data.kind = file")
    return values


def load_config(path) -> dict[str, object]:
    return parse_config(Path(path).read_text())


def config_hash(values: dict[str, object]) -> str:
    canon = "\n".join(f"{k}={values[k]!r}" for k in sorted(values))
    return hashlib.sha256(canon.encode()).hexdigest()[:16]


@dataclass
class RunConfig:
    values: dict[str, object] = field(default_factory=dict)

    def model_config(self, data_dim: int) -> ModelConfig:
        v = self.values
        cfg = ModelConfig(
            data_dim=data_dim, latent_dim=v["model.latent_dim"] or data_dim, mode=v["mode"],
            hidden=v["model.hidden"], encoder_blocks=v["model.encoder_blocks"],
            decoder_blocks=v["model.decoder_blocks"], flow_layers=v["model.flow_layers"],
            coupling_hidden=v["model.coupling_hidden"], coupling_blocks=v["model.coupling_blocks"],
            log_scale_clamp=v["model.log_scale_clamp"], noise_sigma=v["model.noise_sigma"],
            tanh_output=v["model.tanh_output"], seed=v["model.seed"])
        try:
            cfg.validate()
        except ValueError as exc:
            field_name = str(exc).split(": ", 1)[-1].split(":", 1)[0]
            raise ConfigError(f"model.{field_name}", str(exc)) from None
        return cfg

    def train_config(self) -> TrainConfig:
        v = self.values
        cfg = TrainConfig(seed=v["train.seed"], batch_size=v["train.batch"], steps=v["train.steps"],
                          learning_rate=v["train.lr"], beta1=v["train.beta1"], beta2=v["train.beta2"],
                          eps=v["train.eps"], checkpoint_every=v["train.checkpoint_every"],
                          log_every=v["train.log_every"])
        try:
            cfg.validate()
        except ValueError as exc:
            raise ConfigError("train." + str(exc).split(":", 1)[0], str(exc)) from None
        return cfg
