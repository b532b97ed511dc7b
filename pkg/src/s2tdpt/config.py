"""Plain key-value run configuration with dotted sections.

The file format is one ``section.key = value`` assignment per line, ``#``
comments, blank lines ignored. The same dotted keys are accepted by the CLI's
repeated ``--set`` overrides. Emission and parsing round-trip exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .attention import StdpAttentionConfig
from .autodiff import SurrogateSpec
from .errors import ConfigurationError
from .model import ModelConfig, SpsStage
from .neuron import LifConfig
from .train import TrainConfig


@dataclass(frozen=True)
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)


def _parse_shape(text: str) -> tuple[int, int, int]:
    parts = text.lower().split("x")
    if len(parts) != 3:
        raise ConfigurationError(f"expected CxHxW shape, got '{text}'")
    c, h, w = (int(p) for p in parts)
    return (c, h, w)


def _emit_shape(shape: tuple[int, int, int]) -> str:
    return "x".join(str(v) for v in shape)


def _parse_stages(text: str) -> tuple[SpsStage, ...]:
    stages = []
    for item in text.split(","):
        item = item.strip()
        if not item:
            continue
        kind, _, channels = item.partition(":")
        if not channels:
            raise ConfigurationError(f"stage '{item}' must look like spe:<channels> or sped:<channels>")
        stages.append(SpsStage(kind.strip(), int(channels)))
    return tuple(stages)


def _emit_stages(stages: tuple[SpsStage, ...]) -> str:
    return ",".join(f"{s.kind}:{s.out_channels}" for s in stages)


def _parse_bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("true", "1", "yes"):
        return True
    if lowered in ("false", "0", "no"):
        return False
    raise ConfigurationError(f"expected a boolean, got '{text}'")


# key -> (getter, setter-value-parser, emitter)
_SCHEMA: dict[str, tuple] = {
    "model.timesteps": (lambda c: c.model.timesteps, int, str),
    "model.depth": (lambda c: c.model.depth, int, str),
    "model.embed_dim": (lambda c: c.model.embed_dim, int, str),
    "model.heads": (lambda c: c.model.heads, int, str),
    "model.num_classes": (lambda c: c.model.num_classes, int, str),
    "model.input": (lambda c: c.model.input_shape, _parse_shape, _emit_shape),
    "model.stem_channels": (lambda c: c.model.stem_channels, int, str),
    "model.sps_stages": (lambda c: c.model.sps_stages, _parse_stages, _emit_stages),
    "model.mlp_ratio": (lambda c: c.model.mlp_ratio, float, repr),
    "lif.v_th": (lambda c: c.model.lif.v_th, float, repr),
    "lif.v_reset": (lambda c: c.model.lif.v_reset, float, repr),
    "lif.beta": (lambda c: c.model.lif.beta, float, repr),
    "lif.surrogate_kind": (lambda c: c.model.lif.surrogate.kind, str, str),
    "lif.surrogate_width": (lambda c: c.model.lif.surrogate.width, float, repr),
    "attention.a_stdp": (lambda c: c.model.attention.a_stdp, float, repr),
    "attention.tau_stdp": (lambda c: c.model.attention.tau_stdp, float, repr),
    "attention.w_offset": (lambda c: c.model.attention.w_offset, float, repr),
    "attention.t_max": (lambda c: c.model.attention.t_max, float, repr),
    "attention.s": (lambda c: c.model.attention.s, float, repr),
    "train.epochs": (lambda c: c.train.epochs, int, str),
    "train.batch_size": (lambda c: c.train.batch_size, int, str),
    "train.learning_rate": (lambda c: c.train.learning_rate, float, repr),
    "train.weight_decay": (lambda c: c.train.weight_decay, float, repr),
    "train.optimizer": (lambda c: c.train.optimizer, str, str),
    "train.seed": (lambda c: c.train.seed, int, str),
    "train.lr_schedule": (lambda c: c.train.lr_schedule, str, str),
    "train.momentum": (lambda c: c.train.momentum, float, repr),
    "train.hflip": (lambda c: c.train.hflip, _parse_bool, lambda v: "true" if v else "false"),
    "train.random_crop": (lambda c: c.train.random_crop, _parse_bool, lambda v: "true" if v else "false"),
}


def _rebuild(values: dict) -> RunConfig:
    lif = LifConfig(
        v_th=values["lif.v_th"],
        v_reset=values["lif.v_reset"],
        beta=values["lif.beta"],
        surrogate=SurrogateSpec(values["lif.surrogate_kind"], values["lif.surrogate_width"]),
    )
    attention = StdpAttentionConfig(
        heads=values["model.heads"],
        a_stdp=values["attention.a_stdp"],
        tau_stdp=values["attention.tau_stdp"],
        w_offset=values["attention.w_offset"],
        t_max=values["attention.t_max"],
        s=values["attention.s"],
    )
    model = ModelConfig(
        timesteps=values["model.timesteps"],
        depth=values["model.depth"],
        embed_dim=values["model.embed_dim"],
        heads=values["model.heads"],
        num_classes=values["model.num_classes"],
        input_shape=values["model.input"],
        stem_channels=values["model.stem_channels"],
        sps_stages=values["model.sps_stages"],
        mlp_ratio=values["model.mlp_ratio"],
        lif=lif,
        attention=attention,
    )
    train = TrainConfig(
        epochs=values["train.epochs"],
        batch_size=values["train.batch_size"],
        learning_rate=values["train.learning_rate"],
        weight_decay=values["train.weight_decay"],
        optimizer=values["train.optimizer"],
        seed=values["train.seed"],
        lr_schedule=values["train.lr_schedule"],
        momentum=values["train.momentum"],
        hflip=values["train.hflip"],
        random_crop=values["train.random_crop"],
    )
    return RunConfig(model=model, train=train)


def _values_of(cfg: RunConfig) -> dict:
    return {key: getter(cfg) for key, (getter, _, _) in _SCHEMA.items()}


def apply_overrides(cfg: RunConfig, overrides: list[str]) -> RunConfig:
    """Apply ``key=value`` strings; unknown keys are configuration errors."""
    values = _values_of(cfg)
    for item in overrides:
        key, sep, raw = item.partition("=")
        key = key.strip()
        if not sep:
            raise ConfigurationError(f"override '{item}' must look like key=value")
        if key not in _SCHEMA:
            raise ConfigurationError(f"unknown config key '{key}'")
        _, parse, _ = _SCHEMA[key]
        values[key] = parse(raw.strip())
    return _rebuild(values)


def parse_config(text: str) -> RunConfig:
    values = _values_of(RunConfig())
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        key, sep, raw = stripped.partition("=")
        if not sep:
            raise ConfigurationError(f"line {lineno}: expected 'key = value', got '{stripped}'")
        key = key.strip()
        if key not in _SCHEMA:
            raise ConfigurationError(f"line {lineno}: unknown config key '{key}'")
        _, parse, _ = _SCHEMA[key]
        values[key] = parse(raw.strip())
    return _rebuild(values)


def emit_config(cfg: RunConfig) -> str:
    lines = []
    section = ""
    for key, (getter, _, emit) in _SCHEMA.items():
        current = key.split(".", 1)[0]
        if current != section:
            if section:
                lines.append("")
            section = current
        lines.append(f"{key} = {emit(getter(cfg))}")
    return "\n".join(lines) + "\n"


def load_config(path) -> RunConfig:
    with open(path) as fh:
        return parse_config(fh.read())
