"""Full spiking transformer assembly.

The network is: a convolutional spike-encoding stem, a ladder of spiking
patch-embedding stages (optionally downsampling by stride-2 max pooling),
L encoder blocks whose residual connections add into real-valued membrane
potentials, temporal then spatial mean pooling, and a linear classification
head. Every convolution and linear projection after the stem consumes binary
spikes only.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import autodiff as ad
from . import nn
from .attention import S2tdpsaBlock, StdpAttentionConfig
from .autodiff import SurrogateSpec, Tensor
from .errors import ConfigurationError, ContractError
from .neuron import LifConfig, lif_sequence
from .probe import ForwardProbe

CHECKPOINT_MAGIC = b"S2TDPT"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class SpsStage:
    """One patch-embedding stage; ``sped`` halves the spatial grid first."""

    kind: str  # "spe" | "sped"
    out_channels: int

    def __post_init__(self):
        if self.kind not in ("spe", "sped"):
            raise ConfigurationError(f"stage kind must be 'spe' or 'sped', got '{self.kind}'")
        if self.out_channels < 1:
            raise ConfigurationError(f"stage channels must be positive, got {self.out_channels}")


@dataclass(frozen=True)
class ModelConfig:
    timesteps: int = 4
    depth: int = 2
    embed_dim: int = 64
    heads: int = 4
    num_classes: int = 4
    input_shape: tuple[int, int, int] = (3, 16, 16)  # (C, H, W)
    stem_channels: int = 16
    sps_stages: tuple[SpsStage, ...] = (SpsStage("sped", 32), SpsStage("sped", 64))
    mlp_ratio: float = 4.0
    lif: LifConfig = field(default_factory=LifConfig)
    attention: StdpAttentionConfig = field(default_factory=StdpAttentionConfig)

    def __post_init__(self):
        if min(self.timesteps, self.depth, self.embed_dim, self.heads, self.num_classes) < 1:
            raise ConfigurationError("timesteps, depth, embed_dim, heads and num_classes must be positive")
        if self.embed_dim % self.heads:
            raise ConfigurationError(f"embed dim {self.embed_dim} not divisible by {self.heads} heads")
        if self.attention.heads != self.heads:
            raise ConfigurationError("attention.heads must match model heads")
        if not self.sps_stages:
            raise ConfigurationError("at least one patch-embedding stage is required")
        if self.sps_stages[-1].out_channels != self.embed_dim:
            raise ConfigurationError(
                f"last stage must emit embed_dim channels ({self.embed_dim}), got {self.sps_stages[-1].out_channels}"
            )
        _, h, w = self.input_shape
        factor = 2 ** sum(1 for s in self.sps_stages if s.kind == "sped")
        if h % factor or w % factor:
            raise ConfigurationError(f"input {h}x{w} not divisible by total downsampling factor {factor}")

    @property
    def token_grid(self) -> tuple[int, int]:
        _, h, w = self.input_shape
        factor = 2 ** sum(1 for s in self.sps_stages if s.kind == "sped")
        return (h // factor, w // factor)

    @property
    def num_tokens(self) -> int:
        gh, gw = self.token_grid
        return gh * gw

    @property
    def mlp_hidden(self) -> int:
        return int(round(self.mlp_ratio * self.embed_dim))

    # -- serialization ---------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "timesteps": self.timesteps,
            "depth": self.depth,
            "embed_dim": self.embed_dim,
            "heads": self.heads,
            "num_classes": self.num_classes,
            "input_shape": list(self.input_shape),
            "stem_channels": self.stem_channels,
            "sps_stages": [[s.kind, s.out_channels] for s in self.sps_stages],
            "mlp_ratio": self.mlp_ratio,
            "lif": {
                "v_th": self.lif.v_th,
                "v_reset": self.lif.v_reset,
                "beta": self.lif.beta,
                "surrogate_kind": self.lif.surrogate.kind,
                "surrogate_width": self.lif.surrogate.width,
            },
            "attention": {
                "heads": self.attention.heads,
                "a_stdp": self.attention.a_stdp,
                "tau_stdp": self.attention.tau_stdp,
                "w_offset": self.attention.w_offset,
                "t_max": self.attention.t_max,
                "s": self.attention.s,
            },
        }

    @staticmethod
    def from_dict(d: dict) -> "ModelConfig":
        lif = d["lif"]
        att = d["attention"]
        return ModelConfig(
            timesteps=int(d["timesteps"]),
            depth=int(d["depth"]),
            embed_dim=int(d["embed_dim"]),
            heads=int(d["heads"]),
            num_classes=int(d["num_classes"]),
            input_shape=tuple(int(v) for v in d["input_shape"]),
            stem_channels=int(d["stem_channels"]),
            sps_stages=tuple(SpsStage(str(k), int(c)) for k, c in d["sps_stages"]),
            mlp_ratio=float(d["mlp_ratio"]),
            lif=LifConfig(
                v_th=float(lif["v_th"]),
                v_reset=float(lif["v_reset"]),
                beta=float(lif["beta"]),
                surrogate=SurrogateSpec(str(lif["surrogate_kind"]), float(lif["surrogate_width"])),
            ),
            attention=StdpAttentionConfig(
                heads=int(att["heads"]),
                a_stdp=float(att["a_stdp"]),
                tau_stdp=float(att["tau_stdp"]),
                w_offset=float(att["w_offset"]),
                t_max=float(att["t_max"]),
                s=float(att["s"]),
            ),
        )


def cifar_4_384_config(num_classes: int = 10) -> ModelConfig:
    """The 4-block, 384-dim reference configuration for 32x32 RGB inputs."""
    return ModelConfig(
        timesteps=4,
        depth=4,
        embed_dim=384,
        heads=8,
        num_classes=num_classes,
        input_shape=(3, 32, 32),
        stem_channels=48,
        sps_stages=(SpsStage("spe", 96), SpsStage("sped", 192), SpsStage("spe", 384), SpsStage("sped", 384)),
        mlp_ratio=4.0,
        attention=StdpAttentionConfig(heads=8),
    )


# ---------------------------------------------------------------------------
# Pooling heads
# ---------------------------------------------------------------------------


def gtmp(u: Tensor) -> Tensor:
    """Temporal mean over the leading timestep axis: [T,B,N,D] -> [B,N,D]."""
    if u.shape[0] < 1:
        raise ContractError("temporal pooling needs at least one timestep")
    return u.mean(axis=0)


def gap(x: Tensor) -> Tensor:
    """Token mean: [B,N,D] -> [B,D]; invariant under token permutations."""
    if x.shape[-2] < 1:
        raise ContractError("token pooling needs at least one token")
    return x.mean(axis=-2)


# ---------------------------------------------------------------------------
# Network modules
# ---------------------------------------------------------------------------


class SpsEncoder(nn.Module):
    """Spike-encoding stem plus the patch-embedding conv ladder."""

    def __init__(self, cfg: ModelConfig, *, rng: np.random.Generator, dtype=np.float32):
        super().__init__()
        c_in = cfg.input_shape[0]
        self.cfg = cfg
        self.stem_conv = nn.Conv2d(c_in, cfg.stem_channels, rng=rng, dtype=dtype)
        self.stem_bn = nn.BatchNorm(cfg.stem_channels, dtype=dtype)
        convs, bns = [], []
        prev = cfg.stem_channels
        for stage in cfg.sps_stages:
            convs.append(nn.Conv2d(prev, stage.out_channels, rng=rng, dtype=dtype))
            bns.append(nn.BatchNorm(stage.out_channels, dtype=dtype))
            prev = stage.out_channels
        self.stage_convs = convs
        self.stage_bns = bns

    def forward(self, images: Tensor, probe: Optional[ForwardProbe] = None) -> Tensor:
        """[T,B,C,H,W] image stack -> [T,B,N,D] membrane tokens."""
        t = images.shape[0]
        z = self.stem_bn(self.stem_conv(nn.flatten_time(images)))
        for i, (stage, conv, bn) in enumerate(zip(self.cfg.sps_stages, self.stage_convs, self.stage_bns)):
            spikes = lif_sequence(nn.split_time(z, t), self.cfg.lif)
            s4 = nn.flatten_time(spikes)
            if stage.kind == "sped":
                s4 = ad.max_pool2d(s4)
            if probe is not None:
                probe.rate(f"sps.stage{i}", s4.data)
            z = bn(conv(s4))
        tb, d, h, w = z.shape
        tokens = z.reshape((tb, d, h * w)).transpose((0, 2, 1))
        return nn.split_time(tokens, t)


class MlpBlock(nn.Module):
    """Two pointwise projection stages, each fed by a spiking neuron layer."""

    def __init__(self, embed_dim: int, hidden: int, lif: LifConfig, *, rng: np.random.Generator, dtype=np.float32):
        super().__init__()
        self.lif = lif
        self.fc1 = nn.Linear(embed_dim, hidden, rng=rng, dtype=dtype)
        self.bn1 = nn.BatchNorm(hidden, channel_axis=-1, dtype=dtype)
        self.fc2 = nn.Linear(hidden, embed_dim, rng=rng, dtype=dtype)
        self.bn2 = nn.BatchNorm(embed_dim, channel_axis=-1, dtype=dtype)

    def forward(self, u: Tensor, probe: Optional[ForwardProbe] = None, probe_prefix: str = "") -> Tensor:
        s_in = lif_sequence(u, self.lif)
        if probe is not None:
            probe.rate(f"{probe_prefix}fc1", s_in.data)
            probe.spikes(f"{probe_prefix}in_spikes", s_in.data)
        hidden = self.bn1(self.fc1(s_in))
        s_hid = lif_sequence(hidden, self.lif)
        if probe is not None:
            probe.rate(f"{probe_prefix}fc2", s_hid.data)
            probe.spikes(f"{probe_prefix}hidden_spikes", s_hid.data)
        return self.bn2(self.fc2(s_hid))


class EncoderBlock(nn.Module):
    """Attention and MLP sub-blocks joined by membrane-potential residuals."""

    def __init__(self, cfg: ModelConfig, *, rng: np.random.Generator, dtype=np.float32):
        super().__init__()
        self.lif = cfg.lif
        self.attn = S2tdpsaBlock(cfg.embed_dim, cfg.attention, cfg.lif, rng=rng, dtype=dtype)
        self.mlp = MlpBlock(cfg.embed_dim, cfg.mlp_hidden, cfg.lif, rng=rng, dtype=dtype)

    def forward(self, u: Tensor, probe: Optional[ForwardProbe] = None, probe_prefix: str = "") -> Tensor:
        s_in = lif_sequence(u, self.lif)
        if probe is not None:
            probe.spikes(f"{probe_prefix}input_spikes", s_in.data)
        u_mid = u + self.attn(s_in, probe, f"{probe_prefix}attn.")
        return u_mid + self.mlp(u_mid, probe, f"{probe_prefix}mlp.")


class SpikingClassifier(nn.Module):
    """End-to-end network: SPS, encoder blocks, pooling, linear head."""

    def __init__(self, cfg: ModelConfig, *, rng: np.random.Generator, dtype=np.float32):
        super().__init__()
        self.cfg = cfg
        self.dtype = dtype
        self.sps = SpsEncoder(cfg, rng=rng, dtype=dtype)
        self.blocks = [EncoderBlock(cfg, rng=rng, dtype=dtype) for _ in range(cfg.depth)]
        self.head = nn.Linear(
            cfg.embed_dim, cfg.num_classes, init_std=np.sqrt(1.0 / cfg.embed_dim), rng=rng, dtype=dtype
        )

    def replicate(self, images: np.ndarray) -> Tensor:
        """Repeat a static image batch across the simulation timesteps."""
        arr = np.asarray(images, dtype=self.dtype)
        if arr.ndim != 4 or arr.shape[1:] != tuple(self.cfg.input_shape):
            raise ContractError(f"expected images [B,{self.cfg.input_shape}], got {arr.shape}")
        return Tensor(np.broadcast_to(arr, (self.cfg.timesteps,) + arr.shape).copy())

    def forward(self, images, probe: Optional[ForwardProbe] = None) -> Tensor:
        x = images if isinstance(images, Tensor) else self.replicate(images)
        u = self.sps(x, probe)
        for i, block in enumerate(self.blocks):
            u = block(u, probe, f"block{i}.")
        return self.head(gap(gtmp(u)))


def build_model(cfg: ModelConfig, seed: int = 0, dtype=np.float32) -> SpikingClassifier:
    rng = np.random.default_rng(seed)
    model = SpikingClassifier(cfg, rng=rng, dtype=dtype)
    _assign_layer_names(model)
    return model


def _assign_layer_names(model: SpikingClassifier) -> None:
    model.name = "model"
    model.sps.name = "sps"
    for i, block in enumerate(model.blocks):
        block.name = f"block{i}"
        block.attn.name = f"block{i}.attn"
        block.mlp.name = f"block{i}.mlp"
    model.head.name = "head"


# ---------------------------------------------------------------------------
# Cost-layer enumeration (consumed by the profiler)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LayerSpec:
    """Shape description of one energy-counted layer, per image, per timestep."""

    name: str
    kind: str  # "conv" | "linear" | "attention_apply" | "other"
    flops: int


def _conv_flops(c_in: int, c_out: int, kernel: int, out_h: int, out_w: int) -> int:
    return c_out * out_h * out_w * kernel * kernel * c_in


def _linear_flops(in_f: int, out_f: int, tokens: int) -> int:
    return tokens * in_f * out_f


def enumerate_cost_layers(cfg: ModelConfig) -> list[LayerSpec]:
    """All MAC/AC-counted layers in forward order.

    FLOP counts are per input image and per timestep; simulation length and
    firing rates are applied later when synaptic operations are formed. The
    per-entry score-construction work (rates, latencies, gaps, kernel, sign,
    offset) is tallied under kind "other" so totals with and without it stay
    separable.
    """
    layers: list[LayerSpec] = []
    c, h, w = cfg.input_shape
    layers.append(LayerSpec("sps.stem", "conv", _conv_flops(c, cfg.stem_channels, 3, h, w)))
    prev = cfg.stem_channels
    for i, stage in enumerate(cfg.sps_stages):
        if stage.kind == "sped":
            h, w = h // 2, w // 2
        layers.append(LayerSpec(f"sps.stage{i}", "conv", _conv_flops(prev, stage.out_channels, 3, h, w)))
        prev = stage.out_channels

    n = cfg.num_tokens
    d = cfg.embed_dim
    d_h = d // cfg.heads
    score_entry_ops = cfg.heads * (2 * n * d_h + 2 * n + 4 * n * n)
    for b in range(cfg.depth):
        for proj in ("q_proj", "k_proj", "v_proj"):
            layers.append(LayerSpec(f"block{b}.attn.{proj}", "linear", _linear_flops(d, d, n)))
        layers.append(LayerSpec(f"block{b}.attn.scores", "other", score_entry_ops))
        layers.append(LayerSpec(f"block{b}.attn.attention_apply", "attention_apply", cfg.heads * n * n * d_h))
        layers.append(LayerSpec(f"block{b}.attn.out_proj", "linear", _linear_flops(d, d, n)))
        layers.append(LayerSpec(f"block{b}.mlp.fc1", "linear", _linear_flops(d, cfg.mlp_hidden, n)))
        layers.append(LayerSpec(f"block{b}.mlp.fc2", "linear", _linear_flops(cfg.mlp_hidden, d, n)))
    layers.append(LayerSpec("head", "linear", _linear_flops(d, cfg.num_classes, 1)))
    return layers


# ---------------------------------------------------------------------------
# Checkpoint container
# ---------------------------------------------------------------------------


def save_checkpoint(path, model: SpikingClassifier, meta: Optional[dict] = None) -> None:
    """Write a versioned checkpoint: magic, version, config JSON, tensors.

    All tensors are stored as little-endian float32 with shape headers, in
    deterministic (construction) order.
    """
    header = {"config": model.cfg.to_dict(), "meta": meta or {}}
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    state = model.state_dict()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_VERSION))
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(struct.pack("<I", len(state)))
        for name, arr in state.items():
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<B", arr.ndim))
            for dim in arr.shape:
                fh.write(struct.pack("<I", dim))
            fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def load_checkpoint(path, dtype=np.float32) -> tuple[SpikingClassifier, ModelConfig, dict]:
    with open(path, "rb") as fh:
        magic = fh.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise ContractError(f"not a checkpoint file (bad magic {magic!r})")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != CHECKPOINT_VERSION:
            raise ContractError(f"unsupported checkpoint version {version}")
        (blob_len,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(blob_len).decode("utf-8"))
        cfg = ModelConfig.from_dict(header["config"])
        (n_tensors,) = struct.unpack("<I", fh.read(4))
        state: dict[str, np.ndarray] = {}
        for _ in range(n_tensors):
            (name_len,) = struct.unpack("<H", fh.read(2))
            name = fh.read(name_len).decode("utf-8")
            (ndim,) = struct.unpack("<B", fh.read(1))
            shape = tuple(struct.unpack("<I", fh.read(4))[0] for _ in range(ndim))
            count = int(np.prod(shape)) if shape else 1
            data = np.frombuffer(fh.read(4 * count), dtype="<f4").reshape(shape)
            state[name] = data.astype(dtype)
    model = build_model(cfg, seed=0, dtype=dtype)
    model.load_state_dict(state)
    return model, cfg, header.get("meta", {})
