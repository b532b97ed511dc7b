"""Self-attention from spike timing instead of dot products.

Per head and timestep, each token's query/key spike pattern is collapsed to a
spike count, the count is turned into a first-spike latency (more spikes fire
earlier), and every query/key pair is scored by an exponential kernel of the
latency difference with a sign that favors keys firing after the query. A
constant offset then shifts the scores into a fixed positive interval, so no
softmax or any other normalization ever touches the score matrix, and the
product with the binary value tensor reduces to gathering and adding scores.

Score pipeline, for latency gap dt = t_q(i) - t_k(j):

    f  = a_stdp * exp(-|dt| / tau_stdp)
    dw = +f where dt < 0, -f where dt >= 0
    A  = dw + w_offset              in [w_offset - a_stdp, w_offset + a_stdp]

The configuration invariants pin that interval strictly inside (0, 1).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import autodiff as ad
from . import nn
from .autodiff import Tensor, where_mask
from .errors import ConfigurationError, ContractError
from .neuron import LifConfig, lif_sequence
from .probe import ForwardProbe


@dataclass(frozen=True)
class StdpAttentionConfig:
    """Hyperparameters of the timing-based attention block.

    The pair of bound invariants (a_stdp <= w_offset and w_offset + a_stdp
    <= 1) guarantees every attention score lands inside (0, 1), which is what
    lets the block skip normalization entirely. They are checked here, at
    construction, never at runtime.
    """

    heads: int = 4
    a_stdp: float = 0.4
    tau_stdp: float = 0.5
    w_offset: float = 0.5
    t_max: float = 1.0
    s: float = 0.125

    def __post_init__(self):
        if self.heads < 1:
            raise ConfigurationError(f"heads must be at least 1, got {self.heads}")
        for label in ("a_stdp", "tau_stdp", "t_max", "s"):
            if not getattr(self, label) > 0:
                raise ConfigurationError(f"{label} must be positive, got {getattr(self, label)}")
        if self.a_stdp > self.w_offset:
            raise ConfigurationError(
                f"a_stdp ({self.a_stdp}) must not exceed w_offset ({self.w_offset}); scores would leave (0, 1)"
            )
        if self.w_offset + self.a_stdp > 1.0:
            raise ConfigurationError(
                f"w_offset + a_stdp ({self.w_offset + self.a_stdp}) must not exceed 1; scores would leave (0, 1)"
            )

    @property
    def score_bounds(self) -> tuple[float, float]:
        return (self.w_offset - self.a_stdp, self.w_offset + self.a_stdp)


@dataclass
class AttentionScores:
    """Bounded score matrix [..., N, N]; every element inside (0, 1)."""

    values: Tensor


def _require_binary(x: Tensor, what: str) -> None:
    d = x.data
    if not np.logical_or(d == 0.0, d == 1.0).all():
        raise ContractError(f"{what} must be binary (0/1) valued")


def head_split(x: Tensor, heads: int) -> Tensor:
    """[..., N, D] -> [..., H, N, D/H]; lossless, inverse of :func:`head_merge`."""
    n, d = x.shape[-2], x.shape[-1]
    if d % heads:
        raise ContractError(f"feature dim {d} not divisible by {heads} heads")
    lead = x.shape[:-2]
    y = x.reshape(lead + (n, heads, d // heads))
    perm = tuple(range(len(lead))) + (len(lead) + 1, len(lead), len(lead) + 2)
    return y.transpose(perm)


def head_merge(x: Tensor) -> Tensor:
    """[..., H, N, D/H] -> [..., N, D]."""
    lead = x.shape[:-3]
    h, n, dh = x.shape[-3], x.shape[-2], x.shape[-1]
    perm = tuple(range(len(lead))) + (len(lead) + 1, len(lead), len(lead) + 2)
    return x.transpose(perm).reshape(lead + (n, h * dh))


def token_rates(spikes: Tensor) -> Tensor:
    """Per-token spike count: sum of the binary feature axis."""
    _require_binary(spikes, "token spikes")
    return spikes.sum(axis=-1)


def token_latencies(rates: Tensor, d_h: int, t_max: float) -> Tensor:
    """Linear rate-to-latency map t_max * (1 - r / d_h), elementwise."""
    r = rates.data
    if (r < 0).any() or (r > d_h).any():
        raise ContractError(f"rates must lie in [0, {d_h}]")
    return t_max - rates * (t_max / d_h)


def timing_diff(t_q: Tensor, t_k: Tensor) -> Tensor:
    """All-pairs latency gaps: out[..., i, j] = t_q[..., i] - t_k[..., j]."""
    if t_q.shape != t_k.shape:
        raise ContractError(f"latency shapes differ: {t_q.shape} vs {t_k.shape}")
    n = t_q.shape[-1]
    return t_q.reshape(t_q.shape + (1,)) - t_k.reshape(t_k.shape[:-1] + (1, n))


def stdp_kernel(dt: Tensor, a_stdp: float, tau_stdp: float) -> Tensor:
    """Symmetric exponential timing kernel a * exp(-|dt| / tau), in (0, a]."""
    if not (a_stdp > 0 and tau_stdp > 0):
        raise ConfigurationError("a_stdp and tau_stdp must be positive")
    return a_stdp * (dt.abs() * (-1.0 / tau_stdp)).exp()


def synaptic_update(dt: Tensor, f: Tensor) -> Tensor:
    """Signed update: +f where dt < 0, -f where dt >= 0.

    The branch choice is taken from the values of dt and treated as a
    constant, so gradients flow only through the kernel magnitude.
    """
    if dt.shape != f.shape:
        raise ContractError(f"dt shape {dt.shape} != kernel shape {f.shape}")
    return where_mask(dt.data < 0.0, f, -f)


def attention_scores(dw: Tensor, w_offset: float) -> AttentionScores:
    """Offset-shifted scores; bounded by construction, no normalization."""
    return AttentionScores(dw + w_offset)


def attention_apply(scores: AttentionScores, v_s: Tensor, s: float) -> Tensor:
    """Weight binary values by bounded scores: (A @ V) * s.

    Because V is binary, each output element is s times a plain sum of score
    entries selected by V's ones; the matrix product form used here is
    numerically identical to that gather-and-accumulate reading.
    """
    _require_binary(v_s, "value spikes")
    a = scores.values
    if a.shape[-1] != v_s.shape[-2] or a.shape[:-2] != v_s.shape[:-2]:
        raise ContractError(f"score shape {a.shape} incompatible with value shape {v_s.shape}")
    return (a @ v_s) * s


class S2tdpsaBlock(nn.Module):
    """Timing-based multi-head self-attention over spike tensors.

    Input and output are [T, B, N, D]. Each timestep is processed
    independently: spike Q/K/V projections (linear + batch norm + spiking
    neuron), per-head token rates and latencies, the signed timing kernel,
    offset-bounded scores, score-weighted accumulation of V, a spiking
    neuron, and a pointwise output projection with batch norm.
    """

    def __init__(self, embed_dim: int, cfg: StdpAttentionConfig, lif: LifConfig, *, rng: np.random.Generator, dtype=np.float32):
        super().__init__()
        if embed_dim % cfg.heads:
            raise ConfigurationError(f"embed dim {embed_dim} not divisible by {cfg.heads} heads")
        self.embed_dim = embed_dim
        self.cfg = cfg
        self.lif = lif
        self.d_h = embed_dim // cfg.heads
        self.q_proj = nn.Linear(embed_dim, embed_dim, rng=rng, dtype=dtype)
        self.q_bn = nn.BatchNorm(embed_dim, channel_axis=-1, dtype=dtype)
        self.k_proj = nn.Linear(embed_dim, embed_dim, rng=rng, dtype=dtype)
        self.k_bn = nn.BatchNorm(embed_dim, channel_axis=-1, dtype=dtype)
        self.v_proj = nn.Linear(embed_dim, embed_dim, rng=rng, dtype=dtype)
        self.v_bn = nn.BatchNorm(embed_dim, channel_axis=-1, dtype=dtype)
        self.out_proj = nn.Linear(embed_dim, embed_dim, rng=rng, dtype=dtype)
        self.out_bn = nn.BatchNorm(embed_dim, channel_axis=-1, dtype=dtype)

    def project_qkv(self, x: Tensor) -> tuple[Tensor, Tensor, Tensor]:
        """Three parallel spike branches: SN(BN(W x)) per timestep; binary out."""
        _require_binary(x, "attention input")
        branches = []
        for proj, bn in ((self.q_proj, self.q_bn), (self.k_proj, self.k_bn), (self.v_proj, self.v_bn)):
            branches.append(lif_sequence(bn(proj(x)), self.lif))
        return branches[0], branches[1], branches[2]

    def forward(self, x: Tensor, probe: Optional[ForwardProbe] = None, probe_prefix: str = "") -> Tensor:
        cfg = self.cfg
        if probe is not None:
            probe.rate(f"{probe_prefix}q_proj", x.data)
            probe.rate(f"{probe_prefix}k_proj", x.data)
            probe.rate(f"{probe_prefix}v_proj", x.data)
        q_s, k_s, v_s = self.project_qkv(x)
        if probe is not None:
            for name, spikes in (("q", q_s), ("k", k_s), ("v", v_s)):
                probe.spikes(f"{probe_prefix}{name}_spikes", spikes.data)

        q_h = head_split(q_s, cfg.heads)
        k_h = head_split(k_s, cfg.heads)
        v_h = head_split(v_s, cfg.heads)

        t_q = token_latencies(token_rates(q_h), self.d_h, cfg.t_max)
        t_k = token_latencies(token_rates(k_h), self.d_h, cfg.t_max)
        dt = timing_diff(t_q, t_k)
        f = stdp_kernel(dt, cfg.a_stdp, cfg.tau_stdp)
        scores = attention_scores(synaptic_update(dt, f), cfg.w_offset)
        if probe is not None:
            probe.attention(f"{probe_prefix}scores", scores.values.data)
            probe.rate(f"{probe_prefix}attention_apply", v_s.data)

        mixed = head_merge(attention_apply(scores, v_h, cfg.s))
        spikes = lif_sequence(mixed, self.lif)
        if probe is not None:
            probe.spikes(f"{probe_prefix}attn_spikes", spikes.data)
            probe.rate(f"{probe_prefix}out_proj", spikes.data)
        return self.out_bn(self.out_proj(spikes))
