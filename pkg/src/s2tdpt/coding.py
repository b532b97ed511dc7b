"""Rate-to-latency coding and the pairwise spike-timing similarity score.

These are the scalar building blocks behind the attention mechanism: a spike
count is read off a binary vector, mapped to a first-spike latency by linear
decay (more spikes fire earlier), and two latencies are compared through an
asymmetric exponential timing rule whose sign says which pattern led.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, ContractError


@dataclass(frozen=True)
class LatencyCoderConfig:
    """Linear latency code over counts 0..d mapped onto [0, t_max]."""

    t_max: float = 1.0
    d: int = 1

    def __post_init__(self):
        if not self.t_max > 0:
            raise ConfigurationError(f"t_max must be positive, got {self.t_max}")
        if self.d < 1:
            raise ConfigurationError(f"d must be at least 1, got {self.d}")


@dataclass(frozen=True)
class GeneralStdpConfig:
    """Two-sided exponential timing rule with independent amplitudes/windows."""

    a_plus: float = 1.0
    a_minus: float = 1.0
    tau_plus: float = 1.0
    tau_minus: float = 1.0

    def __post_init__(self):
        for label in ("a_plus", "a_minus", "tau_plus", "tau_minus"):
            if not getattr(self, label) > 0:
                raise ConfigurationError(f"{label} must be positive, got {getattr(self, label)}")


def spike_count(v) -> int:
    """Number of active entries in a binary vector (its l1 norm)."""
    arr = np.asarray(v, dtype=np.float64)
    if not np.isin(arr, (0.0, 1.0)).all():
        raise ContractError("spike_count expects a strictly binary vector")
    return int(arr.sum())


def latency_encode(p: int, cfg: LatencyCoderConfig) -> float:
    """First-spike latency for count ``p``: t_max * (1 - p / d).

    Zero activity fires at the full latency t_max; a saturated vector fires
    immediately. Strictly decreasing in ``p``.
    """
    if p < 0 or p > cfg.d:
        raise ContractError(f"count {p} outside [0, {cfg.d}]")
    return cfg.t_max * (1.0 - p / cfg.d)


def stdp_similarity(q, k, coder: LatencyCoderConfig, cfg: GeneralStdpConfig) -> float:
    """Timing similarity between two binary vectors.

    Both vectors are latency-encoded from their spike counts; the latency gap
    dt = t_q - t_k picks the branch. A negative gap (q fires first) yields the
    positive branch a_plus * exp(dt / tau_plus); otherwise the score is
    -a_minus * exp(-dt / tau_minus). Equal counts land on the negative branch.
    """
    qa = np.asarray(q)
    ka = np.asarray(k)
    if qa.shape != ka.shape:
        raise ContractError(f"vector length mismatch: {qa.shape} vs {ka.shape}")
    if qa.shape != (cfg_len := (coder.d,)):
        raise ContractError(f"vectors must have length {cfg_len[0]}, got {qa.shape}")
    t_q = latency_encode(spike_count(qa), coder)
    t_k = latency_encode(spike_count(ka), coder)
    dt = t_q - t_k
    if dt < 0:
        return cfg.a_plus * math.exp(dt / cfg.tau_plus)
    return -cfg.a_minus * math.exp(-dt / cfg.tau_minus)
