"""Multi-step leaky integrate-and-fire neurons.

One update step, for input current ``x`` and carried history ``h``:

    u = h + x                    membrane integrates input onto history
    s = 1[u >= v_th]             binary spike via the surrogate threshold
    h' = v_reset * s + beta * u * (1 - s)

A firing step therefore rewrites the history to ``v_reset`` exactly, and a
silent step decays the membrane by ``beta``. Gradients pass through the spike
via the surrogate derivative configured on :class:`LifConfig`.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import SurrogateSpec, Tensor, heaviside_surrogate, stack
from .errors import ConfigurationError, ContractError


@dataclass(frozen=True)
class LifConfig:
    v_th: float = 1.0
    v_reset: float = 0.0
    beta: float = 0.5
    surrogate: SurrogateSpec = field(default_factory=SurrogateSpec)

    def __post_init__(self):
        if not 0.0 <= self.beta <= 1.0:
            raise ConfigurationError(f"beta must lie in [0, 1], got {self.beta}")
        if not self.v_reset < self.v_th:
            raise ConfigurationError(f"v_reset ({self.v_reset}) must be below v_th ({self.v_th})")


@dataclass
class LifState:
    """Membrane history carried between timesteps."""

    h: Tensor


def initial_state(shape: tuple, dtype=np.float32) -> LifState:
    return LifState(Tensor(np.zeros(shape, dtype=dtype)))


def lif_step(state: LifState, x: Tensor, cfg: LifConfig) -> tuple[Tensor, LifState]:
    """Advance one timestep; returns the binary spike tensor and new state."""
    if state.h.shape != x.shape:
        raise ContractError(f"state shape {state.h.shape} != input shape {x.shape}")
    u = state.h + x
    s = heaviside_surrogate(u, cfg.v_th, cfg.surrogate)
    h = cfg.v_reset * s + cfg.beta * u * (1.0 - s)
    return s, LifState(h)


def lif_sequence(inputs: Tensor, cfg: LifConfig, initial: LifState | None = None) -> Tensor:
    """Fold :func:`lif_step` over the leading timestep axis of ``inputs``.

    The history starts at zero unless ``initial`` is given; output has the
    same [T, ...] shape as the input and is binary at every step.
    """
    if inputs.ndim < 1 or inputs.shape[0] < 1:
        raise ContractError("lif_sequence needs at least one timestep")
    state = initial if initial is not None else initial_state(inputs.shape[1:], inputs.dtype)
    spikes = []
    for t in range(inputs.shape[0]):
        s, state = lif_step(state, inputs[t], cfg)
        spikes.append(s)
    return stack(spikes, axis=0)
