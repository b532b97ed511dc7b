"""Small layer framework on top of the autodiff tensors.

Modules discover parameters and submodules by scanning instance attributes,
so construction order fixes the (deterministic) parameter ordering used by
optimizers and checkpoints.
"""

from __future__ import annotations

from typing import Iterator, Optional

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, op_scope
from .errors import ContractError


class Parameter(Tensor):
    """A tensor updated by the optimizer; always differentiable."""

    def __init__(self, data):
        super().__init__(data, requires_grad=True)


class Module:
    """Base class providing parameter/buffer traversal and train/eval mode."""

    def __init__(self):
        self.training = True
        self.name = ""

    def __call__(self, *args, **kwargs):
        if self.name:
            with op_scope(self.name):
                return self.forward(*args, **kwargs)
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    # -- traversal -------------------------------------------------------

    def _children(self) -> Iterator[tuple[str, "Module"]]:
        for key, value in vars(self).items():
            if isinstance(value, Module):
                yield key, value
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield f"{key}.{i}", item

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for key, value in vars(self).items():
            if isinstance(value, Parameter):
                yield (f"{prefix}{key}", value)
        for key, child in self._children():
            yield from child.named_parameters(f"{prefix}{key}.")

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        for key, value in vars(self).items():
            if isinstance(value, np.ndarray):
                yield (f"{prefix}{key}", value)
        for key, child in self._children():
            yield from child.named_buffers(f"{prefix}{key}.")

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def train(self) -> "Module":
        self.training = True
        for _, child in self._children():
            child.train()
        return self

    def eval(self) -> "Module":
        self.training = False
        for _, child in self._children():
            child.eval()
        return self

    # -- state dict --------------------------------------------------------

    def state_dict(self) -> dict[str, np.ndarray]:
        state = {name: p.data for name, p in self.named_parameters()}
        state.update({name: buf for name, buf in self.named_buffers()})
        return state

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        bufs = dict(self.named_buffers())
        missing = (set(own) | set(bufs)) - set(state)
        extra = set(state) - (set(own) | set(bufs))
        if missing or extra:
            raise ContractError(f"state dict mismatch: missing={sorted(missing)}, unexpected={sorted(extra)}")
        for name, p in own.items():
            incoming = np.asarray(state[name], dtype=p.data.dtype)
            if incoming.shape != p.data.shape:
                raise ContractError(f"shape mismatch for '{name}': {incoming.shape} vs {p.data.shape}")
            p.data[...] = incoming
        for name, buf in bufs.items():
            incoming = np.asarray(state[name], dtype=buf.dtype)
            if incoming.shape != buf.shape:
                raise ContractError(f"shape mismatch for buffer '{name}': {incoming.shape} vs {buf.shape}")
            buf[...] = incoming


def param_count(module: Module) -> int:
    """Total trainable element count; running statistics are excluded."""
    return sum(p.size for p in module.parameters())


class Linear(Module):
    def __init__(
        self,
        in_features: int,
        out_features: int,
        *,
        bias: bool = True,
        init_std: Optional[float] = None,
        rng: np.random.Generator,
        dtype=np.float32,
    ):
        super().__init__()
        self.in_features = in_features
        self.out_features = out_features
        std = float(np.sqrt(2.0 / in_features)) if init_std is None else float(init_std)
        self.weight = Parameter(rng.normal(0.0, std, size=(in_features, out_features)).astype(dtype))
        self.bias = Parameter(np.zeros(out_features, dtype=dtype)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        lead = x.shape[:-1]
        flat = x.reshape((-1, self.in_features))
        out = flat @ self.weight
        if self.bias is not None:
            out = out + self.bias
        return out.reshape(lead + (self.out_features,))


class Conv2d(Module):
    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        kernel_size: int = 3,
        *,
        stride: int = 1,
        padding: int = 1,
        bias: bool = False,
        rng: np.random.Generator,
        dtype=np.float32,
    ):
        super().__init__()
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel_size = kernel_size
        self.stride = stride
        self.padding = padding
        fan_in = in_channels * kernel_size * kernel_size
        std = float(np.sqrt(2.0 / fan_in))
        self.weight = Parameter(rng.normal(0.0, std, size=(out_channels, in_channels, kernel_size, kernel_size)).astype(dtype))
        self.bias = Parameter(np.zeros(out_channels, dtype=dtype)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return ad.conv2d(x, self.weight, self.bias, stride=self.stride, padding=self.padding)


class BatchNorm(Module):
    """Batch normalization over every axis except ``channel_axis``."""

    def __init__(self, num_features: int, *, channel_axis: int = 1, eps: float = 1e-5, momentum: float = 0.1, dtype=np.float32):
        super().__init__()
        self.num_features = num_features
        self.channel_axis = channel_axis
        self.eps = eps
        self.momentum = momentum
        self.gamma = Parameter(np.ones(num_features, dtype=dtype))
        self.beta = Parameter(np.zeros(num_features, dtype=dtype))
        self.running_mean = np.zeros(num_features, dtype=dtype)
        self.running_var = np.ones(num_features, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[self.channel_axis % x.ndim] != self.num_features:
            raise ContractError(
                f"batch norm expects {self.num_features} channels on axis {self.channel_axis}, got shape {x.shape}"
            )
        return ad.batch_norm(
            x,
            self.gamma,
            self.beta,
            self.running_mean,
            self.running_var,
            channel_axis=self.channel_axis,
            eps=self.eps,
            momentum=self.momentum,
            training=self.training,
        )


def flatten_time(x: Tensor) -> Tensor:
    """Merge the leading timestep axis into the batch axis: [T,B,...] -> [T*B,...]."""
    t, b = x.shape[0], x.shape[1]
    return x.reshape((t * b,) + x.shape[2:])


def split_time(x: Tensor, t: int) -> Tensor:
    """Inverse of :func:`flatten_time`."""
    tb = x.shape[0]
    if tb % t:
        raise ContractError(f"cannot split leading axis {tb} into {t} timesteps")
    return x.reshape((t, tb // t) + x.shape[1:])
