"""Dense tensors with reverse-mode automatic differentiation.

A ``Tensor`` wraps a row-major numpy array and, when gradients are enabled,
remembers the operation that produced it. Calling :meth:`Tensor.backward` on a
scalar result walks the recorded graph in reverse topological order and
accumulates gradients into every tensor with ``requires_grad``.

The graph is a fresh per-forward-call tape: there is no retained global state,
no higher-order differentiation, and ops are plain numpy under the hood. The
one non-standard citizen is :func:`heaviside_surrogate`, whose forward pass is
an exact binary threshold while its backward pass substitutes a finite-width
surrogate derivative; it is what makes spiking networks trainable here.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import ConfigurationError, ContractError, NonFiniteError

_FLOAT_DTYPES = (np.float32, np.float64)

# Module-level switches. `_grad_enabled` gates tape construction; the finite
# check is off by default because it costs a full pass over every result.
_grad_enabled = True
_finite_checks = False
_scope_stack: list[str] = []


class no_grad:
    """Context manager disabling tape construction (inference mode)."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


def set_finite_checks(enabled: bool) -> None:
    """Toggle per-op NaN/Inf detection (used to localize training blowups)."""
    global _finite_checks
    _finite_checks = enabled


class op_scope:
    """Names the enclosing layer so finite-check failures can be attributed."""

    def __init__(self, name: str):
        self._name = name

    def __enter__(self):
        _scope_stack.append(self._name)
        return self

    def __exit__(self, *exc):
        _scope_stack.pop()
        return False


def _check_finite(data: np.ndarray, op: str) -> None:
    if _finite_checks and not np.all(np.isfinite(data)):
        where = ".".join(_scope_stack) or "<top>"
        raise NonFiniteError(f"non-finite values produced by '{op}' in {where}")


def _as_array(data, dtype=None) -> np.ndarray:
    arr = np.asarray(data)
    if arr.dtype not in _FLOAT_DTYPES:
        arr = arr.astype(np.float64 if dtype is None else dtype)
    elif dtype is not None and arr.dtype != dtype:
        arr = arr.astype(dtype)
    return arr


class Tensor:
    """A dense real-valued array plus optional gradient bookkeeping."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = _as_array(data)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple = ()
        self._backward: Optional[Callable[[np.ndarray], None]] = None

    # -- introspection -------------------------------------------------

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data.reshape(()))

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}{flag})"

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    # -- backward ------------------------------------------------------

    def backward(self, grad=None) -> None:
        """Reverse-mode sweep seeding ``grad`` (default: ones) at this node."""
        if grad is None:
            grad = np.ones_like(self.data)
        seed = np.asarray(grad, dtype=self.data.dtype)
        if seed.shape != self.data.shape:
            raise ContractError(
                f"seed gradient shape {seed.shape} != tensor shape {self.data.shape}"
            )

        # Iterative topological sort; recursion would overflow on deep
        # multi-timestep graphs.
        topo: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in visited:
                    stack.append((p, False))

        if self.grad is None:
            self.grad = seed.copy()
        else:
            self.grad = self.grad + seed
        for node in reversed(topo):
            if node._backward is not None:
                node._backward(node.grad)

    # -- operator sugar --------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __sub__(self, other):
        return add(self, mul(other, -1.0) if isinstance(other, Tensor) else -_as_array(other, self.dtype))

    def __rsub__(self, other):
        return add(mul(self, -1.0), other)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            return div(self, other)
        return mul(self, 1.0 / float(other))

    def __pow__(self, p):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return take_index(self, index)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes)

    def sum(self, axis=None, keepdims=False):
        return reduce_sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return reduce_mean(self, axis, keepdims)

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)

    def abs(self):
        return absolute(self)


def _lift(value, like: Tensor) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(_as_array(value, like.dtype))


def _result(data: np.ndarray, parents: Sequence[Tensor], backward_builder, op: str) -> Tensor:
    """Assemble an op result, attaching the tape node only when needed."""
    _check_finite(data, op)
    needs = _grad_enabled and any(p.requires_grad for p in parents)
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.requires_grad = needs
    out._parents = tuple(p for p in parents if p.requires_grad) if needs else ()
    out._backward = backward_builder() if needs else None
    return out


def _accum(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce a broadcast gradient back to the operand's shape."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    squeeze = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if squeeze:
        g = g.sum(axis=squeeze, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# Elementwise arithmetic
# ---------------------------------------------------------------------------


def add(a: Tensor, b) -> Tensor:
    b = _lift(b, a)
    data = a.data + b.data

    def bwd():
        def run(g):
            _accum(a, _unbroadcast(g, a.shape))
            _accum(b, _unbroadcast(g, b.shape))

        return run

    return _result(data, (a, b), bwd, "add")


def mul(a: Tensor, b) -> Tensor:
    b = _lift(b, a)
    data = a.data * b.data

    def bwd():
        def run(g):
            _accum(a, _unbroadcast(g * b.data, a.shape))
            _accum(b, _unbroadcast(g * a.data, b.shape))

        return run

    return _result(data, (a, b), bwd, "mul")


def div(a: Tensor, b: Tensor) -> Tensor:
    data = a.data / b.data

    def bwd():
        def run(g):
            _accum(a, _unbroadcast(g / b.data, a.shape))
            _accum(b, _unbroadcast(-g * a.data / (b.data * b.data), b.shape))

        return run

    return _result(data, (a, b), bwd, "div")


def power(a: Tensor, p: float) -> Tensor:
    p = float(p)
    data = a.data**p

    def bwd():
        def run(g):
            _accum(a, g * p * a.data ** (p - 1.0))

        return run

    return _result(data, (a,), bwd, "power")


def exp(a: Tensor) -> Tensor:
    data = np.exp(a.data)

    def bwd():
        def run(g):
            _accum(a, g * data)

        return run

    return _result(data, (a,), bwd, "exp")


def log(a: Tensor) -> Tensor:
    data = np.log(a.data)

    def bwd():
        def run(g):
            _accum(a, g / a.data)

        return run

    return _result(data, (a,), bwd, "log")


def absolute(a: Tensor) -> Tensor:
    # Subgradient 0 at the kink, via np.sign.
    data = np.abs(a.data)

    def bwd():
        sign = np.sign(a.data)

        def run(g):
            _accum(a, g * sign)

        return run

    return _result(data, (a,), bwd, "abs")


def where_mask(mask: np.ndarray, a, b) -> Tensor:
    """Elementwise select with a constant boolean mask (no gradient to mask)."""
    mask = np.asarray(mask, dtype=bool)
    ta = a if isinstance(a, Tensor) else None
    tb = b if isinstance(b, Tensor) else None
    ref = ta if ta is not None else tb
    if ref is None:
        raise ContractError("where_mask needs at least one Tensor operand")
    a_data = ta.data if ta is not None else _as_array(a, ref.dtype)
    b_data = tb.data if tb is not None else _as_array(b, ref.dtype)
    data = np.where(mask, a_data, b_data)
    parents = tuple(t for t in (ta, tb) if t is not None)

    def bwd():
        def run(g):
            if ta is not None:
                _accum(ta, _unbroadcast(np.where(mask, g, 0.0), ta.shape))
            if tb is not None:
                _accum(tb, _unbroadcast(np.where(mask, 0.0, g), tb.shape))

        return run

    return _result(data, parents, bwd, "where_mask")


# ---------------------------------------------------------------------------
# Shape manipulation
# ---------------------------------------------------------------------------


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(int(s) for s in shape)
    data = a.data.reshape(shape)

    def bwd():
        def run(g):
            _accum(a, g.reshape(a.shape))

        return run

    return _result(data, (a,), bwd, "reshape")


def transpose(a: Tensor, axes) -> Tensor:
    axes = tuple(int(x) for x in axes)
    inverse = tuple(np.argsort(axes))
    data = a.data.transpose(axes)

    def bwd():
        def run(g):
            _accum(a, g.transpose(inverse))

        return run

    return _result(data, (a,), bwd, "transpose")


def take_index(a: Tensor, index: int) -> Tensor:
    """Integer indexing along axis 0 (one timestep / one row)."""
    if not isinstance(index, int):
        raise ContractError("only integer indexing along axis 0 is supported")
    data = a.data[index].copy()

    def bwd():
        def run(g):
            full = np.zeros_like(a.data)
            full[index] = g
            _accum(a, full)

        return run

    return _result(data, (a,), bwd, "take_index")


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = list(tensors)
    if not tensors:
        raise ContractError("stack of zero tensors")
    data = np.stack([t.data for t in tensors], axis=axis)

    def bwd():
        def run(g):
            for i, t in enumerate(tensors):
                _accum(t, np.take(g, i, axis=axis))

        return run

    return _result(data, tensors, bwd, "stack")


def reduce_sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def bwd():
        def run(g):
            if axis is None:
                _accum(a, np.broadcast_to(g, a.shape).copy() if np.ndim(g) else np.full(a.shape, g, dtype=a.dtype))
                return
            gg = g
            if not keepdims:
                axes = axis if isinstance(axis, tuple) else (axis,)
                for ax in sorted(ax % a.ndim for ax in axes):
                    gg = np.expand_dims(gg, ax)
            _accum(a, np.broadcast_to(gg, a.shape).copy())

        return run

    return _result(np.asarray(data), (a,), bwd, "sum")


def reduce_mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        count = a.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        count = 1
        for ax in axes:
            count *= a.shape[ax % a.ndim]
    return mul(reduce_sum(a, axis, keepdims), 1.0 / float(count))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Stacked matrix product with numpy broadcasting over leading axes."""
    data = np.matmul(a.data, b.data)

    def bwd():
        def run(g):
            if a.requires_grad:
                ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
                _accum(a, _unbroadcast(ga, a.shape))
            if b.requires_grad:
                gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
                _accum(b, _unbroadcast(gb, b.shape))

        return run

    return _result(data, (a, b), bwd, "matmul")


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    data = shifted - log_z

    def bwd():
        softmax = np.exp(data)

        def run(g):
            _accum(a, g - softmax * g.sum(axis=axis, keepdims=True))

        return run

    return _result(data, (a,), bwd, "log_softmax")


# ---------------------------------------------------------------------------
# Spike nonlinearity
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SurrogateSpec:
    """Backward-pass stand-in for the spike threshold's derivative.

    ``width`` is the half-width of the support around the threshold. The
    rectangular window has constant density 1/(2*width) on that support; the
    triangular one peaks at the threshold and falls linearly to zero. Both
    integrate to 1.
    """

    kind: str = "rectangular"
    width: float = 0.5

    def __post_init__(self):
        if self.kind not in ("rectangular", "triangular"):
            raise ConfigurationError(f"unknown surrogate kind '{self.kind}'")
        if not self.width > 0:
            raise ConfigurationError(f"surrogate width must be positive, got {self.width}")

    def derivative(self, u: np.ndarray) -> np.ndarray:
        """Surrogate derivative evaluated at distance ``u`` from threshold."""
        au = np.abs(u)
        if self.kind == "rectangular":
            return (au <= self.width).astype(u.dtype) / (2.0 * self.width)
        return np.maximum(0.0, self.width - au) / (self.width * self.width)


def heaviside_surrogate(x: Tensor, threshold: float, spec: SurrogateSpec) -> Tensor:
    """Exact binary threshold (fires at and above ``threshold``).

    Forward output is exactly 0/1. The backward pass multiplies the upstream
    gradient by ``spec.derivative(x - threshold)`` instead of the true (zero
    almost everywhere) derivative.
    """
    if not isinstance(spec, SurrogateSpec):
        raise ConfigurationError("spec must be a SurrogateSpec")
    data = (x.data >= threshold).astype(x.dtype)

    def bwd():
        slope = spec.derivative(x.data - threshold)

        def run(g):
            _accum(x, g * slope)

        return run

    return _result(data, (x,), bwd, "heaviside_surrogate")


# ---------------------------------------------------------------------------
# Convolution / pooling / normalization
# ---------------------------------------------------------------------------


def conv2d(x: Tensor, w: Tensor, b: Optional[Tensor] = None, stride: int = 1, padding: int = 0) -> Tensor:
    """2D convolution, NCHW layout, square kernel.

    Implemented as a sum of per-offset GEMMs: cheap on small kernels and it
    keeps peak memory at one padded copy of the input.
    """
    if x.ndim != 4 or w.ndim != 4:
        raise ContractError(f"conv2d expects 4D input/weight, got {x.shape} and {w.shape}")
    n, c_in, h, wdt = x.shape
    c_out, c_in_w, kh, kw = w.shape
    if c_in != c_in_w:
        raise ContractError(f"conv2d channel mismatch: input {c_in}, weight {c_in_w}")
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x.data
    h_out = (h + 2 * padding - kh) // stride + 1
    w_out = (wdt + 2 * padding - kw) // stride + 1
    m = h_out * w_out

    acc = np.zeros((c_out, n * m), dtype=x.dtype)
    for di in range(kh):
        for dj in range(kw):
            sl = xp[:, :, di : di + stride * (h_out - 1) + 1 : stride, dj : dj + stride * (w_out - 1) + 1 : stride]
            cols = sl.transpose(1, 0, 2, 3).reshape(c_in, n * m)
            acc += w.data[:, :, di, dj] @ cols
    out = acc.reshape(c_out, n, h_out, w_out).transpose(1, 0, 2, 3)
    if b is not None:
        out = out + b.data.reshape(1, c_out, 1, 1)
    parents = (x, w) if b is None else (x, w, b)

    def bwd():
        def run(g):
            g2 = g.transpose(1, 0, 2, 3).reshape(c_out, n * m)
            if b is not None and b.requires_grad:
                _accum(b, g.sum(axis=(0, 2, 3)))
            need_x = x.requires_grad
            dxp = np.zeros_like(xp) if need_x else None
            for di in range(kh):
                for dj in range(kw):
                    rows = slice(di, di + stride * (h_out - 1) + 1, stride)
                    cols_sl = slice(dj, dj + stride * (w_out - 1) + 1, stride)
                    if w.requires_grad:
                        patch = xp[:, :, rows, cols_sl].transpose(1, 0, 2, 3).reshape(c_in, n * m)
                        _accum_conv_weight(w, di, dj, g2 @ patch.T)
                    if need_x:
                        contrib = (w.data[:, :, di, dj].T @ g2).reshape(c_in, n, h_out, w_out)
                        dxp[:, :, rows, cols_sl] += contrib.transpose(1, 0, 2, 3)
            if need_x:
                dx = dxp[:, :, padding : padding + h, padding : padding + wdt] if padding else dxp
                _accum(x, dx)

        return run

    return _result(out, parents, bwd, "conv2d")


def _accum_conv_weight(w: Tensor, di: int, dj: int, g: np.ndarray) -> None:
    if w.grad is None:
        w.grad = np.zeros_like(w.data)
    w.grad[:, :, di, dj] += g


def max_pool2d(x: Tensor) -> Tensor:
    """2x2 stride-2 max pooling; gradient routes to the argmax, ties to the
    lowest (row-major) index within each window."""
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ContractError(f"max_pool2d needs even spatial dims, got {h}x{w}")
    ho, wo = h // 2, w // 2
    windows = x.data.reshape(n, c, ho, 2, wo, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, ho, wo, 4)
    idx = windows.argmax(axis=-1)
    out = np.take_along_axis(windows, idx[..., None], axis=-1)[..., 0]

    def bwd():
        def run(g):
            dwin = np.zeros_like(windows)
            np.put_along_axis(dwin, idx[..., None], g[..., None], axis=-1)
            dx = dwin.reshape(n, c, ho, wo, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h, w)
            _accum(x, dx)

        return run

    return _result(out, (x,), bwd, "max_pool2d")


def batch_norm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    *,
    channel_axis: int,
    eps: float = 1e-5,
    momentum: float = 0.1,
    training: bool = True,
) -> Tensor:
    """Batch normalization over all axes except ``channel_axis``.

    In training mode the (biased) batch statistics normalize the input and
    update ``running_mean`` / ``running_var`` in place; in eval mode the
    running statistics are used and are left untouched.
    """
    axis = channel_axis % x.ndim
    reduce_axes = tuple(i for i in range(x.ndim) if i != axis)
    bshape = tuple(x.shape[axis] if i == axis else 1 for i in range(x.ndim))
    gamma_b = gamma.data.reshape(bshape)
    beta_b = beta.data.reshape(bshape)

    if training:
        mean = x.data.mean(axis=reduce_axes, keepdims=True)
        var = x.data.var(axis=reduce_axes, keepdims=True)
        running_mean *= 1.0 - momentum
        running_mean += momentum * mean.reshape(-1)
        running_var *= 1.0 - momentum
        running_var += momentum * var.reshape(-1)
    else:
        mean = running_mean.reshape(bshape).astype(x.dtype)
        var = running_var.reshape(bshape).astype(x.dtype)

    inv_std = 1.0 / np.sqrt(var + eps)
    x_hat = (x.data - mean) * inv_std
    out = gamma_b * x_hat + beta_b

    def bwd():
        count = x.size // x.shape[axis]

        def run(g):
            if gamma.requires_grad:
                _accum(gamma, (g * x_hat).sum(axis=reduce_axes))
            if beta.requires_grad:
                _accum(beta, g.sum(axis=reduce_axes))
            if not x.requires_grad:
                return
            if training:
                g_sum = g.sum(axis=reduce_axes, keepdims=True)
                gx_sum = (g * x_hat).sum(axis=reduce_axes, keepdims=True)
                dx = (gamma_b * inv_std / count) * (count * g - g_sum - x_hat * gx_sum)
            else:
                dx = g * gamma_b * inv_std
            _accum(x, dx)

        return run

    return _result(out, (x, gamma, beta), bwd, "batch_norm")


# ---------------------------------------------------------------------------
# Verification utilities
# ---------------------------------------------------------------------------


def finite_diff_check(f: Callable[[Tensor], Tensor], x: Tensor, eps: float) -> float:
    """Compare reverse-mode gradients of scalar-valued ``f`` against central
    finite differences at ``x``.

    Returns the maximum over coordinates of ``|fd - ad| / max(|fd|, |ad|,
    1e-8)``. If any evaluation of ``f`` is non-finite the oracle reports
    failure by returning NaN instead of raising.
    """
    if not eps > 0:
        raise ConfigurationError(f"eps must be positive, got {eps}")
    base = np.asarray(x.data, dtype=np.float64)
    probe = Tensor(base.copy(), requires_grad=True)
    y = f(probe)
    if y.size != 1:
        raise ContractError(f"finite_diff_check needs a scalar-valued f, got shape {y.shape}")
    if not np.all(np.isfinite(y.data)):
        return math.nan
    y.backward()
    analytic = probe.grad.copy() if probe.grad is not None else np.zeros_like(base)

    worst = 0.0
    flat = base.reshape(-1)
    for i in range(flat.size):
        bumped = flat.copy()
        bumped[i] += eps
        with no_grad():
            f_plus = f(Tensor(bumped.reshape(base.shape))).item()
        bumped[i] = flat[i] - eps
        with no_grad():
            f_minus = f(Tensor(bumped.reshape(base.shape))).item()
        if not (math.isfinite(f_plus) and math.isfinite(f_minus)):
            return math.nan
        fd = (f_plus - f_minus) / (2.0 * eps)
        ad = float(analytic.reshape(-1)[i])
        err = abs(fd - ad) / max(abs(fd), abs(ad), 1e-8)
        worst = max(worst, err)
    return worst


@dataclass(frozen=True)
class BnParams:
    """Affine batch-norm statistics used when merging into a convolution."""

    gamma: np.ndarray
    beta: np.ndarray
    mean: np.ndarray
    var: np.ndarray
    eps: float = 0.0


def fold_bn_into_conv(
    conv_weights: np.ndarray,
    conv_bias: Optional[np.ndarray],
    bn: BnParams,
) -> tuple[np.ndarray, np.ndarray]:
    """Merge a trailing batch norm into the convolution it follows.

    Returns ``(folded_weights, folded_bias)`` such that the single folded
    convolution reproduces conv-then-BN for every input. The point of doing
    this at deployment time is that normalization then costs nothing.
    """
    w = np.asarray(conv_weights, dtype=np.float64)
    c_out = w.shape[0]
    var = np.asarray(bn.var, dtype=np.float64).reshape(c_out)
    bad = np.nonzero(var <= 0.0)[0]
    if bad.size:
        raise ConfigurationError(f"batch norm variance must be positive; zero/negative at channel {int(bad[0])}")
    gamma = np.asarray(bn.gamma, dtype=np.float64).reshape(c_out)
    beta = np.asarray(bn.beta, dtype=np.float64).reshape(c_out)
    mean = np.asarray(bn.mean, dtype=np.float64).reshape(c_out)
    bias = np.zeros(c_out) if conv_bias is None else np.asarray(conv_bias, dtype=np.float64).reshape(c_out)

    scale = gamma / np.sqrt(var + bn.eps)
    folded_w = w * scale.reshape((c_out,) + (1,) * (w.ndim - 1))
    folded_b = beta + (bias - mean) * scale
    return folded_w, folded_b
