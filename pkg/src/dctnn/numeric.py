"""Dense tensors with a small reverse-mode gradient tape.

Values are numpy arrays (real or complex) that are frozen after
construction. Every op that touches a tensor requiring gradients records
its parents and a backward closure; :func:`backward` walks that record in
reverse topological order.

Complex gradients follow the conjugate convention
``grad = dL/dRe(z) + 1j * dL/dIm(z)``, so a unitary map ``F`` back-propagates
as ``F^H``. Gradients flowing into real tensors keep only the real part.
"""
from __future__ import annotations

import math
from typing import Callable, Iterable, Iterator, Sequence

import numpy as np
from scipy.special import erf
from scipy.stats import truncnorm


class DimensionError(ValueError):
    """Raised when tensor or image shapes are incompatible."""


class GradientContractError(RuntimeError):
    """Raised when backward is asked to differentiate something it did not record."""


def trunc_normal(rng: np.random.Generator, shape, std: float = 0.02) -> np.ndarray:
    """Normal(0, std) truncated to +-2 std."""
    return truncnorm.rvs(-2.0, 2.0, loc=0.0, scale=std, size=shape, random_state=rng)


def _freeze(arr) -> np.ndarray:
    arr = np.asarray(arr)
    if arr.flags.writeable and not arr.flags.owndata and arr.base is not None:
        arr = arr.copy()
    arr.flags.writeable = False
    return arr


def _as_array(data, dtype=None) -> np.ndarray:
    arr = np.array(data, dtype=dtype, copy=True)
    if dtype is None and not np.iscomplexobj(arr) and arr.dtype.kind != "f":
        arr = arr.astype(np.float64)
    return arr


class Tensor:
    __array_priority__ = 1000
    __slots__ = ("data", "requires_grad", "grad", "name", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        arr = _as_array(data, dtype)
        if not np.all(np.isfinite(arr)):
            raise ValueError("tensor entries must be finite")
        self.data = _freeze(arr)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None

    @classmethod
    def _node(cls, arr: np.ndarray, parents: Sequence[Tensor], backward: Callable) -> Tensor:
        out = cls.__new__(cls)
        out.data = _freeze(arr)
        out.grad = None
        out.name = None
        out.requires_grad = any(p.requires_grad for p in parents)
        if out.requires_grad:
            out._parents = tuple(parents)
            out._backward = backward
        else:
            out._parents = ()
            out._backward = None
        return out

    # -- array protocol -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
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

    @property
    def is_complex(self) -> bool:
        return np.iscomplexobj(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self):
        return self.data.item()

    def detach(self) -> Tensor:
        return Tensor._node(self.data, (), None)

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{tag}, requires_grad={self.requires_grad})"

    # -- operators ------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape) -> Tensor:
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes) -> Tensor:
        return transpose(self, axes if axes else None)

    @property
    def T(self) -> Tensor:
        return swapaxes(self, -1, -2)

    def sum(self, axis=None) -> Tensor:
        return tsum(self, axis)

    def mean(self, axis=None) -> Tensor:
        return mean(self, axis)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor._node(_as_array(x), (), None)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _fit(grad: np.ndarray, like: Tensor) -> np.ndarray:
    grad = _unbroadcast(grad, like.shape)
    if not like.is_complex and np.iscomplexobj(grad):
        grad = grad.real
    return grad


# -- elementwise ---------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return Tensor._node(a.data + b.data, (a, b), lambda g: (_fit(g, a), _fit(g, b)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return Tensor._node(a.data - b.data, (a, b), lambda g: (_fit(g, a), _fit(-g, b)))


def neg(a) -> Tensor:
    a = as_tensor(a)
    return Tensor._node(-a.data, (a,), lambda g: (-g,))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        return _fit(g * np.conj(b.data), a), _fit(g * np.conj(a.data), b)

    return Tensor._node(a.data * b.data, (a, b), bw)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data

    def bw(g):
        ga = g / np.conj(b.data)
        gb = -g * np.conj(out / b.data)
        return _fit(ga, a), _fit(gb, b)

    return Tensor._node(out, (a, b), bw)


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return Tensor._node(out, (a,), lambda g: (g * np.conj(out),))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = 1.0 / (1.0 + np.exp(-a.data))
    return Tensor._node(out, (a,), lambda g: (g * out * (1.0 - out),))


def tabs(a) -> Tensor:
    """Absolute value of a real tensor; subgradient 0 at the kink."""
    a = as_tensor(a)
    if a.is_complex:
        raise TypeError("tabs is defined for real tensors only")
    return Tensor._node(np.abs(a.data), (a,), lambda g: (g * np.sign(a.data),))


def gelu(a) -> Tensor:
    """Exact (erf) GELU."""
    a = as_tensor(a)
    x = a.data
    cdf = 0.5 * (1.0 + erf(x / math.sqrt(2.0)))
    pdf = np.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi)
    return Tensor._node(x * cdf, (a,), lambda g: (g * (cdf + x * pdf),))


def real(a) -> Tensor:
    a = as_tensor(a)
    # conjugate convention: a real upstream gradient is already dL/dRe + 0j
    return Tensor._node(np.real(a.data).copy(), (a,), lambda g: (g.astype(a.dtype),))


# -- reductions and layout -------------------------------------------------

def tsum(a, axis=None) -> Tensor:
    a = as_tensor(a)
    out = np.sum(a.data, axis=axis)

    def bw(g):
        g = np.asarray(g)
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return Tensor._node(np.asarray(out), (a,), bw)


def mean(a, axis=None) -> Tensor:
    a = as_tensor(a)
    n = a.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return tsum(a, axis) * (1.0 / n)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    return Tensor._node(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    axes = tuple(ax % a.ndim for ax in axes)
    inv = tuple(np.argsort(axes))
    return Tensor._node(np.transpose(a.data, axes).copy(), (a,), lambda g: (np.transpose(g, inv),))


def swapaxes(a, ax1: int, ax2: int) -> Tensor:
    a = as_tensor(a)
    axes = list(range(a.ndim))
    axes[ax1], axes[ax2] = axes[ax2], axes[ax1]
    return transpose(a, axes)


def gather(a, index, axis: int = -1) -> Tensor:
    """``np.take`` along one axis; repeated indices accumulate in backward."""
    a = as_tensor(a)
    index = np.asarray(index, dtype=np.intp)
    axis = axis % a.ndim
    out = np.take(a.data, index, axis=axis)

    def bw(g):
        ga = np.zeros(a.shape, dtype=np.result_type(g, a.data))
        moved = np.moveaxis(ga, axis, 0)
        np.add.at(moved, index, np.moveaxis(g, axis, 0))
        return (ga,)

    return Tensor._node(out, (a,), bw)


# -- linear algebra -------------------------------------------------------

def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul needs rank >= 2 operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"inner dimensions disagree: {a.shape} @ {b.shape}")
    out = np.matmul(a.data, b.data)

    def bw(g):
        ga = np.matmul(g, np.conj(np.swapaxes(b.data, -1, -2)))
        gb = np.matmul(np.conj(np.swapaxes(a.data, -1, -2)), g)
        return _fit(ga, a), _fit(gb, b)

    return Tensor._node(out, (a, b), bw)


def softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return Tensor._node(out, (a,), bw)


def layer_norm(a, gain, bias, eps: float = 1e-5) -> Tensor:
    a, gain, bias = as_tensor(a), as_tensor(gain), as_tensor(bias)
    d = a.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise DimensionError(f"layer_norm gain/bias must have shape ({d},)")
    mu = a.data.mean(axis=-1, keepdims=True)
    xc = a.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = xc * rstd
    out = xhat * gain.data + bias.data

    def bw(g):
        gx = g * gain.data
        ga = rstd * (gx - gx.mean(axis=-1, keepdims=True)
                     - xhat * (gx * xhat).mean(axis=-1, keepdims=True))
        return ga, _fit(g * xhat, gain), _fit(g, bias)

    return Tensor._node(out, (a, gain, bias), bw)


# -- Fourier ----------------------------------------------------------------

def dft2(a) -> Tensor:
    """Orthonormal 2D DFT over the last two axes (unshifted, DC at [0, 0])."""
    a = as_tensor(a)
    if a.ndim < 2:
        raise DimensionError("dft2 needs at least two axes")
    out = np.fft.fft2(a.data, norm="ortho")
    return Tensor._node(out, (a,), lambda g: (_fit(np.fft.ifft2(g, norm="ortho"), a),))


def idft2(a) -> Tensor:
    a = as_tensor(a)
    if a.ndim < 2:
        raise DimensionError("idft2 needs at least two axes")
    out = np.fft.ifft2(a.data, norm="ortho")
    return Tensor._node(out, (a,), lambda g: (_fit(np.fft.fft2(g, norm="ortho"), a),))


# -- gradients --------------------------------------------------------------

class ParamStore:
    """Named leaf tensors with matching gradient slots.

    Updates go through :meth:`assign`, which swaps in a fresh leaf so that
    any tensor already captured by a recorded graph stays untouched.
    """

    def __init__(self):
        self._params: dict[str, Tensor] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.step = 0

    def add(self, name: str, value) -> Tensor:
        if name in self._params:
            raise KeyError(f"duplicate parameter name {name!r}")
        t = Tensor(value, requires_grad=True, name=name)
        self._params[name] = t
        self.grads[name] = np.zeros_like(t.data)
        return t

    def assign(self, name: str, value) -> None:
        old = self._params[name]
        value = np.asarray(value, dtype=old.dtype)
        if value.shape != old.shape:
            raise DimensionError(f"{name}: shape {value.shape} != {old.shape}")
        self._params[name] = Tensor(value, requires_grad=True, name=name)

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self) -> Iterator[str]:
        return iter(self._params)

    def __len__(self) -> int:
        return len(self._params)

    def items(self) -> Iterable[tuple[str, Tensor]]:
        return self._params.items()

    def names(self) -> list[str]:
        return list(self._params)

    def zero_grad(self) -> None:
        for name, t in self._params.items():
            self.grads[name] = np.zeros_like(t.data)

    def count(self) -> int:
        return int(sum(t.size for t in self._params.values()))

    def state(self) -> dict[str, np.ndarray]:
        return {name: t.data for name, t in self._params.items()}


def _toposort(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor, params: ParamStore | None = None) -> dict[int, np.ndarray]:
    """Back-propagate a scalar loss.

    Gradients of leaves are written to ``leaf.grad`` and, when ``params`` is
    given, accumulated into ``params.grads``. Every gradient-carrying leaf in
    the graph must then be registered in ``params``.
    """
    if not isinstance(loss, Tensor) or loss.size != 1:
        raise GradientContractError("loss must be a scalar Tensor")
    if not loss.requires_grad:
        raise GradientContractError("loss was not produced by a recorded computation")
    if params is not None:
        known = {id(t) for _, t in params.items()}
    order = _toposort(loss)
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None) if node._backward is not None else grads.get(id(node))
        if node._backward is None:
            if node.requires_grad:
                if params is not None and id(node) not in known:
                    raise GradientContractError(f"leaf {node!r} is not registered in the ParamStore")
                node.grad = np.zeros_like(node.data) if g is None else g
            continue
        if g is None:
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = pg if key not in grads else grads[key] + pg
    if params is not None:
        for name, t in params.items():
            if id(t) in grads:
                params.grads[name] = params.grads[name] + grads[id(t)]
    return grads


def relative_error(analytic, numeric, floor: float = 1e-6) -> np.ndarray:
    analytic, numeric = np.asarray(analytic), np.asarray(numeric)
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / scale


def gradcheck(loss_fn: Callable[[], Tensor], params: ParamStore, names: Iterable[str] | None = None,
              n_coords: int = 20, h: float = 1e-5, seed: int = 0) -> dict[str, float]:
    """Compare tape gradients with central finite differences.

    Samples up to ``n_coords`` coordinates per named parameter and returns
    the worst elementwise relative error for each.
    """
    rng = np.random.default_rng(seed)
    params.zero_grad()
    backward(loss_fn(), params)
    analytic = {name: params.grads[name].copy() for name in params}
    worst: dict[str, float] = {}
    for name in (params.names() if names is None else names):
        base = params[name].data.copy()
        flat = base.reshape(-1)
        coords = rng.choice(flat.size, size=min(n_coords, flat.size), replace=False)
        errs = []
        for c in coords:
            bumped = flat.copy()
            bumped[c] = flat[c] + h
            params.assign(name, bumped.reshape(base.shape))
            up = float(loss_fn().data.real)
            bumped[c] = flat[c] - h
            params.assign(name, bumped.reshape(base.shape))
            down = float(loss_fn().data.real)
            params.assign(name, base)
            fd = (up - down) / (2.0 * h)
            errs.append(float(relative_error(analytic[name].reshape(-1)[c].real, fd)))
        worst[name] = max(errs)
    return worst
