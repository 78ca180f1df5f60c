"""Dense arrays with reverse-mode differentiation.

A :class:`Tensor` wraps a numpy array. Every operation in this module that
receives at least one tensor with ``requires_grad`` records its parents and a
closure mapping the output gradient to parent gradients; :func:`backward`
walks that record in reverse topological order.

Shapes are explicit. The only implicit expansion is the bias add over the
last axis. Most ops accept an optional leading batch axis so a whole
mini-batch can be pushed through one recorded graph.
"""

from __future__ import annotations

import contextlib
from collections.abc import Iterator, MutableMapping
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from tap.errors import ConfigError, ContractError, DimensionError, NumericError

_DTYPES = {32: np.float32, 64: np.float64}
_precision = [32]


def set_precision(bits: int) -> None:
    if bits not in _DTYPES:
        raise ConfigError(f"precision must be 32 or 64, got {bits}")
    _precision[0] = bits


def get_precision() -> int:
    return _precision[0]


def default_dtype() -> type:
    return _DTYPES[_precision[0]]


@contextlib.contextmanager
def precision(bits: int):
    prev = get_precision()
    set_precision(bits)
    try:
        yield
    finally:
        set_precision(prev)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, _parents: tuple = (), _backward=None):
        self.data = data
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def detach(self) -> Tensor:
        return Tensor(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    def __add__(self, other: Tensor) -> Tensor:
        return add(self, other)

    def __sub__(self, other: Tensor) -> Tensor:
        return sub(self, other)

    def __mul__(self, other: Tensor) -> Tensor:
        return mul(self, other)

    def __matmul__(self, other: Tensor) -> Tensor:
        return matmul(self, other)


def tensor(data, requires_grad: bool = False, dtype=None) -> Tensor:
    """Build a leaf tensor in the active precision (or ``dtype``)."""
    arr = np.array(data, dtype=dtype or default_dtype(), copy=True)
    if arr.ndim == 0:
        arr = arr.reshape(())
    return Tensor(arr, requires_grad=requires_grad)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else tensor(x)


def _result(data: np.ndarray, parents: tuple[Tensor, ...], fn: Callable) -> Tensor:
    if any(p.requires_grad for p in parents):
        return Tensor(data, True, parents, fn)
    return Tensor(data)


def _same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} differ")


# --------------------------------------------------------------------------
# elementwise


def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "add")
    return _result(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "sub")
    return _result(a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "mul")
    return _result(a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data))


def scale(a: Tensor, c: float) -> Tensor:
    c = a.dtype.type(c)
    return _result(a.data * c, (a,), lambda g: (g * c,))


def mul_const(a: Tensor, m: np.ndarray) -> Tensor:
    """Elementwise product with a constant array of identical shape."""
    m = np.asarray(m, dtype=a.dtype)
    if m.shape != a.shape:
        raise DimensionError(f"mul_const: shapes {a.shape} and {m.shape} differ")
    return _result(a.data * m, (a,), lambda g: (g * m,))


def scale_rows(a: Tensor, factors: np.ndarray) -> Tensor:
    """Multiply sample ``i`` of a batched tensor by the constant ``factors[i]``."""
    f = np.asarray(factors, dtype=a.dtype)
    if f.shape != (a.shape[0],):
        raise DimensionError(f"scale_rows: factors {f.shape} do not match batch of {a.shape}")
    f = f.reshape((-1,) + (1,) * (a.ndim - 1))
    return _result(a.data * f, (a,), lambda g: (g * f,))


def add_bias(x: Tensor, b: Tensor) -> Tensor:
    if b.ndim != 1 or x.shape[-1] != b.shape[0]:
        raise DimensionError(f"add_bias: bias {b.shape} does not match last axis of {x.shape}")
    return _result(x.data + b.data, (x, b), lambda g: (g, g.reshape(-1, b.shape[0]).sum(axis=0)))


def square(a: Tensor) -> Tensor:
    return _result(a.data * a.data, (a,), lambda g: (2 * a.data * g,))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _result(a.data * mask, (a,), lambda g: (g * mask,))


def clamp(a: Tensor, lo: float, hi: float) -> Tensor:
    inside = (a.data >= lo) & (a.data <= hi)
    out = np.clip(a.data, lo, hi).astype(a.dtype)
    return _result(out, (a,), lambda g: (g * inside,))


# --------------------------------------------------------------------------
# reductions


def sum(a: Tensor) -> Tensor:  # noqa: A001 - mirrors numpy naming
    shape = a.shape
    return _result(np.asarray(a.data.sum(), dtype=a.dtype), (a,), lambda g: (np.broadcast_to(g, shape).copy(),))


def mean(a: Tensor) -> Tensor:
    n = a.data.size
    shape = a.shape
    return _result(
        np.asarray(a.data.mean(), dtype=a.dtype),
        (a,),
        lambda g: (np.full(shape, g / n, dtype=g.dtype),),
    )


def mean_axis(a: Tensor, axis: int) -> Tensor:
    axis = axis % a.ndim
    n = a.shape[axis]
    shape = a.shape
    out = a.data.mean(axis=axis)
    return _result(out, (a,), lambda g: (np.broadcast_to(np.expand_dims(g, axis) / n, shape).copy(),))


def sum_axis(a: Tensor, axis: int) -> Tensor:
    axis = axis % a.ndim
    shape = a.shape
    return _result(a.data.sum(axis=axis), (a,), lambda g: (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),))


def max_axis(a: Tensor, axis: int) -> Tensor:
    """Max along ``axis``; the gradient goes to the first maximal entry."""
    axis = axis % a.ndim
    idx = np.argmax(a.data, axis=axis)
    out = np.take_along_axis(a.data, np.expand_dims(idx, axis), axis=axis).squeeze(axis)

    def back(g):
        ga = np.zeros_like(a.data)
        np.put_along_axis(ga, np.expand_dims(idx, axis), np.expand_dims(g, axis), axis=axis)
        return (ga,)

    return _result(out, (a,), back)


# --------------------------------------------------------------------------
# shape manipulation


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    old = a.shape
    return _result(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def transpose(a: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return _result(np.ascontiguousarray(a.data.transpose(axes)), (a,), lambda g: (g.transpose(inv),))


def concat(parts: Sequence[Tensor], axis: int) -> Tensor:
    axis = axis % parts[0].ndim
    sizes = [p.shape[axis] for p in parts]
    for p in parts[1:]:
        ref = parts[0].shape
        if p.ndim != len(ref) or any(p.shape[i] != ref[i] for i in range(p.ndim) if i != axis):
            raise DimensionError(f"concat: shapes {ref} and {p.shape} disagree off axis {axis}")
    cuts = np.cumsum(sizes)[:-1]
    return _result(np.concatenate([p.data for p in parts], axis=axis), tuple(parts), lambda g: tuple(np.split(g, cuts, axis=axis)))


def gather_rows(x: Tensor, idx: np.ndarray) -> Tensor:
    """``out[b, ...] = x[b, idx[b, ...], :]`` for a batched ``x[B, N, C]``."""
    idx = np.asarray(idx)
    if x.ndim != 3 or idx.shape[0] != x.shape[0]:
        raise DimensionError(f"gather_rows: x {x.shape} and idx {idx.shape} incompatible")
    B, N, C = x.shape
    bsel = np.arange(B).reshape((-1,) + (1,) * (idx.ndim - 1))
    out = x.data[bsel, idx]

    def back(g):
        target = ((bsel * N + idx)[..., None] * C + np.arange(C)).reshape(-1)
        gx = np.bincount(target, weights=g.reshape(-1), minlength=B * N * C)
        return (gx.astype(g.dtype).reshape(B, N, C),)

    return _result(out, (x,), back)


def group_max(x: Tensor, idx: np.ndarray) -> Tensor:
    """Fused ``max_axis(gather_rows(x, idx), axis=2)`` for ``idx[B, n, k]``.

    Gradient flows only to the first maximal neighbor per channel.
    """
    idx = np.asarray(idx)
    if x.ndim != 3 or idx.ndim != 3 or idx.shape[0] != x.shape[0]:
        raise DimensionError(f"group_max: x {x.shape} and idx {idx.shape} incompatible")
    B, N, C = x.shape
    bsel = np.arange(B)[:, None, None]
    gathered = x.data[bsel, idx]  # [B, n, k, C]
    arg = np.argmax(gathered, axis=2)  # [B, n, C]
    out = np.take_along_axis(gathered, arg[:, :, None, :], axis=2)[:, :, 0, :]
    src = np.take_along_axis(idx, arg, axis=2)  # source row per (center, channel)

    def back(g):
        target = ((bsel * N + src) * C + np.arange(C)).reshape(-1)
        gx = np.bincount(target, weights=g.reshape(-1), minlength=B * N * C)
        return (gx.astype(g.dtype).reshape(B, N, C),)

    return _result(np.ascontiguousarray(out), (x,), back)


def tile_batch(x: Tensor, batch: int) -> Tensor:
    """Stack ``batch`` copies of ``x`` along a new leading axis."""
    out = np.broadcast_to(x.data, (batch,) + x.shape).copy()
    return _result(out, (x,), lambda g: (g.sum(axis=0),))


# --------------------------------------------------------------------------
# linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product.

    ``b`` two-dimensional: a shared weight applied to every leading index of
    ``a[..., m, k]``. Otherwise both operands must carry the same leading
    dimensions (no broadcasting).
    """
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    if b.ndim == 2:
        k, p = b.shape

        def back(g):
            ga = g @ b.data.T
            gb = a.data.reshape(-1, k).T @ g.reshape(-1, p)
            return ga, gb

        return _result(a.data @ b.data, (a, b), back)
    if a.shape[:-2] != b.shape[:-2]:
        raise DimensionError(f"matmul: batch dimensions of {a.shape} and {b.shape} differ")

    def back_batched(g):
        return g @ np.swapaxes(b.data, -1, -2), np.swapaxes(a.data, -1, -2) @ g

    return _result(a.data @ b.data, (a, b), back_batched)


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    y = matmul(x, weight)
    return add_bias(y, bias) if bias is not None else y


def softmax_rows(x: Tensor) -> Tensor:
    """Softmax over the last axis with max subtraction."""
    if not np.all(np.isfinite(x.data)):
        raise NumericError("softmax_rows: non-finite input")
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=-1, keepdims=True)

    def back(g):
        return (s * (g - (g * s).sum(axis=-1, keepdims=True)),)

    return _result(s, (x,), back)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then affine ``gain * xhat + bias``."""
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise DimensionError(f"layer_norm: gain {gain.shape} / bias {bias.shape} vs input {x.shape}")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + x.dtype.type(eps))
    xhat = xc * inv
    out = xhat * gain.data + bias.data

    def back(g):
        gx_hat = g * gain.data
        gx = inv * (gx_hat - gx_hat.mean(axis=-1, keepdims=True) - xhat * (gx_hat * xhat).mean(axis=-1, keepdims=True))
        flat_g = g.reshape(-1, d)
        return gx, (flat_g * xhat.reshape(-1, d)).sum(axis=0), flat_g.sum(axis=0)

    return _result(out, (x, gain, bias), back)


def cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean negative log-likelihood of integer ``labels`` under ``softmax(logits)``."""
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise DimensionError(f"cross_entropy: logits {logits.shape} vs labels {labels.shape}")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    rows = np.arange(labels.shape[0])
    n = labels.shape[0]
    loss = np.asarray(-logp[rows, labels].mean(), dtype=logits.dtype)

    def back(g):
        p = np.exp(logp)
        p[rows, labels] -= 1
        return (p * (g / n),)

    return _result(loss, (logits,), back)


# --------------------------------------------------------------------------
# transposed convolution


def tconv_out_size(size: int, kernel: int, stride: int, pad: int, out_pad: int) -> int:
    return (size - 1) * stride - 2 * pad + kernel + out_pad


def tconv2d(x: Tensor, kernel: Tensor, stride: int, pad: int, out_pad: int, bias: Tensor | None = None) -> Tensor:
    """Transposed 2D convolution in channels-last layout.

    ``x`` is ``[h, w, c_in]`` or ``[B, h, w, c_in]``; ``kernel`` is
    ``[k, k, c_in, c_out]``. Input pixel ``(i, j)`` scatters
    ``x[i, j] @ kernel[a, b]`` onto output pixel ``(i*stride + a - pad,
    j*stride + b - pad)``; positions outside the output are dropped.
    """
    if stride < 1 or pad < 0 or out_pad < 0:
        raise ConfigError(f"tconv2d: invalid stride={stride} pad={pad} out_pad={out_pad}")
    single = x.ndim == 3
    xd = x.data[None] if single else x.data
    if xd.ndim != 4 or kernel.ndim != 4 or kernel.shape[0] != kernel.shape[1] or kernel.shape[2] != xd.shape[3]:
        raise DimensionError(f"tconv2d: input {x.shape} incompatible with kernel {kernel.shape}")
    k, _, cin, cout = kernel.shape
    B, h, w, _ = xd.shape
    H = tconv_out_size(h, k, stride, pad, out_pad)
    W = tconv_out_size(w, k, stride, pad, out_pad)
    if H <= 0 or W <= 0:
        raise ConfigError(f"tconv2d: nonpositive output extent {H}x{W}")
    # uncropped canvas large enough for both the full scatter and the output window
    FH = max((h - 1) * stride + k, pad + H)
    FW = max((w - 1) * stride + k, pad + W)
    kd = kernel.data
    z = np.tensordot(xd, kd, axes=([3], [2]))  # [B, h, w, k, k, cout]
    full = np.zeros((B, FH, FW, cout), dtype=xd.dtype)
    hs, ws = (h - 1) * stride + 1, (w - 1) * stride + 1
    for a in range(k):
        for b in range(k):
            full[:, a:a + hs:stride, b:b + ws:stride, :] += z[:, :, :, a, b, :]
    out = full[:, pad:pad + H, pad:pad + W, :]
    if bias is not None:
        if bias.shape != (cout,):
            raise DimensionError(f"tconv2d: bias {bias.shape} vs c_out={cout}")
        out = out + bias.data
    out = np.ascontiguousarray(out[0] if single else out)

    def back(g):
        g4 = g[None] if single else g
        gfull = np.zeros((B, FH, FW, cout), dtype=g4.dtype)
        gfull[:, pad:pad + H, pad:pad + W, :] = g4
        gz = np.empty((B, h, w, k, k, cout), dtype=g4.dtype)
        for a in range(k):
            for b in range(k):
                gz[:, :, :, a, b, :] = gfull[:, a:a + hs:stride, b:b + ws:stride, :]
        gx = np.tensordot(gz, kd, axes=([3, 4, 5], [0, 1, 3]))
        gk = np.tensordot(xd, gz, axes=([0, 1, 2], [0, 1, 2]))  # [cin, k, k, cout]
        grads = [gx[0] if single else gx, np.ascontiguousarray(gk.transpose(1, 2, 0, 3))]
        if bias is not None:
            grads.append(g4.reshape(-1, cout).sum(axis=0))
        return tuple(grads)

    parents = (x, kernel) if bias is None else (x, kernel, bias)
    return _result(out, parents, back)


# --------------------------------------------------------------------------
# parameters


class ParamSet(MutableMapping):
    """Named trainable tensors, iterated in lexicographic name order."""

    def __init__(self, items: dict[str, Tensor] | None = None):
        self._d: dict[str, Tensor] = {}
        for k, v in (items or {}).items():
            self[k] = v

    def __getitem__(self, name: str) -> Tensor:
        try:
            return self._d[name]
        except KeyError:
            raise ConfigError(f"missing parameter {name!r}") from None

    def __setitem__(self, name: str, value) -> None:
        t = value if isinstance(value, Tensor) else tensor(value)
        t.requires_grad = True
        self._d[name] = t

    def __delitem__(self, name: str) -> None:
        del self._d[name]

    def __iter__(self) -> Iterator[str]:
        return iter(sorted(self._d))

    def __len__(self) -> int:
        return len(self._d)

    def __contains__(self, name) -> bool:
        return name in self._d

    def numel(self) -> int:
        return int(np.sum([t.data.size for t in self._d.values()]))

    def zero_grad(self) -> None:
        for t in self._d.values():
            t.grad = None

    def subset(self, prefix: str) -> ParamSet:
        """View (shared tensors) of all parameters whose name starts with ``prefix``."""
        out = ParamSet()
        out._d = {k: v for k, v in self._d.items() if k.startswith(prefix)}
        return out

    def update(self, other=(), **kw) -> None:
        items = other.items() if hasattr(other, "items") else other
        for k, v in items:
            self[k] = v

    def copy(self, dtype=None) -> ParamSet:
        """Deep copy; optionally cast to ``dtype``."""
        return ParamSet({k: tensor(v.data, dtype=dtype or v.dtype) for k, v in self._d.items()})

    def state(self) -> dict[str, np.ndarray]:
        return {k: self._d[k].data for k in self}


def init_linear(params: ParamSet, prefix: str, d_in: int, d_out: int, rng: np.random.Generator, gain: float = 2.0) -> None:
    std = np.sqrt(gain / d_in)
    params[f"{prefix}.weight"] = tensor(rng.standard_normal((d_in, d_out)) * std)
    params[f"{prefix}.bias"] = tensor(np.zeros(d_out))


def init_mlp(params: ParamSet, prefix: str, layer_dims: Sequence[int], rng: np.random.Generator) -> None:
    for i, (d_in, d_out) in enumerate(zip(layer_dims[:-1], layer_dims[1:])):
        last = i == len(layer_dims) - 2
        init_linear(params, f"{prefix}.{i}", d_in, d_out, rng, gain=1.0 if last else 2.0)


def mlp_forward(x: Tensor, params: ParamSet, layer_dims: Sequence[int], prefix: str = "mlp") -> Tensor:
    """Affine + rectifier for every hidden layer, affine only for the last."""
    if x.shape[-1] != layer_dims[0]:
        raise DimensionError(f"mlp_forward: input width {x.shape[-1]} != {layer_dims[0]}")
    n = len(layer_dims) - 1
    for i in range(n):
        x = linear(x, params[f"{prefix}.{i}.weight"], params[f"{prefix}.{i}.bias"])
        if i < n - 1:
            x = relu(x)
    return x


# --------------------------------------------------------------------------
# reverse pass


def _topo_order(root: Tensor) -> list[Tensor]:
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
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor, params: ParamSet | None = None) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every reachable leaf.

    Every tensor in ``params`` ends up with a grad array; parameters the loss
    does not depend on get exact zeros.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward: loss must be scalar, got shape {loss.shape}")
    grads: dict[int, np.ndarray] = {}
    if loss.requires_grad:
        grads[id(loss)] = np.ones_like(loss.data)
        for node in reversed(_topo_order(loss)):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                prev = grads.get(id(parent))
                grads[id(parent)] = pg if prev is None else prev + pg
    if params is not None:
        for name in params:
            t = params[name]
            if t.grad is None:
                t.grad = np.zeros_like(t.data)


# --------------------------------------------------------------------------
# finite-difference verification


@dataclass
class GradCheckReport:
    max_rel_err: float
    worst_param: str | None
    worst_index: tuple | None = None
    per_param: dict[str, float] = field(default_factory=dict)
    checked: int = 0

    def passed(self, tol: float) -> bool:
        return self.max_rel_err < tol


def rel_error(analytic: float, numeric: float, floor: float) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def grad_check(
    f: Callable[[], Tensor],
    params: ParamSet,
    eps: float = 1e-5,
    samples: int = 64,
    seed: int = 0,
    floor: float = 1e-6,
    analytic: dict[str, np.ndarray] | None = None,
) -> GradCheckReport:
    """Compare reverse-mode gradients of ``f()`` against central differences.

    Checks every element of tensors with at most ``samples`` entries, otherwise
    a seeded random subset of ``samples`` elements. ``floor`` bounds the
    relative-error denominator from below so that gradients at roundoff level
    are compared absolutely. ``analytic`` overrides the gradients (used to
    inject faults in tests).
    """
    for name in params:
        if params[name].dtype != np.float64:
            raise ContractError(f"grad_check needs 64-bit parameters; {name} is {params[name].dtype}")
    if analytic is None:
        params.zero_grad()
        backward(f(), params)
        analytic = {k: params[k].grad.copy() for k in params}
    rng = np.random.default_rng(seed)
    report = GradCheckReport(0.0, None)
    for name in params:
        data = params[name].data
        flat = data.reshape(-1)
        if flat.size <= samples:
            picks = np.arange(flat.size)
        else:
            picks = np.sort(rng.choice(flat.size, size=samples, replace=False))
        worst = 0.0
        for i in picks:
            orig = flat[i]
            flat[i] = orig + eps
            fp = f().item()
            flat[i] = orig - eps
            fm = f().item()
            flat[i] = orig
            num = (fp - fm) / (2 * eps)
            err = rel_error(float(analytic[name].reshape(-1)[i]), num, floor)
            report.checked += 1
            if err > worst:
                worst = err
            if report.worst_param is None or err > report.max_rel_err:
                report.max_rel_err = err
                report.worst_param = name
                report.worst_index = tuple(int(j) for j in np.unravel_index(int(i), data.shape))
        report.per_param[name] = worst
    return report
