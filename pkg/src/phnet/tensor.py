"""Dense tensors with reverse-mode automatic differentiation.

Everything is backed by contiguous numpy arrays (float32 or float64).
Operations build a tape of closures; ``backward()`` on a scalar loss walks
the tape in reverse topological order and accumulates gradients additively,
micrograd-style. There are no strided views: slicing copies.
"""

from __future__ import annotations

import os
from contextlib import contextmanager

import numpy as np
from numpy.lib.stride_tricks import as_strided

from .errors import GeometryError, ShapeError, TapeError

__all__ = [
    "Tensor",
    "no_grad",
    "set_finite_checks",
    "concat",
    "conv2d",
    "batch_norm",
    "relu",
    "linear",
    "global_avg_pool",
    "max_pool2d",
    "softmax",
    "cross_entropy",
]

DTYPES = (np.float32, np.float64)

_grad_enabled = True
_finite_checks = os.environ.get("PHNET_CHECK_FINITE", "0") == "1"


def set_finite_checks(enabled):
    """Toggle the debug check that every forward result is finite."""
    global _finite_checks
    _finite_checks = bool(enabled)


@contextmanager
def no_grad():
    """Disable tape recording inside the block (eval-mode forwards)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def _as_array(data, dtype=None):
    arr = np.asarray(data, dtype=dtype)
    if arr.dtype not in (np.dtype(np.float32), np.dtype(np.float64)):
        arr = arr.astype(np.float64)
    return np.ascontiguousarray(arr)


class Tensor:
    """A numpy array plus optional gradient and tape linkage."""

    __slots__ = ("data", "grad", "requires_grad", "_prev", "_backward")

    def __init__(self, data, requires_grad=False, dtype=None):
        self.data = _as_array(data, dtype)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._prev = ()
        self._backward = None

    # -- construction helpers -------------------------------------------------

    @staticmethod
    def zeros(shape, dtype=np.float32, requires_grad=False):
        return Tensor(np.zeros(shape, dtype=dtype), requires_grad=requires_grad)

    @staticmethod
    def _from_op(data, parents, backward):
        out = Tensor.__new__(Tensor)
        out.data = data
        out.grad = None
        if _finite_checks and not np.all(np.isfinite(data)):
            raise FloatingPointError("non-finite value produced by a forward op")
        if _grad_enabled and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._prev = tuple(parents)
            out._backward = backward
        else:
            out.requires_grad = False
            out._prev = ()
            out._backward = None
        return out

    # -- basic introspection --------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data.reshape(()))

    def detach(self):
        return Tensor(self.data.copy())

    def numpy(self):
        return self.data

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype.name}, requires_grad={self.requires_grad})"

    # -- gradient plumbing ----------------------------------------------------

    def _accumulate(self, g):
        if not self.requires_grad:
            return
        g = _unbroadcast(g, self.data.shape)
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def zero_grad(self):
        self.grad = None

    def backward(self):
        """Reverse-mode pass from a scalar loss; populates .grad fields."""
        if self.data.size != 1:
            raise TapeError(f"backward requires a scalar loss, got shape {self.shape}")
        topo = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._prev:
                if id(p) not in visited:
                    stack.append((p, False))
        grads = {id(self): np.ones_like(self.data)}
        for node in reversed(topo):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is not None:
                for parent, pg in node._backward(g):
                    if not parent.requires_grad:
                        continue
                    pg = _unbroadcast(pg, parent.data.shape)
                    if id(parent) in grads:
                        grads[id(parent)] += pg
                    else:
                        grads[id(parent)] = pg.copy() if pg.base is not None else pg
            if node._prev == () or node._backward is None:
                node._accumulate(g)
        # leaves reached through ops still need their grad stored
        # (handled above: nodes without parents accumulate into .grad)

    # -- arithmetic -----------------------------------------------------------

    def _coerce(self, other):
        if isinstance(other, Tensor):
            return other
        return Tensor(np.asarray(other, dtype=self.data.dtype))

    def __add__(self, other):
        other = self._coerce(other)
        data = self.data + other.data
        return Tensor._from_op(data, (self, other), lambda g: [(self, g), (other, g)])

    __radd__ = __add__

    def __neg__(self):
        return Tensor._from_op(-self.data, (self,), lambda g: [(self, -g)])

    def __sub__(self, other):
        other = self._coerce(other)
        data = self.data - other.data
        return Tensor._from_op(data, (self, other), lambda g: [(self, g), (other, -g)])

    def __rsub__(self, other):
        return self._coerce(other) - self

    def __mul__(self, other):
        other = self._coerce(other)
        data = self.data * other.data
        return Tensor._from_op(
            data, (self, other), lambda g: [(self, g * other.data), (other, g * self.data)]
        )

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = self._coerce(other)
        data = self.data / other.data
        return Tensor._from_op(
            data,
            (self, other),
            lambda g: [
                (self, g / other.data),
                (other, -g * self.data / (other.data * other.data)),
            ],
        )

    def __pow__(self, exponent):
        if not isinstance(exponent, (int, float)):
            raise TypeError("only scalar exponents are supported")
        data = self.data ** exponent
        return Tensor._from_op(
            data, (self,), lambda g: [(self, g * exponent * self.data ** (exponent - 1))]
        )

    def matmul(self, other):
        other = self._coerce(other)
        if self.data.ndim != 2 or other.data.ndim != 2:
            raise ShapeError(f"matmul expects 2-D operands, got {self.shape} @ {other.shape}")
        data = self.data @ other.data
        return Tensor._from_op(
            data,
            (self, other),
            lambda g: [(self, g @ other.data.T), (other, self.data.T @ g)],
        )

    __matmul__ = matmul

    # -- shape ops (always copy) ---------------------------------------------

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        old = self.data.shape
        data = self.data.reshape(shape).copy()
        return Tensor._from_op(data, (self,), lambda g: [(self, g.reshape(old))])

    def transpose(self, *axes):
        inv = np.argsort(axes)
        data = np.ascontiguousarray(self.data.transpose(axes))
        return Tensor._from_op(data, (self,), lambda g: [(self, g.transpose(inv))])

    def narrow(self, axis, start, length):
        """Copy a contiguous slice along one axis."""
        idx = [slice(None)] * self.data.ndim
        idx[axis] = slice(start, start + length)
        idx = tuple(idx)
        data = self.data[idx].copy()

        def _bwd(g):
            full = np.zeros_like(self.data)
            full[idx] = g
            return [(self, full)]

        return Tensor._from_op(data, (self,), _bwd)

    # -- reductions and elementwise ------------------------------------------

    def sum(self, axis=None, keepdims=False):
        data = self.data.sum(axis=axis, keepdims=keepdims)
        data = np.asarray(data)
        shape = self.data.shape

        def _bwd(g):
            if axis is None:
                return [(self, np.broadcast_to(g, shape))]
            gg = g
            if not keepdims:
                gg = np.expand_dims(g, axis)
            return [(self, np.broadcast_to(gg, shape))]

        return Tensor._from_op(data, (self,), _bwd)

    def mean(self, axis=None, keepdims=False):
        if axis is None:
            count = self.data.size
        else:
            count = self.data.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / count)

    def exp(self):
        data = np.exp(self.data)
        return Tensor._from_op(data, (self,), lambda g: [(self, g * data)])

    def log(self):
        data = np.log(self.data)
        return Tensor._from_op(data, (self,), lambda g: [(self, g / self.data)])


def _unbroadcast(grad, shape):
    """Sum a broadcast gradient back down to ``shape``."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (g, s) in enumerate(zip(grad.shape, shape)) if s == 1 and g != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def concat(tensors, axis=0):
    tensors = list(tensors)
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def _bwd(g):
        out = []
        for t, start, stop in zip(tensors, offsets[:-1], offsets[1:]):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(start, stop)
            out.append((t, g[tuple(idx)]))
        return out

    return Tensor._from_op(data, tuple(tensors), _bwd)


def relu(x):
    data = np.maximum(x.data, 0)
    mask = x.data > 0  # subgradient at 0 is 0
    return Tensor._from_op(data, (x,), lambda g: [(x, g * mask)])


# -- convolution --------------------------------------------------------------


def _conv_out_size(size, k, stride, padding):
    return (size + 2 * padding - k) // stride + 1


def _patch_view(xp, kh, kw, stride, out_h, out_w):
    n, c = xp.shape[:2]
    s0, s1, s2, s3 = xp.strides
    return as_strided(
        xp,
        shape=(n, c, kh, kw, out_h, out_w),
        strides=(s0, s1, s2, s3, s2 * stride, s3 * stride),
        writeable=False,
    )


def conv2d(x, weight, bias=None, stride=1, padding=0):
    """2-D cross-correlation over NCHW input with an OIHW weight."""
    if x.data.ndim != 4 or weight.data.ndim != 4:
        raise ShapeError(f"conv2d expects 4-D operands, got {x.shape} and {weight.shape}")
    n, cin, h, w = x.data.shape
    cout, cin_w, kh, kw = weight.data.shape
    if cin != cin_w:
        raise ShapeError(f"conv2d channel mismatch: input {x.shape} vs weight {weight.shape}")
    out_h = _conv_out_size(h, kh, stride, padding)
    out_w = _conv_out_size(w, kw, stride, padding)
    if out_h <= 0 or out_w <= 0:
        raise GeometryError(
            f"conv2d output would be {out_h}x{out_w} for input {h}x{w}, "
            f"kernel {kh}x{kw}, stride {stride}, padding {padding}"
        )

    if padding:
        xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    else:
        xp = x.data
    patches = _patch_view(xp, kh, kw, stride, out_h, out_w)
    out = np.tensordot(patches, weight.data, axes=([1, 2, 3], [1, 2, 3]))
    out = np.ascontiguousarray(out.transpose(0, 3, 1, 2))
    if bias is not None:
        if bias.data.shape != (cout,):
            raise ShapeError(f"conv2d bias shape {bias.shape} does not match Cout={cout}")
        out += bias.data[None, :, None, None]

    parents = (x, weight) if bias is None else (x, weight, bias)

    def _bwd(g):
        grads = []
        if x.requires_grad:
            # scatter-add the per-tap contributions back onto the padded input
            dcols = np.tensordot(g, weight.data, axes=([1], [0]))  # N,Ho,Wo,Cin,kh,kw
            dxp = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    dxp[:, :, i : i + stride * out_h : stride, j : j + stride * out_w : stride] += (
                        dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
                    )
            if padding:
                dx = dxp[:, :, padding : padding + h, padding : padding + w]
            else:
                dx = dxp
            grads.append((x, dx))
        if weight.requires_grad:
            dw = np.tensordot(g, patches, axes=([0, 2, 3], [0, 4, 5]))
            grads.append((weight, dw))
        if bias is not None and bias.requires_grad:
            grads.append((bias, g.sum(axis=(0, 2, 3))))
        return grads

    return Tensor._from_op(out, parents, _bwd)


def max_pool2d(x, kernel, stride, padding=0):
    n, c, h, w = x.data.shape
    out_h = _conv_out_size(h, kernel, stride, padding)
    out_w = _conv_out_size(w, kernel, stride, padding)
    if out_h <= 0 or out_w <= 0:
        raise GeometryError(f"max_pool2d output would be {out_h}x{out_w}")
    if padding:
        xp = np.pad(
            x.data,
            ((0, 0), (0, 0), (padding, padding), (padding, padding)),
            constant_values=-np.inf,
        )
    else:
        xp = x.data
    patches = _patch_view(xp, kernel, kernel, stride, out_h, out_w)
    flat = patches.transpose(0, 1, 4, 5, 2, 3).reshape(n, c, out_h, out_w, kernel * kernel)
    idx = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0]
    out = np.ascontiguousarray(out)

    def _bwd(g):
        dxp = np.zeros_like(xp)
        ni, ci, hi, wi = np.indices((n, c, out_h, out_w), sparse=False)
        habs = hi * stride + idx // kernel
        wabs = wi * stride + idx % kernel
        np.add.at(dxp, (ni, ci, habs, wabs), g)
        if padding:
            return [(x, dxp[:, :, padding : padding + h, padding : padding + w])]
        return [(x, dxp)]

    return Tensor._from_op(out, (x,), _bwd)


def global_avg_pool(x):
    n, c, h, w = x.data.shape
    out = x.data.mean(axis=(2, 3))
    scale = 1.0 / (h * w)

    def _bwd(g):
        return [(x, np.broadcast_to(g[:, :, None, None] * scale, x.data.shape))]

    return Tensor._from_op(out, (x,), _bwd)


def linear(x, weight, bias=None):
    """x[N,D] @ weight[K,D]^T (+ bias[K])."""
    if x.data.ndim != 2 or weight.data.ndim != 2:
        raise ShapeError(f"linear expects 2-D operands, got {x.shape} and {weight.shape}")
    if x.data.shape[1] != weight.data.shape[1]:
        raise ShapeError(f"linear feature mismatch: input {x.shape} vs weight {weight.shape}")
    out = x.data @ weight.data.T
    if bias is not None:
        out = out + bias.data[None, :]
    parents = (x, weight) if bias is None else (x, weight, bias)

    def _bwd(g):
        grads = [(x, g @ weight.data), (weight, g.T @ x.data)]
        if bias is not None:
            grads.append((bias, g.sum(axis=0)))
        return grads

    return Tensor._from_op(out, parents, _bwd)


def batch_norm(x, gamma, beta, running_mean, running_var, training, eps=1e-5, momentum=0.1):
    """Per-channel batch normalization over (N, H, W) with full backward.

    ``running_mean``/``running_var`` are plain numpy arrays updated in place
    during training (running var uses the unbiased batch variance).
    """
    n, c, h, w = x.data.shape
    if gamma.data.shape != (c,) or beta.data.shape != (c,):
        raise ShapeError(f"batch_norm affine shape {gamma.shape} does not match C={c}")
    if training:
        m = n * h * w
        mu = x.data.mean(axis=(0, 2, 3))
        xc = x.data - mu[None, :, None, None]
        var = (xc * xc).mean(axis=(0, 2, 3))
        inv_std = 1.0 / np.sqrt(var + eps)
        xhat = xc * inv_std[None, :, None, None]
        running_mean *= 1.0 - momentum
        running_mean += momentum * mu
        unbiased = var * (m / (m - 1)) if m > 1 else var
        running_var *= 1.0 - momentum
        running_var += momentum * unbiased
        out = xhat * gamma.data[None, :, None, None] + beta.data[None, :, None, None]

        def _bwd(g):
            dxhat = g * gamma.data[None, :, None, None]
            dvar = (dxhat * xc).sum(axis=(0, 2, 3)) * (-0.5) * inv_std ** 3
            dmu = -dxhat.sum(axis=(0, 2, 3)) * inv_std + dvar * (-2.0 / m) * xc.sum(
                axis=(0, 2, 3)
            )
            dx = (
                dxhat * inv_std[None, :, None, None]
                + (2.0 / m) * xc * dvar[None, :, None, None]
                + (dmu / m)[None, :, None, None]
            )
            return [
                (x, dx),
                (gamma, (g * xhat).sum(axis=(0, 2, 3))),
                (beta, g.sum(axis=(0, 2, 3))),
            ]

    else:
        inv_std = 1.0 / np.sqrt(running_var + eps)
        xhat = (x.data - running_mean[None, :, None, None]) * inv_std[None, :, None, None]
        out = xhat * gamma.data[None, :, None, None] + beta.data[None, :, None, None]

        def _bwd(g):
            scale = (gamma.data * inv_std)[None, :, None, None]
            return [
                (x, g * scale),
                (gamma, (g * xhat).sum(axis=(0, 2, 3))),
                (beta, g.sum(axis=(0, 2, 3))),
            ]

    return Tensor._from_op(np.ascontiguousarray(out), (x, gamma, beta), _bwd)


def softmax(x, axis=-1):
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=axis, keepdims=True)

    def _bwd(g):
        dot = (g * s).sum(axis=axis, keepdims=True)
        return [(x, s * (g - dot))]

    return Tensor._from_op(s, (x,), _bwd)


def cross_entropy(logits, labels):
    """Mean softmax cross-entropy against integer class labels."""
    from .errors import InputError

    labels = np.asarray(labels)
    n, k = logits.data.shape
    if labels.shape != (n,):
        raise ShapeError(f"labels shape {labels.shape} does not match batch {n}")
    if labels.min() < 0 or labels.max() >= k:
        raise InputError(f"label out of range [0, {k})")
    labels = labels.astype(np.int64)
    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1))
    nll = lse - shifted[np.arange(n), labels]
    loss = np.asarray(nll.mean(), dtype=logits.data.dtype)

    def _bwd(g):
        probs = np.exp(shifted - lse[:, None])
        probs[np.arange(n), labels] -= 1.0
        return [(logits, g * probs / n)]

    return Tensor._from_op(loss, (logits,), _bwd)
