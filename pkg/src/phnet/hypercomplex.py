"""Quaternion convolution and parameterized hypercomplex convolution (PHC).

A PHC layer carries n learned algebra matrices A_i (each n x n) and n filter
banks F_i of shape (Cout/n, Cin/n, kh, kw). Its effective convolution weight
is the sum of Kronecker products

    W = sum_i  A_i  (x)  F_i

which reduces the free-parameter count of the convolution by roughly 1/n.
With n=1 and A_0=[[1]] the layer is exactly a real convolution; with n=4 and
the fixed Hamilton sign matrices it is exactly a quaternion convolution.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import AlgebraDimensionError, ShapeError
from .nn import Module
from .tensor import Tensor

__all__ = [
    "Quaternion",
    "hamilton_product",
    "hamilton_matrices",
    "complex_matrices",
    "natural_algebra",
    "quaternion_conv2d",
    "quaternion_block_weight",
    "phc_materialize",
    "PHConv2d",
    "count_params",
]


# -- quaternion scalar algebra ------------------------------------------------


@dataclass(frozen=True)
class Quaternion:
    """q = q0 + q1*i + q2*j + q3*k with real coefficients."""

    q0: float
    q1: float
    q2: float
    q3: float

    def __mul__(self, other):
        return hamilton_product(self, other)

    def conjugate(self):
        return Quaternion(self.q0, -self.q1, -self.q2, -self.q3)

    def norm(self):
        return float(np.sqrt(self.q0 ** 2 + self.q1 ** 2 + self.q2 ** 2 + self.q3 ** 2))

    def as_array(self):
        return np.array([self.q0, self.q1, self.q2, self.q3], dtype=np.float64)


def hamilton_product(p, q):
    """Quaternion multiplication p*q (non-commutative)."""
    return Quaternion(
        p.q0 * q.q0 - p.q1 * q.q1 - p.q2 * q.q2 - p.q3 * q.q3,
        p.q0 * q.q1 + p.q1 * q.q0 + p.q2 * q.q3 - p.q3 * q.q2,
        p.q0 * q.q2 - p.q1 * q.q3 + p.q2 * q.q0 + p.q3 * q.q1,
        p.q0 * q.q3 + p.q1 * q.q2 - p.q2 * q.q1 + p.q3 * q.q0,
    )


# -- fixed algebra matrices ---------------------------------------------------


def hamilton_matrices():
    """The four 4x4 sign matrices that reproduce the quaternion block weight.

    A_i is the left-multiplication matrix of the basis element e_i, so
    sum_i A_i (x) W_i equals the quaternion convolution's block matrix.
    """
    a = np.zeros((4, 4, 4))
    a[0] = np.eye(4)
    a[1] = [[0, -1, 0, 0], [1, 0, 0, 0], [0, 0, 0, -1], [0, 0, 1, 0]]
    a[2] = [[0, 0, -1, 0], [0, 0, 0, 1], [1, 0, 0, 0], [0, -1, 0, 0]]
    a[3] = [[0, 0, 0, -1], [0, 0, -1, 0], [0, 1, 0, 0], [1, 0, 0, 0]]
    return a


def complex_matrices():
    a = np.zeros((2, 2, 2))
    a[0] = np.eye(2)
    a[1] = [[0, -1], [1, 0]]
    return a


def natural_algebra(n):
    """Left-multiplication matrices of the natural algebra for n, or None."""
    if n == 1:
        return np.ones((1, 1, 1))
    if n == 2:
        return complex_matrices()
    if n == 4:
        return hamilton_matrices()
    return None


# -- quaternion convolution ---------------------------------------------------

# (component index s, sign) of the block-matrix entry at (row, col):
# row r of the block weight is [ +-W_s conv x_col ] summed over col.
_QCONV_PATTERN = (
    ((0, 1), (1, -1), (2, -1), (3, -1)),
    ((1, 1), (0, 1), (3, -1), (2, 1)),
    ((2, 1), (3, 1), (0, 1), (1, -1)),
    ((3, 1), (2, -1), (1, 1), (0, 1)),
)


def quaternion_block_weight(w0, w1, w2, w3):
    """Materialize the 4x4 sign-patterned block weight as a numpy array."""
    comps = (w0, w1, w2, w3)
    rows = []
    for row in _QCONV_PATTERN:
        rows.append(np.concatenate([sign * comps[s] for s, sign in row], axis=1))
    return np.concatenate(rows, axis=0)


def quaternion_conv2d(x, weights, bias=None, stride=1, padding=0):
    """Quaternion convolution of an (N, 4c, H, W) input.

    ``weights`` are the four component filter banks W0..W3, each of shape
    (co, c, kh, kw); the four input channel groups are the quaternion
    components in order. Built directly from signed real convolutions, which
    is numerically identical to convolving with the materialized block weight.
    """
    if len(weights) != 4:
        raise ShapeError(f"quaternion_conv2d needs 4 component weights, got {len(weights)}")
    channels = x.shape[1]
    if channels % 4 != 0:
        raise AlgebraDimensionError(
            f"input channel count {channels} is not divisible by 4"
        )
    c = channels // 4
    comps = [x.narrow(1, s * c, c) for s in range(4)]
    rows = []
    for row in _QCONV_PATTERN:
        acc = None
        for col, (s, sign) in enumerate(row):
            w = weights[s] if sign > 0 else weights[s] * -1.0
            term = T.conv2d(comps[col], w, None, stride, padding)
            acc = term if acc is None else acc + term
        rows.append(acc)
    out = T.concat(rows, axis=1)
    if bias is not None:
        out = out + bias.reshape(1, bias.shape[0], 1, 1)
    return out


# -- parameterized hypercomplex convolution -----------------------------------


def phc_materialize(algebra, filters):
    """W = sum_i A_i (x) F_i, differentiable in both operands.

    ``algebra`` is a Tensor of shape (n, n, n) stacking the A_i; ``filters``
    stacks the F_i as (n, Cout/n, Cin/n, kh, kw). Each entry A_i[r, s] scales
    the block of W at output-channel block r, input-channel block s.
    """
    n = algebra.shape[0]
    if algebra.shape != (n, n, n):
        raise ShapeError(f"algebra must be (n, n, n), got {algebra.shape}")
    if filters.shape[0] != n:
        raise ShapeError(
            f"filter stack has {filters.shape[0]} banks but algebra dimension is {n}"
        )
    _, co_b, ci_b, kh, kw = filters.shape
    blocks = np.einsum("irs,iabkl->rasbkl", algebra.data, filters.data)
    out = np.ascontiguousarray(blocks.reshape(n * co_b, n * ci_b, kh, kw))

    def _bwd(g):
        g6 = g.reshape(n, co_b, n, ci_b, kh, kw)
        return [
            (algebra, np.einsum("rasbkl,iabkl->irs", g6, filters.data)),
            (filters, np.einsum("irs,rasbkl->iabkl", algebra.data, g6)),
        ]

    return Tensor._from_op(out, (algebra, filters), _bwd)


class PHConv2d(Module):
    """Convolution layer whose weight is a learned sum of Kronecker products."""

    def __init__(self, in_channels, out_channels, kernel_size, n, stride=1, padding=0,
                 bias=True, rng=None, dtype=np.float32, fixed_algebra=None):
        super().__init__()
        if in_channels % n != 0 or out_channels % n != 0:
            raise AlgebraDimensionError(
                f"channels ({in_channels} -> {out_channels}) must be divisible by n={n}"
            )
        rng = rng or np.random.default_rng()
        self.n = n
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.stride = stride
        self.padding = padding

        co_b, ci_b = out_channels // n, in_channels // n
        # uniform init with the bound of the materialized weight's fan-in
        fan_in = in_channels * kernel_size * kernel_size
        bound = np.sqrt(6.0 / fan_in)
        f = rng.uniform(-bound, bound, size=(n, co_b, ci_b, kernel_size, kernel_size))
        self.filters = Tensor(f.astype(dtype), requires_grad=True)

        if fixed_algebra is not None:
            self.algebra = Tensor(np.asarray(fixed_algebra, dtype=dtype), requires_grad=False)
        else:
            natural = natural_algebra(n)
            if natural is not None:
                a = natural + rng.normal(0.0, 0.01, size=(n, n, n))
            else:
                a = rng.normal(0.0, 1.0 / n, size=(n, n, n))
            self.algebra = Tensor(a.astype(dtype), requires_grad=True)

        self.bias = (
            Tensor(np.zeros(out_channels, dtype=dtype), requires_grad=True) if bias else None
        )

    def materialize(self):
        return phc_materialize(self.algebra, self.filters)

    def forward(self, x):
        if x.shape[1] != self.in_channels:
            raise ShapeError(
                f"input has {x.shape[1]} channels, layer expects {self.in_channels}"
            )
        return T.conv2d(x, self.materialize(), self.bias, self.stride, self.padding)

    __call__ = forward


def count_params(obj):
    """Number of learnable scalars in a layer or model."""
    if isinstance(obj, Module):
        return obj.num_params()
    if isinstance(obj, Tensor):
        return obj.size
    raise TypeError(f"cannot count parameters of {type(obj).__name__}")
