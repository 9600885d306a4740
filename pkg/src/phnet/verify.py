"""Self-check suite behind the ``verify`` CLI command.

Each check recomputes its expected values from an independent route
(scalar quaternion algebra, naive Kronecker expansion, finite differences,
pairwise Mann-Whitney) and compares against the production path.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .hypercomplex import (
    PHConv2d,
    Quaternion,
    hamilton_matrices,
    quaternion_conv2d,
)
from .metrics import roc_auc
from .nn import BatchNorm2d
from .tensor import Tensor


def _finite_diff(f, arr, eps=1e-5):
    grad = np.zeros_like(arr)
    flat = arr.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + eps
        fp = f()
        flat[i] = old - eps
        fm = f()
        flat[i] = old
        gflat[i] = (fp - fm) / (2 * eps)
    return grad


def _rel_err(a, b):
    return np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-8))


def check_hamilton_laws():
    i = Quaternion(0, 1, 0, 0)
    j = Quaternion(0, 0, 1, 0)
    k = Quaternion(0, 0, 0, 1)
    ok = (i * j) == k and (j * i) == Quaternion(0, 0, 0, -1)
    one = Quaternion(1, 0, 0, 0)
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(50):
        p = Quaternion(*rng.normal(size=4))
        q = Quaternion(*rng.normal(size=4))
        ok = ok and (one * q) == q
        worst = max(worst, abs((p * q).norm() - p.norm() * q.norm()))
        conj = (p.conjugate() * p).as_array()
        worst = max(worst, float(np.abs(conj - [p.norm() ** 2, 0, 0, 0]).max()))
    return ok and worst < 1e-10, f"max law residual {worst:.2e}"


def check_n1_reduction(shapes=30):
    rng = np.random.default_rng(11)
    worst = 0.0
    for _ in range(shapes):
        cin, cout = rng.integers(1, 5, size=2)
        k = int(rng.choice([1, 3]))
        layer = PHConv2d(int(cin), int(cout), k, n=1, padding=k // 2, bias=False,
                         dtype=np.float64, fixed_algebra=np.ones((1, 1, 1)))
        x = Tensor(rng.normal(size=(2, int(cin), 6, 6)))
        direct = T.conv2d(x, Tensor(layer.filters.data[0]), None, 1, k // 2)
        via_phc = layer(x)
        worst = max(worst, float(np.abs(direct.data - via_phc.data).max()))
    return worst == 0.0, f"max |PHC(n=1) - conv2d| = {worst:.2e} (must be 0)"


def check_quaternion_equivalence():
    rng = np.random.default_rng(13)
    worst = 0.0
    for _ in range(10):
        c, co = int(rng.integers(1, 3)), int(rng.integers(1, 3))
        k = int(rng.choice([1, 3]))
        ws = [Tensor(rng.normal(size=(co, c, k, k))) for _ in range(4)]
        x = Tensor(rng.normal(size=(2, 4 * c, 5, 5)))
        direct = quaternion_conv2d(x, ws, None, 1, k // 2)
        layer = PHConv2d(4 * c, 4 * co, k, n=4, padding=k // 2, bias=False,
                         dtype=np.float64, fixed_algebra=hamilton_matrices())
        layer.filters.data = np.stack([w.data for w in ws])
        worst = max(worst, float(np.abs(direct.data - layer(x).data).max()))
    return worst < 1e-12, f"max |direct - materialized| = {worst:.2e}"


def check_pointwise_hamilton():
    rng = np.random.default_rng(17)
    worst = 0.0
    for _ in range(20):
        wq = Quaternion(*rng.normal(size=4))
        xq = Quaternion(*rng.normal(size=4))
        ws = [Tensor(np.full((1, 1, 1, 1), v)) for v in wq.as_array()]
        x = Tensor(xq.as_array().reshape(1, 4, 1, 1))
        out = quaternion_conv2d(x, ws).data.reshape(4)
        worst = max(worst, float(np.abs(out - (wq * xq).as_array()).max()))
    return worst < 1e-12, f"max pointwise deviation {worst:.2e}"


def check_gradients(seeds=5, tol=1e-4):
    worst = 0.0
    for seed in range(seeds):
        rng = np.random.default_rng(100 + seed)
        x = rng.normal(size=(2, 4, 5, 5))
        layer = PHConv2d(4, 4, 3, n=2, padding=1, bias=True, dtype=np.float64,
                         rng=rng)
        bn = BatchNorm2d(4, dtype=np.float64)

        def loss_fn():
            out = T.relu(bn(layer(Tensor(x))))
            return float((out.data ** 2).sum())

        out = T.relu(bn(layer(Tensor(x))))
        loss = (out * out).sum()
        loss.backward()
        for param, grad in ((layer.algebra, layer.algebra.grad),
                            (layer.filters, layer.filters.grad),
                            (bn.gamma, bn.gamma.grad)):
            fd = _finite_diff(loss_fn, param.data)
            worst = max(worst, float(_rel_err(grad, fd)))
    return worst < tol, f"max relative gradient error {worst:.2e}"


def check_auc_oracle(instances=200):
    rng = np.random.default_rng(23)
    worst = 0.0
    for _ in range(instances):
        n = int(rng.integers(4, 40))
        scores = rng.choice(np.round(rng.normal(size=6), 1), size=n)
        labels = rng.integers(0, 2, size=n)
        if labels.min() == labels.max():
            labels[0] = 1 - labels[0]
        auc, _ = roc_auc(scores, labels)
        pos = scores[labels == 1]
        neg = scores[labels == 0]
        wins = (pos[:, None] > neg[None, :]).sum() + 0.5 * (pos[:, None] == neg[None, :]).sum()
        worst = max(worst, abs(auc - wins / (len(pos) * len(neg))))
    return worst < 1e-12, f"max |trapezoid - pairwise| = {worst:.2e}"


ALL_CHECKS = (
    ("hamilton-product laws", check_hamilton_laws),
    ("phc n=1 real reduction", check_n1_reduction),
    ("quaternion-conv equivalence", check_quaternion_equivalence),
    ("pointwise hamilton product", check_pointwise_hamilton),
    ("gradient finite differences", check_gradients),
    ("auc pairwise oracle", check_auc_oracle),
)


def run_all(report=print):
    failures = 0
    for name, check in ALL_CHECKS:
        passed, detail = check()
        report(f"[{'PASS' if passed else 'FAIL'}] {name}: {detail}")
        if not passed:
            failures += 1
    return failures
