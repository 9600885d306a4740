"""Adam optimization, the early-stopped training loop, and checkpoints."""

from __future__ import annotations

import json
import struct
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import tensor as T
from .data import augment
from .errors import ConfigError, InputError
from .metrics import confusion_and_accuracy, roc_auc
from .models import ModelSpec, build_model
from .rng import substream
from .tensor import Tensor


@dataclass
class TrainConfig:
    lr: float = 1e-5
    weight_decay: float = 5e-4
    max_epochs: int = 100
    patience: int = 20
    batch_size: int = 32
    seed: int = 0
    monitor: str = "auc"  # "auc" | "accuracy"
    augment: bool = True

    def __post_init__(self):
        if self.lr <= 0:
            raise ConfigError("lr must be positive")
        if self.patience > self.max_epochs:
            raise ConfigError("patience must not exceed max_epochs")
        if self.monitor not in ("auc", "accuracy"):
            raise ConfigError(f"unknown monitor {self.monitor!r}")


class TrainingDiverged(RuntimeError):
    pass


class Adam:
    """Adam with bias correction; weight decay enters as an L2 gradient term."""

    def __init__(self, named_params, lr, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.0):
        self.named_params = list(named_params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = [np.zeros_like(p.data, dtype=np.float64) for _, p in self.named_params]
        self.v = [np.zeros_like(p.data, dtype=np.float64) for _, p in self.named_params]

    def step(self):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for (name, p), m, v in zip(self.named_params, self.m, self.v):
            g = p.grad
            if g is None:
                continue
            if not np.all(np.isfinite(g)):
                raise TrainingDiverged(f"non-finite gradient for parameter {name!r}")
            g = g.astype(np.float64)
            if self.weight_decay:
                g = g + self.weight_decay * p.data
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            mhat = m / (1 - b1 ** self.t)
            vhat = v / (1 - b2 ** self.t)
            p.data -= (self.lr * mhat / (np.sqrt(vhat) + self.eps)).astype(p.data.dtype)

    def zero_grad(self):
        for _, p in self.named_params:
            p.zero_grad()


def adam_step(params, grads, state, lr, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.0):
    """Single functional Adam update over parallel lists of numpy arrays.

    ``state`` is a dict with keys t, m, v (created when empty); returns the
    updated parameter list. Exposed for tests and scripted references.
    """
    if not state:
        state.update(t=0, m=[np.zeros_like(p) for p in params],
                     v=[np.zeros_like(p) for p in params])
    state["t"] += 1
    t = state["t"]
    b1, b2 = betas
    out = []
    for i, (p, g) in enumerate(zip(params, grads)):
        if not np.all(np.isfinite(g)):
            raise TrainingDiverged(f"non-finite gradient for parameter index {i}")
        g = g + weight_decay * p
        state["m"][i] = b1 * state["m"][i] + (1 - b1) * g
        state["v"][i] = b2 * state["v"][i] + (1 - b2) * g * g
        mhat = state["m"][i] / (1 - b1 ** t)
        vhat = state["v"][i] / (1 - b2 ** t)
        out.append(p - lr * mhat / (np.sqrt(vhat) + eps))
    return out


# -- early stopping -----------------------------------------------------------


@dataclass
class EarlyStopper:
    """Strict-improvement patience rule; ties count toward patience."""

    patience: int
    best: float = -np.inf
    best_epoch: int = -1
    stale: int = 0

    def update(self, epoch, value):
        """Record one epoch's monitor value; returns True when training must stop."""
        if value > self.best:
            self.best = value
            self.best_epoch = epoch
            self.stale = 0
        else:
            self.stale += 1
        return self.stale >= self.patience


# -- evaluation ---------------------------------------------------------------


def positive_scores(model, inputs, batch_size=64):
    """Eval-mode softmax positive-class probabilities for an input batch."""
    model.eval()
    scores = []
    with T.no_grad():
        for start in range(0, len(inputs), batch_size):
            batch = Tensor(inputs[start : start + batch_size])
            probs = T.softmax(model(batch), axis=1)
            scores.append(probs.data[:, 1])
    return np.concatenate(scores) if scores else np.zeros(0)


def evaluate(model, inputs, labels, batch_size=64):
    scores = positive_scores(model, inputs, batch_size)
    auc, _ = roc_auc(scores, labels)
    _, accuracy = confusion_and_accuracy(scores, labels)
    return {"auc": auc, "accuracy": accuracy, "scores": scores}


# -- training loop ------------------------------------------------------------


def train(model, train_set, val_set, config, out_dir=None, log_name="train_log.csv"):
    """Train with Adam, seeded shuffling/augmentation, and AUC early stopping.

    ``train_set``/``val_set`` are (inputs, labels) with stacked image+map
    channels. Returns a dict with the best state, best epoch/metric, and the
    per-epoch log rows. The retained checkpoint state is the best-monitor
    epoch, not the last.
    """
    x_train, y_train = train_set
    x_val, y_val = val_set
    if len(x_train) == 0 or len(x_val) == 0:
        raise InputError("train and val splits must be non-empty")

    optimizer = Adam(model.named_parameters(), lr=config.lr,
                     weight_decay=config.weight_decay)
    stopper = EarlyStopper(config.patience)
    best_state = None
    log_rows = []

    for epoch in range(1, config.max_epochs + 1):
        t0 = time.perf_counter()
        model.train()
        order = substream(config.seed, "shuffle", epoch).permutation(len(x_train))
        losses = []
        for start in range(0, len(order), config.batch_size):
            idx = order[start : start + config.batch_size]
            if config.augment:
                aug_rng = [substream(config.seed, "augment", epoch, int(i)) for i in idx]
                batch = np.stack(
                    [augment(x_train[i], r) for i, r in zip(idx, aug_rng)]
                ).astype(x_train.dtype)
            else:
                batch = x_train[idx]
            logits = model(Tensor(batch))
            loss = T.cross_entropy(logits, y_train[idx])
            if not np.isfinite(loss.item()):
                raise TrainingDiverged(
                    f"non-finite loss at epoch {epoch}, batch {start // config.batch_size}"
                )
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            losses.append(loss.item())

        val = evaluate(model, x_val, y_val, batch_size=config.batch_size)
        monitored = val[config.monitor]
        elapsed = time.perf_counter() - t0
        log_rows.append(
            {
                "epoch": epoch,
                "train_loss": float(np.mean(losses)),
                "val_auc": val["auc"],
                "val_accuracy": val["accuracy"],
                "elapsed_s": elapsed,
            }
        )
        improved = monitored > stopper.best
        stop = stopper.update(epoch, monitored)
        if improved:
            best_state = {k: v.copy() for k, v in model.state_arrays().items()}
        if stop:
            break

    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        with open(out_dir / log_name, "w") as fh:
            fh.write("epoch,train_loss,val_auc,val_accuracy,elapsed_s\n")
            for row in log_rows:
                fh.write(
                    f"{row['epoch']},{row['train_loss']:.8f},{row['val_auc']:.8f},"
                    f"{row['val_accuracy']:.8f},{row['elapsed_s']:.3f}\n"
                )

    model.load_state_arrays(best_state)
    return {
        "best_state": best_state,
        "best_epoch": stopper.best_epoch,
        "best_metric": stopper.best,
        "log": log_rows,
    }


# -- checkpoints --------------------------------------------------------------

CHECKPOINT_MAGIC = b"PHCK0001"


def _pad4(shape):
    """Rank-4 framing shape: pad short ranks, collapse leading dims of long ones."""
    if len(shape) <= 4:
        return (1,) * (4 - len(shape)) + tuple(shape)
    lead = int(np.prod(shape[: len(shape) - 3]))
    return (lead,) + tuple(shape[-3:])


def save_checkpoint(path, spec, state, meta=None):
    """Single-file checkpoint: JSON header plus PHT1-framed tensors.

    PHC layers store algebra and filters separately (never the materialized
    weight), so the 1/n parameter saving holds on disk.
    """
    from .io import MAGIC as PHT1_MAGIC

    entries = []
    blobs = []
    for name, arr in state.items():
        arr = np.ascontiguousarray(arr)
        if arr.dtype == np.float64:
            tag = 1
        else:
            arr = arr.astype(np.float32)
            tag = 0
        shape4 = _pad4(arr.shape)
        blob = (
            PHT1_MAGIC
            + struct.pack("<BB", tag, 4)
            + struct.pack("<4I", *shape4)
            + arr.reshape(shape4).astype(arr.dtype.newbyteorder("<")).tobytes()
        )
        entries.append({"name": name, "shape": list(arr.shape),
                        "dtype": "f64" if tag else "f32", "length": len(blob)})
        blobs.append(blob)
    header = json.dumps(
        {"spec": spec.to_dict(), "tensors": entries, "meta": meta or {}},
        sort_keys=True,
    ).encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        for blob in blobs:
            fh.write(blob)


def load_checkpoint(path):
    """Returns (spec, state dict, meta)."""
    from .io import MAGIC as PHT1_MAGIC

    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:8] != CHECKPOINT_MAGIC:
        raise InputError(f"{path}: not a phnet checkpoint")
    (hlen,) = struct.unpack_from("<I", raw, 8)
    header = json.loads(raw[12 : 12 + hlen].decode())
    spec = ModelSpec.from_dict(header["spec"])
    state = {}
    pos = 12 + hlen
    for entry in header["tensors"]:
        blob = raw[pos : pos + entry["length"]]
        pos += entry["length"]
        if blob[:8] != PHT1_MAGIC:
            raise InputError(f"{path}: corrupt tensor frame for {entry['name']!r}")
        tag, _rank = struct.unpack_from("<BB", blob, 8)
        shape4 = struct.unpack_from("<4I", blob, 10)
        dtype = np.dtype("<f8") if tag else np.dtype("<f4")
        arr = np.frombuffer(blob[26:], dtype=dtype).reshape(shape4)
        state[entry["name"]] = np.ascontiguousarray(
            arr.reshape(entry["shape"]).astype(dtype.newbyteorder("="))
        )
    return spec, state, header.get("meta", {})


def model_from_checkpoint(path, dtype=np.float32):
    spec, state, meta = load_checkpoint(path)
    model = build_model(spec, rng=np.random.default_rng(0), dtype=dtype)
    model.load_state_arrays(state)
    return model, spec, meta
