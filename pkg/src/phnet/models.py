"""PHResNet classifiers and the attention-pooling map producer.

Residual function per block: BN(PHC(ReLU(BN(PHC(x))))), added to an identity
or 1x1-projection shortcut, followed by ReLU. Depth 18 uses the [2,2,2,2]
basic-block layout, depth 50 the [3,4,6,3] bottleneck layout, and "mini" is a
two-stage test-scale variant.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import AlgebraDimensionError, ConfigError
from .hypercomplex import PHConv2d
from .imageops import bilinear_resize
from .nn import BatchNorm2d, Linear, Module

BASIC_LAYOUT = {18: (2, 2, 2, 2)}
BOTTLENECK_LAYOUT = {50: (3, 4, 6, 3)}
# reproduces the reference parameter budget (16M real / 4M at n=4)
BOTTLENECK_EXPANSION = 2


@dataclass
class ModelSpec:
    """Declarative PHResNet description; serializable into run configs."""

    depth: str = "18"  # "18" | "50" | "mini"
    n: int = 2
    in_channels: int = 2
    num_classes: int = 2
    stage_widths: tuple = ()

    def __post_init__(self):
        self.depth = str(self.depth)
        if self.depth not in ("18", "50", "mini"):
            raise ConfigError(f"unknown depth {self.depth!r}")
        if not self.stage_widths:
            self.stage_widths = (16, 32) if self.depth == "mini" else (64, 128, 256, 512)
        self.stage_widths = tuple(int(w) for w in self.stage_widths)
        if self.in_channels % self.n != 0:
            raise AlgebraDimensionError(
                f"in_channels={self.in_channels} not divisible by n={self.n}"
            )
        if self.depth == "mini" and (len(self.stage_widths) > 2 or max(self.stage_widths) > 64):
            raise ConfigError("mini variant is limited to 2 stages of width <= 64")

    def to_dict(self):
        return {
            "depth": self.depth,
            "n": self.n,
            "in_channels": self.in_channels,
            "num_classes": self.num_classes,
            "stage_widths": list(self.stage_widths),
        }

    @staticmethod
    def from_dict(d):
        return ModelSpec(
            depth=d["depth"],
            n=int(d["n"]),
            in_channels=int(d["in_channels"]),
            num_classes=int(d["num_classes"]),
            stage_widths=tuple(d.get("stage_widths") or ()),
        )


def _round_width(width, n):
    """Smallest multiple of n that is >= width."""
    return ((width + n - 1) // n) * n


def _phc(cin, cout, k, n, stride, rng, dtype):
    fixed = np.ones((1, 1, 1)) if n == 1 else None
    return PHConv2d(cin, cout, k, n, stride=stride, padding=k // 2, bias=False,
                    rng=rng, dtype=dtype, fixed_algebra=fixed)


class PHBasicBlock(Module):
    def __init__(self, in_ch, width, n, stride, rng, dtype=np.float32):
        super().__init__()
        self.conv1 = _phc(in_ch, width, 3, n, stride, rng, dtype)
        self.bn1 = BatchNorm2d(width, dtype=dtype)
        self.conv2 = _phc(width, width, 3, n, 1, rng, dtype)
        self.bn2 = BatchNorm2d(width, dtype=dtype)
        self.out_channels = width
        if stride != 1 or in_ch != width:
            self.down_conv = PHConv2d(in_ch, width, 1, n, stride=stride, padding=0,
                                      bias=False, rng=rng, dtype=dtype,
                                      fixed_algebra=np.ones((1, 1, 1)) if n == 1 else None)
            self.down_bn = BatchNorm2d(width, dtype=dtype)
        else:
            self.down_conv = None
            self.down_bn = None

    def forward(self, x):
        out = T.relu(self.bn1(self.conv1(x)))
        out = self.bn2(self.conv2(out))
        shortcut = x if self.down_conv is None else self.down_bn(self.down_conv(x))
        return T.relu(out + shortcut)

    __call__ = forward


class PHBottleneck(Module):
    def __init__(self, in_ch, width, n, stride, rng, dtype=np.float32):
        super().__init__()
        out_ch = width * BOTTLENECK_EXPANSION
        self.conv1 = _phc(in_ch, width, 1, n, 1, rng, dtype)
        self.bn1 = BatchNorm2d(width, dtype=dtype)
        self.conv2 = _phc(width, width, 3, n, stride, rng, dtype)
        self.bn2 = BatchNorm2d(width, dtype=dtype)
        self.conv3 = _phc(width, out_ch, 1, n, 1, rng, dtype)
        self.bn3 = BatchNorm2d(out_ch, dtype=dtype)
        self.out_channels = out_ch
        if stride != 1 or in_ch != out_ch:
            self.down_conv = _phc(in_ch, out_ch, 1, n, stride, rng, dtype)
            self.down_bn = BatchNorm2d(out_ch, dtype=dtype)
        else:
            self.down_conv = None
            self.down_bn = None

    def forward(self, x):
        out = T.relu(self.bn1(self.conv1(x)))
        out = T.relu(self.bn2(self.conv2(out)))
        out = self.bn3(self.conv3(out))
        shortcut = x if self.down_conv is None else self.down_bn(self.down_conv(x))
        return T.relu(out + shortcut)

    __call__ = forward


class PHResNet(Module):
    def __init__(self, spec, rng=None, dtype=np.float32):
        super().__init__()
        rng = rng or np.random.default_rng(0)
        self.spec = spec
        n = spec.n
        widths = [_round_width(w, n) for w in spec.stage_widths]

        if spec.depth == "mini":
            self.stem_conv = _phc(spec.in_channels, widths[0], 3, n, 2, rng, dtype)
            self.stem_pool = ("max", 2, 2, 0)
            block_counts = [1] * len(widths)
            block_cls = PHBasicBlock
        else:
            self.stem_conv = PHConv2d(spec.in_channels, widths[0], 7, n, stride=2,
                                      padding=3, bias=False, rng=rng, dtype=dtype,
                                      fixed_algebra=np.ones((1, 1, 1)) if n == 1 else None)
            self.stem_pool = ("max", 3, 2, 1)
            if spec.depth == "18":
                block_counts = list(BASIC_LAYOUT[18])
                block_cls = PHBasicBlock
            else:
                block_counts = list(BOTTLENECK_LAYOUT[50])
                block_cls = PHBottleneck
        self.stem_bn = BatchNorm2d(widths[0], dtype=dtype)

        blocks = []
        in_ch = widths[0]
        for stage, (width, count) in enumerate(zip(widths, block_counts)):
            for b in range(count):
                stride = 2 if (stage > 0 and b == 0) else 1
                block = block_cls(in_ch, width, n, stride, rng, dtype)
                in_ch = block.out_channels
                blocks.append(block)
        self.blocks = blocks
        self.head = Linear(in_ch, spec.num_classes, rng=rng, dtype=dtype)

    def forward(self, x):
        out = T.relu(self.stem_bn(self.stem_conv(x)))
        _, k, s, p = self.stem_pool
        out = T.max_pool2d(out, k, s, p)
        for block in self.blocks:
            out = block(out)
        out = T.global_avg_pool(out)
        return self.head(out)

    __call__ = forward


def build_model(spec, rng=None, dtype=np.float32):
    """Instantiate the PHResNet described by ``spec``."""
    return PHResNet(spec, rng=rng, dtype=dtype)


# -- attention-pooling map producer -------------------------------------------


class AttentionPoolNet(Module):
    """Tiny conv trunk plus a single-query attention-pooling classifier.

    The per-position softmax weights double as a saliency map: they are
    reshaped to the feature grid, bilinearly upsampled to the input
    resolution, and min-max rescaled to [0, 1] per sample.
    """

    def __init__(self, in_channels, num_classes=2, feat_dim=32, rng=None, dtype=np.float32):
        super().__init__()
        from .nn import Conv2d

        rng = rng or np.random.default_rng(0)
        self.feat_dim = feat_dim
        self.conv1 = Conv2d(in_channels, 16, 3, stride=2, padding=1, rng=rng, dtype=dtype)
        self.conv2 = Conv2d(16, feat_dim, 3, stride=2, padding=1, rng=rng, dtype=dtype)
        self.query = Linear(feat_dim, 1, rng=rng, dtype=dtype)
        self.classifier = Linear(feat_dim, num_classes, rng=rng, dtype=dtype)

    def forward(self, x):
        """Returns (logits[N, K], attention weights as (N, 1, h, w) Tensor)."""
        feats = T.relu(self.conv2(T.relu(self.conv1(x))))
        n, d, h, w = feats.shape
        flat = feats.transpose(0, 2, 3, 1).reshape(n * h * w, d)
        logits_pos = (self.query(flat) * (1.0 / np.sqrt(d))).reshape(n, h * w)
        attn = T.softmax(logits_pos, axis=1)
        weighted = feats.reshape(n, d, h * w) * attn.reshape(n, 1, h * w)
        pooled = weighted.sum(axis=2)
        return self.classifier(pooled), attn.reshape(n, 1, h, w)

    __call__ = forward

    def attention_map(self, x, out_h=None, out_w=None):
        """Saliency maps at input resolution, numpy (N, 1, H, W) in [0, 1]."""
        with T.no_grad():
            logits, attn = self.forward(x)
        out_h = out_h or x.shape[2]
        out_w = out_w or x.shape[3]
        maps = []
        for sample in attn.data:
            up = bilinear_resize(sample, out_h, out_w)
            lo, hi = up.min(), up.max()
            if hi - lo < 1e-12:
                maps.append(np.full_like(up, 0.5))
            else:
                maps.append((up - lo) / (hi - lo))
        return np.stack(maps), logits.data


def attention_pool_forward(x, head):
    """Functional wrapper: (logits, upsampled [0,1] attention maps)."""
    logits, _ = head.forward(x)
    maps, _ = head.attention_map(x)
    return logits, maps
