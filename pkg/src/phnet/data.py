"""Attention-map-conditioned data pipeline.

Each sample stacks image channels with one attention-map channel (map last;
PH layers assign component roles by channel-block order, so the order is an
external contract). Includes preprocessing, registered train-time
augmentation, a synthetic lesion-corpus generator, and manifest handling.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import io as phio
from .errors import ConfigError, InputError, ShapeError, StratificationError
from .imageops import bilinear_resize, hflip, rotate_bilinear, vflip
from .rng import substream

SPLITS = ("train", "val", "test")


# -- core sample / manifest types ---------------------------------------------


@dataclass
class AugmentedSample:
    """Standardized image plus [0,1] attention map plus binary label."""

    image: np.ndarray  # (C_img, H, W), C_img in {1, 3}
    attn_map: np.ndarray  # (1, H, W) in [0, 1]
    label: int
    id: str
    patient_id: str | None = None

    def validate(self):
        if self.image.shape[1:] != self.attn_map.shape[1:]:
            raise ShapeError(
                f"image {self.image.shape} and map {self.attn_map.shape} spatial dims differ"
            )
        if self.attn_map.min() < 0 or self.attn_map.max() > 1:
            raise InputError("attention map values must lie in [0, 1]")


def stack_input(sample):
    """Image channels first, attention map last: (C_img + 1, H, W)."""
    sample.validate()
    return np.concatenate([sample.image, sample.attn_map], axis=0)


def unstack_input(stacked, c_img):
    return stacked[:c_img], stacked[c_img:]


@dataclass
class ManifestRecord:
    id: str
    image: str
    map: str  # may be empty
    label: int
    patient: str  # may be empty
    split: str


@dataclass
class Manifest:
    records: list = field(default_factory=list)

    HEADER = ("id", "image", "map", "label", "patient", "split")

    def validate(self):
        seen = {}
        patient_split = {}
        for r in self.records:
            if r.split not in SPLITS:
                raise InputError(f"record {r.id}: unknown split {r.split!r}")
            if r.id in seen and seen[r.id] != r.split:
                raise InputError(f"id {r.id} appears in two splits")
            seen[r.id] = r.split
            if r.patient:
                if r.patient in patient_split and patient_split[r.patient] != r.split:
                    raise InputError(f"patient {r.patient} spans two splits")
                patient_split[r.patient] = r.split

    def split(self, name):
        return [r for r in self.records if r.split == name]

    def save(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(self.HEADER)
            for r in self.records:
                writer.writerow([r.id, r.image, r.map, r.label, r.patient, r.split])

    @staticmethod
    def load(path):
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = tuple(next(reader))
            if header != Manifest.HEADER:
                raise InputError(f"{path}: unexpected manifest header {header}")
            records = [
                ManifestRecord(row[0], row[1], row[2], int(row[3]), row[4], row[5])
                for row in reader
                if row
            ]
        manifest = Manifest(records)
        manifest.validate()
        return manifest


# -- preprocessing and augmentation -------------------------------------------


def preprocess(image, target=384):
    """Bilinear resize to target x target, then per-channel z-score."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim == 2:
        img = img[None]
    if img.size == 0:
        raise InputError("empty image")
    img = bilinear_resize(img, target, target)
    mean = img.mean(axis=(1, 2), keepdims=True)
    std = img.std(axis=(1, 2), keepdims=True)
    return (img - mean) / np.maximum(std, 1e-8)


def rescale_map(attn_map):
    """Min-max rescale an external map to [0, 1] per image."""
    m = np.asarray(attn_map, dtype=np.float64)
    lo, hi = m.min(), m.max()
    if hi - lo < 1e-12:
        return np.zeros_like(m)
    return (m - lo) / (hi - lo)


def augment(x, rng):
    """Training-time flips and small rotation, same transform for all channels.

    Each flip fires with probability 0.5; the rotation angle is uniform in
    (-10, +10) degrees about the image center with bilinear interpolation and
    zero fill. Image and map channels stay registered because the whole stack
    is transformed at once.
    """
    out = np.asarray(x, dtype=np.float64)
    if rng.random() < 0.5:
        out = hflip(out)
    if rng.random() < 0.5:
        out = vflip(out)
    angle = rng.uniform(-10.0, 10.0)
    out = rotate_bilinear(out, angle)
    return out


# -- synthetic corpus ---------------------------------------------------------


@dataclass
class SyntheticConfig:
    size: int = 64
    n_samples: int = 512
    radius_range: tuple = (3, 6)
    contrast: float = 0.5
    noise_scale: float = 0.35
    distractors: float = 3.0  # mean count of lesion-like texture blobs per image
    fidelity: float = 0.9
    class_balance: float = 0.5
    seed: int = 0

    def __post_init__(self):
        lo, hi = self.radius_range
        if not (0 < lo <= hi):
            raise ConfigError(f"degenerate radius range {self.radius_range}")
        if hi >= self.size / 2:
            raise ConfigError(f"lesion radius {hi} infeasible for size {self.size}")
        if not 0.0 <= self.fidelity <= 1.0:
            raise ConfigError("fidelity must be in [0, 1]")
        if not 0.0 < self.class_balance < 1.0:
            raise ConfigError("class balance must be in (0, 1)")


def _texture(rng, size, scale):
    """Smooth background texture: blurred white noise around mid-gray."""
    noise = rng.normal(0.0, 1.0, size=(size + 8, size + 8))
    kernel = np.outer(np.hanning(9), np.hanning(9))
    kernel /= kernel.sum()
    from numpy.lib.stride_tricks import sliding_window_view

    smooth = (sliding_window_view(noise, (9, 9)) * kernel).sum(axis=(2, 3))
    return 0.5 + scale * smooth[:size, :size]


def _disc(size, cy, cx, radius, softness=1.0):
    yy, xx = np.mgrid[0:size, 0:size]
    dist = np.sqrt((yy - cy) ** 2 + (xx - cx) ** 2)
    return np.clip((radius - dist) / softness, 0.0, 1.0)


def _gaussian_blob(size, cy, cx, sigma):
    yy, xx = np.mgrid[0:size, 0:size]
    return np.exp(-(((yy - cy) ** 2 + (xx - cx) ** 2) / (2.0 * sigma ** 2)))


def _stamp_disc(img, config, rng, cy, cx):
    radius = rng.uniform(*config.radius_range)
    disc = _disc(img.shape[0], cy, cx, radius)
    texture = 1.0 + 0.25 * rng.normal(0.0, 1.0, size=img.shape)
    return img + config.contrast * disc * texture


def make_sample(config, rng, positive):
    """One synthetic image/map pair; returns (image, map, lesion center or None).

    Every image carries a Poisson number of lesion-like distractor blobs;
    positives add one more, the true lesion, at the spot the attention map
    highlights. Without the map the classes differ only in blob count.
    """
    size = config.size
    img = _texture(rng, size, config.noise_scale)
    margin = config.radius_range[1] + 2

    def random_center():
        return rng.uniform(margin, size - margin), rng.uniform(margin, size - margin)

    for _ in range(rng.poisson(config.distractors)):
        img = _stamp_disc(img, config, rng, *random_center())

    cy, cx = random_center()
    center = None
    if positive:
        img = _stamp_disc(img, config, rng, cy, cx)
        center = (cy, cx)
    sigma = np.mean(config.radius_range)
    blob = _gaussian_blob(size, cy, cx, sigma)
    noise_map = rng.uniform(0.0, 1.0, size=(size, size))
    attn = config.fidelity * blob + (1.0 - config.fidelity) * noise_map
    img = np.clip(img, 0.0, 2.5) / 2.5
    return img[None], np.clip(attn, 0.0, 1.0)[None], center


def generate_synthetic(config, out_dir, fractions=(0.6, 0.2, 0.2)):
    """Write a deterministic corpus of PHT1 files plus manifest.csv.

    Returns (manifest, ground_truth) where ground_truth maps sample id to the
    lesion center (None for negatives).
    """
    out_dir = Path(out_dir)
    (out_dir / "images").mkdir(parents=True, exist_ok=True)
    (out_dir / "maps").mkdir(parents=True, exist_ok=True)
    n_pos = int(round(config.n_samples * config.class_balance))
    labels = [1] * n_pos + [0] * (config.n_samples - n_pos)
    ground_truth = {}
    records = []
    for idx, label in enumerate(labels):
        sample_rng = substream(config.seed, "sample", idx)
        img, attn, center = make_sample(config, sample_rng, positive=bool(label))
        sid = f"s{idx:05d}"
        ground_truth[sid] = center
        img_rel = f"images/{sid}.pht1"
        map_rel = f"maps/{sid}.pht1"
        phio.save_pht1(out_dir / img_rel, img[None].astype(np.float32))
        phio.save_pht1(out_dir / map_rel, attn[None].astype(np.float32))
        records.append(ManifestRecord(sid, img_rel, map_rel, label, "", "train"))
    manifest = split_stratified(records, fractions, by_patient=False,
                                seed=int(substream(config.seed, "split").integers(2 ** 31)))
    manifest.save(out_dir / "manifest.csv")
    return manifest, ground_truth


# -- splitting ----------------------------------------------------------------


def _allocate(count, fractions):
    """Largest-remainder split of ``count`` items into len(fractions) bins."""
    raw = [count * f for f in fractions]
    base = [int(np.floor(r)) for r in raw]
    rem = count - sum(base)
    order = np.argsort([b - r for b, r in zip(base, raw)])
    for i in range(rem):
        base[order[i]] += 1
    return base


def split_stratified(records, fractions, by_patient=False, seed=0):
    """Assign splits preserving class proportions; patients stay atomic."""
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ConfigError(f"split fractions {fractions} do not sum to 1")
    rng = substream(seed, "stratify")
    records = list(records)

    if not by_patient:
        by_class = {}
        for r in records:
            by_class.setdefault(r.label, []).append(r)
        for label, group in sorted(by_class.items()):
            if len(group) < len(fractions):
                raise StratificationError(
                    f"class {label} has {len(group)} records for {len(fractions)} splits"
                )
            idx = rng.permutation(len(group))
            counts = _allocate(len(group), fractions)
            pos = 0
            for split_name, count in zip(SPLITS, counts):
                for i in idx[pos : pos + count]:
                    group[i].split = split_name
                pos += count
        return Manifest(records)

    # patient-wise: assign whole patient groups, greedily balancing class counts
    groups = {}
    for r in records:
        key = r.patient or r.id
        groups.setdefault(key, []).append(r)
    class_labels = sorted({r.label for r in records})
    if len(groups) < len(fractions):
        raise StratificationError(
            f"{len(groups)} patients cannot populate {len(fractions)} splits"
        )
    targets = {
        split_name: {
            label: frac * sum(1 for r in records if r.label == label)
            for label in class_labels
        }
        for split_name, frac in zip(SPLITS, fractions)
    }
    filled = {s: {label: 0 for label in class_labels} for s in SPLITS}
    keys = sorted(groups, key=lambda k: -len(groups[k]))
    keys = [keys[i] for i in rng.permutation(len(keys))]
    keys.sort(key=lambda k: -len(groups[k]))
    for key in keys:
        group = groups[key]
        deficits = {
            s: sum(targets[s][label] - filled[s][label] for label in class_labels)
            for s in SPLITS
        }
        best = max(SPLITS, key=lambda s: deficits[s])
        for r in group:
            r.split = best
            filled[best][r.label] += 1
    return Manifest(records)


# -- corpus loading -----------------------------------------------------------


def load_corpus(manifest, root, map_policy="from_manifest", target_size=None,
                standardize=True):
    """Load every record into memory as stacked (C_img+1, H, W) inputs.

    map_policy: "from_manifest" reads the map column, "zero_map" substitutes
    all-zero maps. Returns {split: (inputs, labels, ids)} with float32 inputs.
    """
    root = Path(root)
    out = {s: ([], [], []) for s in SPLITS}
    for r in manifest.records:
        img = phio.load_image(root / r.image)
        if standardize:
            img = preprocess(img, target=target_size or img.shape[-1])
        if map_policy == "zero_map" or not r.map:
            attn = np.zeros((1,) + img.shape[1:])
        elif map_policy == "from_manifest":
            attn = rescale_map(phio.load_image(root / r.map))
            if attn.shape[1:] != img.shape[1:]:
                attn = rescale_map(bilinear_resize(attn, img.shape[1], img.shape[2]))
        else:
            raise ConfigError(f"unknown map policy {map_policy!r}")
        sample = AugmentedSample(img, attn, r.label, r.id, r.patient or None)
        xs, ys, ids = out[r.split]
        xs.append(stack_input(sample))
        ys.append(r.label)
        ids.append(r.id)
    return {
        s: (
            np.stack(xs).astype(np.float32) if xs else np.zeros((0,)),
            np.array(ys, dtype=np.int64),
            ids,
        )
        for s, (xs, ys, ids) in out.items()
    }
