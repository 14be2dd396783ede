"""Dataset ingestion and a synthetic hierarchical-shapes generator.

The generator ties each taxonomy level to a different kind of visual
evidence: the coarse class picks a global silhouette family (polygon count,
ellipse, cross, ring), while finer classes recolor a small marker inside the
shape.  Every image also carries a distractor silhouette from a different
coarse family, so classifiers that attend to the wrong object can produce
inconsistent level predictions.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .taxonomy import TaxonomyTree, infer_ancestors, save_taxonomy

log = logging.getLogger(__name__)

MAX_LEAVES = 256
BG_LEVEL = 0.08
BODY_COLOR = np.array([0.72, 0.70, 0.66])
MARKER_PALETTE = np.array([
    [0.95, 0.15, 0.15], [0.15, 0.80, 0.20], [0.20, 0.35, 0.95], [0.95, 0.85, 0.10],
    [0.90, 0.20, 0.90], [0.10, 0.85, 0.85], [0.95, 0.55, 0.10], [0.55, 0.20, 0.85],
    [0.60, 0.80, 0.20], [0.85, 0.45, 0.55], [0.25, 0.60, 0.50], [0.50, 0.50, 0.95],
    [0.80, 0.65, 0.40], [0.35, 0.25, 0.60], [0.70, 0.90, 0.80], [0.90, 0.75, 0.75],
])


class SynthConfigError(ValueError):
    """Synthetic-dataset configuration outside supported bounds."""


class LabelResolutionError(ValueError):
    """An image-folder leaf directory does not name a taxonomy leaf."""


@dataclass(frozen=True)
class SynthConfig:
    num_levels: int = 2
    coarse_classes: int = 4
    children_per_class: int = 3
    image_size: int = 64
    samples_per_leaf: int = 50
    noise_std: float = 0.02
    seed: int = 0

    def __post_init__(self):
        if self.num_levels not in (2, 3):
            raise SynthConfigError("num_levels must be 2 or 3")
        if self.coarse_classes < 2 or self.children_per_class < 2:
            raise SynthConfigError("need >= 2 coarse classes and >= 2 children per class")
        if self.image_size < 16:
            raise SynthConfigError("image_size must be >= 16")
        if self.samples_per_leaf < 1:
            raise SynthConfigError("samples_per_leaf must be >= 1")
        if self.noise_std < 0:
            raise SynthConfigError("noise_std must be >= 0")
        if self.leaf_count > MAX_LEAVES:
            raise SynthConfigError(f"{self.leaf_count} leaves exceeds the {MAX_LEAVES} cap")

    @property
    def leaf_count(self) -> int:
        leaves = self.coarse_classes * self.children_per_class
        if self.num_levels == 3:
            leaves *= self.children_per_class
        return leaves


@dataclass
class Sample:
    image: np.ndarray                 # (H, W, 3) float32 in [0, 1]
    label_path: tuple
    id: str
    mask: np.ndarray | None = None    # (H, W) uint8 region labels, 0 = background


def synth_taxonomy(config: SynthConfig) -> TaxonomyTree:
    """Taxonomy matching the generator: shape families over marker variants."""
    coarse_names = tuple(f"shape{f}" for f in range(config.coarse_classes))
    mid_names, mid_parents = [], []
    for f in range(config.coarse_classes):
        for c in range(config.children_per_class):
            mid_names.append(f"shape{f}_m{c}")
            mid_parents.append(f)
    if config.num_levels == 2:
        return TaxonomyTree(level_sizes=(config.coarse_classes, len(mid_names)),
                            parents=(tuple(mid_parents),),
                            names=(coarse_names, tuple(mid_names)))
    fine_names, fine_parents = [], []
    for m, mname in enumerate(mid_names):
        for c in range(config.children_per_class):
            fine_names.append(f"{mname}_f{c}")
            fine_parents.append(m)
    return TaxonomyTree(
        level_sizes=(config.coarse_classes, len(mid_names), len(fine_names)),
        parents=(tuple(mid_parents), tuple(fine_parents)),
        names=(coarse_names, tuple(mid_names), tuple(fine_names)))


def _polygon_mask(sides: int, size: int, center, radius: float, rotation: float) -> np.ndarray:
    rows, cols = np.mgrid[0:size, 0:size].astype(np.float64)
    dy, dx = rows - center[0], cols - center[1]
    r = np.hypot(dy, dx)
    theta = np.arctan2(dy, dx) - rotation
    step = 2 * math.pi / sides
    local = np.mod(theta, step) - step / 2
    apothem = radius * math.cos(math.pi / sides)
    return r * np.cos(local) <= apothem


def family_mask(family: int, size: int, center, radius: float) -> np.ndarray:
    """Silhouette for coarse family ``family``; families stay distinct by construction."""
    kind = family % 6
    extra = family // 6
    rotation = extra * 0.45
    if kind == 0:
        return _polygon_mask(3, size, center, radius, rotation)
    if kind == 1:
        return _polygon_mask(4, size, center, radius, rotation + math.pi / 4)
    if kind == 2:
        rows, cols = np.mgrid[0:size, 0:size].astype(np.float64)
        dy, dx = rows - center[0], cols - center[1]
        return (dx / radius) ** 2 + (dy / (0.6 * radius)) ** 2 <= 1.0
    if kind == 3:
        rows, cols = np.mgrid[0:size, 0:size].astype(np.float64)
        dy, dx = rows - center[0], cols - center[1]
        arm = 0.34 * radius
        return ((np.abs(dx) <= arm) & (np.abs(dy) <= radius)) | \
               ((np.abs(dy) <= arm) & (np.abs(dx) <= radius))
    if kind == 4:
        rows, cols = np.mgrid[0:size, 0:size].astype(np.float64)
        r = np.hypot(rows - center[0], cols - center[1])
        return (r <= radius) & (r >= 0.52 * radius)
    return _polygon_mask(5 + extra, size, center, radius, rotation)


def _paint_marker(img, mask, center, radius, outer_color, inner_color=None):
    rows, cols = np.mgrid[0:img.shape[0], 0:img.shape[1]].astype(np.float64)
    r = np.hypot(rows - center[0], cols - center[1])
    marker = (r <= radius) & mask
    img[marker] = outer_color
    if inner_color is not None:
        img[(r <= 0.5 * radius) & mask] = inner_color


def _render(config: SynthConfig, path, rng) -> tuple:
    size = config.image_size
    img = np.full((size, size, 3), BG_LEVEL, dtype=np.float64)
    mask = np.zeros((size, size), dtype=np.uint8)

    target_family = path[0]
    radius = rng.uniform(0.20, 0.26) * size
    margin = radius + 2
    center = rng.uniform(margin, size - margin, size=2)

    distractor_family = int(rng.integers(config.coarse_classes - 1))
    if distractor_family >= target_family:
        distractor_family += 1
    d_radius = rng.uniform(0.11, 0.15) * size
    for _ in range(40):
        d_center = rng.uniform(d_radius + 1, size - d_radius - 1, size=2)
        if np.hypot(*(d_center - center)) > 0.8 * (radius + d_radius):
            break

    d_mask = family_mask(distractor_family, size, d_center, d_radius)
    img[d_mask] = BODY_COLOR * 0.85
    t_mask = family_mask(target_family, size, center, radius)
    img[t_mask] = BODY_COLOR
    mask[d_mask] = 2
    mask[t_mask] = 1

    # marker colors carry the finer labels; position is a fixed offset so the
    # cue is local to the target object
    marker_center = center - np.array([0.35 * radius, 0.0])
    marker_radius = max(2.5, 0.24 * radius)
    if config.num_levels == 2:
        child = path[1] - target_family * config.children_per_class
        _paint_marker(img, t_mask, marker_center, marker_radius, MARKER_PALETTE[child])
    else:
        mid = path[1] - target_family * config.children_per_class
        fine = path[2] - path[1] * config.children_per_class
        _paint_marker(img, t_mask, marker_center, marker_radius,
                      MARKER_PALETTE[mid], MARKER_PALETTE[fine + 8])

    if config.noise_std > 0:
        img += rng.normal(0.0, config.noise_std, size=img.shape)
    return np.clip(img, 0.0, 1.0).astype(np.float32), mask


def make_synthetic(config: SynthConfig):
    """Generate ``(tree, train_samples, test_samples)`` deterministically from the seed.

    The split is 80/20 stratified by leaf.
    """
    tree = synth_taxonomy(config)
    rng = np.random.default_rng(config.seed)
    train, test = [], []
    n_train = int(round(0.8 * config.samples_per_leaf))
    for leaf in range(tree.level_sizes[-1]):
        path = infer_ancestors(tree, leaf)
        leaf_name = tree.level_name(tree.num_levels, leaf)
        for i in range(config.samples_per_leaf):
            image, mask = _render(config, path, rng)
            sample = Sample(image=image, label_path=path,
                            id=f"{leaf_name}_{i:04d}", mask=mask)
            (train if i < n_train else test).append(sample)
    return tree, train, test


def export_image_folder(root, tree: TaxonomyTree, splits: dict) -> list:
    """Write ``root/<split>/<leaf>/<id>.png`` plus taxonomy CSV and mask folders.

    ``splits`` maps split names (e.g. ``train``/``test``) to sample lists.
    Returns the list of written paths (relative to ``root``).
    """
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    written = []
    save_taxonomy(tree, str(root / "taxonomy.csv"))
    written.append("taxonomy.csv")
    for split, samples in splits.items():
        for sample in samples:
            leaf_name = tree.level_name(tree.num_levels, sample.label_path[-1])
            img_dir = root / split / leaf_name
            img_dir.mkdir(parents=True, exist_ok=True)
            rel = f"{split}/{leaf_name}/{sample.id}.png"
            Image.fromarray((sample.image * 255).round().astype(np.uint8)).save(root / rel)
            written.append(rel)
            if sample.mask is not None:
                mask_dir = root / "masks" / split
                mask_dir.mkdir(parents=True, exist_ok=True)
                mrel = f"masks/{split}/{sample.id}.png"
                Image.fromarray(sample.mask).save(root / mrel)
                written.append(mrel)
    return written


def load_image_folder(root, tree: TaxonomyTree, error_log: list | None = None) -> list:
    """Load ``root/<leaf_label>/<file>.png|jpg`` into samples.

    Unknown leaf directories abort with :class:`LabelResolutionError`;
    undecodable files are recorded in ``error_log`` (and warned) while the
    load continues.  Masks, when present next to the split under
    ``../masks/<split>/<id>.png``, are attached to the samples.
    """
    root = Path(root)
    if tree.names is None:
        raise LabelResolutionError("taxonomy has no names; cannot resolve leaf directories")
    leaf_index = {name: i for i, name in enumerate(tree.names[-1])}
    mask_dir = root.parent / "masks" / root.name

    samples = []
    leaf_dirs = sorted(p for p in root.iterdir() if p.is_dir()) if root.is_dir() else []
    if not leaf_dirs:
        log.warning("no leaf directories under %s", root)
        return samples
    for leaf_dir in leaf_dirs:
        if leaf_dir.name not in leaf_index:
            raise LabelResolutionError(
                f"directory {leaf_dir.name!r} is not a leaf of the taxonomy")
        path = infer_ancestors(tree, leaf_index[leaf_dir.name])
        for file in sorted(leaf_dir.iterdir()):
            if file.suffix.lower() not in (".png", ".jpg", ".jpeg"):
                continue
            try:
                with Image.open(file) as im:
                    image = np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0
            except Exception as exc:
                message = f"{file}: {exc}"
                log.warning("skipping undecodable image %s", message)
                if error_log is not None:
                    error_log.append(message)
                continue
            mask = None
            mask_file = mask_dir / f"{file.stem}.png"
            if mask_file.exists():
                with Image.open(mask_file) as mm:
                    mask = np.asarray(mm.convert("L"), dtype=np.uint8)
            samples.append(Sample(image=image, label_path=path, id=file.stem, mask=mask))
    return samples


def batch_iterator(samples, batch_size: int, shuffle_seed=None):
    """Yield batches covering every sample exactly once; final short batch kept."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    order = np.arange(len(samples))
    if shuffle_seed is not None:
        order = np.random.default_rng(shuffle_seed).permutation(len(samples))
    for start in range(0, len(samples), batch_size):
        yield [samples[i] for i in order[start:start + batch_size]]
