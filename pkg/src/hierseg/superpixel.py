"""Superpixel extraction and per-segment feature pooling.

Images are partitioned into connected superpixels by k-means over
``(lam * row, lam * col, r, g, b)`` with grid initialization and a fixed
iteration count, followed by a connectivity-enforcement pass that merges
orphan components into the most color-similar adjacent superpixel.  The
result is deterministic for identical inputs.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

KMEANS_ITERS = 10
FOUR_CONNECTED = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)


@dataclass
class SuperpixelMap:
    """Pixel-to-superpixel assignment with per-segment centroids.

    Attributes:
        assignment: (H, W) int32 ids in ``[0, num_segments)``, total over pixels.
        num_segments: actual segment count (may be below the requested count).
        centroids: (num_segments, 5) of mean (row, col, r, g, b).
    """

    assignment: np.ndarray
    num_segments: int
    centroids: np.ndarray

    @property
    def shape(self) -> tuple:
        return self.assignment.shape

    def sizes(self) -> np.ndarray:
        return np.bincount(self.assignment.ravel(), minlength=self.num_segments)


def extract_superpixels(image: np.ndarray, k: int) -> SuperpixelMap:
    """Partition ``image`` (H, W, 3, values in [0, 1]) into at most ``k`` superpixels."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValueError(f"expected an (H, W, 3) image, got {image.shape}")
    if not np.isfinite(image).all():
        raise ValueError("image contains non-finite values")
    h, w = image.shape[:2]
    if k < 1 or k > h * w:
        raise ValueError(f"requested superpixel count {k} outside [1, {h * w}]")

    if k == h * w:
        assignment = np.arange(h * w, dtype=np.int32).reshape(h, w)
        return _finalize(image, assignment)
    if k == 1:
        return _finalize(image, np.zeros((h, w), dtype=np.int32))

    rows, cols = np.mgrid[0:h, 0:w]
    step = np.sqrt(h * w / k)
    lam = 1.0 / step  # one grid-cell displacement ~ a color difference of 1
    feats = np.concatenate(
        [lam * rows[..., None], lam * cols[..., None], image], axis=2
    ).reshape(-1, 5)

    centers = feats[_grid_seed_indices(h, w, k)]
    labels = None
    for _ in range(KMEANS_ITERS):
        d2 = ((feats[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        labels = np.argmin(d2, axis=1)
        labels = _reseed_empty(feats, centers, labels, d2)
        for c in range(len(centers)):
            centers[c] = feats[labels == c].mean(axis=0)

    assignment = _compact_labels(labels.reshape(h, w))
    assignment = _enforce_connectivity(image, assignment)
    return _finalize(image, assignment)


def _grid_seed_indices(h: int, w: int, k: int) -> np.ndarray:
    grid_rows = min(h, max(1, int(round(np.sqrt(k * h / w)))))
    grid_cols = min(w, -(-k // grid_rows))
    while grid_rows * grid_cols < k:
        grid_rows = min(h, grid_rows + 1)
        grid_cols = min(w, -(-k // grid_rows))
    seeds = []
    for i in range(grid_rows):
        for j in range(grid_cols):
            r = int((i + 0.5) * h / grid_rows)
            c = int((j + 0.5) * w / grid_cols)
            seeds.append(r * w + c)
    return np.array(sorted(set(seeds[:k]))[:k] if len(set(seeds[:k])) == k else seeds[:k])


def _reseed_empty(feats, centers, labels, d2):
    counts = np.bincount(labels, minlength=len(centers))
    for c in np.flatnonzero(counts == 0):
        # restart the dead center at the pixel farthest from its current one
        far = int(np.argmax(d2[np.arange(len(labels)), labels]))
        labels[far] = c
        d2[far, :] = 0.0
    return labels


def _compact_labels(assignment: np.ndarray) -> np.ndarray:
    ids = np.unique(assignment)
    remap = np.zeros(ids.max() + 1, dtype=np.int32)
    remap[ids] = np.arange(len(ids), dtype=np.int32)
    return remap[assignment]


def _enforce_connectivity(image: np.ndarray, assignment: np.ndarray) -> np.ndarray:
    """Keep each id's largest 4-connected component; merge orphans into neighbors."""
    assignment = assignment.copy()
    num_ids = assignment.max() + 1

    comp_labels = np.full(assignment.shape, -1, dtype=np.int64)
    comp_owner = []  # component -> superpixel id
    next_comp = 0
    for sid in range(num_ids):
        mask = assignment == sid
        labeled, n = ndimage.label(mask, structure=FOUR_CONNECTED)
        for c in range(1, n + 1):
            comp_labels[labeled == c] = next_comp
            comp_owner.append(sid)
            next_comp += 1

    comp_sizes = np.bincount(comp_labels.ravel(), minlength=next_comp)
    anchored = set()
    by_owner = {}
    for comp, owner in enumerate(comp_owner):
        by_owner.setdefault(owner, []).append(comp)
    for owner, comps in by_owner.items():
        comps.sort(key=lambda c: (-comp_sizes[c], c))
        anchored.add(comps[0])

    orphans = [c for c in range(next_comp) if c not in anchored]
    flat_img = image.reshape(-1, 3)
    while orphans:
        progressed = False
        remaining = []
        for comp in orphans:
            mask = comp_labels == comp
            neighbor_comps = _adjacent_components(comp_labels, mask)
            candidates = sorted(c for c in neighbor_comps if c in anchored)
            if not candidates:
                remaining.append(comp)
                continue
            comp_color = flat_img[mask.ravel()].mean(axis=0)
            best, best_d = None, np.inf
            for cand in candidates:
                cand_color = flat_img[(comp_labels == cand).ravel()].mean(axis=0)
                d = float(((comp_color - cand_color) ** 2).sum())
                if d < best_d - 1e-15:
                    best, best_d = cand, d
            comp_labels[mask] = best
            assignment[mask] = comp_owner[best]
            anchored.discard(comp)
            progressed = True
        if not progressed:  # cannot happen on a connected grid, guard anyway
            raise RuntimeError("connectivity repair stalled")
        orphans = remaining

    return _compact_labels(assignment)


def _adjacent_components(comp_labels: np.ndarray, mask: np.ndarray) -> set:
    dilated = ndimage.binary_dilation(mask, structure=FOUR_CONNECTED)
    border = dilated & ~mask
    return set(np.unique(comp_labels[border]))


def _finalize(image: np.ndarray, assignment: np.ndarray) -> SuperpixelMap:
    h, w = assignment.shape
    num = int(assignment.max()) + 1
    rows, cols = np.mgrid[0:h, 0:w]
    flat = assignment.ravel()
    counts = np.bincount(flat, minlength=num).astype(np.float64)
    centroids = np.zeros((num, 5), dtype=np.float64)
    centroids[:, 0] = np.bincount(flat, weights=rows.ravel(), minlength=num) / counts
    centroids[:, 1] = np.bincount(flat, weights=cols.ravel(), minlength=num) / counts
    for ch in range(3):
        centroids[:, 2 + ch] = (
            np.bincount(flat, weights=image[..., ch].ravel(), minlength=num) / counts)
    return SuperpixelMap(assignment=assignment.astype(np.int32), num_segments=num,
                         centroids=centroids)


def pool_tokens(pixel_features: np.ndarray, spmap: SuperpixelMap) -> np.ndarray:
    """Mean-pool (H, W, D) pixel features into a (num_segments, D) token array."""
    pixel_features = np.asarray(pixel_features)
    if pixel_features.shape[:2] != spmap.shape:
        raise ValueError(
            f"feature grid {pixel_features.shape[:2]} does not match map {spmap.shape}")
    flat = spmap.assignment.ravel()
    d = pixel_features.shape[2]
    counts = np.bincount(flat, minlength=spmap.num_segments).astype(np.float64)
    tokens = np.zeros((spmap.num_segments, d), dtype=np.float64)
    feats = pixel_features.reshape(-1, d)
    for j in range(d):
        tokens[:, j] = np.bincount(flat, weights=feats[:, j], minlength=spmap.num_segments)
    return tokens / counts[:, None]


def segment_boundaries(assignment: np.ndarray) -> np.ndarray:
    """Boolean mask of pixels bordering a different segment (right/down edges)."""
    edges = np.zeros(assignment.shape, dtype=bool)
    edges[:, :-1] |= assignment[:, :-1] != assignment[:, 1:]
    edges[:-1, :] |= assignment[:-1, :] != assignment[1:, :]
    return edges


def render_overlay(image: np.ndarray, assignment: np.ndarray, seed: int = 0) -> np.ndarray:
    """Segment visualization: per-id random colors blended in, white boundaries."""
    rng = np.random.default_rng(seed)
    num = int(assignment.max()) + 1
    palette = rng.uniform(0.15, 1.0, size=(num, 3))
    overlay = 0.45 * np.asarray(image, dtype=np.float64) + 0.55 * palette[assignment]
    overlay[segment_boundaries(assignment)] = 1.0
    return np.clip(overlay, 0.0, 1.0)
