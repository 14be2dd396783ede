"""Training objectives: per-level cross-entropy, tree-path KL, and ablation variants.

All losses are pure functions of per-level logit vectors (coarse -> fine order)
and differentiate through torch autograd.  The tree-path losses consume the
finest-first concatenated layout shared with ``taxonomy.encode_tree_path``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .taxonomy import TaxonomyTree, encode_tree_path

VARIANTS = ("tk_kl", "tk_bce", "flat_consistency", "none")


@dataclass(frozen=True)
class LossConfig:
    alpha: float = 0.5          # weight of the consistency term
    variant: str = "tk_kl"
    label_smoothing: float = 0.0

    def __post_init__(self):
        if not np.isfinite(self.alpha) or self.alpha < 0:
            raise ValueError(f"alpha must be finite and >= 0, got {self.alpha}")
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown loss variant {self.variant!r}, expected one of {VARIANTS}")
        if not 0.0 <= self.label_smoothing < 1.0:
            raise ValueError("label_smoothing must be in [0, 1)")


def _check_levels(level_logits, path):
    if len(level_logits) != len(path):
        raise ValueError(f"{len(level_logits)} logit vectors for a {len(path)}-level path")
    for l, logits in enumerate(level_logits, start=1):
        if logits.dim() != 1:
            raise ValueError(f"level {l} logits must be 1-D, got shape {tuple(logits.shape)}")
        if not 0 <= path[l - 1] < logits.shape[0]:
            raise IndexError(f"label {path[l - 1]} out of range at level {l}")


def hv_loss(level_logits, path, label_smoothing: float = 0.0) -> torch.Tensor:
    """Sum over levels of cross-entropy between softmax(logits_l) and the true label."""
    _check_levels(level_logits, path)
    total = None
    for logits, y in zip(level_logits, path):
        logp = torch.log_softmax(logits, dim=0)
        term = -(1.0 - label_smoothing) * logp[y] - label_smoothing * logp.mean()
        total = term if total is None else total + term
    return total


def concat_finest_first(level_logits) -> torch.Tensor:
    """Concatenate per-level logits (given coarse -> fine) finest block first."""
    return torch.cat(tuple(reversed(tuple(level_logits))))


def tk_loss(level_logits, target) -> torch.Tensor:
    """KL(target || softmax(concatenated logits)) over the finest-first layout.

    ``target`` is the tree-path distribution (mass 1/L at each level's label);
    its zero entries contribute nothing to the divergence.
    """
    concat = concat_finest_first(level_logits)
    target = torch.as_tensor(np.asarray(target), dtype=concat.dtype)
    if target.shape != concat.shape:
        raise ValueError(f"target length {target.shape[0]} != concatenated logits "
                         f"length {concat.shape[0]}")
    logq = torch.log_softmax(concat, dim=0)
    pos = target > 0
    t = target[pos]
    return (t * (torch.log(t) - logq[pos])).sum()


def tk_bce_variant(level_logits, target) -> torch.Tensor:
    """Elementwise sigmoid BCE between concatenated logits and the tree-path target.

    Averages over all positions so the scale is stable across taxonomies of
    different total class counts.
    """
    concat = concat_finest_first(level_logits)
    target = torch.as_tensor(np.asarray(target), dtype=concat.dtype)
    if target.shape != concat.shape:
        raise ValueError(f"target length {target.shape[0]} != concatenated logits "
                         f"length {concat.shape[0]}")
    return torch.nn.functional.binary_cross_entropy_with_logits(concat, target)


def flat_consistency_variant(fine_logits, tree: TaxonomyTree, coarse_label: int) -> torch.Tensor:
    """Bottom-up variant: coarse scores from child-summed fine softmax, BCE to one-hot.

    The coarse score of class ``c`` is the total fine softmax mass on ``c``'s
    children, so scores sum to 1 across coarse classes.
    """
    if fine_logits.dim() != 1 or fine_logits.shape[0] != tree.level_sizes[-1]:
        raise ValueError(f"fine logits must have length {tree.level_sizes[-1]}, "
                         f"got shape {tuple(fine_logits.shape)}")
    if not 0 <= coarse_label < tree.level_sizes[0]:
        raise IndexError(f"coarse label {coarse_label} out of range")
    probs = torch.softmax(fine_logits, dim=0)
    coarse_of_leaf = torch.tensor(
        [_root_of(tree, leaf) for leaf in range(tree.level_sizes[-1])])
    scores = torch.zeros(tree.level_sizes[0], dtype=probs.dtype)
    scores = scores.index_add(0, coarse_of_leaf, probs)
    target = torch.zeros_like(scores)
    target[coarse_label] = 1.0
    scores = scores.clamp(1e-12, 1.0 - 1e-12)
    bce = -(target * torch.log(scores) + (1.0 - target) * torch.log(1.0 - scores))
    return bce.mean()


def _root_of(tree: TaxonomyTree, leaf: int) -> int:
    idx = leaf
    for level in range(tree.num_levels, 1, -1):
        idx = tree.parent(level, idx)
    return idx


def total_loss(level_logits, path, tree: TaxonomyTree, config: LossConfig):
    """Combined objective: per-level cross-entropy plus ``alpha`` times the variant.

    Returns ``(total, parts)`` where ``parts`` carries the detached component
    values for logging.
    """
    hv = hv_loss(level_logits, path, label_smoothing=config.label_smoothing)
    if config.variant == "none" or config.alpha == 0.0:
        consistency = None
    elif config.variant == "tk_kl":
        consistency = tk_loss(level_logits, encode_tree_path(tree, path))
    elif config.variant == "tk_bce":
        consistency = tk_bce_variant(level_logits, encode_tree_path(tree, path))
    else:
        consistency = flat_consistency_variant(level_logits[-1], tree, path[0])
    total = hv if consistency is None else hv + config.alpha * consistency
    parts = {"hv": float(hv.detach()),
             "consistency": 0.0 if consistency is None else float(consistency.detach())}
    return total, parts
