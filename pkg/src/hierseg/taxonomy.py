"""Label hierarchies: class trees, path validation, and tree-path target encoding.

A taxonomy is a strict tree over ``L`` levels (level 1 = coarsest, level L =
finest).  Classes at each level are dense 0-based integer indices assigned by
first appearance in the taxonomy file, so index assignment is deterministic.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
from dataclasses import dataclass
from typing import IO, Iterable, Sequence

import numpy as np

LabelPath = tuple  # L class indices, coarse -> fine


class TaxonomyFormatError(ValueError):
    """Malformed taxonomy file (bad header, ragged rows, duplicate leaves)."""


class TaxonomyViolationError(ValueError):
    """Structurally invalid hierarchy (a child listed under two parents)."""


@dataclass(frozen=True)
class TaxonomyTree:
    """An L-level class hierarchy.

    Attributes:
        level_sizes: classes per level, coarse to fine.
        parents: ``parents[l - 2][c]`` is the level-(l-1) parent of class ``c``
            at level ``l``, for ``l`` in 2..L.
        names: optional label strings per level, same level order.
    """

    level_sizes: tuple
    parents: tuple  # tuple of tuples, one per level 2..L
    names: tuple | None = None

    def __post_init__(self):
        if len(self.level_sizes) < 2:
            raise TaxonomyViolationError("a taxonomy needs at least 2 levels")
        if len(self.parents) != len(self.level_sizes) - 1:
            raise TaxonomyViolationError("need one parent map per level below the root level")
        for l in range(2, self.num_levels + 1):
            pmap = self.parents[l - 2]
            if len(pmap) != self.level_sizes[l - 1]:
                raise TaxonomyViolationError(f"parent map at level {l} is not total")
            for child, parent in enumerate(pmap):
                if not 0 <= parent < self.level_sizes[l - 2]:
                    raise TaxonomyViolationError(
                        f"class {child} at level {l} has out-of-range parent {parent}"
                    )
            # no dead internal nodes: every class one level up has a child
            if len(set(pmap)) != self.level_sizes[l - 2]:
                raise TaxonomyViolationError(f"level {l - 1} has a class with no children")

    @property
    def num_levels(self) -> int:
        return len(self.level_sizes)

    def parent(self, level: int, index: int) -> int:
        """Parent index (at ``level - 1``) of class ``index`` at ``level`` (2..L)."""
        if not 2 <= level <= self.num_levels:
            raise IndexError(f"level {level} out of range 2..{self.num_levels}")
        if not 0 <= index < self.level_sizes[level - 1]:
            raise IndexError(f"class {index} out of range at level {level}")
        return self.parents[level - 2][index]

    def children(self, level: int, index: int) -> tuple:
        """Indices at ``level + 1`` whose parent is ``index`` at ``level``."""
        if not 1 <= level < self.num_levels:
            raise IndexError(f"level {level} has no children level")
        pmap = self.parents[level - 1]
        return tuple(c for c, p in enumerate(pmap) if p == index)

    def level_name(self, level: int, index: int) -> str:
        if self.names is not None:
            return self.names[level - 1][index]
        return f"l{level}_c{index}"

    def content_hash(self) -> str:
        """Stable hash of the structure and names, for checkpoint sidecars."""
        payload = json.dumps(
            {"sizes": list(self.level_sizes),
             "parents": [list(p) for p in self.parents],
             "names": None if self.names is None else [list(n) for n in self.names]},
            sort_keys=True)
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def _check_path_indices(tree: TaxonomyTree, path: Sequence) -> None:
    if len(path) != tree.num_levels:
        raise ValueError(f"path has {len(path)} entries, taxonomy has {tree.num_levels} levels")
    for l, y in enumerate(path, start=1):
        if not 0 <= y < tree.level_sizes[l - 1]:
            raise IndexError(f"label {y} out of range at level {l}")


def is_valid_path(tree: TaxonomyTree, path: Sequence) -> bool:
    """True iff each label is the parent of the next one down the path."""
    _check_path_indices(tree, path)
    return all(tree.parent(l, path[l - 1]) == path[l - 2] for l in range(2, tree.num_levels + 1))


def level_offsets(tree: TaxonomyTree) -> tuple:
    """Offset of each level's block in the finest-first concatenated layout.

    ``level_offsets(tree)[l - 1]`` is where level ``l``'s block starts; the
    finest level sits at offset 0 and the coarsest block comes last.  All
    concatenated-logit consumers share this layout.
    """
    offsets = []
    for l in range(1, tree.num_levels + 1):
        offsets.append(sum(tree.level_sizes[l:]))
    return tuple(offsets)


def encode_tree_path(tree: TaxonomyTree, path: Sequence) -> np.ndarray:
    """Encode a label path as a distribution over all levels' classes.

    Returns a vector of length ``sum(level_sizes)`` laid out finest-first,
    with mass ``1/L`` on each level's true label.  Cross-level consistency is
    deliberately not checked: training labels are assumed valid, while the
    encoder may also be pointed at arbitrary (possibly invalid) paths.
    """
    _check_path_indices(tree, path)
    dist = np.zeros(sum(tree.level_sizes), dtype=np.float64)
    offsets = level_offsets(tree)
    for l, y in enumerate(path, start=1):
        dist[offsets[l - 1] + y] = 1.0 / tree.num_levels
    return dist


def infer_ancestors(tree: TaxonomyTree, fine_index: int) -> LabelPath:
    """The unique valid path ending at ``fine_index``, by repeated parent lookup."""
    if not 0 <= fine_index < tree.level_sizes[-1]:
        raise IndexError(f"leaf {fine_index} out of range")
    path = [fine_index]
    for level in range(tree.num_levels, 1, -1):
        path.append(tree.parent(level, path[-1]))
    return tuple(reversed(path))


def load_taxonomy(source) -> TaxonomyTree:
    """Load a taxonomy from a CSV path, text stream, or string content.

    Format: header ``level_1,...,level_L`` followed by one full root-to-leaf
    path of label strings per row.  Leaf strings must be globally unique;
    identical rows are deduplicated.
    """
    if isinstance(source, str) and "\n" not in source and "," not in source:
        with open(source, "r", encoding="utf-8") as fh:
            return load_taxonomy(fh)
    if isinstance(source, str):
        return load_taxonomy(io.StringIO(source))
    return _parse_taxonomy(source)


def _parse_taxonomy(stream: IO) -> TaxonomyTree:
    reader = csv.reader(stream)
    try:
        header = next(reader)
    except StopIteration:
        raise TaxonomyFormatError("empty taxonomy file") from None
    num_levels = len(header)
    expected = [f"level_{i}" for i in range(1, num_levels + 1)]
    if num_levels < 2 or [h.strip() for h in header] != expected:
        raise TaxonomyFormatError(
            f"header must be level_1,...,level_L with L >= 2, got {header!r}")

    rows = []
    seen_rows = set()
    for lineno, row in enumerate(reader, start=2):
        if not row or (len(row) == 1 and not row[0].strip()):
            continue
        if len(row) != num_levels:
            raise TaxonomyFormatError(f"row {lineno} has {len(row)} columns, expected {num_levels}")
        row = tuple(cell.strip() for cell in row)
        if any(not cell for cell in row):
            raise TaxonomyFormatError(f"row {lineno} has an empty label")
        if row in seen_rows:
            continue
        seen_rows.add(row)
        rows.append(row)
    if not rows:
        raise TaxonomyFormatError("taxonomy file has no data rows")

    # dense indices by first appearance, per level
    index_of = [dict() for _ in range(num_levels)]
    for row in rows:
        for l, label in enumerate(row):
            index_of[l].setdefault(label, len(index_of[l]))

    parents = [dict() for _ in range(num_levels - 1)]  # level l (2..L) -> child idx -> parent idx
    for row in rows:
        for l in range(1, num_levels):
            child = index_of[l][row[l]]
            parent = index_of[l - 1][row[l - 1]]
            prior = parents[l - 1].setdefault(child, parent)
            if prior != parent:
                raise TaxonomyViolationError(
                    f"label {row[l]!r} at level {l + 1} appears under two parents")

    leaf_counts = {}
    for row in rows:
        leaf_counts[row[-1]] = leaf_counts.get(row[-1], 0) + 1
    dupes = sorted(label for label, n in leaf_counts.items() if n > 1)
    if dupes:
        raise TaxonomyFormatError(f"duplicate leaf labels: {dupes}")

    level_sizes = tuple(len(m) for m in index_of)
    parent_tuples = tuple(
        tuple(parents[l][c] for c in range(level_sizes[l + 1]))
        for l in range(num_levels - 1))
    names = tuple(
        tuple(sorted(index_of[l], key=index_of[l].get)) for l in range(num_levels))
    return TaxonomyTree(level_sizes=level_sizes, parents=parent_tuples, names=names)


def save_taxonomy(tree: TaxonomyTree, path: str) -> None:
    """Write the tree back out in the CSV taxonomy format (one row per leaf)."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"level_{i}" for i in range(1, tree.num_levels + 1)])
        for leaf in range(tree.level_sizes[-1]):
            path_idx = infer_ancestors(tree, leaf)
            writer.writerow([tree.level_name(l, y) for l, y in enumerate(path_idx, start=1)])


def iter_leaf_paths(tree: TaxonomyTree) -> Iterable[LabelPath]:
    for leaf in range(tree.level_sizes[-1]):
        yield infer_ancestors(tree, leaf)
