"""Population-coded structure: position matrices and relationship matrices.

A grid of position-tuned neurons (2D Gaussian tuning, uniformly spaced
centers) projects a feature map to a small activation matrix normalized by
the map's total activation.  For every ordered pair of located features, a
ring of eight direction-tuned neurons (wrapped-Gaussian tuning, preferred
directions 45 degrees apart) plus one distance unit fills a 3x3 block; the
full set of blocks is the image's relationship matrix.

Direction tuning is computed from exact dot/cross products against a
symmetric preferred-vector table, so reversing a pair rotates its block by
exactly 180 degrees and rotating the geometry by 90 degrees permutes the
activations bitwise.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_C45 = float(np.cos(np.pi / 4.0))

# preferred unit vectors as (x=col, y=row-down), every 45 degrees starting
# east; index d+4 is the exact negation of d, d+2 the exact 90-degree turn
_PREFERRED = (
    (1.0, 0.0),      # E
    (_C45, _C45),    # SE
    (0.0, 1.0),      # S
    (-_C45, _C45),   # SW
    (-1.0, 0.0),     # W
    (-_C45, -_C45),  # NW
    (0.0, -1.0),     # N
    (_C45, -_C45),   # NE
)

# 3x3 block cell (row, col) each direction neuron occupies; center (1,1)
# holds the distance unit
_BLOCK_CELL = ((1, 2), (2, 2), (2, 1), (2, 0), (1, 0), (0, 0), (0, 1), (0, 2))

DEFAULT_DIRECTION_SIGMA = np.deg2rad(22.5)


@dataclass(frozen=True)
class PositionNeuronGrid:
    """``side x side`` Gaussian-tuned position neurons over a square map.

    ``tables`` holds the per-axis tuning values ``(side, map_size)``; rows
    for mirrored centers are exact reversals of each other.
    """

    side: int
    map_size: int
    sigma: float
    centers: np.ndarray
    tables: np.ndarray

    @property
    def count(self) -> int:
        return self.side * self.side


def make_grid(map_size: int, side: int, sigma: float | None = None) -> PositionNeuronGrid:
    """Uniformly spaced centers; sigma defaults to half the center spacing."""
    if side < 1 or map_size < 1:
        raise ValueError("side and map_size must be positive")
    spacing = map_size / side
    if sigma is None:
        sigma = spacing / 2.0
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    centers = (np.arange(side) + 0.5) * spacing - 0.5
    coords = np.arange(map_size, dtype=np.float64)
    tables = np.empty((side, map_size))
    for r in range((side + 1) // 2):
        tables[r] = np.exp(-((coords - centers[r]) ** 2) / (2.0 * sigma * sigma))
        tables[side - 1 - r] = tables[r][::-1]
    return PositionNeuronGrid(side=side, map_size=map_size, sigma=float(sigma),
                              centers=centers, tables=tables)


def position_matrix(feature_map: np.ndarray, grid: PositionNeuronGrid) -> np.ndarray:
    """Aggregate a nonnegative map through the grid's tuning functions.

    Entry (r, s) correlates the map with a unit-peak 2D Gaussian centered
    at grid position (r, s), normalized by the map's total activation; an
    all-zero map yields an all-zero matrix.
    """
    m = np.asarray(feature_map, dtype=np.float64)
    if m.shape != (grid.map_size, grid.map_size):
        raise ValueError(f"map shape {m.shape} does not match grid ({grid.map_size})")
    if m.min() < 0:
        raise ValueError("feature map must be nonnegative")
    total = m.sum()
    if total == 0.0:
        return np.zeros((grid.side, grid.side))
    return grid.tables @ m @ grid.tables.T / total


def locate_feature(feature_map: np.ndarray, threshold: float):
    """Activation-weighted centroid ``(row, col)``, or None when the map's
    total activation falls below ``threshold``."""
    if threshold < 0:
        raise ValueError("threshold must be non-negative")
    m = np.asarray(feature_map, dtype=np.float64)
    total = m.sum()
    if total < threshold or total <= 0.0:
        return None
    rows = np.arange(m.shape[0], dtype=np.float64)
    cols = np.arange(m.shape[1], dtype=np.float64)
    return (float((m.sum(axis=1) * rows).sum() / total),
            float((m.sum(axis=0) * cols).sum() / total))


def default_presence_threshold(map_size: int, fraction: float = 0.01) -> float:
    """Presence cutoff: a fraction of the map's cell count."""
    return fraction * map_size * map_size


def direction_activations(dy: float, dx: float, sigma: float) -> np.ndarray:
    """Wrapped-Gaussian tuning of the 8 direction neurons to vector (dy, dx).

    The angular distance to each preferred direction is computed as
    ``atan2(|cross|, dot)``, exact under vector negation and 90-degree
    rotation of the input.
    """
    out = np.empty(8)
    for d, (px, py) in enumerate(_PREFERRED):
        dot = dx * px + dy * py
        cross = dx * py - dy * px
        delta = np.arctan2(abs(cross), dot)  # in [0, pi]
        out[d] = np.exp(-(delta * delta) / (2.0 * sigma * sigma))
    return out


@dataclass(frozen=True)
class RelationshipMatrix:
    """Per ordered feature pair (j, l): a 3x3 block of 8 direction
    activations around a center distance value; absent features zero all
    their blocks.  ``blocks`` has shape ``(K, K, 3, 3)``."""

    blocks: np.ndarray
    present: np.ndarray


def relationship_matrix(locations, image_diag: float,
                        sigma: float = DEFAULT_DIRECTION_SIGMA) -> RelationshipMatrix:
    """Pairwise direction/distance blocks from per-feature locations.

    ``locations`` is a sequence of ``(row, col)`` or None (absent).  For a
    present pair, the angle from j to l drives the direction ring and the
    center holds Euclidean distance / ``image_diag`` clipped to [0, 1].
    Coincident features have an undefined direction: their block stays
    zero.
    """
    if image_diag <= 0:
        raise ValueError("image_diag must be positive")
    k = len(locations)
    blocks = np.zeros((k, k, 3, 3))
    present = np.array([loc is not None for loc in locations])
    for j in range(k):
        if locations[j] is None:
            continue
        for l in range(k):
            if l == j or locations[l] is None:
                continue
            dy = locations[l][0] - locations[j][0]
            dx = locations[l][1] - locations[j][1]
            if dx == 0.0 and dy == 0.0:
                continue
            acts = direction_activations(dy, dx, sigma)
            for d, (r, c) in enumerate(_BLOCK_CELL):
                blocks[j, l, r, c] = acts[d]
            blocks[j, l, 1, 1] = min(float(np.hypot(dy, dx)) / image_diag, 1.0)
    return RelationshipMatrix(blocks=blocks, present=present)


def per_class_mean(values: np.ndarray, labels: np.ndarray, class_count: int) -> np.ndarray:
    """Elementwise mean of per-sample arrays within each class label."""
    arr = np.asarray(values, dtype=np.float64)
    labels = np.asarray(labels)
    out = np.empty((class_count,) + arr.shape[1:])
    for c in range(class_count):
        members = labels == c
        if not members.any():
            raise ValueError(f"class {c} has no samples")
        out[c] = arr[members].mean(axis=0)
    return out


def concept_distribution(pms: np.ndarray, rms: np.ndarray, labels: np.ndarray,
                         class_count: int):
    """Per-category concept: the mean position matrix stack and the mean
    relationship-matrix block array over that category's samples."""
    return (per_class_mean(pms, labels, class_count),
            per_class_mean(rms, labels, class_count))
