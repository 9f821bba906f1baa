"""Semantic abstraction of episodic features by clustering their
pixel-space reconstructions.

Each top-layer feature is deconvolved to a patch; Lloyd's algorithm groups
the patches into a small number of clusters under the L2 metric, and the
cluster centers act as semantic features.  An image's semantic feature
maps are the elementwise maxima of its episodic maps within each cluster,
so a semantic map reads "this visual property occurs here", independent of
which concrete episodic feature produced it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cdbn import CdbnStack, _one_hot_response


@dataclass(frozen=True)
class SemanticBank:
    """Cluster centers ``(K, h, w)`` over patches plus the episodic-to-semantic
    assignment ``(n_episodic,)``; ``wcss_trace`` is the per-iteration
    within-cluster sum of squares of the winning run."""

    centers: np.ndarray
    assignment: np.ndarray
    wcss_trace: tuple[float, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "centers", np.asarray(self.centers, dtype=np.float64))
        object.__setattr__(self, "assignment", np.asarray(self.assignment, dtype=np.int64))
        k = len(self.centers)
        if k == 0 or k > len(self.assignment):
            raise ValueError("need 1 <= clusters <= number of episodic features")
        if self.assignment.min() < 0 or self.assignment.max() >= k:
            raise ValueError("assignment indices out of range")

    @property
    def k(self) -> int:
        return len(self.centers)


def reconstruct_patches(stack: CdbnStack) -> np.ndarray:
    """One raw (un-normalized) deconvolution patch per top-layer feature."""
    top = stack.top
    return np.stack([_one_hot_response(stack, len(stack.layers) - 1, k)
                     for k in range(top.n_features)])


def _assign(flat: np.ndarray, centers: np.ndarray) -> np.ndarray:
    # squared L2 to every center; ties go to the lowest cluster index
    d2 = ((flat[:, None, :] - centers[None, :, :]) ** 2).sum(-1)
    return d2.argmin(axis=1)


def _wcss(flat: np.ndarray, centers: np.ndarray, assignment: np.ndarray) -> float:
    return float(((flat - centers[assignment]) ** 2).sum())


def lloyd(flat: np.ndarray, centers: np.ndarray, max_iter: int):
    """Alternate assignment and centroid updates until assignments stabilize.

    Empty clusters are reseeded to the point farthest from its current
    center.  Returns (centers, assignment, per-iteration WCSS), where each
    trace entry is the objective of that iteration's assignment.
    """
    centers = centers.copy()
    assignment = None
    trace: list[float] = []
    for _ in range(max_iter):
        new_assignment = _assign(flat, centers)
        trace.append(_wcss(flat, centers, new_assignment))
        if assignment is not None and np.array_equal(new_assignment, assignment):
            break
        assignment = new_assignment
        for j in range(len(centers)):
            members = flat[assignment == j]
            if len(members):
                centers[j] = members.mean(axis=0)
            else:
                farthest = ((flat - centers[j]) ** 2).sum(-1).argmax()
                centers[j] = flat[farthest]
    return centers, assignment, trace


def kmeans(patches: np.ndarray, k: int, seed: int, max_iter: int = 50,
           restarts: int = 1) -> SemanticBank:
    """Cluster patches into ``k`` groups; the best-WCSS restart wins.

    Initial centers are ``k`` distinct patches drawn uniformly by seed.
    Deterministic for a fixed (seed, restarts, max_iter).
    """
    arr = np.asarray(patches, dtype=np.float64)
    if arr.ndim < 2 or len(arr) == 0:
        raise ValueError("patches must be a non-empty stack of grids")
    if not 1 <= k <= len(arr):
        raise ValueError(f"need 1 <= k <= {len(arr)}, got {k}")
    flat = arr.reshape(len(arr), -1)
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(max(1, restarts)):
        init = flat[rng.choice(len(arr), size=k, replace=False)]
        centers, assignment, trace = lloyd(flat, init, max_iter)
        final = _wcss(flat, centers, assignment)
        if best is None or final < best[0]:
            best = (final, centers, assignment, trace)
    _, centers, assignment, trace = best
    return SemanticBank(centers=centers.reshape(k, *arr.shape[1:]),
                        assignment=assignment, wcss_trace=tuple(trace))


def semantic_maps(episodic_maps: np.ndarray, bank: SemanticBank) -> np.ndarray:
    """Merge episodic maps into ``bank.k`` semantic maps by elementwise max.

    Accepts ``(n, h, w)`` or a batch ``(N, n, h, w)``.
    """
    maps = np.asarray(episodic_maps, dtype=np.float64)
    single = maps.ndim == 3
    if single:
        maps = maps[None]
    if maps.shape[1] != len(bank.assignment):
        raise ValueError(
            f"got {maps.shape[1]} episodic maps for {len(bank.assignment)} assignments")
    out = np.zeros((maps.shape[0], bank.k) + maps.shape[2:])
    for j in range(bank.k):
        members = np.flatnonzero(bank.assignment == j)
        if len(members):
            out[:, j] = maps[:, members].max(axis=1)
    return out[0] if single else out
