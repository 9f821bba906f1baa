"""Per-pathway softmax classifiers, Bayesian fusion, and feature
re-selection for ambiguous inputs.

Each feature family (episodic, semantic, position, relationship) gets its
own multinomial logistic model.  Recognition multiplies the pathway
likelihoods with the category priors, treating pathways as independent; a
pathway's likelihood for class i is its calibrated softmax output scaled
by the class count, floored by a small smoothing mass.

When the fused posterior has several high-confidence candidates, blocks of
structural features whose summed weights differ most between the
candidates are selected, and the decision is re-scored on the masked
features restricted to the candidate set.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations

import numpy as np


def softmax(scores: np.ndarray, axis: int = -1) -> np.ndarray:
    z = scores - scores.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


@dataclass(frozen=True)
class PathwayModel:
    """Affine softmax scorer: weights ``(C, F)``, bias ``(C,)``."""

    weights: np.ndarray
    bias: np.ndarray
    pathway: str = ""

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        b = np.asarray(self.bias, dtype=np.float64)
        if w.ndim != 2 or b.shape != (w.shape[0],):
            raise ValueError(f"bad model shapes {w.shape}, {b.shape}")
        if not (np.isfinite(w).all() and np.isfinite(b).all()):
            raise ValueError("model parameters must be finite")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "bias", b)

    @property
    def n_classes(self) -> int:
        return self.weights.shape[0]

    @property
    def n_features(self) -> int:
        return self.weights.shape[1]


@dataclass(frozen=True)
class FeatureMask:
    """Re-selection result: which blocks survive, the per-block
    significance, and the expanded per-feature boolean mask."""

    selected: np.ndarray
    significance: np.ndarray
    feature_mask: np.ndarray


@dataclass(frozen=True)
class PathwayEnsemble:
    """Trained pathway models plus category priors and smoothing mass.

    Likelihood floors use ``epsilon / (n_pathways * n_classes)``.
    """

    models: tuple[PathwayModel, ...]
    priors: np.ndarray
    epsilon: float = 0.01

    def __post_init__(self):
        p = np.asarray(self.priors, dtype=np.float64)
        if abs(p.sum() - 1.0) > 1e-9 or (p < 0).any():
            raise ValueError("priors must be a probability vector")
        object.__setattr__(self, "priors", p)

    @property
    def n_pathways(self) -> int:
        return len(self.models)

    @property
    def floor(self) -> float:
        return self.epsilon / (self.n_pathways * len(self.priors))


def class_priors(labels: np.ndarray, class_count: int, epsilon: float = 0.01,
                 n_pathways: int = 4) -> np.ndarray:
    """Training-frequency priors floored at ``epsilon / (n_pathways * C)``."""
    counts = np.bincount(np.asarray(labels), minlength=class_count).astype(np.float64)
    p = counts / counts.sum()
    p = np.maximum(p, epsilon / (n_pathways * class_count))
    return p / p.sum()


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

def loss_and_grad(weights: np.ndarray, bias: np.ndarray, x: np.ndarray,
                  labels: np.ndarray, reg: float):
    """Mean cross-entropy with L2 penalty and its analytic gradients."""
    n = len(x)
    probs = softmax(x @ weights.T + bias)
    nll = -np.log(np.maximum(probs[np.arange(n), labels], 1e-300)).mean()
    loss = nll + 0.5 * reg * (weights ** 2).sum()
    delta = probs.copy()
    delta[np.arange(n), labels] -= 1.0
    g_w = delta.T @ x / n + reg * weights
    g_b = delta.mean(axis=0)
    return loss, g_w, g_b


@dataclass(frozen=True)
class SoftmaxConfig:
    """Full-batch gradient descent settings for pathway training."""

    iterations: int = 2000
    learning_rate: float = 5.0
    momentum: float = 0.9
    reg: float = 1e-4
    init_sigma: float = 0.0
    standardize: bool = True


def train_pathway(x: np.ndarray, labels: np.ndarray, n_classes: int,
                  reg: float = 1e-4, seed: int = 0, pathway: str = "",
                  cfg: SoftmaxConfig | None = None) -> PathwayModel:
    """Fit a multinomial logistic model by gradient descent, seeded.

    Features are standardized per dimension during optimization (pathways
    differ in scale by orders of magnitude); the affine transform is folded
    back into the returned weights, so the model scores raw features.
    The step size is also scaled by the mean squared feature norm.
    """
    x = np.asarray(x, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if x.ndim != 2 or len(x) != len(labels):
        raise ValueError("features must be (N, F) with one label per row")
    if cfg is None:
        cfg = SoftmaxConfig(reg=reg)
    if cfg.standardize:
        mean = x.mean(axis=0)
        scale = x.std(axis=0)
        scale[scale < 1e-12] = 1.0
        x_fit = (x - mean) / scale
    else:
        mean = np.zeros(x.shape[1])
        scale = np.ones(x.shape[1])
        x_fit = x
    rng = np.random.default_rng(seed)
    weights = (rng.normal(0.0, cfg.init_sigma, (n_classes, x.shape[1]))
               if cfg.init_sigma > 0 else np.zeros((n_classes, x.shape[1])))
    bias = np.zeros(n_classes)
    lr = cfg.learning_rate / max(1.0, float((x_fit ** 2).sum(axis=1).mean()))
    vel_w = np.zeros_like(weights)
    vel_b = np.zeros_like(bias)
    for _ in range(cfg.iterations):
        loss, g_w, g_b = loss_and_grad(weights, bias, x_fit, labels, cfg.reg)
        if not np.isfinite(loss):
            raise FloatingPointError("non-finite training loss")
        vel_w = cfg.momentum * vel_w - lr * g_w
        vel_b = cfg.momentum * vel_b - lr * g_b
        weights = weights + vel_w
        bias = bias + vel_b
    # fold the standardization into the affine map: w'(x-m)/s + b
    folded_w = weights / scale[None, :]
    folded_b = bias - folded_w @ mean
    return PathwayModel(weights=folded_w, bias=folded_b, pathway=pathway)


def pathway_posterior(model: PathwayModel, x: np.ndarray) -> np.ndarray:
    """Softmax of the affine scores; rows sum to one.  Accepts one vector
    ``(F,)`` or a batch ``(N, F)``."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    if x.shape[-1] != model.n_features:
        raise ValueError(f"feature dimension {x.shape[-1]} != {model.n_features}")
    p = softmax((x if not single else x[None]) @ model.weights.T + model.bias)
    return p[0] if single else p


# ---------------------------------------------------------------------------
# Bayesian integration
# ---------------------------------------------------------------------------

def integrate(posteriors, priors: np.ndarray, floor: float = 0.0) -> np.ndarray:
    """Fuse per-pathway posteriors with category priors.

    Each pathway contributes likelihood ``posterior * C + floor``; the
    class posterior is the normalized product of likelihoods times the
    prior.  Raises when the total unnormalized mass vanishes.
    """
    priors = np.asarray(priors, dtype=np.float64)
    c = len(priors)
    mass = priors.copy()
    for post in posteriors:
        post = np.asarray(post, dtype=np.float64)
        if post.shape != (c,):
            raise ValueError("every pathway posterior must have one entry per class")
        mass = mass * (post * c + floor)
    total = mass.sum()
    if total <= 0.0:
        raise ValueError("integration produced zero mass; degenerate inputs")
    return mass / total


def detect_ambiguity(posterior: np.ndarray, ratio: float) -> np.ndarray:
    """Candidate classes within ``ratio`` of the posterior peak (ascending
    indices; always contains the argmax)."""
    if not 0.0 < ratio <= 1.0:
        raise ValueError("ratio must lie in (0, 1]")
    p = np.asarray(posterior, dtype=np.float64)
    return np.flatnonzero(p >= ratio * p.max())


# ---------------------------------------------------------------------------
# feature re-selection
# ---------------------------------------------------------------------------

def block_significance(candidates, model: PathwayModel, blocks) -> np.ndarray:
    """Mean absolute difference of block-summed weights over candidate pairs."""
    cands = sorted(int(c) for c in candidates)
    if len(cands) < 2:
        raise ValueError("need at least two candidate categories")
    block_weights = np.stack([model.weights[:, idx].sum(axis=1) for idx in blocks],
                             axis=1)  # (C, n_blocks)
    diffs = [np.abs(block_weights[a] - block_weights[b])
             for a, b in combinations(cands, 2)]
    return np.mean(diffs, axis=0)


def reselect_features(candidates, model: PathwayModel, blocks) -> FeatureMask:
    """Keep blocks whose significance strictly exceeds the mean significance.

    ``blocks`` is a partition of feature indices.  When every block is
    equally significant there is nothing to discriminate on and all blocks
    are kept.
    """
    sig = block_significance(candidates, model, blocks)
    selected = sig > sig.mean()
    if not selected.any():
        selected = np.ones(len(blocks), dtype=bool)
    feature_mask = np.zeros(model.n_features, dtype=bool)
    for b, keep in enumerate(selected):
        if keep:
            feature_mask[blocks[b]] = True
    return FeatureMask(selected=selected, significance=sig, feature_mask=feature_mask)


def masked_scores(model: PathwayModel, x: np.ndarray, feature_mask: np.ndarray) -> np.ndarray:
    """Affine scores using only the masked features."""
    x = np.asarray(x, dtype=np.float64)
    masked = np.where(feature_mask, x, 0.0)
    return model.weights @ masked + model.bias


def classify_ambiguous(candidates, scores_by_model) -> tuple[int, np.ndarray]:
    """Candidate-restricted softmax over summed masked scores.

    ``scores_by_model`` is a sequence of full score vectors (one per
    structural pathway, already masked).  Returns the winning candidate
    (lowest index on ties) and the restricted posterior over candidates.
    """
    cands = np.asarray(sorted(int(c) for c in candidates))
    if len(cands) == 0:
        raise ValueError("empty candidate set")
    total = np.sum([np.asarray(s, dtype=np.float64)[cands] for s in scores_by_model],
                   axis=0)
    post = softmax(total)
    return int(cands[int(np.argmax(post))]), post
