"""Stacked convolutional RBMs: episodic features and deconvolution.

A stack is trained greedily: each layer learns on the pooled activation
probabilities of the one below.  Inference is deterministic mean
feed-forward.  The top layer's pooled maps are the episodic features of an
image; they can be projected back to pixel space by unpooling (placing each
pooled value at its block's most probable position) and convolving down
through the kernels, which is also how individual features are visualized.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .convops import convolve_full
from .crbm import (CrbmParams, LayerSpec, TrainConfig, _hidden_conditional_batch,
                   block_view, train_layer, unblock_view)
from .imaging import to_unit_range


@dataclass(frozen=True)
class CdbnStack:
    """Ordered CRBM layers; each layer's input edge is the previous pooled edge."""

    layers: tuple[CrbmParams, ...]

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        if not self.layers:
            raise ValueError("stack needs at least one layer")
        for below, above in zip(self.layers, self.layers[1:]):
            if above.visible_size != below.pooled_size:
                raise ValueError(
                    f"layer input edge {above.visible_size} != pooled edge {below.pooled_size}")
            if above.in_channels != below.n_features:
                raise ValueError("layer channel count must match the feature count below")

    @property
    def input_size(self) -> int:
        return self.layers[0].visible_size

    @property
    def top(self) -> CrbmParams:
        return self.layers[-1]


@dataclass(frozen=True)
class EpisodicFeatures:
    """Top-layer pooled activations ``(K, np, np)`` for one image.

    ``argmax`` optionally carries, per layer, each pooling block's most
    probable unit index from the forward pass; reconstruction uses it to
    unpool. Synthetic features without it unpool to block position 0.
    """

    maps: np.ndarray
    argmax: tuple[np.ndarray, ...] | None = None


@dataclass(frozen=True)
class StackActivations:
    """Batched per-layer forward results: pooled ``(N, K, np, np)`` and the
    within-block argmax of the hidden probabilities ``(N, K, np, np)``."""

    pooled: np.ndarray
    argmax: np.ndarray


# ---------------------------------------------------------------------------
# forward
# ---------------------------------------------------------------------------

def forward_stack(images: np.ndarray, stack: CdbnStack,
                  chunk: int = 128) -> list[StackActivations]:
    """Deterministic mean feed-forward of a batch ``(N, n, n)`` through all
    layers; pooled activation is the block's probability of being on."""
    arr = np.asarray(images, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[None]
    if arr.shape[-1] != stack.input_size:
        raise ValueError(
            f"image edge {arr.shape[-1]} does not match stack input {stack.input_size}")
    per_layer: list[list[np.ndarray]] = [[] for _ in stack.layers]
    arg_layer: list[list[np.ndarray]] = [[] for _ in stack.layers]
    for start in range(0, len(arr), chunk):
        x = arr[start:start + chunk][:, None]  # (B, 1, n, n)
        for i, params in enumerate(stack.layers):
            hidden, off = _hidden_conditional_batch(x, params)
            blocks = block_view(hidden, params.pool_size)
            per_layer[i].append(1.0 - off)
            arg_layer[i].append(blocks.argmax(axis=-1))
            x = 1.0 - off
    return [StackActivations(np.concatenate(p), np.concatenate(a))
            for p, a in zip(per_layer, arg_layer)]


def extract_episodic(img: np.ndarray, stack: CdbnStack) -> EpisodicFeatures:
    """Episodic features of one image: top-layer pooled probabilities."""
    acts = forward_stack(np.asarray(img)[None], stack)
    return EpisodicFeatures(
        maps=acts[-1].pooled[0],
        argmax=tuple(a.argmax[0] for a in acts),
    )


# ---------------------------------------------------------------------------
# top-down projection
# ---------------------------------------------------------------------------

def _unpool(pooled: np.ndarray, argmax: np.ndarray | None, c: int) -> np.ndarray:
    """Place each pooled value at one position of its block (argmax or 0)."""
    cc = c * c
    if argmax is None:
        argmax = np.zeros(pooled.shape, dtype=np.int64)
    states = (argmax[..., None] == np.arange(cc)).astype(np.float64)
    return unblock_view(pooled[..., None] * states, c)


def deconvolve(feat: EpisodicFeatures, stack: CdbnStack,
               weights: np.ndarray | None = None,
               from_layer: int | None = None) -> np.ndarray:
    """Raw linear projection of features to pixel space (no bias, no clip).

    The top maps (optionally scaled by per-feature ``weights``) are
    unpooled and convolved down layer by layer: ``sum_k s_k (W_k * H_k)``
    at each stage.
    """
    layers = stack.layers if from_layer is None else stack.layers[:from_layer + 1]
    top = layers[-1]
    maps = np.asarray(feat.maps, dtype=np.float64)
    expected = (top.n_features, top.pooled_size, top.pooled_size)
    if maps.shape != expected:
        raise ValueError(f"feature shape {maps.shape} does not match top layer {expected}")
    if weights is not None:
        weights = np.asarray(weights, dtype=np.float64)
        if weights.shape != (top.n_features,):
            raise ValueError("one weight per top-layer feature required")
        maps = maps * weights[:, None, None]
    x = maps
    for i in range(len(layers) - 1, -1, -1):
        params = layers[i]
        argmax = feat.argmax[i] if feat.argmax is not None else None
        hidden = _unpool(x, argmax, params.pool_size)
        x = convolve_full(hidden[None], params.kernels)[0]  # (C, nv, nv)
    return x[0] if x.shape[0] == 1 else x


def reconstruct(feat: EpisodicFeatures, stack: CdbnStack,
                weights: np.ndarray | None = None) -> np.ndarray:
    """Pixel-space reconstruction of episodic features, clipped to [0, 1]."""
    return np.clip(deconvolve(feat, stack, weights), 0.0, 1.0)


def visualize_feature(stack: CdbnStack, layer: int, k: int) -> np.ndarray:
    """Deconvolve a one-hot activation of feature ``k`` at ``layer`` and
    rescale to span [0, 1] (constant responses map to 0.5 gray)."""
    layers = stack.layers
    if not 0 <= layer < len(layers):
        raise IndexError(f"layer {layer} out of range")
    params = layers[layer]
    if not 0 <= k < params.n_features:
        raise IndexError(f"feature {k} out of range")
    return to_unit_range(_one_hot_response(stack, layer, k))


def _one_hot_response(stack: CdbnStack, layer: int, k: int) -> np.ndarray:
    params = stack.layers[layer]
    npool = params.pooled_size
    maps = np.zeros((params.n_features, npool, npool))
    maps[k, npool // 2, npool // 2] = 1.0
    return deconvolve(EpisodicFeatures(maps=maps), stack, from_layer=layer)


# ---------------------------------------------------------------------------
# training and persistence
# ---------------------------------------------------------------------------

def train_stack(images: np.ndarray, specs: list[LayerSpec], cfg: TrainConfig,
                seed: int) -> tuple[CdbnStack, list[list[float]]]:
    """Greedy layer-wise CD-1; each layer trains on the pooled probabilities
    of the layer below.  Returns the stack and per-layer loss traces."""
    arr = np.asarray(images, dtype=np.float64)
    if arr.ndim != 3 or len(arr) == 0:
        raise ValueError(f"images must be a non-empty (N, n, n) array, got {arr.shape}")
    child_seeds = np.random.SeedSequence(seed).generate_state(len(specs))
    x = arr[:, None]  # (N, 1, n, n)
    layers: list[CrbmParams] = []
    traces: list[list[float]] = []
    for spec, child in zip(specs, child_seeds):
        params, trace = train_layer(x, spec, cfg, int(child))
        layers.append(params)
        traces.append(trace)
        hidden, off = _hidden_conditional_batch(x, params)
        x = 1.0 - off
    return CdbnStack(tuple(layers)), traces


def save_stack(path, stack: CdbnStack) -> None:
    """Checkpoint to an ``.npz`` container (shape-headed row-major arrays)."""
    arrays: dict[str, np.ndarray] = {"n_layers": np.array(len(stack.layers))}
    for i, p in enumerate(stack.layers):
        arrays[f"kernels_{i}"] = p.kernels
        arrays[f"hidden_bias_{i}"] = p.hidden_bias
        arrays[f"scalars_{i}"] = np.array([p.visible_bias, p.pool_size, p.visible_size])
    np.savez(path, **arrays)


def load_stack(path) -> CdbnStack:
    with np.load(Path(path), allow_pickle=False) as z:
        n = int(z["n_layers"])
        layers = []
        for i in range(n):
            vb, pool, vis = z[f"scalars_{i}"]
            layers.append(CrbmParams(
                kernels=z[f"kernels_{i}"],
                hidden_bias=z[f"hidden_bias_{i}"],
                visible_bias=float(vb),
                pool_size=int(pool),
                visible_size=int(vis),
            ))
    return CdbnStack(tuple(layers))
