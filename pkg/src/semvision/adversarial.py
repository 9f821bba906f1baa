"""Targeted gradient-sign perturbation against a small convolutional
softmax surrogate.

The surrogate (one convolution, smooth activation, average pooling, dense
softmax) is trained supervised on the same subset as the recognition
pipeline.  Perturbation iterates clamped sign steps on the input gradient
of the cross-entropy to a chosen target class until the surrogate predicts
the target, bounding the total perturbation by ``eps_step * max_steps`` in
the max norm.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bayes import softmax
from .convops import convolve_full, correlate_valid, kernel_correlation
from .datasets import LabeledDataset


@dataclass(frozen=True)
class PerturbConfig:
    """Target class, step size, iteration cap and the [0, 1] pixel clamp."""

    target: int
    eps_step: float = 0.05
    max_steps: int = 10

    def __post_init__(self):
        if self.eps_step <= 0:
            raise ValueError("eps_step must be positive")
        if self.max_steps < 0:
            raise ValueError("max_steps must be >= 0")


@dataclass(frozen=True)
class SurrogateConfig:
    filters: int = 8
    kernel_size: int = 5
    pool: int = 2
    activation: str = "tanh"  # "tanh" or "linear"
    epochs: int = 30
    batch_size: int = 20
    learning_rate: float = 0.1
    momentum: float = 0.9
    reg: float = 1e-4
    init_sigma: float = 0.1


@dataclass(frozen=True)
class ConvSoftmax:
    """Conv -> activation -> average pool -> dense softmax classifier."""

    kernels: np.ndarray     # (F, 1, k, k)
    conv_bias: np.ndarray   # (F,)
    dense: np.ndarray       # (C, F * mp * mp)
    dense_bias: np.ndarray  # (C,)
    pool: int
    activation: str = "tanh"

    @property
    def n_classes(self) -> int:
        return len(self.dense_bias)


def _activate(z: np.ndarray, kind: str):
    if kind == "tanh":
        a = np.tanh(z)
        return a, 1.0 - a * a
    if kind == "linear":
        return z, np.ones_like(z)
    raise ValueError(f"unknown activation {kind!r}")


def _forward(model: ConvSoftmax, images: np.ndarray):
    x = images[:, None]  # (B, 1, n, n)
    z1 = correlate_valid(x, model.kernels) + model.conv_bias[None, :, None, None]
    a1, da1 = _activate(z1, model.activation)
    b, f, m, _ = a1.shape
    p = model.pool
    mp = m // p
    pooled = a1.reshape(b, f, mp, p, mp, p).mean(axis=(3, 5))
    flat = pooled.reshape(b, -1)
    logits = flat @ model.dense.T + model.dense_bias
    return z1, a1, da1, flat, logits


def surrogate_logits(model: ConvSoftmax, images: np.ndarray) -> np.ndarray:
    images = np.atleast_3d(np.asarray(images, dtype=np.float64))
    if images.ndim == 2:
        images = images[None]
    return _forward(model, images)[-1]


def surrogate_predict(model: ConvSoftmax, images: np.ndarray) -> np.ndarray:
    """Predicted labels for a batch ``(N, n, n)``."""
    return surrogate_logits(model, np.asarray(images, dtype=np.float64)).argmax(axis=1)


def _backward_to_input(model: ConvSoftmax, images, dlogits, z1, da1):
    b, f, m, _ = z1.shape
    p = model.pool
    mp = m // p
    dflat = dlogits @ model.dense  # (B, F*mp*mp)
    dpooled = dflat.reshape(b, f, mp, mp) / (p * p)
    dup = np.repeat(np.repeat(dpooled, p, axis=2), p, axis=3)
    dz1 = dup * da1
    dx = convolve_full(dz1, model.kernels)  # (B, 1, n, n)
    return dz1, dx[:, 0]


def loss_and_grads(model: ConvSoftmax, images: np.ndarray, labels: np.ndarray,
                   reg: float = 0.0):
    """Mean cross-entropy and analytic gradients for every parameter."""
    images = np.asarray(images, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    n = len(images)
    z1, a1, da1, flat, logits = _forward(model, images)
    probs = softmax(logits)
    loss = float(-np.log(np.maximum(probs[np.arange(n), labels], 1e-300)).mean()
                 + 0.5 * reg * ((model.dense ** 2).sum() + (model.kernels ** 2).sum()))
    dlogits = probs.copy()
    dlogits[np.arange(n), labels] -= 1.0
    dlogits /= n
    g_dense = dlogits.T @ flat + reg * model.dense
    g_dense_bias = dlogits.sum(axis=0)
    dz1, _ = _backward_to_input(model, images, dlogits, z1, da1)
    g_kernels = kernel_correlation(images[:, None], dz1) + reg * model.kernels
    g_conv_bias = dz1.sum(axis=(0, 2, 3))
    return loss, g_kernels, g_conv_bias, g_dense, g_dense_bias


def input_gradient(model: ConvSoftmax, img: np.ndarray, target: int) -> np.ndarray:
    """Gradient of the cross-entropy toward ``target`` w.r.t. the pixels."""
    images = np.asarray(img, dtype=np.float64)[None]
    z1, a1, da1, flat, logits = _forward(model, images)
    probs = softmax(logits)
    dlogits = probs.copy()
    dlogits[0, target] -= 1.0
    _, dx = _backward_to_input(model, images, dlogits, z1, da1)
    if not np.isfinite(dx).all():
        raise FloatingPointError("non-finite input gradient")
    return dx[0]


def train_surrogate(ds: LabeledDataset, cfg: SurrogateConfig, seed: int) -> ConvSoftmax:
    """Mini-batch SGD with momentum on the labeled subset, seeded."""
    rng = np.random.default_rng(seed)
    n_img = ds.images.shape[-1]
    m = n_img - cfg.kernel_size + 1
    if m % cfg.pool != 0:
        raise ValueError(f"conv output edge {m} not divisible by pool {cfg.pool}")
    mp = m // cfg.pool
    model = ConvSoftmax(
        kernels=rng.normal(0.0, cfg.init_sigma, (cfg.filters, 1, cfg.kernel_size,
                                                 cfg.kernel_size)),
        conv_bias=np.zeros(cfg.filters),
        dense=rng.normal(0.0, cfg.init_sigma, (ds.class_count, cfg.filters * mp * mp)),
        dense_bias=np.zeros(ds.class_count),
        pool=cfg.pool,
        activation=cfg.activation,
    )
    vel = [np.zeros_like(model.kernels), np.zeros_like(model.conv_bias),
           np.zeros_like(model.dense), np.zeros_like(model.dense_bias)]
    for _ in range(cfg.epochs):
        order = rng.permutation(len(ds))
        for start in range(0, len(ds), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            loss, *grads = loss_and_grads(model, ds.images[idx], ds.labels[idx], cfg.reg)
            vel = [cfg.momentum * v - cfg.learning_rate * g for v, g in zip(vel, grads)]
            model = ConvSoftmax(
                kernels=model.kernels + vel[0],
                conv_bias=model.conv_bias + vel[1],
                dense=model.dense + vel[2],
                dense_bias=model.dense_bias + vel[3],
                pool=model.pool,
                activation=model.activation,
            )
    return model


# ---------------------------------------------------------------------------
# attacks
# ---------------------------------------------------------------------------

def _attack(img: np.ndarray, model: ConvSoftmax, cfg: PerturbConfig):
    x = np.asarray(img, dtype=np.float64).copy()
    steps = 0
    for _ in range(cfg.max_steps):
        if surrogate_predict(model, x[None])[0] == cfg.target:
            break
        g = input_gradient(model, x, cfg.target)
        x = np.clip(x - cfg.eps_step * np.sign(g), 0.0, 1.0)
        steps += 1
    success = surrogate_predict(model, x[None])[0] == cfg.target
    return x, bool(success), steps


def perturb(img: np.ndarray, model: ConvSoftmax, cfg: PerturbConfig):
    """Iterated clamped sign steps toward the target class.

    Returns the perturbed image and whether the surrogate now predicts the
    target.  ``max_steps = 0`` is the identity.
    """
    x, success, _ = _attack(img, model, cfg)
    return x, success


def generate_ambiguous_set(ds: LabeledDataset, model: ConvSoftmax,
                           cfg: PerturbConfig):
    """Perturb every image toward the target; labels keep their true class.

    Returns the perturbed dataset and a manifest: per image the source
    index, target, steps used and success flag, plus the overall success
    rate over attempted (originally non-target) images.
    """
    out = np.empty_like(ds.images)
    records = []
    attempted = succeeded = 0
    for i in range(len(ds)):
        x, success, steps = _attack(ds.images[i], model, cfg)
        out[i] = x
        if ds.labels[i] != cfg.target:
            attempted += 1
            succeeded += int(success)
        records.append({"source_index": i, "target": int(cfg.target),
                        "steps": steps, "success": bool(success)})
    manifest = {
        "target": int(cfg.target),
        "eps_step": cfg.eps_step,
        "max_steps": cfg.max_steps,
        "success_rate": (succeeded / attempted) if attempted else 1.0,
        "records": records,
    }
    return LabeledDataset(out, ds.labels.copy(), ds.class_count), manifest
