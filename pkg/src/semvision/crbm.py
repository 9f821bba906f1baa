"""Convolutional restricted Boltzmann machine with probabilistic max-pooling.

The model couples a real-valued (Gaussian, unit variance) visible grid to K
binary hidden feature maps through shared local kernels.  Hidden units are
grouped into c x c pooling blocks; within a block at most one unit may be
active, and the block's pooling unit is on exactly when one is.  This makes
the conditional over each block a softmax over c^2 + 1 states (one per unit
plus all-off), which is what ``hidden_conditional`` computes.

Training is single-step contrastive divergence: hidden probabilities from
the data, one block-multinomial hidden sample, a mean-field visible
reconstruction, and a second hidden pass.  Gradients are kernel-shaped
correlation statistics normalized by the hidden map area.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .convops import convolve_full, correlate_valid, kernel_correlation


@dataclass(frozen=True)
class CrbmParams:
    """One layer's parameters.

    kernels ``(K, C, w, w)``, one shared hidden bias per feature map, a
    single scalar visible bias, and the pooling block edge ``pool_size``.
    ``visible_size`` is the expected input edge; the hidden edge
    ``visible_size - w + 1`` must be a positive multiple of ``pool_size``.
    """

    kernels: np.ndarray
    hidden_bias: np.ndarray
    visible_bias: float
    pool_size: int
    visible_size: int

    def __post_init__(self):
        k = np.asarray(self.kernels, dtype=np.float64)
        if k.ndim != 4 or k.shape[0] < 1:
            raise ValueError(f"kernels must be (K, C, w, w), got {k.shape}")
        if k.shape[-1] != k.shape[-2]:
            raise ValueError("kernels must be square")
        object.__setattr__(self, "kernels", k)
        object.__setattr__(self, "hidden_bias",
                           np.asarray(self.hidden_bias, dtype=np.float64))
        if self.hidden_bias.shape != (k.shape[0],):
            raise ValueError("hidden_bias must have one entry per feature map")
        nh = self.hidden_size
        if nh < 1 or nh % self.pool_size != 0:
            raise ValueError(
                f"hidden edge {nh} must be a positive multiple of pool_size {self.pool_size}")

    @property
    def n_features(self) -> int:
        return self.kernels.shape[0]

    @property
    def in_channels(self) -> int:
        return self.kernels.shape[1]

    @property
    def kernel_size(self) -> int:
        return self.kernels.shape[-1]

    @property
    def hidden_size(self) -> int:
        return self.visible_size - self.kernel_size + 1

    @property
    def pooled_size(self) -> int:
        return self.hidden_size // self.pool_size


@dataclass(frozen=True)
class HiddenState:
    """Hidden maps ``(K, nh, nh)`` and pooled maps ``(K, np, np)``.

    Valid states have at most one active unit per pooling block, with the
    pooled unit equal to the block's indicator of any activity.
    """

    hidden: np.ndarray
    pooled: np.ndarray


@dataclass(frozen=True)
class LayerSpec:
    """Architecture of one layer: number of kernels, kernel edge, pool edge."""

    n_features: int
    kernel_size: int
    pool_size: int


@dataclass(frozen=True)
class TrainConfig:
    """Contrastive-divergence hyperparameters (shared by both layers).

    Hidden biases start negative so initial block activity is sparse;
    starting them at zero turns on ~80% of all pooling blocks and the
    coupled kernel/visible-bias dynamics oscillate and diverge.
    """

    epochs: int = 30
    batch_size: int = 10
    learning_rate: float = 0.1
    momentum: float = 0.5
    sparsity_target: float = 0.02
    sparsity_strength: float | None = None  # default 0.1 * learning_rate
    init_sigma: float = 0.01
    hidden_bias_init: float = -2.0
    sample_hidden: bool = True


# ---------------------------------------------------------------------------
# shape plumbing
# ---------------------------------------------------------------------------

def _as_batch(v: np.ndarray, params: CrbmParams) -> np.ndarray:
    """Accept (n, n), (C, n, n) or (B, C, n, n); return (B, C, n, n)."""
    a = np.asarray(v, dtype=np.float64)
    if a.ndim == 2:
        a = a[None, None]
    elif a.ndim == 3:
        a = a[None]
    elif a.ndim != 4:
        raise ValueError(f"bad visible shape {a.shape}")
    n = params.visible_size
    if a.shape[1] != params.in_channels or a.shape[2] != n or a.shape[3] != n:
        raise ValueError(
            f"visible shape {a.shape[1:]} does not match parameters "
            f"({params.in_channels}, {n}, {n})")
    return a


def block_view(maps: np.ndarray, c: int) -> np.ndarray:
    """``(..., nh, nh) -> (..., np, np, c*c)`` grouping each pooling block."""
    *lead, nh, _ = maps.shape
    npool = nh // c
    blocks = maps.reshape(*lead, npool, c, npool, c)
    blocks = np.moveaxis(blocks, -3, -2)  # (..., npool, npool, c, c)
    return blocks.reshape(*lead, npool, npool, c * c)


def unblock_view(blocks: np.ndarray, c: int) -> np.ndarray:
    """Inverse of :func:`block_view`."""
    *lead, npool, _, cc = blocks.shape
    maps = blocks.reshape(*lead, npool, npool, c, c)
    maps = np.moveaxis(maps, -2, -3)  # (..., npool, c, npool, c)
    return maps.reshape(*lead, npool * c, npool * c)


# ---------------------------------------------------------------------------
# energy and conditionals
# ---------------------------------------------------------------------------

def bottom_up_signal(v: np.ndarray, params: CrbmParams) -> np.ndarray:
    """Per-unit input ``(rot180(W_k) * v) + b_k`` for a batch: (B, K, nh, nh)."""
    return (correlate_valid(v, params.kernels)
            + params.hidden_bias[None, :, None, None])


def energy(v: np.ndarray, h: HiddenState, params: CrbmParams) -> float:
    """Energy of a joint state: filter term, hidden bias term, visible terms.

    Requires the pooling constraint (at most one active unit per block).
    """
    vb = _as_batch(v, params)
    hid = np.asarray(h.hidden, dtype=np.float64)
    nh = params.hidden_size
    if hid.shape != (params.n_features, nh, nh):
        raise ValueError(f"hidden shape {hid.shape} does not match parameters")
    sums = block_view(hid, params.pool_size).sum(-1)
    if (sums > 1.0 + 1e-9).any():
        raise ValueError("pooling constraint violated: a block has more than one active unit")
    filt = correlate_valid(vb, params.kernels)[0]  # (K, nh, nh)
    e = -(hid * filt).sum()
    e -= (params.hidden_bias * hid.sum(axis=(1, 2))).sum()
    e -= params.visible_bias * vb.sum()
    e += 0.5 * (vb ** 2).sum()
    return float(e)


def hidden_conditional(v: np.ndarray, params: CrbmParams):
    """Block-softmax hidden probabilities and pooled-off probabilities.

    For each pooling block with per-unit inputs I, returns
    ``P(h_ij = 1 | v) = exp(I_ij) / (1 + sum_block exp(I))`` arranged as
    hidden maps, and ``P(pool off | v) = 1 / (1 + sum_block exp(I))``.
    Probabilities within a block plus the off probability sum to one.

    Accepts a single input or a batch; output shapes follow
    ``(B, K, nh, nh)`` and ``(B, K, np, np)`` with B squeezed for single
    inputs.
    """
    vb = _as_batch(v, params)
    single = np.asarray(v).ndim != 4
    hidden, off = _hidden_conditional_batch(vb, params)
    if single:
        return hidden[0], off[0]
    return hidden, off


def _hidden_conditional_batch(vb: np.ndarray, params: CrbmParams):
    c = params.pool_size
    signal = bottom_up_signal(vb, params)
    blocks = block_view(signal, c)  # (B, K, np, np, c*c)
    # stabilize against the implicit 0 logit of the all-off state
    m = np.maximum(blocks.max(axis=-1), 0.0)
    e = np.exp(blocks - m[..., None])
    e_off = np.exp(-m)
    denom = e_off + e.sum(axis=-1)
    hidden = unblock_view(e / denom[..., None], c)
    off = e_off / denom
    return hidden, off


def sample_hidden(hidden_probs: np.ndarray, pool_size: int,
                  rng: np.random.Generator) -> np.ndarray:
    """Draw one binary hidden state per pooling block (multinomial over
    the c^2 unit states plus all-off), preserving the pooling constraint."""
    blocks = block_view(hidden_probs, pool_size)
    cum = np.cumsum(blocks, axis=-1)
    u = rng.random(cum.shape[:-1])[..., None]
    idx = (u > cum).sum(axis=-1)  # == c*c selects the all-off state
    states = (idx[..., None] == np.arange(blocks.shape[-1])).astype(np.float64)
    return unblock_view(states, pool_size)


def pooled_from_hidden(hidden: np.ndarray, pool_size: int) -> np.ndarray:
    """Pooling-layer state implied by a hidden state (block activity)."""
    return block_view(hidden, pool_size).sum(-1)


def visible_conditional(hidden: np.ndarray, params: CrbmParams) -> np.ndarray:
    """Mean of the Gaussian visible units given hidden maps.

    ``a + sum_k W_k * H_k`` with a full (zero-padded) convolution so the
    output has the visible shape.  Accepts ``(K, nh, nh)`` or a batch
    ``(B, K, nh, nh)``.
    """
    h = np.asarray(hidden, dtype=np.float64)
    single = h.ndim == 3
    if single:
        h = h[None]
    nh = params.hidden_size
    if h.shape[1:] != (params.n_features, nh, nh):
        raise ValueError(f"hidden shape {h.shape[1:]} does not match parameters")
    mean = params.visible_bias + convolve_full(h, params.kernels)
    return mean[0] if single else mean


# ---------------------------------------------------------------------------
# contrastive divergence
# ---------------------------------------------------------------------------

def cd1_gradients(batch: np.ndarray, params: CrbmParams, rng: np.random.Generator,
                  sample: bool = True):
    """One CD step: returns (kernel grad, hidden bias grad, visible bias grad,
    mean hidden activation, reconstruction MSE).

    Positive statistics use the data-driven hidden probabilities; the
    negative phase samples one constrained hidden state (or reuses the
    probabilities when ``sample`` is false), reconstructs the visible mean,
    and re-infers hidden probabilities.  Kernel statistics are normalized
    by batch size and hidden map area.
    """
    vb = _as_batch(batch, params)
    b = vb.shape[0]
    nh2 = params.hidden_size ** 2

    h0, _ = _hidden_conditional_batch(vb, params)
    h_drive = sample_hidden(h0, params.pool_size, rng) if sample else h0
    v1 = visible_conditional(h_drive, params)
    h1, _ = _hidden_conditional_batch(v1, params)

    scale = 1.0 / (b * nh2)
    g_kernels = (kernel_correlation(vb, h0) - kernel_correlation(v1, h1)) * scale
    g_hidden = (h0.sum(axis=(0, 2, 3)) - h1.sum(axis=(0, 2, 3))) * scale
    g_visible = float((vb - v1).mean())
    mean_activation = h0.mean(axis=(0, 2, 3))
    # the traced error is the deterministic (mean-field) reconstruction,
    # so it measures the model rather than the sampler
    v_mf = v1 if not sample else visible_conditional(h0, params)
    mse = float(((vb - v_mf) ** 2).mean())
    return g_kernels, g_hidden, g_visible, mean_activation, mse


def cd1_update(batch: np.ndarray, params: CrbmParams, lr: float,
               sparsity_target: float = 0.02,
               sparsity_strength: float | None = None,
               rng: np.random.Generator | None = None,
               sample: bool = True) -> CrbmParams:
    """One CD-1 parameter update on a mini-batch; returns a new snapshot.

    The sparsity term nudges each map's mean activation toward
    ``sparsity_target`` through the hidden bias with strength
    ``sparsity_strength`` (default ``0.1 * lr``).  Raises on non-finite
    gradients, the signature of a divergent learning rate.
    """
    if rng is None:
        rng = np.random.default_rng(0)
    if sparsity_strength is None:
        sparsity_strength = 0.1 * lr
    g_k, g_h, g_v, mean_act, _ = cd1_gradients(batch, params, rng, sample=sample)
    if not (np.isfinite(g_k).all() and np.isfinite(g_h).all() and np.isfinite(g_v)):
        raise FloatingPointError("non-finite CD gradient; lower the learning rate")
    new_hidden = (params.hidden_bias + lr * g_h
                  + sparsity_strength * (sparsity_target - mean_act))
    return replace(
        params,
        kernels=params.kernels + lr * g_k,
        hidden_bias=new_hidden,
        visible_bias=params.visible_bias + lr * g_v,
    )


def init_params(spec: LayerSpec, in_channels: int, visible_size: int,
                rng: np.random.Generator, init_sigma: float = 0.01,
                hidden_bias_init: float = -2.0) -> CrbmParams:
    """Zero-mean Gaussian kernels, shared negative hidden bias, zero
    visible bias."""
    kernels = rng.normal(0.0, init_sigma,
                         (spec.n_features, in_channels, spec.kernel_size, spec.kernel_size))
    return CrbmParams(
        kernels=kernels,
        hidden_bias=np.full(spec.n_features, float(hidden_bias_init)),
        visible_bias=0.0,
        pool_size=spec.pool_size,
        visible_size=visible_size,
    )


def train_layer(data: np.ndarray, spec: LayerSpec, cfg: TrainConfig,
                seed: int) -> tuple[CrbmParams, list[float]]:
    """Mini-batch CD-1 for ``cfg.epochs`` epochs; returns (params, MSE trace).

    ``data`` is ``(N, C, n, n)`` (or ``(N, n, n)`` for single-channel).
    Deterministic for a fixed seed: one RNG drives initialization,
    shuffling and hidden sampling in a fixed order.  The trace holds one
    mean reconstruction error per epoch.
    """
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim == 3:
        arr = arr[:, None]
    if arr.ndim != 4 or len(arr) == 0:
        raise ValueError(f"data must be a non-empty (N, C, n, n) array, got {arr.shape}")
    rng = np.random.default_rng(seed)
    params = init_params(spec, arr.shape[1], arr.shape[2], rng, cfg.init_sigma,
                         cfg.hidden_bias_init)
    strength = cfg.sparsity_strength
    if strength is None:
        strength = 0.1 * cfg.learning_rate

    vel_k = np.zeros_like(params.kernels)
    vel_h = np.zeros_like(params.hidden_bias)
    vel_v = 0.0
    trace: list[float] = []
    for _ in range(cfg.epochs):
        order = rng.permutation(len(arr))
        errs = []
        for start in range(0, len(arr), cfg.batch_size):
            batch = arr[order[start:start + cfg.batch_size]]
            g_k, g_h, g_v, mean_act, mse = cd1_gradients(
                batch, params, rng, sample=cfg.sample_hidden)
            if not (np.isfinite(g_k).all() and np.isfinite(g_h).all() and np.isfinite(g_v)):
                raise FloatingPointError("non-finite CD gradient; lower the learning rate")
            vel_k = cfg.momentum * vel_k + g_k
            vel_h = cfg.momentum * vel_h + g_h
            vel_v = cfg.momentum * vel_v + g_v
            params = replace(
                params,
                kernels=params.kernels + cfg.learning_rate * vel_k,
                hidden_bias=(params.hidden_bias + cfg.learning_rate * vel_h
                             + strength * (cfg.sparsity_target - mean_act)),
                visible_bias=params.visible_bias + cfg.learning_rate * vel_v,
            )
            errs.append(mse)
        trace.append(float(np.mean(errs)))
    return params, trace
