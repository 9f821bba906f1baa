"""Batched 2D convolution primitives.

All heavy lifting in the energy models and the attack surrogate reduces to
three contractions: a valid cross-correlation (bottom-up filtering), a full
zero-padded convolution (top-down reconstruction), and a kernel-shaped
cross-correlation (weight gradients).  Each is implemented as a strided
window view followed by one tensordot so the work lands in BLAS.

Shape conventions: batches of multi-channel square grids are ``(B, C, n, n)``
and kernel banks are ``(K, C, w, w)``.
"""

import numpy as np


def sliding_windows(x: np.ndarray, size: int) -> np.ndarray:
    """View of all ``size x size`` windows over the last two axes.

    ``(..., n, n) -> (..., n-size+1, n-size+1, size, size)``, no copy.
    """
    return np.lib.stride_tricks.sliding_window_view(x, (size, size), axis=(-2, -1))


def correlate_valid(v: np.ndarray, kernels: np.ndarray) -> np.ndarray:
    """Valid cross-correlation of a batch with a kernel bank.

    Equivalent to convolving with the 180-degree rotated kernels.
    ``v (B, C, n, n), kernels (K, C, w, w) -> (B, K, n-w+1, n-w+1)``.
    """
    w = kernels.shape[-1]
    win = sliding_windows(v, w)  # (B, C, x, y, p, q)
    out = np.tensordot(win, kernels, axes=([1, 4, 5], [1, 2, 3]))  # (B, x, y, K)
    return np.moveaxis(out, -1, 1)


def convolve_full(maps: np.ndarray, kernels: np.ndarray) -> np.ndarray:
    """Full (zero-padded) convolution, summed over the kernel index.

    ``maps (B, K, m, m), kernels (K, C, w, w) -> (B, C, m+w-1, m+w-1)``.
    Output channel c receives ``sum_k maps[k] * kernels[k, c]``.

    Computed as one contraction over K followed by a scatter-add per
    kernel offset, which avoids materializing im2col buffers.
    """
    b, k, m, _ = maps.shape
    _, c, w, _ = kernels.shape
    n = m + w - 1
    # (B, m, m, C, w, w): per-position, per-offset contributions
    contrib = np.tensordot(maps, kernels, axes=([1], [0]))
    out = np.zeros((b, c, n, n))
    for p in range(w):
        for q in range(w):
            out[:, :, p:p + m, q:q + m] += np.moveaxis(contrib[..., p, q], -1, 1)
    return out


def kernel_correlation(v: np.ndarray, h: np.ndarray) -> np.ndarray:
    """Kernel-shaped correlation statistic, summed over the batch.

    ``out[k, c, p, q] = sum_b sum_ij h[b, k, i, j] * v[b, c, i+p, j+q]``
    for ``v (B, C, n, n), h (B, K, m, m)`` with ``m <= n``; the result has
    shape ``(K, C, n-m+1, n-m+1)``.  This is the gradient of the valid
    correlation with respect to the kernels.
    """
    m = h.shape[-1]
    win = sliding_windows(v, m)  # (B, C, p, q, x, y)
    out = np.tensordot(h, win, axes=([0, 2, 3], [0, 4, 5]))  # (K, C, p, q)
    return out
