"""Image quality metrics: PSNR, NRMSE and SSIM."""

import math
from dataclasses import dataclass

import numpy as np


@dataclass
class MetricsRow:
    slice_id: str
    method: str
    psnr_db: float
    nrmse: float
    ssim: float


def _check_pair(x, ref):
    x = np.asarray(x, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    if x.shape != ref.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {ref.shape}")
    return x, ref


def psnr(x, ref):
    """Peak signal-to-noise ratio in dB, peak taken as max(ref).

    Returns math.inf when the images are identical.
    """
    x, ref = _check_pair(x, ref)
    peak = float(ref.max())
    if peak <= 0:
        raise ValueError("reference peak must be positive")
    mse = float(np.mean((x - ref) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


def nrmse(x, ref):
    """L2 error normalized by the L2 norm of the reference."""
    x, ref = _check_pair(x, ref)
    denom = float(np.linalg.norm(ref))
    if denom == 0:
        raise ValueError("reference norm is zero")
    return float(np.linalg.norm(x - ref)) / denom


def _gaussian_window(size=11, sigma=1.5):
    r = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(r ** 2) / (2 * sigma ** 2))
    w = np.outer(g, g)
    return w / w.sum()


def _local_means(img, window):
    """Valid-mode windowed means via a sliding-window view."""
    k = window.shape[0]
    v = np.lib.stride_tricks.sliding_window_view(img, (k, k))
    return np.tensordot(v, window, axes=([2, 3], [0, 1]))


def ssim(x, ref, window_size=11, sigma=1.5, k1=0.01, k2=0.03):
    """Mean local SSIM with a Gaussian window.

    Dynamic range is the reference's min-to-max span, so every candidate
    is scored against the same stabilizing constants.
    """
    x, ref = _check_pair(x, ref)
    if min(x.shape) < window_size:
        raise ValueError("image smaller than SSIM window")
    L = float(ref.max() - ref.min())
    if L == 0.0:
        L = 1.0  # identical constants; stabilizers alone give SSIM 1
    c1 = (k1 * L) ** 2
    c2 = (k2 * L) ** 2

    w = _gaussian_window(window_size, sigma)
    mu_x = _local_means(x, w)
    mu_y = _local_means(ref, w)
    xx = _local_means(x * x, w) - mu_x ** 2
    yy = _local_means(ref * ref, w) - mu_y ** 2
    xy = _local_means(x * ref, w) - mu_x * mu_y

    num = (2 * mu_x * mu_y + c1) * (2 * xy + c2)
    den = (mu_x ** 2 + mu_y ** 2 + c1) * (xx + yy + c2)
    return float(np.mean(num / den))
