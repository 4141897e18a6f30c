"""Non-decimated directional wavelet (contourlet-style) transform.

The filter bank is a frequency-domain partition of unity: raised-cosine
radial shells at dyadic radii, each high-frequency shell split into
raised-cosine angular wedges covering theta and theta + 180 jointly.
Because the windows sum to exactly 1 at every frequency sample, synthesis
is the plain sum of channels and reconstruction is perfect by construction.

With `levels` = 4 the channel count is 1 + 2 + 4 + 8 = 15: one lowpass
plus shells of 2, 4 and 8 directions from coarse to fine.
"""

from dataclasses import dataclass

import numpy as np

from .tomo import Image


@dataclass
class ChannelMeta:
    scale: int
    direction: int
    center_angle_deg: float


@dataclass
class FilterBank:
    n: int
    levels: int
    dirs_per_level: list
    windows: np.ndarray          # (channels, n, n), DC-centered
    meta: list

    @property
    def n_channels(self):
        return self.windows.shape[0]


@dataclass
class CoefficientStack:
    channels: np.ndarray         # (channels, n, n)
    meta: list

    @property
    def n_channels(self):
        return self.channels.shape[0]


def _raised_cosine_step(x, lo, hi):
    """0 below lo, 1 above hi, half-cosine ramp between."""
    t = np.clip((x - lo) / (hi - lo), 0.0, 1.0)
    return 0.5 * (1.0 - np.cos(np.pi * t))


def _freq_grid(n):
    k = np.arange(n) - n // 2
    KX, KY = np.meshgrid(k, k)
    return KX, KY


def _symmetrize(w, n):
    """Enforce w(omega) = w(-omega) on the centered grid (even-n edge rows
    have no mirror partner and are left as-is)."""
    out = w.copy()
    core = out[1:, 1:] if n % 2 == 0 else out
    core[:] = 0.5 * (core + core[::-1, ::-1])
    return out


def build_filter_bank(n, levels):
    """Partition-of-unity frequency tiling with 2^(s-1) wedges in shell s."""
    if levels < 1:
        raise ValueError("levels must be >= 1")
    if n < 2 ** levels:
        raise ValueError("grid too small for the requested levels")
    KX, KY = _freq_grid(n)
    nyquist = n / 2.0
    rad = np.sqrt(KX.astype(float) ** 2 + KY ** 2)
    theta = np.degrees(np.arctan2(KY, KX)) % 180.0

    # radial crossfades at Nyquist / 2^j, transition width = 1/3 of the shell
    cuts = [nyquist / 2 ** (levels - 1 - s) for s in range(levels - 1)]
    cross = []
    for rc in cuts:
        width = rc / 3.0
        cross.append(_raised_cosine_step(rad, rc - width, rc))
    # telescoping shells: transition bands are disjoint across scales, so
    # the sum is exactly 1 at every sample
    if cross:
        shells = [1.0 - cross[0]]
        for j in range(len(cross) - 1):
            shells.append(cross[j] * (1.0 - cross[j + 1]))
        shells.append(cross[-1])
    else:
        shells = [np.ones((n, n))]

    dirs_per_level = [1] + [2 ** s for s in range(1, levels)]
    windows = []
    meta = []
    windows.append(shells[0])
    meta.append(ChannelMeta(scale=0, direction=0, center_angle_deg=0.0))
    for s in range(1, levels):
        nd = dirs_per_level[s]
        period = 180.0 / nd
        tw = period / 3.0
        for d in range(nd):
            center = (d + 0.5) * period
            # wrapped angular offset in (-90, 90]
            off = (theta - center + 90.0) % 180.0 - 90.0
            ang = (_raised_cosine_step(off, -(period + tw) / 2,
                                       -(period - tw) / 2)
                   * (1.0 - _raised_cosine_step(off, (period - tw) / 2,
                                                (period + tw) / 2)))
            windows.append(shells[s] * ang)
            meta.append(ChannelMeta(scale=s, direction=d,
                                    center_angle_deg=center))
    windows = np.stack([_symmetrize(w, n) for w in windows])
    # pin the partition of unity exactly (rounding is ~1e-16 anyway)
    total = windows.sum(axis=0)
    windows /= total[None, :, :]
    return FilterBank(n=n, levels=levels, dirs_per_level=dirs_per_level,
                      windows=windows, meta=meta)


def _shifted_windows(bank):
    """Windows reindexed to numpy's unshifted FFT layout."""
    return np.fft.ifftshift(bank.windows, axes=(1, 2))


def decompose(img, bank):
    """channel_c = real(IFFT(window_c * FFT(img))); non-decimated."""
    data = img.data if isinstance(img, Image) else np.asarray(img)
    if data.shape != (bank.n, bank.n):
        raise ValueError("image size does not match filter bank")
    spec = np.fft.fft2(data)
    chans = np.real(np.fft.ifft2(_shifted_windows(bank) * spec[None, :, :],
                                 axes=(1, 2)))
    return CoefficientStack(channels=chans, meta=list(bank.meta))


def recompose(stack, bank):
    """Plain sum of channels (analysis windows partition unity)."""
    if stack.n_channels != bank.n_channels:
        raise ValueError("channel count does not match filter bank")
    return stack.channels.sum(axis=0)
