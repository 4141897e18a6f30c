"""Missing-wedge prediction and measurement for limited-angle scans.

Frequency convention: a projection at ray angle theta measures frequency
directions theta + 90 degrees (Fourier slice). Frequency grids are
DC-centered with the integer lattice in cycles per field of view.

The per-point reconstructibility weight sigma(r, omega) follows the
endpoint form of the Katsevich integral for a source arc
[lambda-, lambda+] on a circle of radius R: with
alpha(lambda, r) = r - R (cos lambda, sin lambda) and filtering direction
e = alpha(lambda-, r), sigma is 1 where the scan measures the frequency
and 0 inside the point-dependent missing wedge.
"""

from dataclasses import dataclass

import numpy as np

from .tomo import Image


@dataclass
class FreqMask:
    n: int
    data: np.ndarray
    dc_centered: bool = True

    def __post_init__(self):
        self.data = np.asarray(self.data)
        if self.data.shape != (self.n, self.n):
            raise ValueError("mask shape does not match n")


@dataclass
class ScanArc:
    lambda_minus_deg: float
    lambda_plus_deg: float
    radius: float

    def __post_init__(self):
        if self.lambda_plus_deg <= self.lambda_minus_deg:
            raise ValueError("lambda_plus must exceed lambda_minus")
        if self.radius <= 0:
            raise ValueError("orbit radius must be positive")


def _source(arc, lam_deg):
    t = np.deg2rad(lam_deg)
    return arc.radius * np.array([np.cos(t), np.sin(t)])


def _sgn(v):
    """sign with the sgn(0) = +1 boundary convention."""
    return np.where(v >= 0, 1.0, -1.0)


def katsevich_sigma(r, omega, arc):
    """sigma(r, omega) for a single point and frequency vector.

    Returns 0 for omega = 0 (sign undefined). r must lie inside the orbit.
    """
    r = np.asarray(r, dtype=np.float64)
    omega = np.asarray(omega, dtype=np.float64)
    if np.linalg.norm(r) >= arc.radius:
        raise ValueError("reconstruction point outside the source orbit")
    if np.all(omega == 0):
        return 0.0
    a_minus = r - _source(arc, arc.lambda_minus_deg)
    a_plus = r - _source(arc, arc.lambda_plus_deg)
    e = a_minus / np.linalg.norm(a_minus)
    s = 0.5 * _sgn(omega @ e) * (_sgn(omega @ a_minus) - _sgn(omega @ a_plus))
    return float(s)


def _freq_lattice(n):
    k = np.arange(n) - n // 2
    KX, KY = np.meshgrid(k, k)
    return KX, KY


def sigma_map(r, n, arc):
    """katsevich_sigma evaluated on the centered n x n frequency lattice."""
    r = np.asarray(r, dtype=np.float64)
    if np.linalg.norm(r) >= arc.radius:
        raise ValueError("reconstruction point outside the source orbit")
    KX, KY = _freq_lattice(n)
    a_minus = r - _source(arc, arc.lambda_minus_deg)
    a_plus = r - _source(arc, arc.lambda_plus_deg)
    e = a_minus / np.linalg.norm(a_minus)
    dot_e = KX * e[0] + KY * e[1]
    dm = KX * a_minus[0] + KY * a_minus[1]
    dp = KX * a_plus[0] + KY * a_plus[1]
    sig = 0.5 * _sgn(dot_e) * (_sgn(dm) - _sgn(dp))
    sig[(KX == 0) & (KY == 0)] = 0.0
    return FreqMask(n=n, data=sig)


def wedge_mask(n, lo_deg, hi_deg):
    """Missing-wedge mask for a parallel scan covering ray angles [lo, hi).

    Mask is 1 where the frequency direction mod 180 lies outside the
    measured band [lo + 90, hi + 90); point-symmetric; DC set to 0.
    """
    span = hi_deg - lo_deg
    if not (0 < span <= 180):
        raise ValueError("coverage must lie in (0, 180]")
    KX, KY = _freq_lattice(n)
    phi = np.rad2deg(np.arctan2(KY, KX)) % 180.0
    rel = (phi - (lo_deg + 90.0)) % 180.0
    mask = (rel >= span).astype(np.float64)
    mask[(KX == 0) & (KY == 0)] = 0.0
    return FreqMask(n=n, data=mask)


def katsevich_reconstruct(img, arc, max_n=128):
    """Per-pixel sigma-masked inverse Fourier integral of the image spectrum.

    O(n^4); capped at max_n. With an arc whose endpoints are antipodal for
    every pixel (sigma = 1 off DC) this reduces to the inverse FFT and
    returns the input to FFT precision, up to the image mean which rides on
    the excluded DC sample and is restored explicitly.
    """
    n = img.n
    if n > max_n:
        raise ValueError(f"grid {n} exceeds the O(n^4) cap {max_n}")
    spec = np.fft.fftshift(np.fft.fft2(img.data))
    KX, KY = _freq_lattice(n)
    c = (n - 1) / 2.0
    out = np.zeros((n, n), dtype=np.complex128)
    dc = float(spec[n // 2, n // 2].real) / (n * n)
    for i in range(n):
        for j in range(n):
            r = np.array([(j - c) * img.pixel_size, (i - c) * img.pixel_size])
            sig = sigma_map(r, n, arc).data
            # inverse DFT phase uses grid indices, matching numpy's fft2
            phase = np.exp(2j * np.pi * (KX * j + KY * i) / n)
            out[i, j] = np.sum(spec * sig * phase) / (n * n)
    return Image(n=n, pixel_size=img.pixel_size, data=np.real(out) + dc)


def full_arc(n, pixel_size=1.0, lambda_minus_deg=13.7):
    """A 180-degree arc at a huge radius: the full-scan analog.

    Endpoint sources are antipodal, so sigma = 1 (off DC) for every pixel
    up to an angular boundary band of width ~ |r| / R that misses the
    integer frequency lattice for a generic start angle.
    """
    radius = 1e8 * n * pixel_size
    return ScanArc(lambda_minus_deg=lambda_minus_deg,
                   lambda_plus_deg=lambda_minus_deg + 180.0,
                   radius=radius)


def artifact_spectrum(limited, full):
    """Centered magnitude spectrum of the artifact (limited - full).

    Returns (magnitude, log_magnitude) as n x n arrays.
    """
    a = np.asarray(limited.data if isinstance(limited, Image) else limited)
    b = np.asarray(full.data if isinstance(full, Image) else full)
    if a.shape != b.shape:
        raise ValueError("image sizes differ")
    spec = np.abs(np.fft.fftshift(np.fft.fft2(a - b)))
    return spec, np.log1p(spec)


def wedge_energy_ratio(spec, mask):
    """Fraction of spectral energy inside the mask, DC excluded."""
    spec = np.asarray(spec, dtype=np.float64)
    m = mask.data if isinstance(mask, FreqMask) else np.asarray(mask)
    if spec.shape != m.shape:
        raise ValueError("size mismatch")
    n = spec.shape[0]
    e = spec ** 2
    e[n // 2, n // 2] = 0.0
    total = e.sum()
    if total == 0:
        raise ValueError("zero total energy")
    return float((e * m).sum() / total)


def angular_energy_profile(spec, n_bins=90, min_radius=6.0):
    """Spectral mass per frequency-direction bin over [0, 180), normalized
    to unit sum. Used to compare artifact spectra across phantoms.

    Samples within min_radius bins of DC are excluded: at radius r the
    direction of a lattice sample is only defined to ~57/r degrees, so the
    innermost annuli smear phantom-specific content over all bins and
    carry no directional information."""
    spec = np.asarray(spec, dtype=np.float64)
    n = spec.shape[0]
    KX, KY = _freq_lattice(n)
    phi = np.rad2deg(np.arctan2(KY, KX)) % 180.0
    w = np.where(np.hypot(KX, KY) >= min_radius, np.abs(spec), 0.0)
    bins = np.minimum((phi / (180.0 / n_bins)).astype(int), n_bins - 1)
    prof = np.bincount(bins.ravel(), weights=w.ravel(), minlength=n_bins)
    s = prof.sum()
    return prof / s if s > 0 else prof
