"""Parallel-beam scan simulation and classical reconstruction.

Coordinates: pixel (row i, col j) sits at x = (j - c) * pixel_size,
y = (i - c) * pixel_size with c = (n - 1) / 2 (y grows downward with the
row index; all operators are expressed in this frame consistently).

A projection row at ray angle theta integrates along direction
(cos theta, sin theta); the detector axis is (-sin theta, cos theta) with
the center bin on the ray through the isocenter.
"""

from dataclasses import dataclass, field, replace

import numpy as np

from .rng import SplitMix64


@dataclass
class Image:
    n: int
    pixel_size: float
    data: np.ndarray

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.n < 8:
            raise ValueError("image side must be at least 8")
        if self.data.shape != (self.n, self.n):
            raise ValueError("data shape does not match n")
        if not np.all(np.isfinite(self.data)):
            raise ValueError("image contains non-finite values")


@dataclass
class Geometry:
    n_angles: int
    angle_start_deg: float
    angle_end_deg: float
    n_det: int
    det_spacing: float
    kind: str = "parallel"

    def __post_init__(self):
        arc = self.angle_end_deg - self.angle_start_deg
        if not (0 < arc <= 180):
            raise ValueError("parallel-beam arc must lie in (0, 180]")
        if self.n_angles < 2:
            raise ValueError("need at least 2 angles")
        if self.n_det < 1 or self.n_det % 2 == 0:
            raise ValueError("n_det must be odd")

    @property
    def arc_deg(self):
        return self.angle_end_deg - self.angle_start_deg

    def angles_deg(self):
        """Half-open arc [start, end): row a at start + a * arc / n_angles."""
        step = self.arc_deg / self.n_angles
        return self.angle_start_deg + step * np.arange(self.n_angles)


@dataclass
class Sinogram:
    geometry: Geometry
    data: np.ndarray
    angles_deg: np.ndarray = field(default=None)

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.angles_deg is None:
            self.angles_deg = self.geometry.angles_deg()
        self.angles_deg = np.asarray(self.angles_deg, dtype=np.float64)
        if self.data.shape != (self.geometry.n_angles, self.geometry.n_det):
            raise ValueError("sinogram shape does not match geometry")
        if len(self.angles_deg) != self.geometry.n_angles:
            raise ValueError("angle list length mismatch")
        if np.any(np.diff(self.angles_deg) <= 0):
            raise ValueError("angles must be strictly increasing")


@dataclass
class Ellipse:
    cx: float
    cy: float
    a: float
    b: float
    rot_deg: float
    intensity: float

    def __post_init__(self):
        if self.a <= 0 or self.b <= 0:
            raise ValueError("semi-axes must be positive")


@dataclass
class TvParams:
    n_iters: int = 50
    sart_relax: float = 1.0
    n_tv_steps: int = 10
    tv_step_scale: float = 0.2
    enforce_nonnegativity: bool = True

    def __post_init__(self):
        if self.n_iters < 1 or self.n_tv_steps < 0:
            raise ValueError("iteration counts must be >= 1 (tv steps >= 0)")
        if not (0 < self.sart_relax < 2):
            raise ValueError("sart_relax must be in (0, 2)")
        if not (0 < self.tv_step_scale < 1):
            raise ValueError("tv_step_scale must be in (0, 1)")


def default_geometry(n, pixel_size=1.0, arc_deg=180.0, n_angles=None):
    """Detector covers the grid diagonal: next odd count >= ceil(n * sqrt(2))."""
    n_det = int(np.ceil(n * np.sqrt(2.0)))
    if n_det % 2 == 0:
        n_det += 1
    if n_angles is None:
        n_angles = max(2, int(round(360 * arc_deg / 180.0)))
    return Geometry(n_angles=n_angles, angle_start_deg=0.0,
                    angle_end_deg=arc_deg, n_det=n_det,
                    det_spacing=pixel_size)


# ---------------------------------------------------------------------------
# phantoms

# Modified Shepp-Logan ellipse table: (cx, cy, a, b, rot_deg, intensity)
# on the unit disk; overlaps sum so values stay in [0, 1].
_SHEPP_LOGAN = [
    (0.0, 0.0, 0.69, 0.92, 0.0, 1.0),
    (0.0, -0.0184, 0.6624, 0.874, 0.0, -0.8),
    (0.22, 0.0, 0.11, 0.31, -18.0, -0.2),
    (-0.22, 0.0, 0.16, 0.41, 18.0, -0.2),
    (0.0, 0.35, 0.21, 0.25, 0.0, 0.1),
    (0.0, 0.1, 0.046, 0.046, 0.0, 0.1),
    (0.0, -0.1, 0.046, 0.046, 0.0, 0.1),
    (-0.08, -0.605, 0.046, 0.023, 0.0, 0.1),
    (0.0, -0.605, 0.023, 0.023, 0.0, 0.1),
    (0.06, -0.605, 0.023, 0.046, 0.0, 0.1),
]


def _render_ellipses(n, ellipses, pixel_size=1.0):
    c = (n - 1) / 2.0
    half = n / 2.0
    # unit coordinates on the inscribed disk
    x = (np.arange(n) - c) / half
    X, Y = np.meshgrid(x, x)
    img = np.zeros((n, n))
    for cx, cy, a, b, rot, val in ellipses:
        t = np.deg2rad(rot)
        xr = (X - cx) * np.cos(t) + (Y - cy) * np.sin(t)
        yr = -(X - cx) * np.sin(t) + (Y - cy) * np.cos(t)
        img[(xr / a) ** 2 + (yr / b) ** 2 <= 1.0] += val
    return Image(n=n, pixel_size=pixel_size, data=img)


def shepp_logan(n, pixel_size=1.0):
    """Classic 10-ellipse Shepp-Logan phantom scaled to the inscribed disk."""
    if n < 8:
        raise ValueError("phantom side must be at least 8")
    img = _render_ellipses(n, _SHEPP_LOGAN, pixel_size)
    img.data = np.clip(img.data, 0.0, 1.0)
    return img


def random_phantom(n, seed, k=6, pixel_size=1.0):
    """Deterministic random phantom: one body ellipse plus k-1 interior ones."""
    if n < 8:
        raise ValueError("phantom side must be at least 8")
    if k < 1:
        raise ValueError("need at least one ellipse")
    g = SplitMix64(seed)
    body_a = g.uniform(0.6, 0.9)
    body_b = g.uniform(0.6, 0.9)
    body_rot = g.uniform(0.0, 180.0)
    ellipses = [(0.0, 0.0, body_a, body_b, body_rot, 1.0)]
    for _ in range(k - 1):
        a = g.uniform(0.05, 0.4)
        b = g.uniform(0.05, 0.4)
        cx = g.uniform(-0.5, 0.5)
        cy = g.uniform(-0.5, 0.5)
        rot = g.uniform(0.0, 180.0)
        val = g.uniform(-0.4, 0.4)
        ellipses.append((cx, cy, a, b, rot, val))
    img = _render_ellipses(n, ellipses, pixel_size)
    img.data = np.clip(img.data, 0.0, 1.2)
    return img


# ---------------------------------------------------------------------------
# projection operators
#
# forward_project gathers bilinear samples along each ray; backprojection is
# its exact transpose (scatter with identical weights), so the adjoint
# identity holds to machine precision. Kernels are numba-compiled serial
# loops, which keeps them bit-deterministic.

from numba import njit


@njit(cache=True)
def _forward_kernel(img, theta, n_det, det_spacing, pixel_size):
    n = img.shape[0]
    c = (n - 1) / 2.0
    out = np.zeros((theta.size, n_det))
    for a in range(theta.size):
        ct = np.cos(theta[a])
        st = np.sin(theta[a])
        for k in range(n_det):
            s = (k - (n_det - 1) / 2.0) * det_spacing
            acc = 0.0
            for ti in range(n_det):
                t = (ti - (n_det - 1) / 2.0) * pixel_size
                x = (-st * s + ct * t) / pixel_size + c
                y = (ct * s + st * t) / pixel_size + c
                x0 = int(np.floor(x))
                y0 = int(np.floor(y))
                fx = x - x0
                fy = y - y0
                for dy in range(2):
                    yi = y0 + dy
                    if yi < 0 or yi >= n:
                        continue
                    wy = fy if dy else 1.0 - fy
                    for dx in range(2):
                        xi = x0 + dx
                        if xi < 0 or xi >= n:
                            continue
                        wx = fx if dx else 1.0 - fx
                        acc += img[yi, xi] * wx * wy
            out[a, k] = acc * pixel_size
    return out


@njit(cache=True)
def _backproject_kernel(sino, theta, n, det_spacing, pixel_size):
    n_det = sino.shape[1]
    c = (n - 1) / 2.0
    out = np.zeros((n, n))
    for a in range(theta.size):
        ct = np.cos(theta[a])
        st = np.sin(theta[a])
        for k in range(n_det):
            v = sino[a, k] * pixel_size
            if v == 0.0:
                continue
            s = (k - (n_det - 1) / 2.0) * det_spacing
            for ti in range(n_det):
                t = (ti - (n_det - 1) / 2.0) * pixel_size
                x = (-st * s + ct * t) / pixel_size + c
                y = (ct * s + st * t) / pixel_size + c
                x0 = int(np.floor(x))
                y0 = int(np.floor(y))
                fx = x - x0
                fy = y - y0
                for dy in range(2):
                    yi = y0 + dy
                    if yi < 0 or yi >= n:
                        continue
                    wy = fy if dy else 1.0 - fy
                    for dx in range(2):
                        xi = x0 + dx
                        if xi < 0 or xi >= n:
                            continue
                        wx = fx if dx else 1.0 - fx
                        out[yi, xi] += v * wx * wy
    return out


def _check_coverage(img, geom):
    need = img.n * img.pixel_size * np.sqrt(2.0) / 2.0
    have = (geom.n_det - 1) / 2.0 * geom.det_spacing + geom.det_spacing / 2.0
    if have < need - 1e-9:
        raise ValueError("detector does not cover the grid diagonal")


def forward_project(img, geom):
    """Line integrals (value * mm) of img along every ray of geom."""
    _check_coverage(img, geom)
    theta = np.deg2rad(geom.angles_deg())
    data = _forward_kernel(np.ascontiguousarray(img.data), theta,
                           geom.n_det, geom.det_spacing, img.pixel_size)
    return Sinogram(geometry=geom, data=data)


def backproject(sino, n, pixel_size=1.0, scale=None):
    """Transpose of forward_project, FBP-scaled by arc_rad / n_angles.

    Pass scale=1.0 for the plain unscaled adjoint.
    """
    geom = sino.geometry
    if scale is None:
        scale = np.deg2rad(geom.arc_deg) / geom.n_angles
    theta = np.deg2rad(np.asarray(sino.angles_deg))
    data = _backproject_kernel(np.ascontiguousarray(sino.data), theta,
                               n, geom.det_spacing, pixel_size) * scale
    return Image(n=n, pixel_size=pixel_size, data=data)


def ramp_filter(sino, window="ramlak"):
    """Frequency-domain ramp filter per detector row.

    Rows are zero-padded to the next power of two >= 2 * n_det.
    """
    if window not in ("ramlak", "hann"):
        raise ValueError(f"unknown window {window!r}")
    n_det = sino.geometry.n_det
    m = 1
    while m < 2 * n_det:
        m *= 2
    freqs = np.fft.fftfreq(m, d=sino.geometry.det_spacing)
    filt = np.abs(freqs)
    if window == "hann":
        filt *= 0.5 * (1.0 + np.cos(np.pi * freqs / np.abs(freqs).max()))
    spec = np.fft.fft(sino.data, n=m, axis=1) * filt[None, :]
    filtered = np.real(np.fft.ifft(spec, axis=1))[:, :n_det]
    return Sinogram(geometry=sino.geometry, data=filtered,
                    angles_deg=sino.angles_deg.copy())


def fbp(sino, n, window="ramlak", pixel_size=1.0):
    """Filtered backprojection: ramp_filter then scaled backproject."""
    return backproject(ramp_filter(sino, window), n, pixel_size=pixel_size)


def restrict_angles(sino, lo_deg, hi_deg):
    """Keep rows with angle in [lo, hi); geometry updated to match."""
    keep = (sino.angles_deg >= lo_deg) & (sino.angles_deg < hi_deg)
    if not np.any(keep):
        raise ValueError("angle restriction selects no rows")
    angles = sino.angles_deg[keep]
    step = sino.geometry.arc_deg / sino.geometry.n_angles
    geom = replace(sino.geometry, n_angles=int(keep.sum()),
                   angle_start_deg=float(angles[0]),
                   angle_end_deg=float(angles[-1]) + step)
    return Sinogram(geometry=geom, data=sino.data[keep].copy(),
                    angles_deg=angles.copy())


# ---------------------------------------------------------------------------
# POCS-TV

def tv_value(x, eps=1e-8):
    gx = np.diff(x, axis=1, append=x[:, -1:])
    gy = np.diff(x, axis=0, append=x[-1:, :])
    return float(np.sum(np.sqrt(gx ** 2 + gy ** 2 + eps ** 2)))


def tv_gradient(x, eps=1e-8):
    """Gradient of the eps-smoothed isotropic TV (divergence form)."""
    gx = np.diff(x, axis=1, append=x[:, -1:])
    gy = np.diff(x, axis=0, append=x[-1:, :])
    mag = np.sqrt(gx ** 2 + gy ** 2 + eps ** 2)
    px = gx / mag
    py = gy / mag
    div = np.zeros_like(x)
    div[:, 0] += px[:, 0]
    div[:, 1:] += px[:, 1:] - px[:, :-1]
    div[0, :] += py[0, :]
    div[1:, :] += py[1:, :] - py[:-1, :]
    return -div


def pocs_tv(sino, n, params=None, pixel_size=1.0):
    """SART + nonnegativity + TV steepest descent, Sidky-style alternation.

    Returns (Image, log) where log carries per-iteration data residuals and
    TV values. Aborts if the data residual grows 10x above its minimum.
    """
    if params is None:
        params = TvParams()
    geom = sino.geometry
    ones_img = Image(n=n, pixel_size=pixel_size, data=np.ones((n, n)))
    row_sums = forward_project(ones_img, geom).data
    ones_sino = Sinogram(geometry=geom, data=np.ones_like(sino.data),
                         angles_deg=sino.angles_deg.copy())
    col_sums = backproject(ones_sino, n, pixel_size=pixel_size, scale=1.0).data
    row_sums = np.maximum(row_sums, 1e-12)
    col_sums = np.maximum(col_sums, 1e-12)

    x = np.zeros((n, n))
    residuals = []
    tvs = []
    best = np.inf
    for _ in range(params.n_iters):
        proj = forward_project(Image(n=n, pixel_size=pixel_size, data=x), geom)
        err = sino.data - proj.data
        residuals.append(float(np.linalg.norm(err)))
        best = min(best, residuals[-1])
        if residuals[-1] > 10.0 * best:
            raise RuntimeError("POCS-TV diverged: data residual grew 10x")
        corr = backproject(
            Sinogram(geometry=geom, data=err / row_sums,
                     angles_deg=sino.angles_deg.copy()),
            n, pixel_size=pixel_size, scale=1.0).data / col_sums
        update = params.sart_relax * corr
        x = x + update
        if params.enforce_nonnegativity:
            x = np.maximum(x, 0.0)
        upd_norm = float(np.linalg.norm(update))
        for _ in range(params.n_tv_steps):
            g = tv_gradient(x)
            gn = float(np.linalg.norm(g))
            if gn == 0:
                break
            x = x - params.tv_step_scale * upd_norm / gn * g
        tvs.append(tv_value(x))
    log = {"data_residual": residuals, "tv": tvs}
    return Image(n=n, pixel_size=pixel_size, data=x), log
