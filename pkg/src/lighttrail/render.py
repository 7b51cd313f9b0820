"""Light-trail rendering: geometry, energy accumulation, LOS gain and blur.

Sensor coordinates are continuous, with pixel ``(ix, iy)`` covering
``[ix, ix+1) x [iy, iy+1)``. Grids are numpy arrays of shape ``(ny, nx)``
(row = y) over a region of interest whose top-left pixel is ``origin``;
a full 4000x3000 sensor is never allocated.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage, sparse

from .config import TWO_PI, SystemConfig

ROLES = ("Q_blink", "P_dist", "L_alloc", "R_received")


class GeometryError(ValueError):
    pass


@dataclass(frozen=True)
class TrailLayout:
    led_index: int
    center: tuple[float, float]
    image_radius: float
    footprint_radius: float
    control_angle: float
    centroids: np.ndarray  # (J, 2) continuous (x, y)
    pixels: np.ndarray  # (J, 2) integer (ix, iy)

    @property
    def J(self) -> int:
        return len(self.centroids)

    def segment_bounds(self, j: int) -> tuple[float, float]:
        return j * self.control_angle, (j + 1) * self.control_angle


@dataclass(frozen=True)
class EnergyGrid:
    values: np.ndarray
    origin: tuple[int, int]  # (x0, y0) of values[0, 0]
    role: str

    def __post_init__(self):
        if self.role not in ROLES:
            raise ValueError(f"unknown grid role {self.role!r}")

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def at(self, ix, iy):
        x0, y0 = self.origin
        return self.values[np.asarray(iy) - y0, np.asarray(ix) - x0]

    def total(self) -> float:
        return float(self.values.sum())


@dataclass(frozen=True)
class BlurKernel:
    size: int
    sigma: float
    weights: np.ndarray


def pixels_per_metre(cfg: SystemConfig) -> float:
    """Object-plane to image-plane magnification in pixels per metre."""
    cam = cfg.camera
    return cam.focal_length / (cfg.channel.distance * cam.pixel_pitch)


def optical_center(cfg: SystemConfig) -> tuple[float, float]:
    X, Y = cfg.camera.resolution
    ox, oy = cfg.camera.axis_offset
    return X / 2.0 + ox, Y / 2.0 + oy


def nearest_pixel(c: np.ndarray) -> np.ndarray:
    # pixel k has centre k + 0.5; on a tie the smaller index wins
    return (np.ceil(np.asarray(c, dtype=float)) - 1).astype(np.int64)


def project_geometry(cfg: SystemConfig, led_index: int | None = None) -> TrailLayout:
    """Pinhole projection of LED ``led_index`` (1-based) onto the sensor."""
    if led_index is None:
        led_index = cfg.analysis.led_index
    radii = cfg.tx.rotation_radii
    if not 1 <= led_index <= len(radii):
        raise GeometryError(f"LED index {led_index} out of range 1..{len(radii)}")
    scale = pixels_per_metre(cfg)
    R = radii[led_index - 1] * scale
    r = cfg.tx.led_chip_radius * scale
    J = cfg.J
    dtheta = TWO_PI / J
    cx, cy = optical_center(cfg)
    ang = (np.arange(J) + 0.5) * dtheta
    cents = np.column_stack([cx + R * np.cos(ang), cy + R * np.sin(ang)])

    X, Y = cfg.camera.resolution
    margin = R + r + cfg.channel.kernel_size // 2 + 1
    if cx - margin < 0 or cy - margin < 0 or cx + margin > X or cy + margin > Y:
        raise GeometryError(f"trail of LED {led_index} exceeds the sensor bounds")
    return TrailLayout(
        led_index=led_index,
        center=(cx, cy),
        image_radius=R,
        footprint_radius=r,
        control_angle=dtheta,
        centroids=cents,
        pixels=nearest_pixel(cents),
    )


def trail_roi(cfg: SystemConfig, layout: TrailLayout) -> tuple[int, int, int, int]:
    """(x0, y0, nx, ny) window holding the trail plus a blur margin."""
    cx, cy = layout.center
    pad = layout.image_radius + layout.footprint_radius + cfg.channel.kernel_size // 2 + 2
    x0 = int(math.floor(cx - pad))
    y0 = int(math.floor(cy - pad))
    x1 = int(math.ceil(cx + pad))
    y1 = int(math.ceil(cy + pad))
    X, Y = cfg.camera.resolution
    x0, y0 = max(x0, 0), max(y0, 0)
    x1, y1 = min(x1, X), min(y1, Y)
    return x0, y0, x1 - x0, y1 - y0


# --- dwell-time integration -------------------------------------------------


@dataclass(frozen=True)
class _SweepSamples:
    """Subpixel sample points touched by the swept LED disk."""

    pix: np.ndarray  # flat ROI pixel index of each sample
    start: np.ndarray  # angle where coverage starts, in [0, 2pi)
    width: np.ndarray  # angular coverage length, <= 2pi
    weight: float  # sample area / disk area


def _sweep_samples(layout: TrailLayout, roi, supersample: int) -> _SweepSamples:
    x0, y0, nx, ny = roi
    cx, cy = layout.center
    R, r = layout.image_radius, layout.footprint_radius
    # only pixels within reach of the disk path
    ix = np.arange(x0, x0 + nx)
    iy = np.arange(y0, y0 + ny)
    gx, gy = np.meshgrid(ix + 0.5 - cx, iy + 0.5 - cy)
    rad = np.hypot(gx, gy)
    near = np.abs(rad - R) <= r + 1.0
    if R <= r + 1.0:
        near |= rad <= r + 1.0
    py, px = np.nonzero(near)
    flat = py * nx + px

    s = supersample
    off = (np.arange(s) + 0.5) / s
    ox, oy = np.meshgrid(off, off)
    ox, oy = ox.ravel(), oy.ravel()
    sx = (x0 + px)[:, None] + ox[None, :] - cx
    sy = (y0 + py)[:, None] + oy[None, :] - cy
    rho = np.hypot(sx, sy).ravel()
    phi = np.mod(np.arctan2(sy, sx).ravel(), TWO_PI)
    pix = np.repeat(flat, s * s)

    with np.errstate(divide="ignore", invalid="ignore"):
        kappa = (rho**2 + R**2 - r**2) / (2.0 * rho * R)
    kappa = np.where(rho == 0.0, np.where(R <= r, -np.inf, np.inf), kappa)
    hit = kappa <= 1.0
    alpha = np.arccos(np.clip(kappa[hit], -1.0, 1.0))
    start = np.mod(phi[hit] - alpha, TWO_PI)
    return _SweepSamples(
        pix=pix[hit],
        start=start,
        width=2.0 * alpha,
        weight=1.0 / (s * s * math.pi * r * r),
    )


def _overlap(start, width, a, b):
    """Length of circular arc [start, start+width] inside [a, b] (0<=a<b<=2pi)."""
    lo = start
    hi = start + width
    ov = np.clip(np.minimum(hi, b) - np.maximum(lo, a), 0.0, None)
    ov += np.clip(np.minimum(hi - TWO_PI, b) - np.maximum(lo - TWO_PI, a), 0.0, None)
    return ov


def segment_dwell_matrix(layout: TrailLayout, roi, supersample: int = 8) -> sparse.csc_matrix:
    """Per-segment dwell maps, shape (n_roi_pixels, J), each column summing to 1.

    Entry (p, m) is the fraction of segment ``m``'s emitted energy landing in
    pixel ``p``: the swept-disk coverage time integrated over the pixel.
    """
    smp = _sweep_samples(layout, roi, supersample)
    J = layout.J
    dth = layout.control_angle
    npix = roi[2] * roi[3]
    # each sample's coverage interval touches at most n_span consecutive segments
    n_span = int(math.ceil(float(smp.width.max(initial=0.0)) / dth)) + 1
    n_span = min(n_span, J)
    k0 = np.floor(smp.start / dth).astype(np.int64)
    rows, cols, vals = [], [], []
    for t in range(n_span):
        k = k0 + t
        seg = np.mod(k, J)
        a = seg * dth
        ov = _overlap(smp.start, smp.width, a, a + dth)
        keep = ov > 0
        rows.append(smp.pix[keep])
        cols.append(seg[keep])
        vals.append(ov[keep])
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    vals = np.concatenate(vals) * smp.weight
    mat = sparse.coo_matrix((vals, (rows, cols)), shape=(npix, J)).tocsc()
    mat.sum_duplicates()
    colsum = np.asarray(mat.sum(axis=0)).ravel()
    if np.any(colsum <= 0):
        raise GeometryError("segment with no rendered coverage")
    # exact per-segment energy conservation; removes supersampling bias
    return (mat @ sparse.diags(1.0 / colsum)).tocsc()


def accumulate_blink_energy(cfg: SystemConfig, layout: TrailLayout, bits, exposure: float | None = None,
                            roi=None) -> EnergyGrid:
    """Luminous energy deposited per pixel by the "1" segments of ``bits``."""
    bits = np.asarray(bits, dtype=float).ravel()
    if bits.size != layout.J:
        raise ValueError(f"expected {layout.J} bits, got {bits.size}")
    if exposure is None:
        exposure = 1.0 / cfg.tx.rotations_per_second
    if roi is None:
        roi = trail_roi(cfg, layout)
    x0, y0, nx, ny = roi
    if not bits.any():
        return EnergyGrid(np.zeros((ny, nx)), (x0, y0), "Q_blink")
    dwell = segment_dwell_matrix(layout, roi, cfg.analysis.supersample)
    cam = cfg.camera
    flux = cam.luminous_efficacy * cam.luminous_efficiency * cfg.tx.total_power
    per_segment = flux * exposure / layout.J
    q = dwell @ (bits * per_segment)
    return EnergyGrid(np.asarray(q).reshape(ny, nx), (x0, y0), "Q_blink")


def radiometric_distribution(q_grid: EnergyGrid, K: float, V: float) -> EnergyGrid:
    if K <= 0 or V <= 0:
        raise ValueError("luminous efficacy and efficiency must be > 0")
    return EnergyGrid(q_grid.values / (K * V), q_grid.origin, "P_dist")


def allocate_power(p_grid: EnergyGrid, P_T: float) -> EnergyGrid:
    total = p_grid.values.sum()
    if P_T == 0:
        return EnergyGrid(np.zeros_like(p_grid.values), p_grid.origin, "L_alloc")
    if total <= 0:
        raise ValueError("no trail rendered")
    return EnergyGrid(P_T * p_grid.values / total, p_grid.origin, "L_alloc")


# --- channel ------------------------------------------------------------------


def incidence_angle(cfg: SystemConfig, x, y):
    """Angle between the optical axis and the ray through sensor point (x, y)."""
    cx, cy = optical_center(cfg)
    cam = cfg.camera
    d = np.hypot(np.asarray(x, dtype=float) - cx, np.asarray(y, dtype=float) - cy) * cam.pixel_pitch
    return np.arctan2(d, cam.focal_length)


def lambertian_pattern(psi, order: float):
    return (order + 1.0) / TWO_PI * np.cos(psi) ** order


def los_gain(cfg: SystemConfig, x, y):
    """DC channel gain at continuous sensor coordinates (pixel centres at k+0.5).

    With the transmitter and camera axes parallel, the emission angle at the
    LED equals the incidence angle at the lens; the source-pixel distance is
    the range along the back-projected ray.
    """
    ch = cfg.channel
    eps = incidence_angle(cfg, x, y)
    dist = ch.distance / np.cos(eps)
    collect = np.where(
        eps <= ch.fov,
        cfg.pupil_area * ch.filter_transmittance * ch.lens_gain * np.cos(eps),
        0.0,
    )
    return collect / dist**ch.path_loss_exponent * lambertian_pattern(eps, ch.lambertian_order)


def los_gain_field(cfg: SystemConfig, roi, flat: bool = False) -> np.ndarray:
    x0, y0, nx, ny = roi
    if flat:
        cx, cy = optical_center(cfg)
        return np.full((ny, nx), float(los_gain(cfg, cx, cy)))
    gx, gy = np.meshgrid(np.arange(x0, x0 + nx) + 0.5, np.arange(y0, y0 + ny) + 0.5)
    return los_gain(cfg, gx, gy)


def gaussian_kernel(q: int, sigma: float) -> BlurKernel:
    if q < 1 or q % 2 != 1:
        raise ValueError("kernel_size must be odd")
    if sigma <= 0:
        raise ValueError("blur sigma must be > 0")
    h = (q - 1) // 2
    a = np.arange(-h, h + 1, dtype=float)
    w = np.exp(-(a[:, None] ** 2 + a[None, :] ** 2) / (2.0 * sigma**2))
    return BlurKernel(q, sigma, w / w.sum())


def received_power(l_grid: EnergyGrid, h_field, kernel: BlurKernel) -> EnergyGrid:
    """Blur ``l_grid`` with the kernel (zero padding) and scale by the LOS gain."""
    blurred = ndimage.convolve(l_grid.values, kernel.weights, mode="constant", cval=0.0)
    return EnergyGrid(np.asarray(h_field) * blurred, l_grid.origin, "R_received")


# --- composed paths -------------------------------------------------------------


def render_received(cfg: SystemConfig, bits, layout: TrailLayout | None = None, flat_h: bool = False,
                    exposure: float | None = None) -> EnergyGrid:
    """Noise-free received energy (J) over the trail window for one frame."""
    exposure = cfg.camera.exposure_time if exposure is None else exposure
    layout = project_geometry(cfg) if layout is None else layout
    roi = trail_roi(cfg, layout)
    bits = np.asarray(bits).ravel()
    x0, y0, nx, ny = roi
    if not bits.any():
        return EnergyGrid(np.zeros((ny, nx)), (x0, y0), "R_received")
    cam = cfg.camera
    q = accumulate_blink_energy(cfg, layout, bits, roi=roi)
    p = radiometric_distribution(q, cam.luminous_efficacy, cam.luminous_efficiency)
    P_T = int(np.count_nonzero(bits)) * cfg.tx.total_power / layout.J
    l_grid = allocate_power(p, P_T)
    h = los_gain_field(cfg, roi, flat=flat_h)
    rec = received_power(l_grid, h, gaussian_kernel(cfg.channel.kernel_size, cfg.blur_sigma))
    return EnergyGrid(rec.values * exposure, rec.origin, "R_received")


def sample_points(layout: TrailLayout, mode: str = "interpolated"):
    """Pixels and weights used to sample each centroid, shapes (J, k).

    ``nearest`` reads the single nearest pixel; ``interpolated`` mixes the
    four pixels around the continuous centroid bilinearly.
    """
    if mode == "nearest":
        return layout.pixels[:, :1], layout.pixels[:, 1:], np.ones((layout.J, 1))
    if mode != "interpolated":
        raise ValueError(f"unknown centroid sampling {mode!r}")
    u = layout.centroids - 0.5
    i0 = np.floor(u).astype(np.int64)
    f = u - i0
    dx = np.array([0, 1, 0, 1])
    dy = np.array([0, 0, 1, 1])
    wx = np.where(dx[None, :] == 1, f[:, :1], 1.0 - f[:, :1])
    wy = np.where(dy[None, :] == 1, f[:, 1:], 1.0 - f[:, 1:])
    return i0[:, :1] + dx[None, :], i0[:, 1:] + dy[None, :], wx * wy


def sample_centroids(grid: EnergyGrid, layout: TrailLayout, mode: str = "interpolated") -> np.ndarray:
    """Field values at the J centroids under the given sampling rule."""
    px, py, w = sample_points(layout, mode)
    return (grid.at(px, py) * w).sum(axis=1)


def component_matrix(cfg: SystemConfig, layout: TrailLayout | None = None, exposure: float | None = None) -> np.ndarray:
    """Received energy at every centroid from every single active segment.

    Returns ``C`` of shape (J, J) with ``C[j, m]`` the noise-free energy
    sampled at centroid ``j`` when only segment ``m`` is on (frame power
    ``P_tot/J``). By linearity any bit pattern gives ``C @ bits``.
    """
    layout = project_geometry(cfg) if layout is None else layout
    exposure = cfg.camera.exposure_time if exposure is None else exposure
    roi = trail_roi(cfg, layout)
    x0, y0, nx, ny = roi
    J = layout.J
    dwell = segment_dwell_matrix(layout, roi, cfg.analysis.supersample)
    kern = gaussian_kernel(cfg.channel.kernel_size, cfg.blur_sigma)
    h = (kern.size - 1) // 2
    a = np.arange(-h, h + 1)
    spx, spy, sw = sample_points(layout, cfg.analysis.centroid_sampling)
    sw = sw * los_gain(cfg, spx + 0.5, spy + 0.5)
    # R(p) = H_p * sum_ab G[a,b] L[p_y - a, p_x - b], mixed over the sample points p
    px = spx[:, :, None, None] - a[None, None, None, :] - x0
    py = spy[:, :, None, None] - a[None, None, :, None] - y0
    px, py = np.broadcast_arrays(px, py)
    w = sw[:, :, None, None] * kern.weights[None, None, :, :]
    inside = (px >= 0) & (px < nx) & (py >= 0) & (py < ny)
    rows = np.broadcast_to(np.arange(J)[:, None, None, None], px.shape)[inside]
    cols = (py * nx + px)[inside]
    gather = sparse.csr_matrix((w[inside], (rows, cols)), shape=(J, nx * ny))
    per_segment_power = cfg.tx.total_power / J
    C = np.asarray((gather @ dwell).todense())
    return C * (per_segment_power * exposure)


# --- dumps ---------------------------------------------------------------------------


def write_pgm(path: str | Path, values: np.ndarray, maxval: int = 65535, scale: float | None = None) -> None:
    """Plain-text (P2) 16-bit graymap. ``scale`` maps values to counts."""
    v = np.asarray(values, dtype=float)
    if scale is None:
        peak = v.max(initial=0.0)
        scale = maxval / peak if peak > 0 else 1.0
    counts = np.clip(np.rint(v * scale), 0, maxval).astype(np.int64)
    ny, nx = counts.shape
    lines = ["P2", f"{nx} {ny}", str(maxval)]
    lines.extend(" ".join(map(str, row)) for row in counts)
    Path(path).write_text("\n".join(lines) + "\n")


def read_pgm(path: str | Path) -> np.ndarray:
    tokens = []
    for line in Path(path).read_text().splitlines():
        tokens.extend(line.split("#", 1)[0].split())
    if tokens[0] != "P2":
        raise ValueError("not a plain PGM file")
    nx, ny = int(tokens[1]), int(tokens[2])
    return np.array(tokens[4:4 + nx * ny], dtype=np.int64).reshape(ny, nx)


def write_layout_csv(path: str | Path, layout: TrailLayout) -> None:
    lines = ["j,x_j,y_j,ix,iy"]
    for j, ((x, y), (ix, iy)) in enumerate(zip(layout.centroids, layout.pixels)):
        lines.append(f"{j},{x:.6f},{y:.6f},{ix},{iy}")
    Path(path).write_text("\n".join(lines) + "\n")
