import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import ndimage

from lighttrail import link
from lighttrail.render import (
    EnergyGrid,
    GeometryError,
    accumulate_blink_energy,
    allocate_power,
    component_matrix,
    gaussian_kernel,
    los_gain,
    nearest_pixel,
    pixels_per_metre,
    project_geometry,
    radiometric_distribution,
    read_pgm,
    received_power,
    render_received,
    sample_centroids,
    sample_points,
    segment_dwell_matrix,
    trail_roi,
    write_layout_csv,
    write_pgm,
)

from conftest import with_fields


def test_magnification(cfg):
    assert math.isclose(pixels_per_metre(cfg), 311.85031185031185, rel_tol=1e-12)


def test_outer_led_radii(cfg):
    lay = project_geometry(cfg, 12)
    assert math.isclose(lay.image_radius, 29.46985446985447, rel_tol=1e-12)
    assert math.isclose(lay.footprint_radius, 0.6237006237006237, rel_tol=1e-12)


def test_centroids_on_circle_at_half_offsets(cfg):
    lay = project_geometry(cfg)
    assert lay.J == 18
    cx, cy = lay.center
    ang = np.unwrap(np.arctan2(lay.centroids[:, 1] - cy, lay.centroids[:, 0] - cx))
    assert np.allclose(np.diff(ang), math.pi / 9, atol=1e-12)
    assert math.isclose(ang[0], math.pi / 18, abs_tol=1e-12)
    assert np.allclose(np.hypot(lay.centroids[:, 0] - cx, lay.centroids[:, 1] - cy), lay.image_radius)
    assert np.array_equal(lay.pixels, nearest_pixel(lay.centroids))


def test_nearest_pixel_ties_go_down():
    assert nearest_pixel(np.array([3.0, 3.5, 3.2, 0.0])).tolist() == [2, 3, 3, -1]


def test_trail_off_sensor_names_led(cfg):
    with pytest.raises(GeometryError, match="LED 12"):
        project_geometry(cfg.with_distance(1.0), 12)


def test_all_zero_bits_give_zero_grid(cfg):
    lay = project_geometry(cfg)
    q = accumulate_blink_energy(cfg, lay, np.zeros(lay.J))
    assert q.total() == 0.0


def test_all_on_ring_is_uniform(cfg):
    for led in (1, 6, 12):
        c = cfg.with_led(led)
        lay = project_geometry(c)
        rec = render_received(c, np.ones(lay.J), lay, flat_h=True)
        x0, y0 = rec.origin
        th = np.linspace(0, 2 * math.pi, 720, endpoint=False)
        xs = lay.center[0] + lay.image_radius * np.cos(th) - x0 - 0.5
        ys = lay.center[1] + lay.image_radius * np.sin(th) - y0 - 0.5
        ring = ndimage.map_coordinates(rec.values, [ys, xs], order=1)
        assert ring.std() / ring.mean() < 0.05


def test_single_segment_support_stays_in_sector(cfg):
    lay = project_geometry(cfg.with_led(12))
    roi = trail_roi(cfg, lay)
    bits = np.zeros(lay.J)
    bits[0] = 1
    q = accumulate_blink_energy(cfg, lay, bits, roi=roi)
    y, x = np.nonzero(q.values)
    x0, y0 = q.origin
    cx, cy = lay.center
    r = lay.footprint_radius + math.sqrt(2)  # disk plus one pixel diagonal
    # every touched pixel lies within r of the arc of segment 0
    px, py = x + x0 + 0.5 - cx, y + y0 + 0.5 - cy
    phi = np.clip(np.arctan2(py, px), 0.0, lay.control_angle)
    ax, ay = lay.image_radius * np.cos(phi), lay.image_radius * np.sin(phi)
    assert np.all(np.hypot(px - ax, py - ay) <= r)


def _dwell_oracle(lay, roi, seg, n_angles=3000, s=8):
    """Direct time sampling of the swept disk over each subpixel point."""
    x0, y0, nx, ny = roi
    cx, cy = lay.center
    off = (np.arange(s) + 0.5) / s
    gx = (x0 + np.arange(nx))[:, None] + off[None, :]
    gy = (y0 + np.arange(ny))[:, None] + off[None, :]
    sx = gx.ravel()[None, :] - cx
    sy = gy.ravel()[:, None] - cy
    acc = np.zeros((ny * s, nx * s))
    a0, a1 = seg * lay.control_angle, (seg + 1) * lay.control_angle
    for t in a0 + (np.arange(n_angles) + 0.5) / n_angles * (a1 - a0):
        dx = sx - lay.image_radius * math.cos(t)
        dy = sy - lay.image_radius * math.sin(t)
        acc += dx * dx + dy * dy <= lay.footprint_radius**2
    pix = acc.reshape(ny, s, nx, s).sum(axis=(1, 3))
    return pix / pix.sum()


@pytest.mark.parametrize("led, seg", [(1, 0), (4, 5), (12, 11)])
def test_dwell_matches_time_sampling_oracle(cfg, led, seg):
    lay = project_geometry(cfg, led)
    roi = trail_roi(cfg, lay)
    dwell = segment_dwell_matrix(lay, roi, 8)
    got = np.asarray(dwell[:, seg].todense()).reshape(roi[3], roi[2])
    want = _dwell_oracle(lay, roi, seg)
    assert np.abs(got - want).max() < 2e-3
    assert math.isclose(got.sum(), 1.0, rel_tol=1e-12)


def test_radiometric_conversion():
    q = EnergyGrid(np.array([[683 * 0.381, 0.0]]), (0, 0), "Q_blink")
    p = radiometric_distribution(q, 683, 0.381)
    assert math.isclose(p.values[0, 0], 1.0, rel_tol=1e-15)
    assert p.values[0, 1] == 0.0
    p3 = radiometric_distribution(EnergyGrid(3 * q.values, (0, 0), "Q_blink"), 683, 0.381)
    assert np.allclose(p3.values, 3 * p.values, rtol=1e-15)
    with pytest.raises(ValueError):
        radiometric_distribution(q, 683, 0.0)


def test_allocate_power_examples():
    u = EnergyGrid(np.ones((2, 2)), (0, 0), "P_dist")
    assert np.allclose(allocate_power(u, 0.2).values, 0.05, rtol=1e-15)
    assert allocate_power(u, 0.0).total() == 0.0
    with pytest.raises(ValueError, match="no trail rendered"):
        allocate_power(EnergyGrid(np.zeros((2, 2)), (0, 0), "P_dist"), 0.2)


@given(st.integers(0, 2**32 - 1), st.floats(1e-6, 10.0))
def test_allocate_power_sums_to_target(seed, P_T):
    g = np.random.default_rng(seed).random((7, 9))
    L = allocate_power(EnergyGrid(g, (0, 0), "P_dist"), P_T)
    assert abs(L.total() - P_T) <= 1e-12 * P_T


def test_unknown_role_rejected():
    with pytest.raises(ValueError):
        EnergyGrid(np.zeros((1, 1)), (0, 0), "bogus")


def test_los_gain_on_axis(cfg):
    cx, cy = 2000.0, 1500.0
    h = float(los_gain(cfg, cx, cy))
    # A * T_s * g / D^2 * (m+1)/(2 pi), A = pi (f/5.6)^2
    assert math.isclose(h, 9.55217516000483e-09, rel_tol=1e-12)
    far = cfg.with_distance(104.0)
    assert math.isclose(float(los_gain(far, cx, cy)), h / 4.0, rel_tol=1e-12)


def test_lambertian_on_axis_value():
    from lighttrail.render import lambertian_pattern

    assert math.isclose(float(lambertian_pattern(0.0, 1.0)), 1 / math.pi, rel_tol=1e-15)


def test_los_gain_zero_outside_fov(cfg):
    # pixel 3000 px from the axis: atan(3000*1.85e-6/0.03) ~ 10.5 deg, inside
    assert float(los_gain(cfg, 2000.0 + 3000.0, 1500.0)) > 0
    narrow = with_fields(cfg, "channel", fov=math.radians(5.0))
    assert float(los_gain(narrow, 2000.0 + 3000.0, 1500.0)) == 0.0


def test_kernel_examples():
    assert gaussian_kernel(1, 1.0).weights.tolist() == [[1.0]]
    k = gaussian_kernel(5, 1.0)
    assert math.isclose(k.weights[2, 2], 0.16210282163712663, rel_tol=1e-12)
    with pytest.raises(ValueError, match="kernel_size must be odd"):
        gaussian_kernel(4, 1.0)
    with pytest.raises(ValueError):
        gaussian_kernel(5, 0.0)


@given(st.sampled_from([1, 3, 5, 7, 9, 11]), st.floats(0.05, 20.0))
def test_kernel_normalized_and_symmetric(q, sigma):
    w = gaussian_kernel(q, sigma).weights
    assert abs(w.sum() - 1.0) <= 1e-12
    assert np.allclose(w, w[::-1, :], rtol=0, atol=1e-15)
    assert np.allclose(w, w[:, ::-1], rtol=0, atol=1e-15)
    assert np.allclose(w, w.T, rtol=0, atol=1e-15)


def test_impulse_reproduces_kernel():
    k = gaussian_kernel(5, 1.3)
    L = np.zeros((11, 11))
    L[5, 5] = 1.0
    R = received_power(EnergyGrid(L, (0, 0), "L_alloc"), 1.0, k)
    assert np.allclose(R.values[3:8, 3:8], k.weights, rtol=0, atol=1e-16)
    assert math.isclose(R.total(), 1.0, rel_tol=1e-12)
    zero = received_power(EnergyGrid(np.zeros((5, 5)), (0, 0), "L_alloc"), 1.0, k)
    assert zero.total() == 0.0


@given(st.integers(0, 2**32 - 1), st.floats(0.1, 10.0), st.floats(0.3, 3.0))
def test_convolution_conserves_energy_on_interior_support(seed, c, sigma):
    g = np.zeros((20, 20))
    g[2:18, 2:18] = np.random.default_rng(seed).random((16, 16))
    R = received_power(EnergyGrid(g, (0, 0), "L_alloc"), c, gaussian_kernel(5, sigma))
    assert abs(R.total() - c * g.sum()) <= 1e-12 * c * g.sum()


@given(st.integers(0, 2**32 - 1), st.floats(-3, 3), st.floats(-3, 3))
def test_received_power_is_linear(seed, a, b):
    rng = np.random.default_rng(seed)
    L1, L2 = rng.random((12, 12)), rng.random((12, 12))
    H = rng.random((12, 12))
    k = gaussian_kernel(5, 1.2)

    def rp(L):
        return received_power(EnergyGrid(L, (0, 0), "L_alloc"), H, k).values

    lhs = rp(a * L1 + b * L2)
    rhs = a * rp(L1) + b * rp(L2)
    assert np.allclose(lhs, rhs, rtol=0, atol=1e-12 * max(1.0, np.abs(rhs).max()))


@given(st.lists(st.integers(0, 1), min_size=18, max_size=18).filter(any))
def test_segment_additivity(cfg, bits):
    bits = np.array(bits)
    lay = link.layout(cfg)
    whole = render_received(cfg, bits, lay).values
    parts = np.zeros_like(whole)
    for j in np.flatnonzero(bits):
        one = np.zeros(lay.J)
        one[j] = 1
        parts += render_received(cfg, one, lay).values
    assert np.allclose(whole, parts, rtol=1e-9, atol=1e-9 * whole.max())


def test_rotational_covariance(cfg):
    """Rotating the payload by one segment rotates the centroid samples.

    The residual is the pixel-lattice positional error; averaged over the
    centroids it stays within 3% of the lit-segment level.
    """
    rng = np.random.default_rng(5)
    for led in (1, 3, 6, 12):
        c = cfg.with_led(led)
        C = link.centroid_matrix(c)
        devs = []
        for _ in range(50):
            b = rng.integers(0, 2, c.J)
            if not b.any():
                continue
            e, e_rot = C @ b, C @ np.roll(b, 1)
            devs.append(np.mean(np.abs(np.roll(e, 1) - e_rot)) / np.mean(e[b == 1]))
        assert np.mean(devs) < 0.03, led


@pytest.mark.parametrize("mode", ["interpolated", "nearest"])
def test_component_matrix_matches_full_render(cfg, mode):
    c = with_fields(cfg, "analysis", centroid_sampling=mode)
    lay = project_geometry(c)
    C = component_matrix(c, lay, exposure=1e-3)
    rng = np.random.default_rng(3)
    for _ in range(5):
        b = rng.integers(0, 2, c.J)
        grid = render_received(c, b, lay, exposure=1e-3)
        got = sample_centroids(grid, lay, mode)
        assert np.allclose(got, C @ b, rtol=1e-12, atol=1e-12 * (C @ b).max())


def test_sample_points_weights(cfg):
    lay = project_geometry(cfg)
    px, py, w = sample_points(lay, "interpolated")
    assert np.allclose(w.sum(axis=1), 1.0)
    assert np.all(w >= 0)
    # the four pixels surround the continuous centroid
    assert np.all(px.min(axis=1) + 0.5 <= lay.centroids[:, 0])
    assert np.all(px.max(axis=1) + 0.5 >= lay.centroids[:, 0])
    npx, npy, nw = sample_points(lay, "nearest")
    assert np.array_equal(npx[:, 0], lay.pixels[:, 0]) and np.all(nw == 1)
    with pytest.raises(ValueError):
        sample_points(lay, "cubic")


def test_pgm_and_layout_dumps(tmp_path, cfg):
    v = np.arange(12, dtype=float).reshape(3, 4)
    write_pgm(tmp_path / "f.pgm", v, scale=1000.0)
    assert np.array_equal(read_pgm(tmp_path / "f.pgm"), (v * 1000).astype(int))
    lay = project_geometry(cfg)
    write_layout_csv(tmp_path / "l.csv", lay)
    lines = (tmp_path / "l.csv").read_text().splitlines()
    assert lines[0].startswith("j,x_j,y_j")
    assert len(lines) == lay.J + 1
