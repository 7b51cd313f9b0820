import math

import numpy as np
import pytest
from scipy import stats

from lighttrail import camera, isi, link, rng
from lighttrail.montecarlo import (
    McResult,
    demodulate,
    histogram_modes,
    run_mc,
    wilson_interval,
    write_histogram_csv,
)

N_1M = 999990  # 10^6 rounded down to whole 18-segment frames


def _frame_over(layout, value):
    x0 = int(layout.pixels[:, 0].min()) - 2
    y0 = int(layout.pixels[:, 1].min()) - 2
    nx = int(layout.pixels[:, 0].max()) - x0 + 3
    ny = int(layout.pixels[:, 1].max()) - y0 + 3
    return camera.SensorFrame(np.full((ny, nx), float(value)), (x0, y0))


@pytest.mark.parametrize("sampling", ["nearest", "interpolated"])
def test_demodulate_examples(cfg, sampling):
    lay = link.layout(cfg)
    assert np.all(demodulate(_frame_over(lay, 255.0), lay, 120.0, sampling) == 1)
    assert np.all(demodulate(_frame_over(lay, 0.0), lay, 120.0, sampling) == 0)
    assert np.all(demodulate(_frame_over(lay, 120.0), lay, 120.0, sampling) == 0)


def test_demodulate_out_of_bounds(cfg):
    lay = link.layout(cfg)
    small = camera.SensorFrame(np.zeros((3, 3)), (int(lay.pixels[0, 0]), int(lay.pixels[0, 1])))
    with pytest.raises(IndexError, match="outside the frame"):
        demodulate(small, lay, 120.0)


def test_demodulate_recovers_clean_frame(cfg):
    gen = np.random.default_rng(0)
    c = cfg.with_distance(46.0)
    lay = link.layout(c)
    th = isi.analytic_ber(c).threshold
    for _ in range(5):
        b = gen.integers(0, 2, c.J)
        f = link.clean_frame(c, b)
        assert np.array_equal(demodulate(f, lay, th, "interpolated"), b)


def test_wilson_oracle():
    lo, hi = wilson_interval(10, 1000)
    assert math.isclose(lo, 0.005440754445529248, rel_tol=1e-9)
    assert math.isclose(hi, 0.018309468870314773, rel_tol=1e-9)
    assert wilson_interval(0, 100)[0] == 0.0
    assert wilson_interval(100, 100)[1] == 1.0
    with pytest.raises(ValueError):
        wilson_interval(0, 0)


def test_result_rejects_excess_errors():
    with pytest.raises(ValueError):
        McResult(10, 11, 1.1, (0, 1), 0, np.zeros((2, 256)), 0.0)


def test_histogram_modes_examples():
    gen = np.random.default_rng(1)
    one = np.bincount(np.clip(gen.normal(120, 4, 5000).round().astype(int), 0, 255), minlength=256)
    assert len(histogram_modes(one)) == 1
    x = np.concatenate([gen.normal(m, 3, 3000) for m in (30, 110, 200)])
    three = np.bincount(np.clip(x.round().astype(int), 0, 255), minlength=256)
    modes = histogram_modes(three)
    assert len(modes) == 3
    assert np.all(np.abs(modes - np.array([30, 110, 200])) <= 1)
    with pytest.raises(ValueError):
        histogram_modes(np.zeros(256))


def test_histogram_mode_at_range_edge():
    h = np.zeros(256)
    h[0] = 500
    h[1] = 20
    h[200:205] = 100
    assert histogram_modes(h).tolist() == [0, 202]


def test_noiseless_run_has_no_errors(cfg):
    c = cfg.with_distance(46.0).with_sigma_pixel(0.0)
    r = run_mc(c, 18 * 500, seed=3)
    assert r.n_errors == 0 and r.ber_hat == 0.0


def test_run_requires_whole_frames(cfg):
    with pytest.raises(ValueError):
        run_mc(cfg, 5000, seed=1)
    with pytest.raises(ValueError):
        run_mc(cfg, 9, seed=1)


def test_histogram_mass_and_ci(cfg):
    r = run_mc(cfg, 18 * 300, seed=5)
    assert r.histograms.shape == (2, 256)
    bits = rng.bits(5, np.arange(300), 18)
    assert r.histograms[1].sum() == int(bits.sum())
    assert r.histograms[0].sum() == bits.size - int(bits.sum())
    assert r.ci95[0] <= r.ber_hat <= r.ci95[1]


def test_determinism_and_thread_invariance(cfg):
    a = run_mc(cfg, 18 * 10000, seed=9)
    b = run_mc(cfg, 18 * 10000, seed=9)
    c = run_mc(cfg, 18 * 10000, seed=9, threads=8)
    for other in (b, c):
        assert a.n_errors == other.n_errors
        assert np.array_equal(a.histograms, other.histograms)
    assert run_mc(cfg, 18 * 10000, seed=10).n_errors != a.n_errors


def test_power_mode_runs(cfg):
    r = run_mc(cfg.with_distance(50.0), 18 * 2000, seed=2, mode="power")
    assert 0 <= r.ber_hat < 0.05


def _no_tail_cfg(cfg):
    # an LED with no leakage beyond the adjacent pair, made noisy enough to err
    c = cfg.with_led(6).with_sigma_pixel(40.0)
    assert np.nanmax(isi.leakage_ratio(isi.component_responses(c, K=1))) == 0.0
    return c


def test_binomial_band(cfg):
    c = _no_tail_cfg(cfg)
    p = isi.analytic_ber(c).ber
    assert 1e-4 < p < 1e-1
    r = run_mc(c, N_1M, seed=17)
    assert abs(r.ber_hat - p) <= 3 * math.sqrt(p * (1 - p) / N_1M)


def test_convergence_and_coverage(cfg):
    c = _no_tail_cfg(cfg)
    p = isi.analytic_ber(c).ber
    cis = [run_mc(c, N_1M, seed=s).ci95 for s in range(100)]
    covered = sum(lo <= p <= hi for lo, hi in cis)
    assert covered >= 93

    def mean_err(n):
        return np.mean([abs(run_mc(c, n, seed=s).ber_hat - p) for s in range(20)])

    assert mean_err(18 * 1000) > mean_err(18 * 10000) > mean_err(18 * 100000)


def test_frame_independence(cfg):
    c = _no_tail_cfg(cfg)
    half = 18 * 27777
    a, b = run_mc(c, half, seed=21), run_mc(c, half, seed=22)
    whole = run_mc(c, 2 * half, seed=23)
    pooled = a.n_errors + b.n_errors
    table = [[pooled, 2 * half - pooled], [whole.n_errors, 2 * half - whole.n_errors]]
    assert stats.chi2_contingency(table).pvalue > 1e-3


def test_histogram_csv(tmp_path, cfg):
    r = run_mc(cfg, 18 * 50, seed=1)
    p = write_histogram_csv(r.histograms, tmp_path / "h.csv")
    lines = p.read_text().splitlines()
    assert lines[0] == "class,bin,count"
    assert len(lines) == 1 + 2 * 256
