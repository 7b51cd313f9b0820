"""Monte Carlo BER: random payloads, noisy centroids, threshold detection.

Each frame carries J fresh bits. Only the J centroid samples are needed for
detection, so they are evaluated directly from the centroid response matrix
rather than from a full rendered frame. The noise draw for a centroid is
keyed by the absolute coordinates of its nearest pixel and the frame
number, the same draw a rendered frame uses at that pixel.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.signal import find_peaks
from scipy.stats import norm

from . import camera, link, rng
from .config import SystemConfig
from .isi import analytic_ber
from .render import TrailLayout, sample_points

N_BINS = 256
HIST_HEADER = ("class", "bin", "count")
REPORT_HEADER = ("distance", "n_bits", "errors", "ber", "ci_low", "ci_high")
_CHUNK_FRAMES = 4096


@dataclass(frozen=True)
class McResult:
    n_bits: int
    n_errors: int
    ber_hat: float
    ci95: tuple[float, float]
    seed: int
    histograms: np.ndarray  # (2, 256) counts by transmitted class
    threshold: float

    def __post_init__(self):
        if self.n_errors > self.n_bits:
            raise ValueError("more errors than bits")


def wilson_interval(k: int, n: int, confidence: float = 0.95) -> tuple[float, float]:
    if n <= 0:
        raise ValueError("n must be positive")
    z = float(norm.ppf(0.5 + confidence / 2.0))
    p = k / n
    den = 1.0 + z * z / n
    mid = (p + z * z / (2 * n)) / den
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / den
    # the bounds at k = 0 and k = n are exact; rounding would leave ~1e-18
    lo = 0.0 if k == 0 else max(0.0, mid - half)
    hi = 1.0 if k == n else min(1.0, mid + half)
    return lo, hi


def demodulate(frame: camera.SensorFrame, layout: TrailLayout, threshold, sampling: str = "nearest") -> np.ndarray:
    """1 where the centroid pixel value strictly exceeds the threshold.

    ``sampling="interpolated"`` reads the frame bilinearly at the continuous
    centroid instead of at the nearest pixel.
    """
    x0, y0 = frame.origin
    ny, nx = frame.pv.shape
    px, py, w = sample_points(layout, sampling)
    out = np.any((px < x0) | (py < y0) | (px >= x0 + nx) | (py >= y0 + ny), axis=1)
    if np.any(out):
        j = int(np.flatnonzero(out)[0])
        raise IndexError(f"centroid {j} at {tuple(layout.centroids[j])} lies outside the frame")
    pv = (frame.at(px, py) * w).sum(axis=1)
    return (pv > np.asarray(threshold)).astype(np.int8)


def centroid_pv(cfg: SystemConfig, bits: np.ndarray, frame_ids: np.ndarray, seed: int,
                mode: str = "pixel") -> np.ndarray:
    """Noisy centroid pixel values for a batch of frames, shape (n, J)."""
    cam = cfg.camera
    lay = link.layout(cfg)
    energy = link.centroid_energy(cfg, bits)
    noise = camera.default_noise(cfg, seed, mode)
    f = np.asarray(frame_ids)[:, None]
    z = camera.pixel_noise(seed, f, lay.pixels[None, :, 0], lay.pixels[None, :, 1]) if noise.sigma > 0 else 0.0
    if mode == "power":
        return camera.pixel_response(camera.photon_count(energy, noise.sigma * z, cam.photon_energy), cam)
    pv = camera.pixel_response(energy / cam.photon_energy, cam) + noise.sigma * z
    return np.clip(pv, 0.0, camera.PV_MAX)


def _run_chunk(cfg, seed, threshold, f0, f1, mode):
    J = cfg.J
    frames = np.arange(f0, f1)
    bits = rng.bits(seed, frames, J, cfg.analysis.prior_one)
    pv = centroid_pv(cfg, bits, frames, seed, mode)
    errors = int(np.count_nonzero((pv > threshold) != (bits == 1)))
    bins = np.clip(np.floor(pv), 0, N_BINS - 1).astype(np.int64)
    hist = np.zeros((2, N_BINS), dtype=np.int64)
    for b in (0, 1):
        hist[b] = np.bincount(bins[bits == b], minlength=N_BINS)
    return errors, hist


def run_mc(cfg: SystemConfig, n_bits: int, seed: int, threads: int = 1, mode: str = "pixel",
           threshold=None) -> McResult:
    """Empirical BER over ``n_bits / J`` frames, detected at the analytic threshold."""
    J = cfg.J
    if n_bits < J or n_bits % J:
        raise ValueError(f"n_bits must be a positive multiple of J={J}, got {n_bits}")
    if threshold is None:
        threshold = analytic_ber(cfg).threshold
    threshold = np.asarray(threshold, dtype=float)
    n_frames = n_bits // J
    chunks = [(f, min(f + _CHUNK_FRAMES, n_frames)) for f in range(0, n_frames, _CHUNK_FRAMES)]
    work = lambda c: _run_chunk(cfg, seed, threshold, c[0], c[1], mode)  # noqa: E731
    if threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            parts = list(ex.map(work, chunks))
    else:
        parts = [work(c) for c in chunks]
    errors = sum(p[0] for p in parts)
    hist = np.sum([p[1] for p in parts], axis=0)
    return McResult(
        n_bits=n_bits,
        n_errors=errors,
        ber_hat=errors / n_bits,
        ci95=wilson_interval(errors, n_bits),
        seed=seed,
        histograms=hist,
        threshold=float(threshold) if threshold.ndim == 0 else threshold,
    )


def histogram_modes(hist, min_prominence: float = 0.01) -> np.ndarray:
    """Sorted mode centres (bin indices) of a 1-PV-bin histogram.

    Peaks are found after width-3 moving-average smoothing; a peak counts if
    its prominence is at least ``min_prominence`` of the total mass.
    """
    h = np.asarray(hist, dtype=float)
    mass = h.sum()
    if h.size == 0 or mass <= 0:
        raise ValueError("empty histogram")
    sm = np.convolve(h, np.ones(3) / 3.0, mode="same")
    # zero padding lets piles at either end of the range register as peaks
    padded = np.concatenate([[0.0], sm, [0.0]])
    peaks, _ = find_peaks(padded, prominence=min_prominence * mass)
    return np.sort(peaks - 1)


def write_histogram_csv(hist, path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(HIST_HEADER)
        for b in (0, 1):
            for k in range(N_BINS):
                w.writerow([b, k, int(hist[b][k])])
    return path
