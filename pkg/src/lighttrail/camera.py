"""Photon counting and the camera response chain.

Pixel values are reported on the 0-255 scale as floats (no 8-bit
quantization). The response is

    PV = 255 * clip(A_a*A_c*(V_a_ref - A_f*(V_ref - Q_e*A_n*I)) / raw_max, 0, 1) ** (1/g_a)

where ``A_a`` is replaced by ``raw_max / V_a_ref`` when ``normalize_adc`` is set.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from . import rng
from .config import CameraConfig, SystemConfig
from .render import EnergyGrid

PV_MAX = 255.0


class SaturatedOperatingPoint(ValueError):
    pass


@dataclass(frozen=True)
class NoiseModel:
    mode: str  # "power" (sigma in J) or "pixel" (sigma in PV units)
    sigma: float
    seed: int = 0

    def __post_init__(self):
        if self.mode not in ("power", "pixel"):
            raise ValueError(f"noise mode must be 'power' or 'pixel', got {self.mode!r}")
        if self.sigma < 0:
            raise ValueError("noise sigma must be >= 0")


@dataclass(frozen=True)
class SensorFrame:
    pv: np.ndarray
    origin: tuple[int, int]
    meta: dict = field(default_factory=dict)

    def at(self, ix, iy):
        x0, y0 = self.origin
        return self.pv[np.asarray(iy) - y0, np.asarray(ix) - x0]


def photon_count(R, N, Q_p: float):
    if Q_p <= 0:
        raise ValueError("photon energy must be > 0")
    return np.maximum((np.asarray(R, dtype=float) + N) / Q_p, 0.0)


def _linear_coeffs(cam: CameraConfig) -> tuple[float, float]:
    """Response ratio before clipping is ``u = a + b*I``."""
    c = cam.effective_adc_gain * cam.cds_gain / cam.raw_max
    a = c * (cam.v_a_ref - cam.source_follower_gain * cam.v_ref)
    b = c * cam.source_follower_gain * cam.quantum_efficiency * cam.sense_node_gain
    return a, b


def pixel_response(I, cam: CameraConfig):
    a, b = _linear_coeffs(cam)
    u = np.clip(a + b * np.asarray(I, dtype=float), 0.0, 1.0)
    return PV_MAX * u ** (1.0 / cam.gamma)


def response_derivative(I, cam: CameraConfig, strict: bool = True):
    """d PV / d I in pixel values per photon.

    With ``strict`` a clipped operating point raises; otherwise the slope
    there is reported as 0.
    """
    a, b = _linear_coeffs(cam)
    I = np.asarray(I, dtype=float)
    u = a + b * I
    interior = (u > 0.0) & (u < 1.0)
    if strict and not np.all(interior):
        raise SaturatedOperatingPoint("operating point saturated")
    us = np.where(interior, u, 0.5)
    d = PV_MAX / cam.gamma * us ** (1.0 / cam.gamma - 1.0) * b
    return np.where(interior, d, 0.0)


def unclipped_range(cam: CameraConfig) -> tuple[float, float]:
    """Photon counts bounding the interior (unclipped) part of the response."""
    a, b = _linear_coeffs(cam)
    return -a / b, (1.0 - a) / b


def inverse_response(pv: float, cam: CameraConfig) -> float:
    """Photon count giving pixel value ``pv`` (0 < pv < 255)."""
    lo, hi = unclipped_range(cam)
    return brentq(lambda I: float(pixel_response(I, cam)) - pv, max(lo, 0.0), hi, xtol=1e-9)


def mid_operating_point(cam: CameraConfig) -> float:
    return inverse_response(PV_MAX / 2.0, cam)


def power_sigma_from_pixel(sigma_px: float, cam: CameraConfig, I_op: float | None = None) -> float:
    """Energy-domain noise giving ``sigma_px`` after the response at ``I_op``."""
    if I_op is None:
        I_op = mid_operating_point(cam)
    slope = float(response_derivative(I_op, cam))
    return sigma_px * cam.photon_energy / slope


def pixel_noise(seed: int, frame_id: int, ix, iy) -> np.ndarray:
    """Standard normal draws keyed by absolute sensor pixel coordinates."""
    return rng.normal(seed, rng.STREAM_NOISE, frame_id, ix, iy)


def capture_frame(r_grid: EnergyGrid, noise: NoiseModel, cam: CameraConfig, frame_id: int = 0,
                  meta: dict | None = None) -> SensorFrame:
    x0, y0 = r_grid.origin
    ny, nx = r_grid.values.shape
    ix, iy = np.meshgrid(np.arange(x0, x0 + nx), np.arange(y0, y0 + ny))
    z = pixel_noise(noise.seed, frame_id, ix, iy) if noise.sigma > 0 else 0.0
    Q_p = cam.photon_energy
    if noise.mode == "power":
        pv = pixel_response(photon_count(r_grid.values, noise.sigma * z, Q_p), cam)
    else:
        pv = pixel_response(r_grid.values / Q_p, cam) + noise.sigma * z
        pv = np.clip(pv, 0.0, PV_MAX)
    info = {"seed": noise.seed, "frame_id": frame_id, "noise_mode": noise.mode}
    info.update(meta or {})
    return SensorFrame(pv=pv, origin=(x0, y0), meta=info)


def default_noise(cfg: SystemConfig, seed: int, mode: str = "pixel") -> NoiseModel:
    cam = cfg.camera
    if mode == "pixel":
        return NoiseModel("pixel", cam.sigma_n_pixel, seed)
    sigma = cam.sigma_n_power
    if sigma is None:
        sigma = power_sigma_from_pixel(cam.sigma_n_pixel, cam)
    return NoiseModel("power", sigma, seed)


def anscombe(x):
    return 2.0 * np.sqrt(np.asarray(x, dtype=float) + 3.0 / 8.0)


def estimate_sigma_maxbright(frames, region=None) -> float:
    """Pixel-domain noise level from repeated frames of one fixed blink.

    The maximum-brightness pixel is located on the frame average; its value
    in every frame is passed through the Anscombe transform, centred, and
    the standard deviation is mapped back through the transform's slope at
    the sample mean.
    """
    frames = list(frames)
    if len(frames) < 2:
        raise ValueError("need at least 2 frames")
    stack = np.stack([np.asarray(f.pv if isinstance(f, SensorFrame) else f, dtype=float) for f in frames])
    if region is not None:
        stack = stack[:, region]
        stack = stack.reshape(len(frames), -1)
    else:
        stack = stack.reshape(len(frames), -1)
    k = int(np.argmax(stack.mean(axis=0)))
    peak = stack[:, k]
    y = anscombe(peak)
    y = y - y.mean()
    s = float(np.std(y, ddof=1))
    if s == 0.0:
        return 0.0
    return s * float(np.sqrt(peak.mean() + 3.0 / 8.0))
