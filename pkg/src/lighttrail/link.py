"""Scenario-level glue: exposure metering, cached centroid responses, frames.

Everything here is a pure function of the (hashable, frozen) config, so
results are memoized per scenario.
"""

from __future__ import annotations

import functools

import numpy as np

from . import camera
from .config import SystemConfig
from .render import EnergyGrid, TrailLayout, component_matrix, project_geometry, render_received


@functools.lru_cache(maxsize=512)
def layout(cfg: SystemConfig) -> TrailLayout:
    return project_geometry(cfg)


@functools.lru_cache(maxsize=512)
def _unit_matrix(cfg: SystemConfig) -> np.ndarray:
    C = component_matrix(cfg, layout(cfg), exposure=1.0)
    C.flags.writeable = False
    return C


@functools.lru_cache(maxsize=512)
def exposure(cfg: SystemConfig) -> float:
    """Integration time in seconds.

    With auto exposure the time is chosen so that the mean all-on centroid
    reaches ``exposure_target_pv``.
    """
    cam = cfg.camera
    if not cam.auto_exposure:
        return cam.exposure_time
    target = camera.inverse_response(cam.exposure_target_pv, cam) * cam.photon_energy
    all_on = float(np.mean(_unit_matrix(cfg).sum(axis=1)))
    if all_on <= 0.0:
        raise ValueError("trail receives no energy; cannot meter exposure")
    return target / all_on


@functools.lru_cache(maxsize=512)
def centroid_matrix(cfg: SystemConfig) -> np.ndarray:
    """(J, J) energy at centroid j with only segment m on, at the metered exposure."""
    C = _unit_matrix(cfg) * exposure(cfg)
    C.flags.writeable = False
    return C


def received(cfg: SystemConfig, bits) -> EnergyGrid:
    return render_received(cfg, bits, layout(cfg), exposure=exposure(cfg))


def centroid_energy(cfg: SystemConfig, bits) -> np.ndarray:
    """Centroid energies for one bit vector (J,) or a batch (n, J)."""
    return np.asarray(bits, dtype=float) @ centroid_matrix(cfg).T


def frame(cfg: SystemConfig, bits, seed: int, frame_id: int = 0, mode: str = "pixel") -> camera.SensorFrame:
    """Noisy sensor frame over the trail window."""
    noise = camera.default_noise(cfg, seed, mode)
    grid = received(cfg, bits)
    return camera.capture_frame(grid, noise, cfg.camera, frame_id, meta={"exposure": exposure(cfg)})


def clean_frame(cfg: SystemConfig, bits) -> camera.SensorFrame:
    grid = received(cfg, bits)
    return camera.capture_frame(grid, camera.NoiseModel("pixel", 0.0), cfg.camera, 0, meta={"exposure": exposure(cfg)})
