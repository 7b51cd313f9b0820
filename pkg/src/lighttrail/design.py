"""Control-angle selection under a BER target, and throughput."""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

from .config import TWO_PI, SystemConfig
from .isi import analytic_ber
from .render import pixels_per_metre

DESIGN_HEADER = ("led_index", "r_i", "D", "J_star", "dtheta_star", "ber", "throughput_bps", "feasible", "scaling_diag")


@dataclass(frozen=True)
class DesignPoint:
    led_index: int
    distance: float
    J_star: int | None
    control_angle: float | None
    ber: float
    throughput: float
    feasible: bool
    r_i: float
    scaling_diag: float
    # (J, BER) for every candidate evaluated
    candidates: tuple = ()


def throughput(control_angle: float, rotations_per_second: float = 3.0) -> float:
    """Bits per second for one bit per segment."""
    J = TWO_PI / control_angle
    Jr = round(J)
    if Jr < 1 or abs(J - Jr) > 1e-9 * max(J, 1.0):
        raise ValueError(f"control angle {control_angle!r} does not divide 2*pi into an integer J ({J:.6g})")
    return rotations_per_second * Jr


def max_segments(cfg: SystemConfig, led_index: int) -> int:
    """Largest even J whose segment arc spans at least one pixel."""
    R = cfg.tx.rotation_radii[led_index - 1] * pixels_per_metre(cfg)
    J = int(math.floor(TWO_PI * R))
    return J - (J % 2)


def sigma_eff(cfg: SystemConfig) -> float:
    """Blur std combined in quadrature with the LED footprint radius, pixels."""
    r = cfg.tx.led_chip_radius * pixels_per_metre(cfg)
    return math.hypot(cfg.blur_sigma, r)


def _min_segments(cfg: SystemConfig) -> int:
    # the adjacent-only model needs J >= 2K + 1 = 3
    return 4


def optimal_control_angle(cfg: SystemConfig, led_index: int, distance: float,
                          target_ber: float | None = None) -> DesignPoint:
    """Largest feasible even J by exhaustive search."""
    target = cfg.analysis.target_ber if target_ber is None else target_ber
    if not 0.0 < target < 0.5:
        raise ValueError(f"target_ber must lie in (0, 0.5), got {target}")
    base = cfg.with_led(led_index).with_distance(distance)
    j_max = max_segments(base, led_index)
    cands = []
    for J in range(_min_segments(base), j_max + 1, 2):
        cands.append((J, analytic_ber(base.with_segments(J)).ber))
    feas = [(J, b) for J, b in cands if b <= target]
    r_i = base.tx.rotation_radii[led_index - 1]
    R_img = r_i * pixels_per_metre(base)
    if feas:
        J, ber = max(feas)
        dth = TWO_PI / J
        return DesignPoint(led_index, float(distance), J, dth, ber, throughput(dth, base.tx.rotations_per_second),
                           True, r_i, dth * R_img / sigma_eff(base), tuple(cands))
    best = min((b for _, b in cands), default=float("nan"))
    return DesignPoint(led_index, float(distance), None, None, best, 0.0, False, r_i, float("nan"), tuple(cands))


def feasibility_violations(point: DesignPoint, target: float) -> list[int]:
    """Even J below J* that miss the target (feasibility should be downward closed)."""
    if not point.feasible:
        return []
    return [J for J, b in point.candidates if J < point.J_star and b > target]


def design_sweep(cfg: SystemConfig, distances, led_indices, target_ber: float | None = None,
                 threads: int = 1) -> list[DesignPoint]:
    distances = list(distances)
    led_indices = list(led_indices)
    if not distances or not led_indices:
        raise ValueError("design_sweep needs at least one distance and one LED")
    grid = [(i, float(d)) for i in sorted(set(led_indices)) for d in sorted(set(distances))]
    work = lambda p: optimal_control_angle(cfg, p[0], p[1], target_ber)  # noqa: E731
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            return list(ex.map(work, grid))
    return [work(p) for p in grid]


def throughput_table(point: DesignPoint, rotations_per_second: float = 3.0) -> list[tuple[int, float, float, float]]:
    """(J, dtheta, ber, throughput) for every candidate of one design point."""
    return [(J, TWO_PI / J, b, throughput(TWO_PI / J, rotations_per_second)) for J, b in point.candidates]


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, bool):
        return "1" if x else "0"
    if isinstance(x, float):
        return repr(x)
    return str(x)


def write_design_csv(points, path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(DESIGN_HEADER)
        for p in points:
            w.writerow([_fmt(v) for v in (p.led_index, p.r_i, p.distance, p.J_star, p.control_angle, p.ber,
                                          p.throughput, p.feasible, p.scaling_diag)])
    return path
