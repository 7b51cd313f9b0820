"""Scenario configuration for the rotating light-trail link.

A scenario is described by four frozen records (transmitter, channel,
camera, analysis) bundled into :class:`SystemConfig`. Config files are flat
``key = value`` text in SI units; omitted keys take the reference defaults
listed in :data:`DEFAULTS`.
"""

from __future__ import annotations

import ast
import hashlib
import math
import operator
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

# CODATA 2018 exact values
PLANCK = 6.62607015e-34
LIGHT_SPEED = 299792458.0

TWO_PI = 2.0 * math.pi
SAMPLING_MODES = ("interpolated", "nearest")


class ConfigError(ValueError):
    """Raised for unparsable config text or violated parameter bounds."""


@dataclass(frozen=True)
class TxConfig:
    led_chip_radius: float = 2.0e-3
    rotation_radii: tuple[float, ...] = tuple(round(17.5e-3 + 7.0e-3 * k, 6) for k in range(12))
    control_angle: float = math.pi / 9
    total_power: float = 0.2
    rotations_per_second: float = 3.0

    @property
    def segments_per_rotation(self) -> int:
        return int(round(TWO_PI / self.control_angle))

    @property
    def n_leds(self) -> int:
        return len(self.rotation_radii)


@dataclass(frozen=True)
class ChannelConfig:
    distance: float = 52.0
    path_loss_exponent: float = 2.0
    filter_transmittance: float = 0.9
    fov: float = math.radians(15.0)
    lens_gain: float = 1.0
    lambertian_order: float = 1.0
    # None -> distance-dependent blur interpolated over blur_sigma_range
    blur_sigma: float | None = None
    blur_sigma_range: tuple[float, float] = (1.0, 1.5)
    blur_distance_range: tuple[float, float] = (46.0, 62.0)
    kernel_size: int = 5
    # None -> pi * (f / 5.6)**2, i.e. an f/2.8 entrance pupil
    pupil_area: float | None = None

    def sigma_at(self, distance: float | None = None) -> float:
        """Blur standard deviation in pixels at ``distance`` (default: own)."""
        if self.blur_sigma is not None:
            return self.blur_sigma
        d = self.distance if distance is None else distance
        lo, hi = self.blur_sigma_range
        d0, d1 = self.blur_distance_range
        if d1 == d0:
            return lo
        u = min(max((d - d0) / (d1 - d0), 0.0), 1.0)
        return lo + u * (hi - lo)


@dataclass(frozen=True)
class CameraConfig:
    resolution: tuple[int, int] = (4000, 3000)
    pixel_pitch: float = 1.85e-6
    focal_length: float = 30e-3
    quantum_efficiency: float = 0.5
    v_ref: float = 3.1
    v_a_ref: float = 2.5
    sense_node_gain: float = 2.8e-4
    source_follower_gain: float = 1.0
    adc_gain: float = 1.0
    cds_gain: float = 1.0
    raw_max: float = 4095.0
    gamma: float = 2.2
    normalize_adc: bool = True
    wavelength: float = 620e-9
    luminous_efficacy: float = 683.0
    luminous_efficiency: float = 0.381
    sigma_n_pixel: float = 4.065
    sigma_n_power: float | None = None
    # Integration time converting received power to energy; overridden by
    # auto exposure, which meters the all-on trail to exposure_target_pv.
    exposure_time: float = 4.0e-4
    auto_exposure: bool = True
    exposure_target_pv: float = 240.0
    # Offset of the optical axis from the sensor centre, pixels.
    axis_offset: tuple[float, float] = (0.0, 0.0)

    @property
    def effective_adc_gain(self) -> float:
        if self.normalize_adc:
            return self.raw_max / self.v_a_ref
        return self.adc_gain

    @property
    def photon_energy(self) -> float:
        return PLANCK * LIGHT_SPEED / self.wavelength


@dataclass(frozen=True)
class AnalysisConfig:
    prior_one: float = 0.5
    # (b_prev, b_next) -> probability, ordered 00, 01, 10, 11
    neighbor_priors: tuple[float, float, float, float] = (0.25, 0.25, 0.25, 0.25)
    target_ber: float = 1e-4
    isi_neighborhood: int = 1
    led_index: int = 1
    leakage_tolerance: float = 0.1
    supersample: int = 8
    per_triplet_sigma: bool = False
    # "interpolated": decision statistic sampled at the continuous centroid;
    # "nearest": the single pixel nearest to it
    centroid_sampling: str = "interpolated"

    @property
    def prior_zero(self) -> float:
        return 1.0 - self.prior_one

    def nb_prior(self, b_prev: int, b_next: int) -> float:
        return self.neighbor_priors[2 * b_prev + b_next]


@dataclass(frozen=True)
class SystemConfig:
    tx: TxConfig = field(default_factory=TxConfig)
    channel: ChannelConfig = field(default_factory=ChannelConfig)
    camera: CameraConfig = field(default_factory=CameraConfig)
    analysis: AnalysisConfig = field(default_factory=AnalysisConfig)

    @property
    def J(self) -> int:
        return self.tx.segments_per_rotation

    @property
    def pupil_area(self) -> float:
        if self.channel.pupil_area is not None:
            return self.channel.pupil_area
        return math.pi * (self.camera.focal_length / 5.6) ** 2

    @property
    def blur_sigma(self) -> float:
        return self.channel.sigma_at()

    def with_distance(self, distance: float) -> "SystemConfig":
        return validate(replace(self, channel=replace(self.channel, distance=float(distance))))

    def with_segments(self, J: int) -> "SystemConfig":
        return validate(replace(self, tx=replace(self.tx, control_angle=TWO_PI / int(J))))

    def with_led(self, led_index: int) -> "SystemConfig":
        return validate(replace(self, analysis=replace(self.analysis, led_index=int(led_index))))

    def with_sigma_pixel(self, sigma: float) -> "SystemConfig":
        return validate(replace(self, camera=replace(self.camera, sigma_n_pixel=float(sigma))))

    def digest(self) -> str:
        return hashlib.sha256(dump_config(self).encode()).hexdigest()[:16]


@dataclass(frozen=True)
class DerivedSet:
    J: int
    photon_energy: float
    frame_power: float
    active_segments: int


# key -> (section, attribute, kind)
_KEYS: dict[str, tuple[str, str, str]] = {}


def _register(section: str, cls: type) -> None:
    kinds = {
        "rotation_radii": "floats",
        "blur_sigma_range": "floats",
        "blur_distance_range": "floats",
        "resolution": "ints",
        "axis_offset": "floats",
        "neighbor_priors": "floats",
        "kernel_size": "int",
        "isi_neighborhood": "int",
        "led_index": "int",
        "supersample": "int",
        "normalize_adc": "bool",
        "auto_exposure": "bool",
        "per_triplet_sigma": "bool",
        "blur_sigma": "optfloat",
        "pupil_area": "optfloat",
        "sigma_n_power": "optfloat",
        "centroid_sampling": "str",
    }
    for f in fields(cls):
        _KEYS[f.name] = (section, f.name, kinds.get(f.name, "float"))


_register("tx", TxConfig)
_register("channel", ChannelConfig)
_register("camera", CameraConfig)
_register("analysis", AnalysisConfig)
# short physics-symbol aliases for the field names
_ALIASES = {
    "D": "distance",
    "gamma_pl": "path_loss_exponent",
    "T_s": "filter_transmittance",
    "m": "lambertian_order",
    "sigma_g": "blur_sigma",
    "q": "kernel_size",
    "A": "pupil_area",
    "dtheta": "control_angle",
    "P_tot": "total_power",
    "r_LED": "led_chip_radius",
    "rho": "pixel_pitch",
    "f": "focal_length",
    "Q_e": "quantum_efficiency",
    "V_ref": "v_ref",
    "V_a_ref": "v_a_ref",
    "A_n": "sense_node_gain",
    "A_f": "source_follower_gain",
    "A_a": "adc_gain",
    "A_c": "cds_gain",
    "g_a": "gamma",
    "sigma_n_prime": "sigma_n_pixel",
    "sigma_n": "sigma_n_power",
}

DEFAULTS = SystemConfig()

_BINOPS = {
    ast.Add: operator.add,
    ast.Sub: operator.sub,
    ast.Mult: operator.mul,
    ast.Div: operator.truediv,
    ast.Pow: operator.pow,
}


def _eval_number(text: str) -> float:
    """Evaluate a numeric literal or a small arithmetic expression using ``pi``."""

    def ev(node):
        if isinstance(node, ast.Expression):
            return ev(node.body)
        if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)):
            return float(node.value)
        if isinstance(node, ast.Name) and node.id == "pi":
            return math.pi
        if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
            v = ev(node.operand)
            return -v if isinstance(node.op, ast.USub) else v
        if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
            return _BINOPS[type(node.op)](ev(node.left), ev(node.right))
        raise ValueError(text)

    try:
        return ev(ast.parse(text.strip(), mode="eval"))
    except (SyntaxError, ValueError, ZeroDivisionError) as exc:
        raise ConfigError(f"cannot parse number {text!r}") from exc


def _convert(key: str, kind: str, raw: str):
    raw = raw.strip()
    if kind == "float":
        return _eval_number(raw)
    if kind == "optfloat":
        return None if raw.lower() in ("none", "") else _eval_number(raw)
    if kind == "int":
        v = _eval_number(raw)
        if v != int(v):
            raise ConfigError(f"{key} must be an integer, got {raw!r}")
        return int(v)
    if kind == "str":
        return raw
    if kind == "bool":
        low = raw.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{key} must be a boolean, got {raw!r}")
    parts = [p for p in raw.replace(",", " ").replace("x", " ").split() if p]
    if kind == "ints":
        vals = [_convert(key, "int", p) for p in parts]
    else:
        vals = [_eval_number(p) for p in parts]
    return tuple(vals)


def parse_config(text: str) -> SystemConfig:
    """Build a validated config from flat ``key = value`` text."""
    updates: dict[str, dict[str, object]] = {"tx": {}, "channel": {}, "camera": {}, "analysis": {}}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key == "segments_per_rotation" or key == "J":
            j = _convert(key, "int", value)
            if j < 1:
                raise ConfigError(f"segments_per_rotation must be >= 1, got {j}")
            updates["tx"]["control_angle"] = TWO_PI / j
            continue
        key = _ALIASES.get(key, key)
        if key not in _KEYS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        section, attr, kind = _KEYS[key]
        updates[section][attr] = _convert(key, kind, value)
    cfg = SystemConfig(
        tx=replace(DEFAULTS.tx, **updates["tx"]),
        channel=replace(DEFAULTS.channel, **updates["channel"]),
        camera=replace(DEFAULTS.camera, **updates["camera"]),
        analysis=replace(DEFAULTS.analysis, **updates["analysis"]),
    )
    return validate(cfg)


def load_config(path: str | Path | None) -> SystemConfig:
    if path is None:
        return validate(SystemConfig())
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text)


def _fmt(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ", ".join(_fmt(v) for v in value)
    if isinstance(value, str):
        return value
    return repr(value)


def dump_config(cfg: SystemConfig) -> str:
    """Serialize every key; ``parse_config(dump_config(c)) == c``."""
    lines = []
    for section in ("tx", "channel", "camera", "analysis"):
        lines.append(f"# [{section}]")
        obj = getattr(cfg, section)
        for f in fields(obj):
            lines.append(f"{f.name} = {_fmt(getattr(obj, f.name))}")
    return "\n".join(lines) + "\n"


def _check(ok: bool, key: str, bound: str, value) -> None:
    if not ok:
        raise ConfigError(f"{key} must be {bound}, got {value!r}")


def validate(cfg: SystemConfig) -> SystemConfig:
    tx, ch, cam, an = cfg.tx, cfg.channel, cfg.camera, cfg.analysis

    _check(tx.control_angle > 0, "control_angle", "> 0", tx.control_angle)
    J = tx.segments_per_rotation
    _check(J >= 1 and abs(J * tx.control_angle - TWO_PI) <= 1e-9 * TWO_PI,
           "control_angle", "2*pi/J for an integer J", tx.control_angle)
    _check(tx.total_power > 0, "total_power", "> 0", tx.total_power)
    _check(tx.led_chip_radius > 0, "led_chip_radius", "> 0", tx.led_chip_radius)
    _check(tx.rotations_per_second > 0, "rotations_per_second", "> 0", tx.rotations_per_second)
    radii = tx.rotation_radii
    _check(len(radii) >= 1 and all(r > 0 for r in radii), "rotation_radii", "nonempty and > 0", radii)
    _check(all(b > a for a, b in zip(radii, radii[1:])), "rotation_radii", "strictly increasing", radii)

    _check(ch.distance > 0, "distance", "> 0", ch.distance)
    _check(ch.path_loss_exponent > 0, "path_loss_exponent", "> 0", ch.path_loss_exponent)
    _check(0.0 <= ch.filter_transmittance <= 1.0, "filter_transmittance", "in [0, 1]", ch.filter_transmittance)
    _check(0.0 < ch.fov <= math.pi / 2, "fov", "in (0, pi/2]", ch.fov)
    _check(ch.lens_gain > 0, "lens_gain", "> 0", ch.lens_gain)
    _check(ch.lambertian_order >= 0, "lambertian_order", ">= 0", ch.lambertian_order)
    _check(ch.kernel_size >= 1 and ch.kernel_size % 2 == 1, "kernel_size", "odd", ch.kernel_size)
    if ch.blur_sigma is not None:
        _check(ch.blur_sigma > 0, "blur_sigma", "> 0", ch.blur_sigma)
    _check(len(ch.blur_sigma_range) == 2 and min(ch.blur_sigma_range) > 0,
           "blur_sigma_range", "two values > 0", ch.blur_sigma_range)
    _check(len(ch.blur_distance_range) == 2 and ch.blur_distance_range[1] >= ch.blur_distance_range[0],
           "blur_distance_range", "an ordered pair", ch.blur_distance_range)
    if ch.pupil_area is not None:
        _check(ch.pupil_area > 0, "pupil_area", "> 0", ch.pupil_area)

    _check(len(cam.resolution) == 2 and min(cam.resolution) >= 1, "resolution", "two positive ints", cam.resolution)
    _check(cam.pixel_pitch > 0, "pixel_pitch", "> 0", cam.pixel_pitch)
    _check(cam.focal_length > 0, "focal_length", "> 0", cam.focal_length)
    _check(0.0 < cam.quantum_efficiency <= 1.0, "quantum_efficiency", "in (0, 1]", cam.quantum_efficiency)
    for name in ("sense_node_gain", "source_follower_gain", "adc_gain", "cds_gain"):
        _check(getattr(cam, name) > 0, name, "> 0", getattr(cam, name))
    _check(cam.v_ref > 0 and cam.v_a_ref > 0, "v_ref/v_a_ref", "> 0", (cam.v_ref, cam.v_a_ref))
    _check(cam.raw_max >= 1, "raw_max", ">= 1", cam.raw_max)
    _check(cam.gamma > 0, "gamma", "> 0", cam.gamma)
    _check(cam.wavelength > 0, "wavelength", "> 0", cam.wavelength)
    _check(cam.luminous_efficacy > 0, "luminous_efficacy", "> 0", cam.luminous_efficacy)
    _check(cam.luminous_efficiency > 0, "luminous_efficiency", "> 0", cam.luminous_efficiency)
    _check(cam.sigma_n_pixel >= 0, "sigma_n_pixel", ">= 0", cam.sigma_n_pixel)
    if cam.sigma_n_power is not None:
        _check(cam.sigma_n_power >= 0, "sigma_n_power", ">= 0", cam.sigma_n_power)
    _check(cam.exposure_time > 0, "exposure_time", "> 0", cam.exposure_time)
    _check(0.0 < cam.exposure_target_pv < 255.0, "exposure_target_pv", "in (0, 255)", cam.exposure_target_pv)
    _check(len(cam.axis_offset) == 2, "axis_offset", "a pair", cam.axis_offset)

    _check(0.0 <= an.prior_one <= 1.0, "prior_one", "in [0, 1]", an.prior_one)
    _check(len(an.neighbor_priors) == 4 and min(an.neighbor_priors) >= 0
           and abs(sum(an.neighbor_priors) - 1.0) <= 1e-9,
           "neighbor_priors", "four nonnegative values summing to 1", an.neighbor_priors)
    _check(0.0 < an.target_ber < 0.5, "target_ber", "in (0, 0.5)", an.target_ber)
    _check(an.isi_neighborhood >= 0, "isi_neighborhood", ">= 0", an.isi_neighborhood)
    _check(1 <= an.led_index <= tx.n_leds, "led_index", f"in [1, {tx.n_leds}]", an.led_index)
    _check(an.leakage_tolerance > 0, "leakage_tolerance", "> 0", an.leakage_tolerance)
    _check(an.supersample >= 1, "supersample", ">= 1", an.supersample)
    _check(an.centroid_sampling in SAMPLING_MODES, "centroid_sampling", f"one of {SAMPLING_MODES}", an.centroid_sampling)
    return cfg


def derived_quantities(cfg: SystemConfig, active_segments: int | None = None) -> DerivedSet:
    J = cfg.J
    active = J if active_segments is None else int(active_segments)
    return DerivedSet(
        J=J,
        photon_energy=cfg.camera.photon_energy,
        frame_power=frame_power(active, J, cfg.tx.total_power),
        active_segments=active,
    )


def frame_power(active: int, J: int, total_power: float) -> float:
    """Emitted frame-level power with ``active`` of ``J`` segments on."""
    return active * total_power / J
