"""Command-line entry point: ``lighttrail <command> [options]``.

Exit codes: 0 success, 1 usage or config error, 2 failed validation.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__, camera, design, isi, link, montecarlo
from .config import ConfigError, SystemConfig, dump_config, load_config
from .render import (
    GeometryError,
    accumulate_blink_energy,
    allocate_power,
    gaussian_kernel,
    radiometric_distribution,
    received_power,
    sample_centroids,
    trail_roi,
    write_layout_csv,
    write_pgm,
)
from .rng import bits as draw_bits

EXIT_OK, EXIT_USAGE, EXIT_INVALID = 0, 1, 2
DEFAULT_DISTANCES = "46:62:2"
BER_HEADER = ("distance", "mode", "ber", "n_bits", "errors", "ci_low", "ci_high", "leakage_ratio")
MODES = ("analytic", "mc", "no_isi", "k2", "all_segment")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def _write_csv(path: Path, header, rows) -> Path:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])
    return path


def parse_distances(text: str) -> list[float]:
    """``"46:62:2"`` (inclusive) or ``"46,52,60"``."""
    try:
        if ":" in text:
            lo, hi, step = (float(t) for t in text.split(":"))
            if step <= 0 or hi < lo:
                raise ValueError
            n = int(math.floor((hi - lo) / step + 1e-9))
            return [lo + k * step for k in range(n + 1)]
        vals = [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise UsageError(f"bad --distances {text!r}") from None
    if not vals:
        raise UsageError("empty --distances")
    return vals


def _parse_leds(text: str | None, n: int) -> list[int]:
    if text is None:
        return list(range(1, n + 1))
    try:
        leds = [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise UsageError(f"bad --led {text!r}") from None
    if not leds or any(not 1 <= i <= n for i in leds):
        raise UsageError(f"--led values must lie in 1..{n}")
    return leds


def write_manifest(out: Path, command: str, cfg: SystemConfig, seed, outputs, extra=None) -> Path:
    path = out / f"manifest_{command}.json"
    cfg_path = out / "config_used.txt"
    cfg_path.write_text(dump_config(cfg))
    outputs = list(outputs) + [cfg_path]
    data = {
        "command": command,
        "config_hash": cfg.digest(),
        "seed": seed,
        "outputs": sorted(str(Path(p).name) for p in outputs),
        "tool_version": __version__,
        "timestamp": datetime.now(timezone.utc).isoformat(timespec="seconds"),
    }
    data.update(extra or {})
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")
    return path


def _require_seed(args, command: str) -> int:
    if args.seed is None:
        raise UsageError(f"{command} needs --seed")
    return args.seed


def cmd_render(cfg: SystemConfig, args, out: Path) -> int:
    J = cfg.J
    if args.bits is not None:
        if args.random:
            raise UsageError("use either --bits or --random")
        text = args.bits.strip()
        if len(text) != J or set(text) - {"0", "1"}:
            raise UsageError(f"--bits must be {J} characters of 0/1, got {len(text)}")
        bits = np.array([int(c) for c in text], dtype=np.int8)
        seed = 0 if args.seed is None else args.seed
    elif args.random:
        seed = _require_seed(args, "render --random")
        bits = draw_bits(seed, 0, J, cfg.analysis.prior_one)
    else:
        raise UsageError("render needs --bits or --random")
    lay = link.layout(cfg)
    clean = link.clean_frame(cfg, bits)
    noisy = link.frame(cfg, bits, seed, frame_id=0)
    th = isi.analytic_ber(cfg).threshold
    mode = cfg.analysis.centroid_sampling
    detected = montecarlo.demodulate(noisy, lay, th, sampling=mode)
    energy = link.received(cfg, bits)
    pv_clean = camera.pixel_response(sample_centroids(energy, lay, mode) / cfg.camera.photon_energy, cfg.camera)
    outputs = []
    scale = 65535.0 / camera.PV_MAX
    for name, fr in (("frame_clean.pgm", clean), ("frame_noisy.pgm", noisy)):
        write_pgm(out / name, fr.pv, scale=scale)
        outputs.append(out / name)
    write_layout_csv(out / "layout.csv", lay)
    outputs.append(out / "layout.csv")
    rows = [(j, int(bits[j]), pv_clean[j], int(detected[j])) for j in range(J)]
    outputs.append(_write_csv(out / "centroids.csv", ("j", "bit", "pv_clean", "detected"), rows))
    outputs.append(write_manifest(out, "render", cfg, seed, outputs,
                                  {"origin": list(clean.origin), "bits": "".join(map(str, bits))}))
    return EXIT_OK


def cmd_histogram(cfg: SystemConfig, args, out: Path) -> int:
    seed = _require_seed(args, "histogram")
    J = cfg.J
    n_bits = args.n_bits if args.n_bits is not None else J * math.ceil(5000 / J)
    if n_bits < J or n_bits % J:
        raise UsageError(f"--n-bits must be a positive multiple of J={J}")
    res = montecarlo.run_mc(cfg, n_bits, seed, threads=args.threads)
    table = isi.triplet_means(isi.component_responses(cfg, K=1), cfg.camera).means.mean(axis=0)
    expected = {
        0: (("00", table[0]), ("01/10", 0.5 * (table[1] + table[4])), ("11", table[5])),
        1: (("00", table[2]), ("01/10", 0.5 * (table[3] + table[6])), ("11", table[7])),
    }
    outputs = [montecarlo.write_histogram_csv(res.histograms, out / "histogram.csv")]
    rows = []
    for b in (0, 1):
        h = res.histograms[b]
        modes = montecarlo.histogram_modes(h) if h.sum() > 0 else np.array([], dtype=int)
        for state, mu in expected[b]:
            near = modes[np.argmin(np.abs(modes + 0.5 - mu))] + 0.5 if len(modes) else float("nan")
            rows.append((b, state, mu, near, len(modes)))
    outputs.append(_write_csv(out / "modes.csv", ("class", "neighbor_state", "expected_pv", "nearest_mode_pv",
                                                   "n_modes"), rows))
    outputs.append(write_manifest(out, "histogram", cfg, seed, outputs, {"n_bits": n_bits}))
    for b in (0, 1):
        n = rows[3 * b][4]
        print(f"class {b}: {n} modes")
    return EXIT_OK


def cmd_ber(cfg: SystemConfig, args, out: Path) -> int:
    modes = [m.strip() for m in args.modes.split(",") if m.strip()]
    bad = [m for m in modes if m not in MODES]
    if bad or not modes:
        raise UsageError(f"unknown --modes {bad}; choose from {', '.join(MODES)}")
    seed = _require_seed(args, "ber --modes mc") if "mc" in modes else args.seed
    n_bits = args.n_bits if args.n_bits is not None else cfg.J * math.ceil(1e6 / cfg.J)
    if "mc" in modes and (n_bits < cfg.J or n_bits % cfg.J):
        raise UsageError(f"--n-bits must be a positive multiple of J={cfg.J}")
    rows, report = [], []
    for D in parse_distances(args.distances):
        c = cfg.with_distance(D)
        base = isi.analytic_ber(c)
        lam = float(np.max(base.leakage))
        for mode in modes:
            if mode == "analytic":
                rows.append((D, mode, base.ber, None, None, None, None, lam))
            elif mode == "no_isi":
                rows.append((D, mode, isi.k_neighbor_ber(c, 0).ber, None, None, None, None, lam))
            elif mode == "k2":
                rows.append((D, mode, isi.k_neighbor_ber(c, 2).ber, None, None, None, None, lam))
            elif mode == "all_segment":
                rows.append((D, mode, isi.all_segment_ber(c), None, None, None, None, lam))
            else:
                r = montecarlo.run_mc(c, n_bits, seed, threads=args.threads)
                rows.append((D, mode, r.ber_hat, n_bits, r.n_errors, r.ci95[0], r.ci95[1], lam))
                report.append((D, n_bits, r.n_errors, r.ber_hat, r.ci95[0], r.ci95[1]))
    outputs = [_write_csv(out / "ber.csv", BER_HEADER, rows)]
    if report:
        outputs.append(_write_csv(out / "mc_report.csv", montecarlo.REPORT_HEADER, report))
    outputs.append(write_manifest(out, "ber", cfg, seed, outputs, {"modes": modes}))
    return EXIT_OK


def cmd_optimize(cfg: SystemConfig, args, out: Path) -> int:
    leds = _parse_leds(args.led, cfg.tx.n_leds)
    target = cfg.analysis.target_ber if args.target_ber is None else args.target_ber
    if not 0.0 < target < 0.5:
        raise UsageError("--target-ber must lie in (0, 0.5)")
    points = design.design_sweep(cfg, parse_distances(args.distances), leds, target, threads=args.threads)
    outputs = [design.write_design_csv(points, out / "design.csv")]
    if args.throughput:
        rows = []
        for p in points:
            for J, dth, ber, tp in design.throughput_table(p, cfg.tx.rotations_per_second):
                rows.append((p.led_index, p.distance, J, dth, ber, tp, ber <= target))
        outputs.append(_write_csv(out / "throughput.csv",
                                  ("led_index", "D", "J", "dtheta", "ber", "throughput_bps", "feasible"), rows))
    outputs.append(write_manifest(out, "optimize", cfg, args.seed, outputs, {"target_ber": target, "leds": leds}))
    return EXIT_OK


def run_checks(cfg: SystemConfig) -> list[tuple[str, bool, str]]:
    """Invariant suite; each entry is (name, passed, detail)."""
    checks = []
    kern = gaussian_kernel(cfg.channel.kernel_size, cfg.blur_sigma)
    s = float(kern.weights.sum())
    checks.append(("kernel_normalization", abs(s - 1.0) <= 1e-12, f"sum={s!r}"))

    lay = link.layout(cfg)
    roi = trail_roi(cfg, lay)
    bits = np.ones(lay.J)
    q = accumulate_blink_energy(cfg, lay, bits, roi=roi)
    p = radiometric_distribution(q, cfg.camera.luminous_efficacy, cfg.camera.luminous_efficiency)
    P_T = cfg.tx.total_power
    lg = allocate_power(p, P_T)
    err = abs(lg.total() - P_T) / P_T
    checks.append(("power_allocation", err <= 1e-12, f"rel_err={err:.3e}"))
    rec = received_power(lg, 1.0, kern)
    err = abs(rec.total() - lg.total()) / lg.total()
    checks.append(("convolution_conservation", err <= 1e-12, f"rel_err={err:.3e}"))

    comp = isi.component_responses(cfg, K=1)
    bd = isi.analytic_ber(cfg)
    table = isi.triplet_means(comp, cfg.camera)
    rep = isi.verify_worst_case(table, bd.threshold, bd.sigma)
    checks.append(("worst_case_ordering", rep.ok, f"violations={len(rep.violations)}"))

    oracle = brute_force_ber(cfg)
    err = abs(oracle - bd.ber)
    checks.append(("oracle_equivalence", err <= 1e-12, f"analytic={bd.ber!r} oracle={oracle!r}"))

    lam = float(np.max(bd.leakage))
    tol = cfg.analysis.leakage_tolerance
    detail = f"max_leakage_ratio={lam:.4g} tolerance={tol:g}"
    if lam > tol:
        detail += "; K-neighbor model recommended"
    checks.append(("leakage_ratio", lam <= tol, detail))
    return checks


def brute_force_ber(cfg: SystemConfig) -> float:
    """Adjacent-only BER by explicit loops over segments and triplets."""
    comp = isi.component_responses(cfg, K=1)
    bd = isi.analytic_ber(cfg)
    cam, an = cfg.camera, cfg.analysis
    th = np.broadcast_to(np.asarray(bd.threshold, dtype=float), (comp.J,))
    total = 0.0
    for j in range(comp.J):
        for bp in (0, 1):
            for b in (0, 1):
                for bn in (0, 1):
                    e = bp * comp.offset(-1)[j] + b * comp.own[j] + bn * comp.offset(1)[j]
                    mu = float(camera.pixel_response(e / comp.photon_energy, cam))
                    sig = bd.sigma if np.ndim(bd.sigma) == 0 else bd.sigma[j, b, 2 * bp + bn]
                    pe = float(isi.conditional_error(th[j], mu, sig, bit=b))
                    pb = an.prior_one if b else an.prior_zero
                    total += pb * an.nb_prior(bp, bn) * pe
    return total / comp.J


def cmd_validate(cfg: SystemConfig, args, out: Path) -> int:
    checks = run_checks(cfg)
    outputs = [_write_csv(out / "validate.csv", ("check", "status", "detail"),
                          [(n, "pass" if ok else "fail", d) for n, ok, d in checks])]
    outputs.append(write_manifest(out, "validate", cfg, args.seed, outputs))
    for n, ok, d in checks:
        print(f"{'PASS' if ok else 'FAIL'} {n}: {d}")
    return EXIT_OK if all(ok for _, ok, _ in checks) else EXIT_INVALID


COMMANDS = {
    "render": cmd_render,
    "histogram": cmd_histogram,
    "ber": cmd_ber,
    "optimize": cmd_optimize,
    "validate": cmd_validate,
}


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="key = value config file (defaults if omitted)")
    common.add_argument("--seed", type=int, help="master seed; required for Monte Carlo commands")
    common.add_argument("--out", default=".", help="output directory")
    common.add_argument("--threads", type=int, default=1, help="worker cap")
    common.add_argument("--distances", default=DEFAULT_DISTANCES, help="lo:hi:step or comma list, metres")
    common.add_argument("--n-bits", type=int, dest="n_bits")
    common.add_argument("--led", help="LED index or comma list (1-based)")

    p = _Parser(prog="lighttrail", description="Propeller-LED light-trail link simulator.")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    r = sub.add_parser("render", parents=[common], help="noise-free and noisy frames plus layout")
    r.add_argument("--bits", help="bit string of length J")
    r.add_argument("--random", action="store_true", help="random payload from --seed")
    sub.add_parser("histogram", parents=[common], help="per-class centroid pixel histograms")
    b = sub.add_parser("ber", parents=[common], help="BER versus distance")
    b.add_argument("--modes", default="analytic,mc", help=f"comma list from {', '.join(MODES)}")
    o = sub.add_parser("optimize", parents=[common], help="control-angle design sweep")
    o.add_argument("--target-ber", type=float, dest="target_ber")
    o.add_argument("--throughput", action="store_true", help="also write throughput versus control angle")
    sub.add_parser("validate", parents=[common], help="invariant suite")
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:  # --help, --version and usage errors
        return EXIT_OK if exc.code in (None, 0) else EXIT_USAGE
    if args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    try:
        cfg = load_config(args.config)
        if args.led is not None and args.command != "optimize":
            cfg = cfg.with_led(_parse_leds(args.led, cfg.tx.n_leds)[0])
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        return COMMANDS[args.command](cfg, args, out)
    except (ConfigError, UsageError, GeometryError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
