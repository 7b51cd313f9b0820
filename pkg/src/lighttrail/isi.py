"""Adjacent-only (and K-neighbour) ISI model with Q-function BER.

Triplets ``(b_prev, b, b_next)`` are indexed ``4*b_prev + 2*b + b_next``.
For the K-neighbour model, neighbour patterns are integers whose bits,
most significant first, give the states of the segments at offsets
``-K..-1, +1..+K``.
"""

from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import erfc

from .camera import pixel_response, power_sigma_from_pixel, response_derivative
from .config import CameraConfig, SystemConfig
from .link import centroid_matrix

MAX_PATTERNS = 2**20
TRIPLETS = tuple(itertools.product((0, 1), repeat=3))


def q_function(x):
    """Standard normal tail probability P(Z > x)."""
    return 0.5 * erfc(np.asarray(x, dtype=float) / math.sqrt(2.0))


def triplet_index(b_prev: int, b: int, b_next: int) -> int:
    return 4 * b_prev + 2 * b + b_next


@dataclass(frozen=True)
class ComponentResponses:
    """Received energy at each centroid from the segments around it.

    ``taps[j, k]`` is the energy at centroid ``j`` from segment ``j + k - K``
    (indices modulo J); ``tail[j]`` sums every segment beyond offset K.
    """

    taps: np.ndarray
    tail: np.ndarray
    K: int
    photon_energy: float

    @property
    def J(self) -> int:
        return self.taps.shape[0]

    @property
    def own(self) -> np.ndarray:
        return self.taps[:, self.K]

    def offset(self, m: int) -> np.ndarray:
        return self.taps[:, self.K + m]

    @classmethod
    def from_matrix(cls, C: np.ndarray, K: int, photon_energy: float, segments=None) -> "ComponentResponses":
        J = C.shape[0]
        if 2 * K + 1 > J:
            raise ValueError(f"K={K} needs at least {2 * K + 1} segments, have {J}")
        rows = np.arange(J) if segments is None else np.atleast_1d(segments)
        offs = np.arange(-K, K + 1)
        cols = np.mod(rows[:, None] + offs[None, :], J)
        taps = C[rows[:, None], cols]
        tail = C[rows].sum(axis=1) - taps.sum(axis=1)
        return cls(taps=taps, tail=np.maximum(tail, 0.0), K=K, photon_energy=photon_energy)


def component_responses(cfg: SystemConfig, j: int | None = None, K: int | None = None) -> ComponentResponses:
    K = cfg.analysis.isi_neighborhood if K is None else K
    C = centroid_matrix(cfg)
    return ComponentResponses.from_matrix(C, K, cfg.camera.photon_energy, segments=j)


def leakage_ratio(comp: ComponentResponses) -> np.ndarray:
    """Non-adjacent over adjacent energy at each centroid."""
    adj = comp.offset(-1) + comp.offset(1) if comp.K >= 1 else np.zeros(comp.J)
    far = comp.tail + sum((comp.offset(-m) + comp.offset(m) for m in range(2, comp.K + 1)), np.zeros(comp.J))
    with np.errstate(divide="ignore", invalid="ignore"):
        lam = np.where(adj > 0, far / np.where(adj > 0, adj, 1.0), np.where(far > 0, np.inf, 0.0))
    if np.any(np.isinf(lam)):
        warnings.warn("zero adjacent leakage with nonzero far leakage; leakage ratio is infinite")
    return lam


def neighbor_patterns(K: int) -> np.ndarray:
    """(2**(2K), 2K) array of neighbour states, offsets -K..-1, +1..+K."""
    n = 2 * K
    if n == 0:
        return np.zeros((1, 0), dtype=np.int8)
    p = np.arange(2**n)[:, None]
    return ((p >> np.arange(n - 1, -1, -1)[None, :]) & 1).astype(np.int8)


def pattern_means(comp: ComponentResponses, cam: CameraConfig, K: int | None = None) -> np.ndarray:
    """Noise-free pixel values, shape (J, 2, 2**(2K)) indexed [segment, bit, pattern]."""
    K = comp.K if K is None else K
    if 2 ** (2 * K) > MAX_PATTERNS:
        raise ValueError(f"K={K} gives more than {MAX_PATTERNS} neighbour patterns")
    if K > comp.K:
        raise ValueError("components do not extend to the requested K")
    offs = [m for m in range(-K, K + 1) if m != 0]
    nb_taps = np.stack([comp.offset(m) for m in offs], axis=1) if offs else np.zeros((comp.J, 0))
    pats = neighbor_patterns(K).astype(float)
    nb_energy = nb_taps @ pats.T  # (J, P)
    energy = nb_energy[:, None, :] + np.array([0.0, 1.0])[None, :, None] * comp.own[:, None, None]
    return pixel_response(energy / comp.photon_energy, cam)


def pattern_energy(comp: ComponentResponses, K: int | None = None) -> np.ndarray:
    K = comp.K if K is None else K
    offs = [m for m in range(-K, K + 1) if m != 0]
    nb_taps = np.stack([comp.offset(m) for m in offs], axis=1) if offs else np.zeros((comp.J, 0))
    nb_energy = nb_taps @ neighbor_patterns(K).astype(float).T
    return nb_energy[:, None, :] + np.array([0.0, 1.0])[None, :, None] * comp.own[:, None, None]


def pattern_priors(cfg: SystemConfig, K: int) -> np.ndarray:
    """Joint prior of each neighbour pattern (adjacent pair from the config,
    farther neighbours independent with P(1) = prior_one)."""
    an = cfg.analysis
    pats = neighbor_patterns(K)
    if K == 0:
        return np.ones(1)
    p1 = an.prior_one
    prior = np.ones(len(pats))
    for k, m in enumerate([m for m in range(-K, K + 1) if m != 0]):
        if abs(m) == 1:
            continue
        prior *= np.where(pats[:, k] == 1, p1, 1.0 - p1)
    b_prev = pats[:, K - 1]
    b_next = pats[:, K]
    prior *= np.asarray(an.neighbor_priors)[2 * b_prev + b_next]
    return prior


@dataclass(frozen=True)
class TripletTable:
    means: np.ndarray  # (J, 8)
    sigma: float | np.ndarray
    threshold: float | np.ndarray = float("nan")

    def mean(self, b_prev: int, b: int, b_next: int) -> np.ndarray:
        return self.means[:, triplet_index(b_prev, b, b_next)]


def triplet_means(comp: ComponentResponses, cam: CameraConfig) -> TripletTable:
    m = pattern_means(comp, cam, K=1)  # (J, 2, 4) with pattern 2*b_prev + b_next
    means = np.empty((comp.J, 8))
    for bp, b, bn in TRIPLETS:
        means[:, triplet_index(bp, b, bn)] = m[:, b, 2 * bp + bn]
    return TripletTable(means=means, sigma=cam.sigma_n_pixel)


def effective_sigma(comp: ComponentResponses, cam: CameraConfig, sigma_n: float | None = None) -> float:
    """Pixel-domain noise std from energy-domain ``sigma_n``.

    The slope is taken at the hardest-pair operating point, the mean photon
    count of (1,0,1) and (0,1,0) over segments. ``sigma_n=None`` passes the
    configured pixel-domain value through.
    """
    if sigma_n is None:
        return cam.sigma_n_pixel
    if sigma_n == 0:
        return 0.0
    I_op = float(np.mean(comp.offset(-1) + comp.offset(1) + comp.own)) / (2.0 * comp.photon_energy)
    return float(response_derivative(I_op, cam)) / comp.photon_energy * sigma_n


def midpoint_threshold(table: TripletTable, per_segment: bool = False):
    """Midpoint between the hardest pair (1,0,1) and (0,1,0).

    By default one threshold per LED from the segment-averaged means.
    """
    a = table.mean(1, 0, 1)
    b = table.mean(0, 1, 0)
    if per_segment:
        return 0.5 * a + 0.5 * b
    return 0.5 * float(np.mean(a)) + 0.5 * float(np.mean(b))


def conditional_error(threshold, mu, sigma, bit: int | None = None):
    """Error probability of a Gaussian statistic against a fixed threshold.

    Without ``bit`` this is ``Q(|threshold - mu| / sigma)``, the form valid
    when ``mu`` lies on its own side of the threshold. With ``bit`` the
    signed form is used, so a mean on the wrong side yields errors > 0.5.
    With ``sigma == 0`` the result is 0.5 at the threshold, else 0 or 1.
    """
    th = np.asarray(threshold, dtype=float)
    mu = np.asarray(mu, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    if bit is None:
        dist = np.abs(th - mu)
    elif bit == 0:
        dist = th - mu
    else:
        dist = mu - th
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(sigma > 0, dist / np.where(sigma > 0, sigma, 1.0), np.sign(dist) * np.inf)
    z = np.where((sigma == 0) & (dist == 0), 0.0, z)
    return q_function(z)


@dataclass(frozen=True)
class WorstCaseReport:
    ok: bool
    violations: list = field(default_factory=list)
    orderings: list = field(default_factory=list)


def verify_worst_case(table: TripletTable, threshold, sigma) -> WorstCaseReport:
    """Check that neighbour bits push errors the way the monotonicity lemma says."""
    J = table.means.shape[0]
    th = np.broadcast_to(np.asarray(threshold, dtype=float), (J,))
    sig = np.broadcast_to(np.asarray(sigma, dtype=float), (J,)) if np.ndim(sigma) <= 1 else None
    violations, orderings = [], []
    for j in range(J):
        errs = {}
        for bp, b, bn in TRIPLETS:
            s = sig[j] if sig is not None else np.asarray(sigma)[j, triplet_index(bp, b, bn)]
            errs[(bp, b, bn)] = float(conditional_error(th[j], table.means[j, triplet_index(bp, b, bn)], s, bit=b))
        for b in (0, 1):
            # b=0: errors nondecreasing in each neighbour; b=1: nonincreasing
            sgn = 1.0 if b == 0 else -1.0
            for other in (0, 1):
                pairs = [((0, b, other), (1, b, other)), ((other, b, 0), (other, b, 1))]
                for lo, hi in pairs:
                    if sgn * (errs[hi] - errs[lo]) < 0:
                        violations.append((j, lo, hi, errs[lo], errs[hi]))
            worst = (1, b, 1) if b == 0 else (0, b, 0)
            top = max(errs[(bp, b, bn)] for bp in (0, 1) for bn in (0, 1))
            if errs[worst] < top:
                violations.append((j, worst, "not maximal", errs[worst], top))
        orderings.append(sorted(errs, key=lambda t: (-errs[t], t)))
    return WorstCaseReport(ok=not violations, violations=violations, orderings=orderings)


@dataclass(frozen=True)
class BerBreakdown:
    K: int
    threshold: float | np.ndarray
    sigma: float | np.ndarray
    means: np.ndarray  # (J, 2, P)
    cond_error: np.ndarray  # (J, 2, P)
    per_segment: np.ndarray  # (J,)
    ber: float
    leakage: np.ndarray  # (J,)

    @property
    def J(self) -> int:
        return self.per_segment.shape[0]

    def triplet_errors(self) -> np.ndarray:
        """(J, 8) conditional errors for K = 1."""
        if self.K != 1:
            raise ValueError("triplet view needs K = 1")
        out = np.empty((self.J, 8))
        for bp, b, bn in TRIPLETS:
            out[:, triplet_index(bp, b, bn)] = self.cond_error[:, b, 2 * bp + bn]
        return out


def _sigma_array(cfg: SystemConfig, comp: ComponentResponses, K: int):
    cam = cfg.camera
    if cfg.analysis.per_triplet_sigma:
        sigma_n = cam.sigma_n_power
        if sigma_n is None:
            sigma_n = power_sigma_from_pixel(cam.sigma_n_pixel, cam)
        energy = pattern_energy(comp, K)
        slope = response_derivative(energy / comp.photon_energy, cam, strict=False)
        return slope / comp.photon_energy * sigma_n
    return effective_sigma(comp, cam, cam.sigma_n_power)


def ber_from_components(cfg: SystemConfig, comp: ComponentResponses, K: int, per_segment_threshold: bool = False,
                        threshold=None) -> BerBreakdown:
    cam = cfg.camera
    an = cfg.analysis
    means = pattern_means(comp, cam, K)
    sigma = _sigma_array(cfg, comp, K)
    P = means.shape[2]
    if threshold is None:
        # hardest pair: every neighbour on with b=0 against every neighbour off with b=1
        a = means[:, 0, P - 1]
        b = means[:, 1, 0]
        threshold = 0.5 * a + 0.5 * b if per_segment_threshold else 0.5 * float(np.mean(a)) + 0.5 * float(np.mean(b))
    th = np.asarray(threshold, dtype=float)
    th_b = th[:, None] if th.ndim == 1 else th
    err = np.empty_like(means)
    err[:, 0, :] = conditional_error(th_b, means[:, 0, :], sigma if np.ndim(sigma) == 0 else sigma[:, 0, :], bit=0)
    err[:, 1, :] = conditional_error(th_b, means[:, 1, :], sigma if np.ndim(sigma) == 0 else sigma[:, 1, :], bit=1)
    nb = pattern_priors(cfg, K)
    pi = np.array([an.prior_zero, an.prior_one])
    per_seg = np.einsum("i,jip,p->j", pi, err, nb)
    full = comp if comp.K >= 1 else None
    lam = leakage_ratio(full) if full is not None else np.full(comp.J, np.nan)
    return BerBreakdown(
        K=K,
        threshold=threshold if th.ndim else float(th),
        sigma=sigma,
        means=means,
        cond_error=err,
        per_segment=per_seg,
        ber=float(per_seg.mean()),
        leakage=lam,
    )


def analytic_ber(cfg: SystemConfig, **kw) -> BerBreakdown:
    """Adjacent-only BER averaged over all segments of the configured LED."""
    comp = component_responses(cfg, K=1)
    return ber_from_components(cfg, comp, 1, **kw)


def k_neighbor_ber(cfg: SystemConfig, K: int, **kw) -> BerBreakdown:
    """BER with the K nearest segments on each side modelled explicitly.

    ``K = 0`` is the self-contained no-ISI model with its own midpoint
    threshold. For ``K >= 2`` the deployed detector, the adjacent-only
    threshold, is evaluated unless ``threshold`` is passed.
    """
    if K < 0:
        raise ValueError("K must be >= 0")
    if 2 * K + 1 > cfg.J:
        raise ValueError(f"K={K} needs 2K+1 <= J={cfg.J}")
    if 2 ** (2 * K) > MAX_PATTERNS:
        raise ValueError(f"K={K} gives more than {MAX_PATTERNS} neighbour patterns")
    if K == 1:
        return analytic_ber(cfg, **kw)
    if K >= 2 and kw.get("threshold") is None:
        kw["threshold"] = analytic_ber(cfg, per_segment_threshold=kw.get("per_segment_threshold", False)).threshold
    comp = component_responses(cfg, K=max(K, 1))
    return ber_from_components(cfg, comp, K, **kw)


def all_segment_k(J: int) -> int:
    return (J - 1) // 2


def all_segment_ber(cfg: SystemConfig, threshold=None) -> float:
    """Exact BER with every other segment of the trail as a binary neighbour.

    Unlike ``k_neighbor_ber(cfg, all_segment_k(J))`` this also covers the
    diametrically opposite segment when J is even.
    """
    J = cfg.J
    n = J - 1
    if 2**n > MAX_PATTERNS:
        raise ValueError(f"J={J} gives more than {MAX_PATTERNS} neighbour patterns")
    an = cfg.analysis
    cam = cfg.camera
    if threshold is None:
        threshold = analytic_ber(cfg).threshold
    C = centroid_matrix(cfg)
    rows = np.arange(J)
    # neighbour k sits at offset k+1; offsets 1 and J-1 are the adjacent pair
    offs = np.arange(1, J)
    nb_taps = C[rows[:, None], np.mod(rows[:, None] + offs[None, :], J)]
    own = C[rows, rows]
    p = np.arange(2**n)
    bitsmat = ((p[:, None] >> np.arange(n)[None, :]) & 1).astype(float)  # (P, n), bit k -> offset k+1
    nb_energy = nb_taps @ bitsmat.T  # (J, P)
    prior = np.ones(2**n)
    for k in range(1, n - 1):
        prior *= np.where(bitsmat[:, k] == 1, an.prior_one, an.prior_zero)
    b_next, b_prev = bitsmat[:, 0].astype(int), bitsmat[:, n - 1].astype(int)
    prior *= np.asarray(an.neighbor_priors)[2 * b_prev + b_next]
    th = np.asarray(threshold, dtype=float)
    th = th[:, None] if th.ndim == 1 else th
    sigma = cam.sigma_n_pixel if cam.sigma_n_power is None else effective_sigma(
        component_responses(cfg, K=1), cam, cam.sigma_n_power)
    ber = np.zeros(J)
    for b, pb in ((0, an.prior_zero), (1, an.prior_one)):
        mu = pixel_response((nb_energy + b * own[:, None]) / cam.photon_energy, cam)
        ber += pb * (conditional_error(th, mu, sigma, bit=b) @ prior)
    return float(ber.mean())
