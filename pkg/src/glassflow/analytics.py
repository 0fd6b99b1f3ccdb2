"""Order parameters, ultrametric triangle statistics and free-energy diagnostics."""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import trapezoid

from .core import (
    enumerate_exact,
    hamiltonian_density,
    log_partition_x_from_s,
    replica_symmetric_free_energy,
    sample_s_given_x,
    MAX_EXACT_SPINS,
)
from .trainer import forward_kl_terms, reverse_kl_terms

DEFAULT_BINS = 81
DEFAULT_PAIRS = 100_000
DEFAULT_TOLERANCE = 0.02
TRIANGLE_CLASSES = ("equilateral", "acute_isosceles", "other")


def overlap(s_a, s_b):
    """Normalized spin overlap ``(1/N) sum_i s_a[i] s_b[i]`` (batched over leading axes)."""
    s_a = np.asarray(s_a)
    s_b = np.asarray(s_b)
    if s_a.shape[-1] != s_b.shape[-1]:
        raise ValueError("configurations must have equal length")
    return np.einsum("...i,...i->...", s_a.astype(np.float64), s_b.astype(np.float64)) / s_a.shape[-1]


def hamming(q):
    """Distance ``(1 - q) / 2`` between states with overlap ``q``."""
    return (1.0 - np.asarray(q)) / 2.0


@dataclass
class OverlapHistogram:
    bin_edges: np.ndarray
    counts: np.ndarray
    n_pairs: int
    beta: float
    source: str

    @property
    def centers(self):
        return 0.5 * (self.bin_edges[1:] + self.bin_edges[:-1])

    @property
    def density(self):
        widths = np.diff(self.bin_edges)
        return self.counts / (self.n_pairs * widths)

    def to_csv(self):
        rows = ["bin_left,bin_right,count"]
        rows += [f"{a!r},{b!r},{int(c)}" for a, b, c in
                 zip(self.bin_edges[:-1], self.bin_edges[1:], self.counts)]
        return "\n".join(rows) + "\n"


def _random_pairs(m, n_pairs, rng):
    a = rng.integers(0, m, n_pairs)
    b = rng.integers(0, m - 1, n_pairs)
    b = b + (b >= a)  # distinct from a, uniform over the rest
    return a, b


def overlap_values(spins, n_pairs, rng):
    spins = np.asarray(spins)
    if spins.ndim != 2 or spins.shape[0] < 2:
        raise ValueError("need at least two samples")
    a, b = _random_pairs(spins.shape[0], n_pairs, rng)
    return overlap(spins[a], spins[b])


def overlap_histogram(spins, n_pairs=DEFAULT_PAIRS, bins=DEFAULT_BINS, rng=None,
                      beta=float("nan"), source="pt"):
    """Histogram of overlaps between ``n_pairs`` random distinct sample pairs."""
    rng = np.random.default_rng(0) if rng is None else rng
    q = overlap_values(spins, n_pairs, rng)
    counts, edges = np.histogram(q, bins=bins, range=(-1.0, 1.0))
    return OverlapHistogram(edges, counts, int(n_pairs), float(beta), source)


def discretize(xs, sc, beta, rng):
    """Map continuous samples to spins through ``p(s | x)``."""
    return sample_s_given_x(xs, sc, beta, rng)


def smoothed_density(hist, bandwidth=0.1, grid=None):
    """Gaussian-kernel smoothing of a histogram onto ``grid`` (default 401 points on [-1, 1]).

    Overlaps of N spins live on a lattice of spacing 2/N, so raw fine-binned
    histograms are comb-like; smoothing makes mode counting meaningful.
    """
    grid = np.linspace(-1.0, 1.0, 401) if grid is None else np.asarray(grid)
    c = hist.centers
    w = hist.counts / max(1, hist.counts.sum())
    k = np.exp(-0.5 * ((grid[:, None] - c[None, :]) / bandwidth) ** 2)
    return grid, (k @ w) / (bandwidth * math.sqrt(2.0 * math.pi))


@dataclass
class ModeSummary:
    peaks: list  # overlap positions of local maxima
    peak_heights: list
    value_at_zero: float
    dip_ratio: float  # density at q=0 divided by the smaller of the two outermost peaks

    @property
    def n_modes(self):
        return len(self.peaks)

    def is_bimodal(self, min_q=0.5, max_dip=0.7):
        """Two peaks at ``-q*`` and ``+q*`` (``q* > min_q``) with a dip at 0 of at least ``1 - max_dip``."""
        if len(self.peaks) < 2:
            return False
        lo, hi = min(self.peaks), max(self.peaks)
        return lo < -min_q and hi > min_q and self.dip_ratio <= max_dip

    def is_unimodal_at_zero(self, max_offset=0.25):
        return len(self.peaks) == 1 and abs(self.peaks[0]) <= max_offset


def mode_summary(hist, bandwidth=0.1, min_height=0.1):
    """Local maxima of the smoothed overlap density above ``min_height`` of the global max."""
    grid, dens = smoothed_density(hist, bandwidth)
    top = dens.max()
    peaks, heights = [], []
    for k in range(1, len(grid) - 1):
        if dens[k] > dens[k - 1] and dens[k] >= dens[k + 1] and dens[k] >= min_height * top:
            peaks.append(float(grid[k]))
            heights.append(float(dens[k]))
    # edge maxima (e.g. a spike at q = 1)
    for k, nb in ((0, 1), (len(grid) - 1, len(grid) - 2)):
        if dens[k] > dens[nb] and dens[k] >= min_height * top:
            peaks.append(float(grid[k]))
            heights.append(float(dens[k]))
    order = np.argsort(peaks)
    peaks = [peaks[i] for i in order]
    heights = [heights[i] for i in order]
    at_zero = float(np.interp(0.0, grid, dens))
    if len(peaks) >= 2:
        dip = at_zero / min(heights[0], heights[-1])
    else:
        dip = 1.0
    return ModeSummary(peaks, heights, at_zero, float(dip))


@dataclass
class TriangleStats:
    n_triples: int
    fractions: dict
    raw_points: np.ndarray  # (n_triples, 2): (d_max - d_mid, d_mid - d_min)
    tolerance: float

    def to_csv(self):
        rows = ["dmax_minus_dmid,dmid_minus_dmin"]
        rows += [f"{a!r},{b!r}" for a, b in self.raw_points]
        return "\n".join(rows) + "\n"


def classify_triangle(d_min, d_mid, d_max, tolerance=DEFAULT_TOLERANCE):
    """Vectorized classification into 0 equilateral, 1 acute isosceles, 2 other."""
    d_min, d_mid, d_max = np.broadcast_arrays(d_min, d_mid, d_max)
    out = np.full(d_min.shape, 2, dtype=np.int8)
    iso = (d_max - d_mid <= tolerance) & (d_max - d_min > tolerance)
    out[iso] = 1
    out[d_max - d_min <= tolerance] = 0
    return out


def triangle_stats(spins, n_triples=10_000, tolerance=DEFAULT_TOLERANCE, rng=None):
    """Sample triples of distinct states and classify the triangles of their distances."""
    spins = np.asarray(spins)
    if n_triples < 1:
        raise ValueError("n_triples must be >= 1")
    if spins.ndim != 2 or spins.shape[0] < 3:
        raise ValueError("need at least three samples")
    rng = np.random.default_rng(0) if rng is None else rng
    m = spins.shape[0]
    idx = np.empty((n_triples, 3), dtype=np.int64)
    for k in range(n_triples):
        idx[k] = rng.choice(m, 3, replace=False)
    a, b, c = spins[idx[:, 0]], spins[idx[:, 1]], spins[idx[:, 2]]
    d = np.sort(np.stack([hamming(overlap(a, b)), hamming(overlap(a, c)),
                          hamming(overlap(b, c))], axis=1), axis=1)
    labels = classify_triangle(d[:, 0], d[:, 1], d[:, 2], tolerance)
    fractions = {name: float(np.mean(labels == k)) for k, name in enumerate(TRIANGLE_CLASSES)}
    points = np.stack([d[:, 2] - d[:, 1], d[:, 1] - d[:, 0]], axis=1)
    return TriangleStats(n_triples, fractions, points, tolerance)


def magnetization(spins):
    """Total magnetization ``M = sum_i <s_i>`` and the per-site means."""
    spins = np.asarray(spins)
    if spins.ndim != 2 or spins.shape[0] == 0:
        raise ValueError("need a nonempty (M, N) sample matrix")
    per_site = spins.astype(np.float64).mean(axis=0)
    return float(per_site.sum()), per_site


def log_z_s_thermo_integration(mean_energies, beta_target, n_spins):
    """``ln Z_s(beta) = N ln 2 - int_0^beta <H> d beta'`` by the trapezoidal rule.

    ``mean_energies`` is a sequence of ``(beta, <H>)`` pairs; the exact endpoint
    ``<H>_0 = 0`` (zero field) is prepended. Assumes zero external field.
    """
    pts = sorted((float(b), float(e)) for b, e in mean_energies)
    if beta_target < 0:
        raise ValueError("beta_target must be nonnegative")
    if beta_target == 0:
        return n_spins * math.log(2.0)
    if not pts or beta_target > pts[-1][0] * (1 + 1e-12):
        raise ValueError("beta_target lies outside the ladder range")
    if pts[0][0] > 0:
        pts = [(0.0, 0.0)] + pts
    betas = np.array([b for b, _ in pts])
    energies = np.array([e for _, e in pts])
    grid = np.concatenate([betas[betas < beta_target], [beta_target]])
    values = np.interp(grid, betas, energies)
    return n_spins * math.log(2.0) - float(trapezoid(values, grid))


def resolve_log_z_s(d, beta, mean_energies=None):
    """``(ln Z_s, method)``: exact for small N, replica-symmetric above T_crit, else thermodynamic integration."""
    if d.n_spins <= MAX_EXACT_SPINS:
        return enumerate_exact(d, beta).log_z_s, "exact"
    if 1.0 / beta > d.scale:
        f_s = replica_symmetric_free_energy(d.n_spins, beta, d.scale)
        return -beta * f_s, "replica_symmetric"
    if mean_energies is None:
        raise ValueError("below T_crit a ladder of PT mean energies is required")
    return log_z_s_thermo_integration(mean_energies, beta, d.n_spins), "thermo_integration"


def entropy_estimate(xs, sc, beta, log_z_x):
    """Shannon entropy ``beta <H_beta> + ln Z_x`` of ``p(x)`` from samples; returns (mean, se)."""
    terms = beta * hamiltonian_density(xs, sc, beta) + log_z_x
    return float(terms.mean()), float(terms.std(ddof=1) / math.sqrt(len(terms)))


@dataclass
class FreeEnergyReport:
    beta: float
    log_z_s: float
    log_z_s_method: str
    log_z_x: float
    helmholtz_x: float
    gibbs_x: float
    gibbs_x_se: float
    reverse_kl: float
    reverse_kl_se: float
    forward_loss: float
    forward_loss_se: float
    shannon_entropy_x: float
    shannon_entropy_x_se: float
    forward_kl: float
    forward_kl_se: float
    flags: list = field(default_factory=list)

    def to_dict(self):
        return dict(self.__dict__)


def kl_report(model, sc, beta, xs, log_z_s, log_z_s_method="exact", n_eval=10_000, rng=None,
              symmetrize=False):
    """Free energies, entropy and both KL divergences for a trained flow.

    ``xs`` are continuous samples of the target (e.g. converted PT data). The
    reverse quantities use ``n_eval`` fresh flow samples; the forward KL is the
    paired mean of ``-ln p_G(x) - (beta H_beta(x) + ln Z_x)`` over ``xs``.
    Negative KL estimates are flagged, not clamped.
    """
    if xs is None or len(xs) < 2:
        raise ValueError("need target samples for the forward and entropy estimates")
    rng = np.random.default_rng(0) if rng is None else rng
    log_z_x = log_partition_x_from_s(log_z_s, sc, beta)
    f_x = -log_z_x / beta
    z = rng.standard_normal((n_eval, model.n_spins))
    rev, _ = reverse_kl_terms(model, sc, beta, z, symmetrize)
    rev_mean = float(rev.mean())
    rev_se = float(rev.std(ddof=1) / math.sqrt(len(rev)))
    nll = forward_kl_terms(model, xs)
    ent = beta * hamiltonian_density(xs, sc, beta) + log_z_x
    fkl = nll - ent
    sqrt_m = math.sqrt(len(xs))
    report = FreeEnergyReport(
        beta=float(beta),
        log_z_s=float(log_z_s),
        log_z_s_method=log_z_s_method,
        log_z_x=float(log_z_x),
        helmholtz_x=float(f_x),
        gibbs_x=rev_mean / beta,
        gibbs_x_se=rev_se / beta,
        reverse_kl=rev_mean + log_z_x,
        reverse_kl_se=rev_se,
        forward_loss=float(nll.mean()),
        forward_loss_se=float(nll.std(ddof=1) / sqrt_m),
        shannon_entropy_x=float(ent.mean()),
        shannon_entropy_x_se=float(ent.std(ddof=1) / sqrt_m),
        forward_kl=float(fkl.mean()),
        forward_kl_se=float(fkl.std(ddof=1) / sqrt_m),
    )
    if report.reverse_kl < 0:
        report.flags.append("negative_reverse_kl")
    if report.forward_kl < 0:
        report.flags.append("negative_forward_kl")
    return report


@dataclass
class LayerProbe:
    layer: int
    histogram: OverlapHistogram
    triangles: TriangleStats
    modes: ModeSummary


def layer_probe(model, layer, n_samples, sc, beta, rng, n_pairs=DEFAULT_PAIRS,
                bins=DEFAULT_BINS, n_triples=10_000, tolerance=DEFAULT_TOLERANCE):
    """Sample the flow up to ``layer``, discretize, and collect overlap and triangle statistics."""
    xs = model.sample(n_samples, rng, upto=layer)
    spins = discretize(xs, sc, beta, rng)
    hist = overlap_histogram(spins, n_pairs, bins, rng, beta, f"flow_layer_{layer}")
    tri = triangle_stats(spins, n_triples, tolerance, rng)
    return LayerProbe(layer, hist, tri, mode_summary(hist))

