"""Figures of merit from click streams: correlation histograms, g²(0), HOM
visibility, indistinguishability, lifetime and curve fits.
"""

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .config import (
    CORRELATION_BIN_PS,
    LIFETIME_BIN_PS,
    LIFETIME_FIT_START_PS,
    LIFETIME_MARGIN_PS,
    LIFETIME_SPAN_PS,
    N_SIDE_PEAKS,
    PS_PER_NS,
    SIDE_PEAK_RANGE,
)
from .errors import AnalysisError, DomainError
from .fitting import MODELS, conversion_model, levenberg_marquardt
from .streams import map_blocks, require_ordered

logger = logging.getLogger(__name__)

CORRELATE_SHARD = 1 << 18

POWER_MODELS = {
    "rabi": "rabi",
    "resonant_rabi": "rabi",
    "saturation": "saturation",
    "off_resonant_saturation": "saturation",
}


@dataclass
class CorrelationHistogram:
    bin_width_ps: float
    tau_min_ps: float
    tau_max_ps: float
    counts: np.ndarray
    singles: tuple = (0, 0)
    acquisition_ps: float = 0.0

    @property
    def n_bins(self):
        return len(self.counts)

    @property
    def edges(self):
        return self.tau_min_ps + self.bin_width_ps * np.arange(self.n_bins + 1)

    @property
    def taus(self):
        """Bin centres in ps."""
        return self.tau_min_ps + self.bin_width_ps * (np.arange(self.n_bins) + 0.5)


@dataclass
class PeakAreas:
    center_area: int
    side_areas: list = field(default_factory=list)
    window_ps: float = 0.0

    def side(self, k):
        return dict(self.side_areas)[k]


def _binning(bin_width_ps, tau_min_ps, tau_max_ps):
    if not bin_width_ps > 0:
        raise DomainError(f"bin width must be positive, got {bin_width_ps} ps")
    if not tau_max_ps > tau_min_ps:
        raise DomainError(f"empty correlation range [{tau_min_ps}, {tau_max_ps})")
    n_bins = int(round((tau_max_ps - tau_min_ps) / bin_width_ps))
    return n_bins, tau_min_ps + n_bins * bin_width_ps


def default_range(rep_period_ps):
    """Symmetric range reaching past the outermost side peak window."""
    reach = (SIDE_PEAK_RANGE + 0.5) * rep_period_ps
    return -reach, reach


# ── Correlation ──────────────────────────────────────────────────────────────


def _correlate_shard(a, b, tau_min, bin_width, n_bins):
    tau_max = tau_min + n_bins * bin_width
    lo = np.searchsorted(b, a + tau_min, side="left")
    hi = np.searchsorted(b, a + tau_max, side="left")
    matches = hi - lo
    total = int(matches.sum())
    if total == 0:
        return np.zeros(n_bins, dtype=np.int64)
    idx_a = np.repeat(np.arange(len(a)), matches)
    run_start = np.repeat(np.cumsum(matches) - matches, matches)
    idx_b = np.repeat(lo, matches) + (np.arange(total) - run_start)
    delays = (b[idx_b] - a[idx_a]).astype(np.float64)
    bins = np.floor((delays - tau_min) / bin_width).astype(np.int64)
    return np.bincount(np.clip(bins, 0, n_bins - 1), minlength=n_bins).astype(np.int64)


def correlate(clicks_a, clicks_b, bin_width_ps=CORRELATION_BIN_PS, tau_range=None,
              rep_period_ps=None, acquisition_ps=None, threads=None):
    """Histogram of t_b - t_a over all click pairs within tau_range.

    Both streams must be time-ordered. Without tau_range, the default
    symmetric range for rep_period_ps is used.
    """
    a = np.asarray(clicks_a, dtype=np.int64)
    b = np.asarray(clicks_b, dtype=np.int64)
    require_ordered(a, "channel a")
    require_ordered(b, "channel b")
    if tau_range is None:
        if rep_period_ps is None:
            raise DomainError("correlate needs tau_range or rep_period_ps")
        tau_range = default_range(rep_period_ps)
    n_bins, tau_max = _binning(bin_width_ps, *tau_range)
    tau_min = tau_range[0]

    shards = [a[i:i + CORRELATE_SHARD] for i in range(0, len(a), CORRELATE_SHARD)]
    partials = map_blocks(lambda _, shard: _correlate_shard(shard, b, tau_min, bin_width_ps, n_bins),
                          shards, threads)
    counts = np.sum(partials, axis=0) if partials else np.zeros(n_bins, dtype=np.int64)
    if acquisition_ps is None:
        ends = [s[-1] for s in (a, b) if len(s)]
        acquisition_ps = float(max(ends)) if ends else 0.0
    hist = CorrelationHistogram(bin_width_ps, tau_min, tau_max, counts.astype(np.int64),
                                (len(a), len(b)), float(acquisition_ps))
    logger.debug(f"Correlated {len(a)} x {len(b)} clicks into {n_bins} bins, {int(counts.sum())} pairs")
    return hist


def merge(h1, h2):
    """Element-wise sum of two histograms with identical binning."""
    if (h1.bin_width_ps, h1.tau_min_ps, h1.tau_max_ps, h1.n_bins) != (
        h2.bin_width_ps, h2.tau_min_ps, h2.tau_max_ps, h2.n_bins
    ):
        raise AnalysisError("cannot merge histograms with different binning")
    return CorrelationHistogram(
        h1.bin_width_ps,
        h1.tau_min_ps,
        h1.tau_max_ps,
        h1.counts + h2.counts,
        (h1.singles[0] + h2.singles[0], h1.singles[1] + h2.singles[1]),
        h1.acquisition_ps + h2.acquisition_ps,
    )


def start_stop_histogram(clicks, rep_period_ps, bin_width_ps=LIFETIME_BIN_PS,
                         span_ps=LIFETIME_SPAN_PS, margin_ps=LIFETIME_MARGIN_PS):
    """Sync-to-click delay histogram; the τ axis is time after the excitation pulse.

    Clicks up to margin_ps before a sync (detector jitter) land at negative τ.
    """
    t = np.asarray(clicks, dtype=np.float64)
    n_bins, tau_max = _binning(bin_width_ps, -margin_ps, span_ps)
    phase = np.fmod(t + margin_ps, rep_period_ps) - margin_ps
    bins = np.floor((phase + margin_ps) / bin_width_ps).astype(np.int64)
    bins = bins[(bins >= 0) & (bins < n_bins)]
    counts = np.bincount(bins, minlength=n_bins).astype(np.int64)
    acquisition = float(t[-1]) if len(t) else 0.0
    return CorrelationHistogram(bin_width_ps, -margin_ps, tau_max, counts, (len(t), 0), acquisition)


def count_rate(clicks, acquisition_ps):
    """Mean click rate in Hz."""
    if not acquisition_ps > 0:
        raise DomainError(f"acquisition time must be positive, got {acquisition_ps} ps")
    return len(clicks) / (acquisition_ps * 1e-12)


# ── Peak areas, g2, HOM ──────────────────────────────────────────────────────


def peak_areas(hist, rep_period_ps, window_ps=None):
    """Counts inside a window centred on every nominal peak k·period in range."""
    window_ps = rep_period_ps / 2.0 if window_ps is None else window_ps
    if not 0 < window_ps <= rep_period_ps:
        raise DomainError(f"peak window must be in (0, period], got {window_ps} ps")
    taus = hist.taus
    half = window_ps / 2.0

    def area(k):
        centre = k * rep_period_ps
        return int(hist.counts[(taus >= centre - half) & (taus < centre + half)].sum())

    k_min = math.ceil((hist.tau_min_ps + half) / rep_period_ps)
    k_max = math.floor((hist.tau_max_ps - half) / rep_period_ps)
    if not k_min <= 0 <= k_max:
        raise AnalysisError("histogram range does not contain the zero-delay peak")
    sides = [(k, area(k)) for k in range(k_min, k_max + 1) if k != 0]
    return PeakAreas(area(0), sides, window_ps)


def _outer_side_areas(peaks, n_side_peaks):
    negative = sorted((k for k, _ in peaks.side_areas if k < 0))[:n_side_peaks]
    positive = sorted((k for k, _ in peaks.side_areas if k > 0), reverse=True)[:n_side_peaks]
    if len(negative) < n_side_peaks or len(positive) < n_side_peaks:
        raise AnalysisError(f"histogram spans fewer than {n_side_peaks} side peaks on each side")
    areas = dict(peaks.side_areas)
    return np.array([areas[k] for k in negative + positive], dtype=np.float64)


def g2_zero(hist, rep_period_ps, window_ps=None, n_side_peaks=N_SIDE_PEAKS):
    """Zero-delay peak area over the mean of the outermost side peaks, with Poisson sigma."""
    peaks = peak_areas(hist, rep_period_ps, window_ps)
    sides = _outer_side_areas(peaks, n_side_peaks)
    side_mean = sides.mean()
    if side_mean == 0:
        raise AnalysisError("g2(0) undefined: side peaks are empty")
    center = float(peaks.center_area)
    g2 = center / side_mean
    side_var = sides.sum() / len(sides) ** 2
    sigma = math.sqrt(max(center, 1.0) / side_mean**2 + center**2 * side_var / side_mean**4)
    return g2, sigma


def hom_visibility(hist_parallel, hist_perp, rep_period_ps, window_ps=None, n_side_peaks=N_SIDE_PEAKS):
    """V_HOM = 1 - A∥(0)/A⊥(0) with per-histogram side-peak normalization."""
    g_par, s_par = g2_zero(hist_parallel, rep_period_ps, window_ps, n_side_peaks)
    g_perp, s_perp = g2_zero(hist_perp, rep_period_ps, window_ps, n_side_peaks)
    if g_perp == 0:
        raise AnalysisError("HOM visibility undefined: empty zero-delay peak in the cross configuration")
    ratio = g_par / g_perp
    sigma = math.sqrt((s_par / g_perp) ** 2 + (ratio * s_perp / g_perp) ** 2)
    return 1.0 - ratio, sigma


def indistinguishability(visibility, g2):
    """M_s = (V + g²(0)) / (1 - g²(0))."""
    if g2 >= 1:
        raise DomainError(f"indistinguishability needs g2(0) < 1, got {g2}")
    return (visibility + g2) / (1.0 - g2)


# ── Fits ─────────────────────────────────────────────────────────────────────


def _beat_guess(t_ns, ratio):
    """Dominant modulation frequency (GHz) and phase of ratio(t) - 1."""
    step = t_ns[1] - t_ns[0]
    n_fft = 8 * len(t_ns)
    spectrum = np.fft.rfft(ratio - ratio.mean(), n_fft)
    freqs = np.fft.rfftfreq(n_fft, step)
    usable = freqs > 1.0
    if not usable.any():
        return 0.0, 0.0
    peak = np.flatnonzero(usable)[np.argmax(np.abs(spectrum[usable]))]
    delta = float(freqs[peak])
    phase = float(np.angle(spectrum[peak])) - 2.0 * math.pi * delta * t_ns[0]
    return delta, phase


def fit_lifetime(hist, fit_start_ps=LIFETIME_FIT_START_PS, t1_guess_ns=None):
    """Fit the beat-modulated exponential to a start-stop histogram.

    Poisson weights 1/max(count, 1). Returned phase is wrapped to (-π, π]
    with a non-negative visibility.
    """
    mask = hist.taus >= fit_start_ps
    t = hist.taus[mask] / PS_PER_NS
    y = hist.counts[mask].astype(np.float64)
    if len(t) < 12 or y.sum() == 0:
        raise AnalysisError("lifetime histogram has too few populated bins to fit")

    tail = y[-max(len(y) // 10, 1):]
    background = float(np.median(tail))
    signal = np.clip(y - background, 0.0, None)
    early = (signal > 0) & (t < t[0] + 1.0)
    if early.sum() >= 3:
        slope, intercept = np.polyfit(t[early], np.log(signal[early]), 1, w=np.sqrt(signal[early]))
        t1 = -1.0 / slope if slope < 0 else 0.25
        amplitude = math.exp(intercept)
    else:
        t1, amplitude = 0.25, float(y.max())
    t1 = t1_guess_ns or t1

    fit_span = t < t[0] + 4.0 * t1
    envelope = amplitude * np.exp(-t[fit_span] / t1)
    delta, phase = _beat_guess(t[fit_span], signal[fit_span] / np.maximum(envelope, 1e-12))

    weights = 1.0 / np.maximum(y, 1.0)
    model = MODELS["lifetime"]
    best = None
    for offset in np.linspace(0.0, 2.0 * math.pi, 8, endpoint=False):
        p0 = [amplitude, t1, 0.1, delta, phase + offset, background]
        report = levenberg_marquardt(model, t, y, p0, weights)
        if best is None or (report.converged, -report.residual_norm) > (best.converged, -best.residual_norm):
            best = report

    params = best.params
    if params["beat_visibility"] < 0:
        params["beat_visibility"] = -params["beat_visibility"]
        params["phase"] += math.pi
    params["phase"] = math.atan2(math.sin(params["phase"]), math.cos(params["phase"]))
    if params["fss_ghz"] < 0:
        params["fss_ghz"] = -params["fss_ghz"]
        params["phase"] = -params["phase"]
    logger.info(
        f"Lifetime fit: T1={params['t1_ns']:.4f}±{best.sigmas['t1_ns']:.4f} ns, "
        f"fss={params['fss_ghz']:.3f}±{best.sigmas['fss_ghz']:.3f} GHz, converged={best.converged}"
    )
    return best


def _points(points, minimum, what):
    data = np.asarray(points, dtype=np.float64)
    if data.ndim != 2 or data.shape[1] != 2 or len(data) < minimum:
        raise AnalysisError(f"{what} fit needs at least {minimum} (x, y) points")
    if np.ptp(data[:, 0]) == 0:
        raise AnalysisError(f"{what} fit: all points share one power")
    return data[:, 0], data[:, 1]


def fit_conversion_curve(points, length_cm=4.8, sigmas=None):
    """Fit η(P) = η_max·sin²(√(η_nor·P)·L) to (P in W, η) points with L fixed."""
    power, eta = _points(points, 4, "conversion")
    model = conversion_model(length_cm)
    p_peak = float(power[np.argmax(eta)])
    p0 = [float(eta.max()), (math.pi / (2.0 * length_cm)) ** 2 / max(p_peak, 1e-9)]
    weights = None if sigmas is None else 1.0 / np.asarray(sigmas, dtype=np.float64) ** 2
    report = levenberg_marquardt(model, power, eta, p0, weights, absolute_sigma=sigmas is not None)
    logger.info(
        f"Conversion fit: eta_max={report.params['eta_max']:.4f}, "
        f"eta_nor={report.params['eta_nor']:.4f} /(W cm^2), converged={report.converged}"
    )
    return report


def fit_power_curve(points, model="rabi", sigmas=None):
    """Fit detected rate vs excitation power with the Rabi or saturation model."""
    if model not in POWER_MODELS:
        raise DomainError(f"unknown power model {model!r}")
    name = POWER_MODELS[model]
    power, rate = _points(points, 5, "power")
    rate_max = float(rate.max())
    if name == "rabi":
        p0 = [rate_max, float(power[np.argmax(rate)])]
    else:
        half = float(power[np.argmin(np.abs(rate - rate_max / 2.0))])
        p0 = [rate_max * 1.2, max(half, 1e-9)]
    weights = None if sigmas is None else 1.0 / np.asarray(sigmas, dtype=np.float64) ** 2
    report = levenberg_marquardt(MODELS[name], power, rate, p0, weights, absolute_sigma=sigmas is not None)
    logger.info(f"Power fit ({name}): {report.params}, converged={report.converged}")
    return report
