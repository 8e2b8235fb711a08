"""Virtual measurement apparatus: HBT and HOM interferometers, SNSPD model.

Photons enter as PHOTON_DTYPE streams; detectors return per-channel int64
click timestamps in ps.
"""

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate, special

from .config import (
    DETECTOR_DARK_RATE_HZ,
    DETECTOR_DEAD_TIME_PS,
    DETECTOR_JITTER_PS,
    PS_PER_NS,
)
from .errors import DomainError
from .streams import ORIGIN_SIGNAL, POL_V, require_ordered, stage_rng

logger = logging.getLogger(__name__)

POLARIZATIONS = ("parallel", "cross")


@dataclass
class DetectorParams:
    efficiency: float
    dark_rate_hz: float = DETECTOR_DARK_RATE_HZ
    jitter_ps: float = DETECTOR_JITTER_PS
    dead_time_ps: float = DETECTOR_DEAD_TIME_PS

    def __post_init__(self):
        if not 0.0 <= self.efficiency <= 1.0:
            raise DomainError(f"detector efficiency must be in [0, 1], got {self.efficiency}", "efficiency")
        for name in ("dark_rate_hz", "jitter_ps", "dead_time_ps"):
            if getattr(self, name) < 0:
                raise DomainError(f"detector {name} must be non-negative", name)


@dataclass
class HomConfig:
    delay_ps: float = 12_500.0
    polarization: str = "parallel"
    splitter_ratio: float = 0.5
    pairing_window_t1: float = 10.0

    def __post_init__(self):
        if not self.delay_ps > 0:
            raise DomainError(f"HOM delay must be positive, got {self.delay_ps} ps", "delay_ps")
        if self.polarization not in POLARIZATIONS:
            raise DomainError(f"polarization must be one of {POLARIZATIONS}, got {self.polarization!r}", "polarization")
        if not 0.0 < self.splitter_ratio < 1.0:
            raise DomainError(f"splitter ratio must be in (0, 1), got {self.splitter_ratio}", "splitter_ratio")


# ── Two-photon overlap ───────────────────────────────────────────────────────


def dephasing_factor(t1_ns, gamma_fast):
    """Overlap loss from fast pure dephasing, γ/(γ + 2γ*) = T2/(2·T1)."""
    gamma = 1.0 / t1_ns
    return gamma / (gamma + 2.0 * gamma_fast)


def two_photon_overlap(p1, p2, params):
    """|<ψ1|ψ2>|² for photon records (scalars or equal-length arrays).

    Exponential wavepackets with radiative rate γ = 1/T1 and pure dephasing
    rate γ* = params.gamma_fast_ghz (1/ns); δν is the ν_offset difference in
    GHz. Orthogonal polarizations give 0.
    """
    gamma = 1.0 / params.t1_ns
    big_gamma = gamma + 2.0 * params.gamma_fast_ghz
    detuning = 2.0 * math.pi * (np.asarray(p1["nu"]) - np.asarray(p2["nu"]))
    lorentz = big_gamma**2 / (big_gamma**2 + detuning**2)
    overlap = np.where(
        np.asarray(p1["pol"]) == np.asarray(p2["pol"]),
        dephasing_factor(params.t1_ns, params.gamma_fast_ghz) * lorentz,
        0.0,
    )
    return float(overlap) if overlap.ndim == 0 else overlap


def overlap_oracle(t1_ns, gamma_fast, dnu_ghz, dt_ns=0.0):
    """Interference term of two dephased exponential photons by direct 2-D quadrature.

    Integrates γ²·e^{-γ(t+t'-s)}·e^{-2γ*|t-t'|}·cos(2πδν(t-t')) over t, t' ≥ s,
    where s = |dt| is the start offset of the second wavepacket.
    """
    gamma = 1.0 / t1_ns
    delta = 2.0 * math.pi * dnu_ghz
    start = abs(dt_ns)
    stop = start + 40.0 / gamma

    def integrand(tp, t):
        return (
            gamma**2
            * math.exp(-gamma * (t + tp - start))
            * math.exp(-2.0 * gamma_fast * abs(t - tp))
            * math.cos(delta * (t - tp))
        )

    value, _ = integrate.dblquad(integrand, start, stop, start, stop, epsabs=1e-10, epsrel=1e-8)
    return value


def mean_pair_overlap(t1_ns, gamma_fast, sigma_sd_ghz, tau_c_ns, separation_ns):
    """Expected overlap of two photons emitted separation_ns apart.

    The centre frequencies follow a stationary Ornstein-Uhlenbeck process, so
    δν is Gaussian with variance 2σ²(1 - exp(-Δt/τ_c)); averaging the
    Lorentzian overlap factor over it gives √π·x·erfcx(x).
    """
    if tau_c_ns <= 0:
        decorrelation = 1.0
    else:
        decorrelation = -math.expm1(-separation_ns / tau_c_ns)
    sigma_omega = 2.0 * math.pi * math.sqrt(2.0 * sigma_sd_ghz**2 * decorrelation)
    factor = dephasing_factor(t1_ns, gamma_fast)
    if sigma_omega == 0.0:
        return factor
    big_gamma = 1.0 / t1_ns + 2.0 * gamma_fast
    x = big_gamma / (math.sqrt(2.0) * sigma_omega)
    return factor * math.sqrt(math.pi) * x * float(special.erfcx(x))


# ── Detector model ───────────────────────────────────────────────────────────


def enforce_dead_time(clicks, dead_time_ps):
    """Drop clicks within dead_time of the previous accepted click (non-paralyzable).

    A click that violates the gap to its kept predecessor is certainly
    rejected when that predecessor does not violate itself; removing those
    and repeating converges to the sequential result.
    """
    if dead_time_ps <= 0 or len(clicks) < 2:
        return clicks
    kept = clicks
    while True:
        violating = np.concatenate([[False], np.diff(kept) < dead_time_ps])
        if not violating.any():
            return kept
        drop = violating & ~np.concatenate([[False], violating[:-1]])
        kept = kept[~drop]


def detect(arrivals, det, rng, span_ps=None):
    """Turn photon arrival times (ps) into clicks of one detector channel.

    Thin by efficiency, add Gaussian jitter, merge Poisson dark counts over
    [0, span_ps), quantize to 1 ps and enforce the dead time.
    """
    times = np.asarray(arrivals, dtype=np.float64)
    require_ordered(times, "detector arrivals")
    times = times[rng.random(len(times)) < det.efficiency]
    if det.jitter_ps > 0:
        times = times + rng.normal(0.0, det.jitter_ps, len(times))
    if span_ps is None:
        span_ps = float(times.max()) if len(times) else 0.0
    if det.dark_rate_hz > 0 and span_ps > 0:
        n_dark = rng.poisson(det.dark_rate_hz * span_ps * 1e-12)
        times = np.concatenate([times, rng.uniform(0.0, span_ps, n_dark)])
    # jitter can push the earliest clicks below zero; the time tagger starts at 0
    clicks = np.sort(np.rint(np.maximum(times, 0.0)).astype(np.int64), kind="stable")
    return enforce_dead_time(clicks, det.dead_time_ps)


def filter_stream(photons, transmission, rng):
    """Lossy passive element: keep each photon with probability transmission."""
    if not 0.0 <= transmission <= 1.0:
        raise DomainError(f"transmission must be in [0, 1], got {transmission}")
    if transmission == 1.0:
        return photons
    return photons[rng.random(len(photons)) < transmission]


# ── Interferometers ──────────────────────────────────────────────────────────


def hbt_measure(photons, splitter_ratio, det_a, det_b, rng_seed, span_ps=None):
    """Hanbury-Brown-Twiss: route each photon to channel a with splitter_ratio."""
    require_ordered(photons["t"], "HBT input")
    if not 0.0 <= splitter_ratio <= 1.0:
        raise DomainError(f"splitter ratio must be in [0, 1], got {splitter_ratio}")
    to_a = stage_rng(rng_seed, "hbt").random(len(photons)) < splitter_ratio
    clicks_a = detect(photons["t"][to_a], det_a, stage_rng(rng_seed, "detect", 0), span_ps)
    clicks_b = detect(photons["t"][~to_a], det_b, stage_rng(rng_seed, "detect", 1), span_ps)
    logger.info(f"HBT: {len(photons)} photons -> {len(clicks_a)} / {len(clicks_b)} clicks")
    return clicks_a, clicks_b


def pair_arrivals(times, window_ps):
    """Greedily pair consecutive arrivals closer than window_ps.

    Returns index arrays (first, second) into times; no index is used twice.
    """
    if len(times) < 2:
        empty = np.zeros(0, dtype=np.int64)
        return empty, empty
    close = np.diff(times) < window_ps
    idx = np.arange(len(close))
    run_starts = close & ~np.concatenate([[False], close[:-1]])
    run_start = np.maximum.accumulate(np.where(run_starts, idx, -1))
    take = close & ((idx - run_start) % 2 == 0)
    first = idx[take]
    return first, first + 1


def interfering_overlap(p1, p2, params):
    """Bunching probability of two photons meeting at the output splitter.

    Only signal photons from different pulses interfere. Two photons of one
    pulse and any multiphoton or noise photon count as distinguishable, which
    is what the multiphoton correction of M_s assumes.
    """
    overlap = np.asarray(two_photon_overlap(p1, p2, params), dtype=np.float64)
    distinguishable = (
        (np.asarray(p1["pulse"]) == np.asarray(p2["pulse"]))
        | (np.asarray(p1["origin"]) != ORIGIN_SIGNAL)
        | (np.asarray(p2["origin"]) != ORIGIN_SIGNAL)
    )
    overlap = np.where(distinguishable, 0.0, overlap)
    return float(overlap) if overlap.ndim == 0 else overlap


def hom_measure(photons, config, params, det_a, det_b, rng_seed, span_ps=None):
    """Unbalanced Mach-Zehnder two-photon interference of consecutive pulses.

    Each photon takes the long arm (+delay) with probability 0.5. At the output
    splitter, photons closer than pairing_window_t1·T1 form pairs that bunch
    into one random port with probability interfering_overlap and otherwise
    leave independently. The cross configuration rotates the long arm to V.
    """
    require_ordered(photons["t"], "HOM input")
    rng = stage_rng(rng_seed, "hom")
    n = len(photons)

    long_arm = rng.random(n) < 0.5
    arrivals = photons.copy()
    arrivals["t"] = arrivals["t"] + np.where(long_arm, config.delay_ps, 0.0)
    if config.polarization == "cross":
        arrivals["pol"][long_arm] = POL_V - arrivals["pol"][long_arm]
    arrivals = arrivals[np.argsort(arrivals["t"], kind="stable")]

    window_ps = config.pairing_window_t1 * params.t1_ns * PS_PER_NS
    first, second = pair_arrivals(arrivals["t"], window_ps)
    overlap = interfering_overlap(arrivals[first], arrivals[second], params)

    to_a = rng.random(n) < config.splitter_ratio
    bunched = rng.random(len(first)) < overlap
    to_a[second[bunched]] = to_a[first[bunched]]

    clicks_a = detect(arrivals["t"][to_a], det_a, stage_rng(rng_seed, "detect", 0), span_ps)
    clicks_b = detect(arrivals["t"][~to_a], det_b, stage_rng(rng_seed, "detect", 1), span_ps)
    logger.info(
        f"HOM ({config.polarization}): {len(first)} pairs, {int(bunched.sum())} bunched, "
        f"{len(clicks_a)} / {len(clicks_b)} clicks"
    )
    return clicks_a, clicks_b


def lifetime_measure(photons, det, rng_seed, span_ps=None):
    """Single-detector acquisition for the sync-to-click lifetime histogram."""
    require_ordered(photons["t"], "lifetime input")
    return detect(photons["t"], det, stage_rng(rng_seed, "lifetime"), span_ps)
