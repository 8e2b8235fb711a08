"""Difference-frequency conversion of a photon stream to the telecom band.

Powers: seed power is W in the efficiency relations and mW in the noise
relations. Frequencies are GHz, record times ps.
"""

import logging
import math
from dataclasses import dataclass

import numpy as np

from .config import (
    EMITTER_WAVELENGTH_NM,
    NOISE_INTERVAL_PS,
    PS_PER_NS,
    SEED_ENVELOPE_FWHM_GHZ,
    SEED_FSR_MHZ,
    SEED_MODE_CONCENTRATION,
    SEED_MODE_FLUCTUATION_NS,
    SEED_N_MODES,
    SEED_WAVELENGTH_NM,
)
from .errors import CalibrationError, DomainError
from .photonics import GAUSSIAN_FWHM_PER_SIGMA, Wavelength, bandwidth_ghz, dfg_output_wavelength
from .streams import (
    ORIGIN_NOISE,
    empty_photons,
    group_by_block,
    map_blocks,
    require_ordered,
    stage_rng,
    time_sorted,
)

logger = logging.getLogger(__name__)

# intervals of Dirichlet mode weights drawn per generator
WEIGHT_CHUNK = 4096


@dataclass
class ConversionParams:
    eta_nor_per_w_cm2: float = 0.44
    length_cm: float = 4.8
    eta_max_internal: float = 0.567
    in_coupling: float = 0.83
    fibre_coupling: float = 0.86
    filter_transmission: float = 0.9389
    transport_transmission: float = 1.0
    noise_coeff_hz_per_mw: float = 12.0
    seed_power_mw: float = 243.0
    input_wavelength_nm: float = EMITTER_WAVELENGTH_NM
    bandpass_nm: float = 2.8

    def __post_init__(self):
        for name in ("eta_max_internal", "in_coupling", "fibre_coupling",
                     "filter_transmission", "transport_transmission"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise DomainError(f"{name} must be in [0, 1], got {value}", name)
        for name in ("eta_nor_per_w_cm2", "length_cm", "noise_coeff_hz_per_mw", "seed_power_mw", "bandpass_nm"):
            if getattr(self, name) < 0:
                raise DomainError(f"{name} must be non-negative, got {getattr(self, name)}", name)

    @property
    def seed_power_w(self):
        return self.seed_power_mw * 1e-3


@dataclass
class SeedLaser:
    wavelength_nm: float = SEED_WAVELENGTH_NM
    fsr_mhz: float = SEED_FSR_MHZ
    envelope_fwhm_ghz: float = SEED_ENVELOPE_FWHM_GHZ
    n_modes: int = SEED_N_MODES
    mode_fluctuation_ns: float = SEED_MODE_FLUCTUATION_NS
    mode_concentration: float = SEED_MODE_CONCENTRATION

    def __post_init__(self):
        if self.n_modes < 1:
            raise DomainError(f"seed laser needs at least one mode, got {self.n_modes}", "n_modes")
        if not self.fsr_mhz > 0:
            raise DomainError(f"free spectral range must be positive, got {self.fsr_mhz} MHz", "fsr_mhz")
        if self.envelope_fwhm_ghz < 0:
            raise DomainError(f"envelope FWHM must be non-negative, got {self.envelope_fwhm_ghz} GHz", "envelope_fwhm_ghz")
        if not self.mode_fluctuation_ns > 0:
            raise DomainError(f"mode fluctuation time must be positive, got {self.mode_fluctuation_ns} ns", "mode_fluctuation_ns")
        if not self.mode_concentration > 0:
            raise DomainError(f"mode concentration must be positive, got {self.mode_concentration}", "mode_concentration")


# ── Efficiency, noise and loss budget ────────────────────────────────────────


def internal_efficiency(power_w, params):
    """η = η_max · sin²(√(η_nor·P)·L)."""
    if power_w < 0:
        raise DomainError(f"seed power must be non-negative, got {power_w} W")
    return params.eta_max_internal * math.sin(math.sqrt(params.eta_nor_per_w_cm2 * power_w) * params.length_cm) ** 2


def optimal_seed_power(params):
    """First maximum of the internal efficiency, (π/(2L))²/η_nor in W."""
    if params.eta_nor_per_w_cm2 <= 0 or params.length_cm <= 0:
        raise DomainError("optimal seed power needs positive eta_nor and length")
    return (math.pi / (2.0 * params.length_cm)) ** 2 / params.eta_nor_per_w_cm2


def external_efficiency(power_w, params):
    return internal_efficiency(power_w, params) * params.in_coupling * params.fibre_coupling * params.filter_transmission


def end_to_end_efficiency(power_w, params):
    """External efficiency including transport from the NIR collection fibre."""
    return external_efficiency(power_w, params) * params.transport_transmission


def implied_filter_transmission(eta_external, in_coupling, eta_internal, fibre_coupling):
    """Filter transmission that closes the loss budget."""
    denominator = in_coupling * eta_internal * fibre_coupling
    if denominator <= 0:
        raise DomainError("loss budget factors must be positive")
    return eta_external / denominator


def noise_rate(power_mw, params):
    """In-band noise count rate in Hz, linear in seed power."""
    if power_mw < 0:
        raise DomainError(f"seed power must be non-negative, got {power_mw} mW")
    return params.noise_coeff_hz_per_mw * power_mw


def snr(signal_rate_hz, power_mw, params):
    noise = noise_rate(power_mw, params)
    return math.inf if noise == 0 else signal_rate_hz / noise


def output_wavelength(params, laser):
    return dfg_output_wavelength(Wavelength(params.input_wavelength_nm), Wavelength(laser.wavelength_nm))


def bandpass_ghz(params, laser):
    return bandwidth_ghz(output_wavelength(params, laser).nm, params.bandpass_nm)


# ── Seed laser modes ─────────────────────────────────────────────────────────


def seed_mode_offsets(laser):
    """Detuning (GHz) of each longitudinal mode from the envelope centre; integer multiples of the FSR."""
    return (np.arange(laser.n_modes) - laser.n_modes // 2) * (laser.fsr_mhz * 1e-3)


def seed_envelope_weights(laser):
    """Mean power fraction per mode under the Gaussian gain envelope.

    The envelope is cut off at the edges of the mode grid, so the offset RMS
    is that of these weights. 22 modes at 177 MHz span 3.9 GHz, about the
    4 GHz seed linewidth; a 4 GHz FWHM envelope over them gives an RMS near
    1 GHz. An even mode count leaves one extra mode below centre.
    """
    offsets = seed_mode_offsets(laser)
    if laser.envelope_fwhm_ghz == 0:
        weights = (offsets == 0).astype(np.float64)
    else:
        sigma = laser.envelope_fwhm_ghz / GAUSSIAN_FWHM_PER_SIGMA
        weights = np.exp(-0.5 * (offsets / sigma) ** 2)
    return weights / weights.sum()


class SeedModeSchedule:
    """Per-interval mode power weights, Dirichlet around the envelope.

    Interval q covers [q, q+1)·mode_fluctuation_time; weights for a chunk of
    WEIGHT_CHUNK intervals come from one (seed, chunk) generator, so any
    photon subset sees the same weights.
    """

    def __init__(self, laser, rng_seed):
        self.laser = laser
        self.rng_seed = rng_seed
        self.envelope = seed_envelope_weights(laser)
        self._chunks = {}

    def _chunk(self, chunk):
        if chunk not in self._chunks:
            rng = stage_rng(self.rng_seed, "seed_modes", chunk)
            alpha = np.maximum(self.laser.mode_concentration * self.envelope, 1e-12)
            self._chunks[chunk] = rng.dirichlet(alpha, size=WEIGHT_CHUNK)
        return self._chunks[chunk]

    def weights(self, intervals):
        intervals = np.asarray(intervals, dtype=np.int64)
        out = np.empty((len(intervals), self.laser.n_modes))
        chunks = intervals // WEIGHT_CHUNK
        for chunk in np.unique(chunks):
            sel = chunks == chunk
            out[sel] = self._chunk(int(chunk))[intervals[sel] % WEIGHT_CHUNK]
        return out


def sample_seed_frequency_offset(laser, t_ps, rng, schedule=None):
    """Seed-mode detuning (GHz) picked up by photons converted at times t_ps.

    Without a schedule, modes are drawn from the mean envelope weights.
    """
    t = np.atleast_1d(np.asarray(t_ps, dtype=np.float64))
    if laser.n_modes == 1:
        offsets = np.zeros(len(t))
    else:
        u = rng.random(len(t))
        if schedule is None:
            cumulative = np.cumsum(seed_envelope_weights(laser))
            modes = np.searchsorted(cumulative, u, side="right")
        else:
            intervals = np.floor(t / (laser.mode_fluctuation_ns * PS_PER_NS)).astype(np.int64)
            cumulative = np.cumsum(schedule.weights(intervals), axis=1)
            modes = (cumulative < u[:, None]).sum(axis=1)
        offsets = seed_mode_offsets(laser)[np.minimum(modes, laser.n_modes - 1)]
    return float(offsets[0]) if np.ndim(t_ps) == 0 else offsets


def mode_pair_overlap(laser, emitter_params):
    """Lorentzian overlap factor for every pair of seed modes."""
    big_gamma = 1.0 / emitter_params.t1_ns + 2.0 * emitter_params.gamma_fast_ghz
    offsets = seed_mode_offsets(laser)
    detuning = 2.0 * math.pi * (offsets[:, None] - offsets[None, :])
    return big_gamma**2 / (big_gamma**2 + detuning**2)


def seed_overlap_factor(laser, emitter_params):
    """Expected overlap factor for two photons converted in one fluctuation interval.

    With Dirichlet(c·g) weights, E[w_i w_j] = (c·g_i·g_j + δ_ij·g_i)/(c + 1),
    so the factor is (c·S + 1)/(c + 1) with S = Σ g_i g_j L(i - j).
    """
    g = seed_envelope_weights(laser)
    spread = float(g @ mode_pair_overlap(laser, emitter_params) @ g)
    c = laser.mode_concentration
    return (c * spread + 1.0) / (c + 1.0)


def calibrate_mode_concentration(laser, emitter_params, target_factor):
    """Dirichlet concentration giving seed_overlap_factor == target_factor."""
    g = seed_envelope_weights(laser)
    spread = float(g @ mode_pair_overlap(laser, emitter_params) @ g)
    if not spread < target_factor < 1.0:
        raise CalibrationError(
            f"seed overlap factor {target_factor} outside the reachable range ({spread:.4f}, 1)",
            {"static_envelope_factor": spread, "target_factor": target_factor},
        )
    return (1.0 - target_factor) / (target_factor - spread)


# ── Stream transformer ───────────────────────────────────────────────────────


def _noise_interval(params, laser, rng_seed, period_ps, rate_hz, index, start, stop):
    rng = stage_rng(rng_seed, "noise", index)
    n = rng.poisson(rate_hz * (stop - start) * 1e-12)
    photons = empty_photons(n)
    photons["t"] = np.sort(rng.uniform(start, stop, n))
    half_band = 0.5 * bandpass_ghz(params, laser)
    photons["nu"] = rng.uniform(-half_band, half_band, n)
    photons["pol"] = rng.integers(0, 2, n)
    photons["origin"] = ORIGIN_NOISE
    photons["pulse"] = np.floor(photons["t"] / period_ps).astype(np.int64)
    return photons


def noise_photons(params, laser, rng_seed, period_ps, span_ps, threads=None):
    """Poisson noise photons over [0, span_ps), generated per fixed time interval."""
    rate = noise_rate(params.seed_power_mw, params)
    if rate == 0 or span_ps <= 0:
        return empty_photons()
    starts = np.arange(0.0, span_ps, NOISE_INTERVAL_PS)
    intervals = [(s, min(s + NOISE_INTERVAL_PS, span_ps)) for s in starts]
    parts = map_blocks(
        lambda i, span: _noise_interval(params, laser, rng_seed, period_ps, rate, i, *span),
        intervals,
        threads,
    )
    return np.concatenate(parts)


def convert_stream(photons, params, laser, rng_seed, period_ps, span_ps=None, threads=None):
    """Thin by the end-to-end efficiency, add seed-mode jitter, merge noise.

    Survivors keep t and pulse. Output is time-ordered.
    """
    require_ordered(photons["t"], "conversion input")
    eta = end_to_end_efficiency(params.seed_power_w, params)
    schedule = SeedModeSchedule(laser, rng_seed)

    def convert_block(_, item):
        block, sub = item
        sub = sub[stage_rng(rng_seed, "conversion", block).random(len(sub)) < eta].copy()
        sub["nu"] += sample_seed_frequency_offset(laser, sub["t"], stage_rng(rng_seed, "seed_draw", block), schedule)
        return sub

    # schedule chunks are filled lazily; build them before fanning out
    if len(photons) and laser.n_modes > 1:
        intervals = np.floor(photons["t"] / (laser.mode_fluctuation_ns * PS_PER_NS)).astype(np.int64)
        for chunk in np.unique(intervals // WEIGHT_CHUNK):
            schedule._chunk(int(chunk))

    parts = map_blocks(convert_block, group_by_block(photons), threads)
    survivors = np.concatenate(parts) if parts else empty_photons()
    if span_ps is None:
        span_ps = float(photons["t"][-1]) if len(photons) else 0.0
    noise = noise_photons(params, laser, rng_seed, period_ps, span_ps, threads)
    merged = time_sorted(np.concatenate([survivors, noise]))
    logger.info(
        f"Conversion at {params.seed_power_mw} mW: eta={eta:.4f}, {len(survivors)}/{len(photons)} "
        f"photons survive, {len(noise)} noise photons"
    )
    return merged
