"""Quantum-dot emitter under pulsed excitation.

Produces PHOTON_DTYPE streams with exponential (beat-modulated) emission
delays, multiphoton events, blinking, fast dephasing and slow spectral
diffusion. Times inside the physics are ns; record times are ps.
"""

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy import optimize, signal

from .bench import mean_pair_overlap
from .config import (
    BLOCK_PULSES,
    DEFAULT_HOM_SEPARATION_NS,
    DEFAULT_TAU_BLINK_ON_NS,
    DEFAULT_TAU_C_NS,
    EMITTER_WAVELENGTH_NM,
    PS_PER_NS,
)
from .errors import CalibrationError, DomainError
from .photonics import (
    GAUSSIAN_FWHM_PER_SIGMA,
    gauss_fwhm_for_voigt,
    gaussian_fwhm,
    transform_limited_linewidth,
    voigt_fwhm,
)
from .streams import (
    ORIGIN_MULTIPHOTON,
    ORIGIN_SIGNAL,
    POL_H,
    empty_photons,
    map_blocks,
    pulse_blocks,
    stage_rng,
    time_sorted,
)

logger = logging.getLogger(__name__)

EXCITATION_MODES = ("resonant_rabi", "off_resonant_saturation")

# 1 MHz, in GHz
FWHM_TOLERANCE_GHZ = 1e-3


@dataclass
class EmitterParams:
    t1_ns: float
    gamma_fast_ghz: float = 0.0
    sigma_sd_ghz: float = 0.0
    tau_c_ns: float = DEFAULT_TAU_C_NS
    fss_ghz: float = 0.0
    beat_visibility: float = 0.0
    beat_phase: float = 0.0
    eps_multi: float = 0.0
    tau_blink_on_ns: float = DEFAULT_TAU_BLINK_ON_NS
    tau_blink_off_ns: float = 0.0
    beta_nir: float = 1.0
    wavelength_nm: float = EMITTER_WAVELENGTH_NM

    def __post_init__(self):
        if not self.t1_ns > 0:
            raise DomainError(f"T1 must be positive, got {self.t1_ns} ns", "t1_ns")
        for name in ("gamma_fast_ghz", "sigma_sd_ghz", "tau_c_ns", "fss_ghz",
                     "tau_blink_on_ns", "tau_blink_off_ns"):
            if getattr(self, name) < 0:
                raise DomainError(f"{name} must be non-negative, got {getattr(self, name)}", name)
        if not 0.0 <= self.beat_visibility <= 1.0:
            raise DomainError(f"beat visibility must be in [0, 1], got {self.beat_visibility}", "beat_visibility")
        if not 0.0 <= self.eps_multi < 0.5:
            raise DomainError(f"multiphoton probability must be in [0, 0.5), got {self.eps_multi}", "eps_multi")
        if not 0.0 <= self.beta_nir <= 1.0:
            raise DomainError(f"collection efficiency must be in [0, 1], got {self.beta_nir}", "beta_nir")
        if self.tau_blink_off_ns > 0 and not self.tau_blink_on_ns > 0:
            raise DomainError("blinking needs a positive on-state dwell time", "tau_blink_on_ns")
        if not math.isfinite(self.total_fwhm_ghz):
            raise DomainError("total linewidth is not finite")

    @property
    def blinking(self):
        return self.tau_blink_off_ns > 0

    @property
    def p_on(self):
        if not self.blinking:
            return 1.0
        return self.tau_blink_on_ns / (self.tau_blink_on_ns + self.tau_blink_off_ns)

    @property
    def blink_correlation_ns(self):
        if not self.blinking:
            return 0.0
        return 1.0 / (1.0 / self.tau_blink_on_ns + 1.0 / self.tau_blink_off_ns)

    @property
    def lorentz_fwhm_ghz(self):
        return transform_limited_linewidth(self.t1_ns) + self.gamma_fast_ghz / math.pi

    @property
    def total_fwhm_ghz(self):
        return voigt_fwhm(self.lorentz_fwhm_ghz, gaussian_fwhm(self.sigma_sd_ghz))


@dataclass
class ExcitationConfig:
    mode: str = "resonant_rabi"
    power: float = 1.0
    reference_power: float = 1.0
    rep_rate_mhz: float = 80.3
    n_pulses: int = 1

    def __post_init__(self):
        if self.mode not in EXCITATION_MODES:
            raise DomainError(f"excitation mode must be one of {EXCITATION_MODES}, got {self.mode!r}", "mode")
        if not self.rep_rate_mhz > 0:
            raise DomainError(f"repetition rate must be positive, got {self.rep_rate_mhz} MHz", "rep_rate_mhz")
        if self.power < 0:
            raise DomainError(f"excitation power must be non-negative, got {self.power}", "power")
        if not self.reference_power > 0:
            raise DomainError(f"reference power must be positive, got {self.reference_power}", "reference_power")
        if self.n_pulses < 1:
            raise DomainError(f"n_pulses must be at least 1, got {self.n_pulses}", "n_pulses")

    @property
    def period_ps(self):
        return 1e6 / self.rep_rate_mhz

    @property
    def period_ns(self):
        return 1e3 / self.rep_rate_mhz

    @property
    def acquisition_ps(self):
        return self.n_pulses * self.period_ps


def rabi_probability(power, p_pi):
    return math.sin(0.5 * math.pi * math.sqrt(power / p_pi)) ** 2


def saturation_probability(power, p_sat):
    return power / (power + p_sat)


def excitation_probability(config):
    """Probability that one pulse prepares the emitter in its excited state."""
    if config.power < 0:
        raise DomainError(f"excitation power must be non-negative, got {config.power}")
    if config.mode == "resonant_rabi":
        return rabi_probability(config.power, config.reference_power)
    return saturation_probability(config.power, config.reference_power)


def beat_envelope(t_ns, params):
    """Emission-time intensity exp(-t/T1)·(1 + v·cos(2πΔt + φ)), scaled so ∫₀^∞ = T1."""
    t = np.asarray(t_ns, dtype=np.float64)
    if np.any(t < 0):
        raise DomainError("beat envelope is defined for t >= 0 only")
    v = params.beat_visibility
    if not 0.0 <= v <= 1.0:
        raise DomainError(f"beat visibility must be in [0, 1], got {v}")
    t1 = params.t1_ns
    omega = 2.0 * math.pi * params.fss_ghz
    phase = params.beat_phase
    integral = t1 + v * (math.cos(phase) / t1 - omega * math.sin(phase)) / (1.0 / t1**2 + omega**2)
    value = np.exp(-t / t1) * (1.0 + v * np.cos(omega * t + phase)) * (t1 / integral)
    return float(value) if value.ndim == 0 else value


def sample_emission_delays(n, params, rng):
    """Draw n emission delays (ns) from the beat envelope by rejection."""
    v = params.beat_visibility
    if v == 0.0 or params.fss_ghz == 0.0:
        return rng.exponential(params.t1_ns, n)
    omega = 2.0 * math.pi * params.fss_ghz
    out = np.empty(n)
    filled = 0
    while filled < n:
        batch = max(int((n - filled) * 1.2 * (1.0 + v)), 64)
        proposal = rng.exponential(params.t1_ns, batch)
        accept_p = (1.0 + v * np.cos(omega * proposal + params.beat_phase)) / (1.0 + v)
        accepted = proposal[rng.random(batch) < accept_p][: n - filled]
        out[filled:filled + len(accepted)] = accepted
        filled += len(accepted)
    return out


def ou_series(n, step_ns, sigma, tau_c_ns, rng):
    """Stationary Ornstein-Uhlenbeck samples on a regular grid, as an AR(1) filter."""
    if sigma == 0.0 or n == 0:
        return np.zeros(n)
    a = math.exp(-step_ns / tau_c_ns) if tau_c_ns > 0 else 0.0
    kicks = rng.standard_normal(n) * (sigma * math.sqrt(1.0 - a * a))
    kicks[0] = rng.normal(0.0, sigma)
    return signal.lfilter([1.0], [1.0, -a], kicks)


def telegraph_states(n_pulses, period_ns, params, rng):
    """Bright/dark state of the emitter at each pulse of a block."""
    if not params.blinking:
        return np.ones(n_pulses, dtype=bool)
    span = n_pulses * period_ns
    start_on = rng.random() < params.p_on
    first, second = (
        (params.tau_blink_on_ns, params.tau_blink_off_ns)
        if start_on
        else (params.tau_blink_off_ns, params.tau_blink_on_ns)
    )
    dwells = []
    elapsed = 0.0
    while elapsed < span:
        k = int(span / (first + second)) + 16
        pair = np.empty(2 * k)
        pair[0::2] = rng.exponential(first, k)
        pair[1::2] = rng.exponential(second, k)
        dwells.append(pair)
        elapsed += pair.sum()
    switches = np.cumsum(np.concatenate(dwells))
    flips = np.searchsorted(switches, np.arange(n_pulses) * period_ns, side="right")
    return (flips % 2 == 0) == start_on


def telegraph_side_peak(tau_ns, params):
    """Normalized side-peak height expected from blinking alone."""
    if not params.blinking:
        return np.ones_like(np.asarray(tau_ns, dtype=np.float64))
    p_on = params.p_on
    return 1.0 + ((1.0 - p_on) / p_on) * np.exp(-np.abs(tau_ns) / params.blink_correlation_ns)


def expected_photon_rate(params, excitation):
    """Mean rate (Hz) of photons delivered into the NIR collection fibre."""
    per_pulse = params.p_on * excitation_probability(excitation) * (1.0 + params.eps_multi) * params.beta_nir
    return per_pulse * excitation.rep_rate_mhz * 1e6


def calibrate_broadening(t1_ns, target_fwhm_ghz, target_overlap,
                         tau_c_ns=DEFAULT_TAU_C_NS, separation_ns=DEFAULT_HOM_SEPARATION_NS):
    """Split excess linewidth into fast dephasing and slow diffusion.

    Returns (γ_fast in 1/ns, σ_sd in GHz). Along the curve of constant
    Voigt FWHM = target_fwhm, σ_sd is a closed-form function of γ_fast, so
    the two targets reduce to one root in γ_fast for the mean overlap at
    separation_ns.
    """
    if not 0.0 < target_overlap <= 1.0:
        raise DomainError(f"target overlap must be in (0, 1], got {target_overlap}")
    limit = transform_limited_linewidth(t1_ns)
    diagnostic = {
        "t1_ns": t1_ns,
        "transform_limit_ghz": limit,
        "target_fwhm_ghz": target_fwhm_ghz,
        "target_overlap": target_overlap,
    }
    if target_fwhm_ghz < limit - FWHM_TOLERANCE_GHZ:
        raise CalibrationError(
            f"target linewidth {target_fwhm_ghz * 1e3:.1f} MHz is below the transform limit "
            f"{limit * 1e3:.1f} MHz",
            diagnostic,
        )
    if abs(target_fwhm_ghz - limit) <= FWHM_TOLERANCE_GHZ:
        if target_overlap >= 1.0 - 0.005:
            return 0.0, 0.0
        raise CalibrationError(
            "a transform-limited line cannot lose overlap; lower the overlap target or raise the linewidth",
            diagnostic,
        )

    def sigma_for(gamma_fast):
        lorentz = limit + gamma_fast / math.pi
        gauss = gauss_fwhm_for_voigt(target_fwhm_ghz, lorentz)
        return (gauss or 0.0) / GAUSSIAN_FWHM_PER_SIGMA

    def residual(gamma_fast):
        return mean_pair_overlap(t1_ns, gamma_fast, sigma_for(gamma_fast), tau_c_ns, separation_ns) - target_overlap

    gamma_max = math.pi * (target_fwhm_ghz - limit)
    r_lo, r_hi = residual(0.0), residual(gamma_max)
    diagnostic["reachable_overlap"] = (r_hi + target_overlap, r_lo + target_overlap)
    if r_lo * r_hi > 0:
        raise CalibrationError(
            f"overlap {target_overlap} is unreachable at {target_fwhm_ghz * 1e3:.1f} MHz; "
            f"reachable range is {r_hi + target_overlap:.4f}..{r_lo + target_overlap:.4f}",
            diagnostic,
        )
    gamma_fast = optimize.brentq(residual, 0.0, gamma_max, xtol=1e-12)
    sigma_sd = sigma_for(gamma_fast)
    logger.info(
        f"Calibrated broadening: gamma_fast={gamma_fast:.5f} /ns, sigma_sd={sigma_sd * 1e3:.2f} MHz "
        f"for {target_fwhm_ghz * 1e3:.1f} MHz and overlap {target_overlap}"
    )
    return gamma_fast, sigma_sd


def _emit_block(params, excitation, rng_seed, block, start, stop):
    n = stop - start
    rng = stage_rng(rng_seed, "emission", block)
    on = telegraph_states(n, excitation.period_ns, params, stage_rng(rng_seed, "blinking", block))
    drift = ou_series(n, excitation.period_ns, params.sigma_sd_ghz, params.tau_c_ns,
                      stage_rng(rng_seed, "diffusion", block))

    excited = on & (rng.random(n) < excitation_probability(excitation))
    signal_idx = np.flatnonzero(excited)
    extra_idx = signal_idx[rng.random(len(signal_idx)) < params.eps_multi]
    local = np.concatenate([signal_idx, extra_idx])
    origin = np.concatenate([
        np.full(len(signal_idx), ORIGIN_SIGNAL, dtype=np.uint8),
        np.full(len(extra_idx), ORIGIN_MULTIPHOTON, dtype=np.uint8),
    ])
    delays = sample_emission_delays(len(local), params, rng)
    collected = rng.random(len(local)) < params.beta_nir

    local, origin, delays = local[collected], origin[collected], delays[collected]
    photons = empty_photons(len(local))
    photons["pulse"] = start + local
    photons["t"] = photons["pulse"] * excitation.period_ps + delays * PS_PER_NS
    photons["nu"] = drift[local]
    photons["pol"] = POL_H
    photons["origin"] = origin
    logger.debug(f"Block {block}: {int(excited.sum())} excited pulses, {len(photons)} photons collected")
    return time_sorted(photons)


def simulate_emission(params, excitation, rng_seed, threads=None, block_pulses=BLOCK_PULSES):
    """Photons collected into the NIR fibre for excitation.n_pulses pulses, time-ordered.

    Each pulse block draws from its own (seed, stage, block) generators and
    restarts the diffusion process from its stationary distribution. ν holds
    the slow diffusion only; fast dephasing enters pair overlaps through
    dephasing_factor and is not drawn per photon.
    """
    if block_pulses * excitation.period_ns < 3.0 * params.tau_c_ns and params.sigma_sd_ghz > 0:
        logger.warning(
            f"Pulse block of {block_pulses * excitation.period_ns:.0f} ns is short against "
            f"tau_c = {params.tau_c_ns} ns; diffusion restarts will shorten correlations"
        )
    blocks = pulse_blocks(excitation.n_pulses, block_pulses)
    parts = map_blocks(
        lambda b, span: _emit_block(params, excitation, rng_seed, b, *span), blocks, threads
    )
    photons = time_sorted(np.concatenate(parts)) if parts else empty_photons()
    logger.info(f"Emitted {len(photons)} photons over {excitation.n_pulses} pulses (seed {rng_seed})")
    return photons


def _coherent_block(mean_photons, excitation, rng_seed, block, start, stop):
    rng = stage_rng(rng_seed, "coherent", block)
    counts = rng.poisson(mean_photons, stop - start)
    pulses = start + np.repeat(np.arange(stop - start), counts)
    photons = empty_photons(len(pulses))
    photons["pulse"] = pulses
    photons["t"] = pulses * excitation.period_ps
    photons["pol"] = POL_H
    photons["origin"] = ORIGIN_SIGNAL
    return photons


def simulate_coherent(mean_photons, excitation, rng_seed, threads=None, block_pulses=BLOCK_PULSES):
    """Attenuated laser pulses: Poissonian photon number per pulse, g²(0) = 1."""
    if mean_photons < 0:
        raise DomainError(f"mean photon number must be non-negative, got {mean_photons}")
    blocks = pulse_blocks(excitation.n_pulses, block_pulses)
    parts = map_blocks(
        lambda b, span: _coherent_block(mean_photons, excitation, rng_seed, b, *span), blocks, threads
    )
    return np.concatenate(parts) if parts else empty_photons()
