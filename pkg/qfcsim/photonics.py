"""Units and closed-form photonics relations shared by the simulator.

Lengths are nanometres, frequencies gigahertz, durations nanoseconds. The
speed of light only appears in the two conversion helpers below.
"""

import math
from dataclasses import dataclass

from .config import PS_PER_NS, SPEED_OF_LIGHT_M_S
from .errors import DomainError

# c expressed in nm * GHz
C_NM_GHZ = SPEED_OF_LIGHT_M_S

GAUSSIAN_FWHM_PER_SIGMA = 2.0 * math.sqrt(2.0 * math.log(2.0))


@dataclass(frozen=True)
class Wavelength:
    nm: float

    def __post_init__(self):
        if not self.nm > 0:
            raise DomainError(f"wavelength must be positive, got {self.nm} nm")

    def to_frequency(self):
        return Frequency(optical_frequency(self.nm))


@dataclass(frozen=True)
class Frequency:
    ghz: float

    def to_wavelength(self):
        return Wavelength(vacuum_wavelength(self.ghz))

    @property
    def mhz(self):
        return self.ghz * 1e3


@dataclass(frozen=True)
class Duration:
    ns: float

    @property
    def ps(self):
        return self.ns * PS_PER_NS


def optical_frequency(wavelength_nm):
    """Vacuum optical frequency in GHz of a wavelength in nm."""
    if wavelength_nm <= 0:
        raise DomainError(f"wavelength must be positive, got {wavelength_nm} nm")
    return C_NM_GHZ / wavelength_nm


def vacuum_wavelength(frequency_ghz):
    """Vacuum wavelength in nm of an optical frequency in GHz."""
    if frequency_ghz <= 0:
        raise DomainError(f"optical frequency must be positive, got {frequency_ghz} GHz")
    return C_NM_GHZ / frequency_ghz


def bandwidth_ghz(center_nm, width_nm):
    """Frequency width of a narrow wavelength band, c * dλ / λ²."""
    if center_nm <= 0 or width_nm < 0:
        raise DomainError(f"invalid band {width_nm} nm at {center_nm} nm")
    return C_NM_GHZ * width_nm / center_nm**2


def dfg_output_wavelength(wl_in, wl_seed):
    """Difference-frequency output wavelength: 1/λ_out = 1/λ_in - 1/λ_seed.

    An infinite seed wavelength (zero seed photon energy) returns λ_in.
    """
    if math.isinf(wl_seed.nm):
        return Wavelength(wl_in.nm)
    if wl_seed.nm <= wl_in.nm:
        raise DomainError(
            f"no positive difference frequency for λ_in={wl_in.nm} nm, λ_seed={wl_seed.nm} nm"
        )
    return Wavelength(1.0 / (1.0 / wl_in.nm - 1.0 / wl_seed.nm))


def linewidth_fwhm(t2):
    """Lorentzian FWHM 1/(π·T2) of a line with coherence time T2."""
    if not t2.ns > 0:
        raise DomainError(f"T2 must be positive, got {t2.ns} ns")
    if math.isinf(t2.ns):
        return Frequency(0.0)
    return Frequency(1.0 / (math.pi * t2.ns))


def transform_limited_linewidth(t1_ns):
    """FWHM in GHz at the transform limit T2 = 2·T1."""
    return linewidth_fwhm(Duration(2.0 * t1_ns)).ghz


def gaussian_fwhm(sigma_ghz):
    return GAUSSIAN_FWHM_PER_SIGMA * sigma_ghz


def voigt_fwhm(lorentz_fwhm, gauss_fwhm):
    """Olivero-Longbothum approximation of the Voigt FWHM (0.02% accurate)."""
    return 0.5346 * lorentz_fwhm + math.sqrt(0.2166 * lorentz_fwhm**2 + gauss_fwhm**2)


def gauss_fwhm_for_voigt(voigt, lorentz_fwhm):
    """Invert voigt_fwhm for the Gaussian FWHM. Returns None below the pure-Lorentzian width."""
    if voigt < voigt_fwhm(lorentz_fwhm, 0.0) - 1e-12:
        return None
    excess = (voigt - 0.5346 * lorentz_fwhm) ** 2 - 0.2166 * lorentz_fwhm**2
    return math.sqrt(max(excess, 0.0))
