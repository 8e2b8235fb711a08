"""Scenario files: sectioned INI text resolved into typed simulator settings.

Keys are addressed as `section.key`. Unknown sections or keys, bad values
and missing required keys raise ConfigError naming the key.
"""

import configparser
import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .bench import DetectorParams, HomConfig
from .config import (
    CORRELATION_BIN_PS,
    DETECTOR_DARK_RATE_HZ,
    DETECTOR_DEAD_TIME_PS,
    DETECTOR_JITTER_PS,
    LIFETIME_BIN_PS,
    LIFETIME_FIT_START_PS,
    LIFETIME_SPAN_PS,
    N_SIDE_PEAKS,
    NIR_DETECTOR_EFFICIENCY,
    PS_PER_NS,
    TELECOM_DETECTOR_EFFICIENCY,
)
from .conversion import ConversionParams, SeedLaser, calibrate_mode_concentration
from .emitter import EmitterParams, ExcitationConfig, calibrate_broadening
from .errors import ConfigError, DomainError

logger = logging.getLogger(__name__)

SCENARIO_DIR = Path(__file__).parent / "scenarios"

MEASUREMENTS = ("lifetime", "hbt", "hom", "rates", "eta_sweep", "power_sweep")
NEEDS_CONVERSION = ("eta_sweep",)

REQUIRED = object()

# HomConfig fields as they are spelled in the [bench] section
HOM_KEYS = {"delay_ps": "hom_delay_ps", "pairing_window_t1": "hom_pairing_window_t1"}


def _floats(text):
    return [float(v) for v in text.replace(",", " ").split()]


def _words(text):
    return [v.strip() for v in text.replace(",", " ").split() if v.strip()]


_DETECTOR_KEYS = {
    "efficiency": (float, NIR_DETECTOR_EFFICIENCY),
    "dark_rate_hz": (float, DETECTOR_DARK_RATE_HZ),
    "jitter_ps": (float, DETECTOR_JITTER_PS),
    "dead_time_ps": (float, DETECTOR_DEAD_TIME_PS),
}

SCHEMA = {
    "scenario": {
        "name": (str, None),
        "seed": (int, REQUIRED),
        "n_pulses": (int, REQUIRED),
        "measurements": (_words, REQUIRED),
    },
    "emitter": {
        "t1_ns": (float, REQUIRED),
        "gamma_fast_ghz": (float, None),
        "sigma_sd_ghz": (float, None),
        "target_fwhm_ghz": (float, None),
        "target_overlap": (float, None),
        "tau_c_ns": (float, None),
        "fss_ghz": (float, None),
        "beat_visibility": (float, None),
        "beat_phase": (float, None),
        "eps_multi": (float, None),
        "tau_blink_on_ns": (float, None),
        "tau_blink_off_ns": (float, None),
        "beta_nir": (float, None),
        "wavelength_nm": (float, None),
    },
    "excitation": {
        "mode": (str, None),
        "power": (float, REQUIRED),
        "reference_power": (float, REQUIRED),
        "rep_rate_mhz": (float, None),
    },
    "conversion": {
        "eta_nor_per_w_cm2": (float, None),
        "length_cm": (float, None),
        "eta_max_internal": (float, None),
        "in_coupling": (float, None),
        "fibre_coupling": (float, None),
        "filter_transmission": (float, None),
        "transport_transmission": (float, None),
        "noise_coeff_hz_per_mw": (float, None),
        "seed_power_mw": (float, None),
        "input_wavelength_nm": (float, None),
        "bandpass_nm": (float, None),
    },
    "seed_laser": {
        "wavelength_nm": (float, None),
        "fsr_mhz": (float, None),
        "envelope_fwhm_ghz": (float, None),
        "n_modes": (int, None),
        "mode_fluctuation_ns": (float, None),
        "mode_concentration": (float, None),
        "target_overlap_factor": (float, None),
    },
    "bench": {
        "nir_filter_transmission": (float, 1.0),
        "splitter_ratio": (float, 0.5),
        "hom_delay_ps": (float, None),
        "hom_pairing_window_t1": (float, 10.0),
        "correlation_bin_ps": (float, CORRELATION_BIN_PS),
        "peak_window_ps": (float, None),
        "n_side_peaks": (int, N_SIDE_PEAKS),
        "lifetime_bin_ps": (float, LIFETIME_BIN_PS),
        "lifetime_span_ps": (float, LIFETIME_SPAN_PS),
        "lifetime_fit_start_ps": (float, LIFETIME_FIT_START_PS),
    },
    "detector_a": dict(_DETECTOR_KEYS),
    "detector_b": dict(_DETECTOR_KEYS),
    "reference_detector": dict(_DETECTOR_KEYS),
    "sweep": {
        "powers_mw": (_floats, None),
        "relative_noise": (float, 0.01),
        "acquisition_s": (float, 1.0),
        "powers_uw": (_floats, None),
        "pulses_per_point": (int, None),
    },
}


@dataclass
class BenchConfig:
    nir_filter_transmission: float = 1.0
    splitter_ratio: float = 0.5
    hom: HomConfig = field(default_factory=HomConfig)
    correlation_bin_ps: float = CORRELATION_BIN_PS
    peak_window_ps: float = None
    n_side_peaks: int = N_SIDE_PEAKS
    lifetime_bin_ps: float = LIFETIME_BIN_PS
    lifetime_span_ps: float = LIFETIME_SPAN_PS
    lifetime_fit_start_ps: float = LIFETIME_FIT_START_PS


@dataclass
class SweepConfig:
    powers_mw: list = field(default_factory=list)
    relative_noise: float = 0.01
    acquisition_s: float = 1.0
    powers_uw: list = field(default_factory=list)
    pulses_per_point: int = None


@dataclass
class Scenario:
    name: str
    seed: int
    n_pulses: int
    measurements: list
    emitter: EmitterParams
    excitation: ExcitationConfig
    bench: BenchConfig
    detector_a: DetectorParams
    detector_b: DetectorParams
    reference_detector: DetectorParams
    conversion: ConversionParams = None
    laser: SeedLaser = None
    sweep: SweepConfig = field(default_factory=SweepConfig)

    @property
    def converted(self):
        return self.conversion is not None

    def resolved(self):
        """Canonical dict of every field that affects results; the name is a label only."""
        data = asdict(self)
        data.pop("name")
        return data

    @property
    def digest(self):
        canonical = json.dumps(self.resolved(), sort_keys=True, separators=(",", ":"), default=str)
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


# ── Loading ──────────────────────────────────────────────────────────────────


def scenario_path(source):
    """Resolve a bundled scenario name or a file path."""
    path = Path(source)
    if path.is_file():
        return path
    bundled = SCENARIO_DIR / f"{source}.ini"
    if bundled.is_file():
        return bundled
    raise ConfigError(f"no scenario file or bundled scenario named {source!r}", key="scenario")


def bundled_scenarios():
    return sorted(p.stem for p in SCENARIO_DIR.glob("*.ini"))


def _parse_sections(parser):
    values = {}
    for section in parser.sections():
        if section not in SCHEMA:
            raise ConfigError("unknown section", key=section)
        values[section] = {}
        for key, raw in parser.items(section):
            path = f"{section}.{key}"
            if key not in SCHEMA[section]:
                raise ConfigError("unknown key", key=path)
            kind, _ = SCHEMA[section][key]
            try:
                values[section][key] = kind(raw.strip())
            except ValueError as e:
                raise ConfigError(f"cannot parse {raw!r}: {e}", key=path)
    for section, keys in SCHEMA.items():
        given = values.get(section, {})
        for key, (_, default) in keys.items():
            if default is REQUIRED and key not in given:
                raise ConfigError("required key is missing", key=f"{section}.{key}")
    return values


def _section(values, section):
    """Given keys of a section, with schema defaults filled in where they are not None."""
    out = {k: d for k, (_, d) in SCHEMA[section].items() if d is not None and d is not REQUIRED}
    out.update(values.get(section, {}))
    return out


def _build(section, cls, kwargs, aliases=None):
    try:
        return cls(**kwargs)
    except DomainError as e:
        name = (aliases or {}).get(e.field, e.field)
        raise ConfigError(str(e), key=f"{section}.{name}" if name else section)


def _detector(values, section, default_efficiency):
    kwargs = _section(values, section)
    if "efficiency" not in values.get(section, {}):
        kwargs["efficiency"] = default_efficiency
    return _build(section, DetectorParams, kwargs)


def _emitter(values, hom_delay_ps):
    kwargs = _section(values, "emitter")
    target_fwhm = kwargs.pop("target_fwhm_ghz", None)
    target_overlap = kwargs.pop("target_overlap", None)
    explicit = "gamma_fast_ghz" in kwargs or "sigma_sd_ghz" in kwargs
    if (target_fwhm is None) != (target_overlap is None):
        raise ConfigError("target_fwhm_ghz and target_overlap go together", key="emitter.target_overlap")
    if target_fwhm is not None:
        if explicit:
            raise ConfigError("give either calibration targets or gamma_fast_ghz/sigma_sd_ghz", key="emitter")
        uncalibrated = _build("emitter", EmitterParams, kwargs)
        gamma_fast, sigma_sd = calibrate_broadening(
            uncalibrated.t1_ns, target_fwhm, target_overlap, uncalibrated.tau_c_ns, hom_delay_ps / PS_PER_NS
        )
        kwargs.update(gamma_fast_ghz=gamma_fast, sigma_sd_ghz=sigma_sd)
    return _build("emitter", EmitterParams, kwargs)


def _laser(values, emitter):
    if "seed_laser" not in values:
        return SeedLaser()
    kwargs = _section(values, "seed_laser")
    target = kwargs.pop("target_overlap_factor", None)
    if target is not None:
        if "mode_concentration" in kwargs:
            raise ConfigError("give either target_overlap_factor or mode_concentration", key="seed_laser")
        uncalibrated = _build("seed_laser", SeedLaser, kwargs)
        kwargs["mode_concentration"] = calibrate_mode_concentration(uncalibrated, emitter, target)
    return _build("seed_laser", SeedLaser, kwargs)


def resolve(values, default_name="scenario"):
    """Typed Scenario from parsed section values."""
    head = _section(values, "scenario")
    if head["n_pulses"] < 1:
        raise ConfigError(f"must be at least 1, got {head['n_pulses']}", key="scenario.n_pulses")
    unknown = [m for m in head["measurements"] if m not in MEASUREMENTS]
    if unknown:
        raise ConfigError(f"unknown measurements {unknown}; choose from {MEASUREMENTS}", key="scenario.measurements")
    if any(m in NEEDS_CONVERSION for m in head["measurements"]) and "conversion" not in values:
        raise ConfigError("this measurement list needs a [conversion] section", key="scenario.measurements")

    excitation_kwargs = _section(values, "excitation")
    excitation = _build("excitation", ExcitationConfig, dict(excitation_kwargs, n_pulses=head["n_pulses"]))

    bench_kwargs = _section(values, "bench")
    hom = _build("bench", HomConfig, {
        "delay_ps": bench_kwargs.pop("hom_delay_ps", excitation.period_ps),
        "splitter_ratio": bench_kwargs["splitter_ratio"],
        "pairing_window_t1": bench_kwargs.pop("hom_pairing_window_t1"),
    }, aliases=HOM_KEYS)
    bench = BenchConfig(hom=hom, **bench_kwargs)
    if not 0.0 <= bench.nir_filter_transmission <= 1.0:
        raise ConfigError("must be in [0, 1]", key="bench.nir_filter_transmission")

    emitter = _emitter(values, hom.delay_ps)
    conversion = _build("conversion", ConversionParams, _section(values, "conversion")) if "conversion" in values else None
    laser = _laser(values, emitter) if conversion is not None else None

    converted = conversion is not None
    telecom_efficiency = TELECOM_DETECTOR_EFFICIENCY if converted else NIR_DETECTOR_EFFICIENCY
    sweep = _build("sweep", SweepConfig, _section(values, "sweep"))
    if "eta_sweep" in head["measurements"] and not sweep.powers_mw:
        raise ConfigError("eta_sweep needs a power grid", key="sweep.powers_mw")
    if "power_sweep" in head["measurements"] and not sweep.powers_uw:
        raise ConfigError("power_sweep needs a power grid", key="sweep.powers_uw")

    return Scenario(
        name=head.get("name") or default_name,
        seed=head["seed"],
        n_pulses=head["n_pulses"],
        measurements=list(head["measurements"]),
        emitter=emitter,
        excitation=excitation,
        bench=bench,
        detector_a=_detector(values, "detector_a", telecom_efficiency),
        detector_b=_detector(values, "detector_b", telecom_efficiency),
        reference_detector=_detector(values, "reference_detector", NIR_DETECTOR_EFFICIENCY),
        conversion=conversion,
        laser=laser,
        sweep=sweep,
    )


def load_scenario(source, overrides=None):
    """Load a scenario by bundled name or path; overrides map `section.key` to values."""
    path = scenario_path(source)
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(path.read_text(encoding="utf-8"), source=str(path))
    except configparser.Error as e:
        raise ConfigError(f"malformed scenario file: {e}", key=path.stem)
    for dotted, value in (overrides or {}).items():
        section, _, key = dotted.partition(".")
        if not parser.has_section(section):
            parser.add_section(section)
        parser.set(section, key, str(value))
    scenario = resolve(_parse_sections(parser), default_name=path.stem)
    logger.info(f"Loaded scenario {scenario.name} from {path} (digest {scenario.digest[:12]})")
    return scenario
