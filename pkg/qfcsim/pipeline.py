"""simulate -> convert -> measure -> analyze for one scenario."""

import logging
import math
from pathlib import Path

import numpy as np

from .analysis import (
    correlate,
    count_rate,
    fit_conversion_curve,
    fit_lifetime,
    fit_power_curve,
    g2_zero,
    hom_visibility,
    indistinguishability,
    peak_areas,
    start_stop_histogram,
)
from .bench import HomConfig, detect, filter_stream, hbt_measure, hom_measure, lifetime_measure
from .conversion import convert_stream, end_to_end_efficiency, internal_efficiency, noise_rate
from .emitter import ExcitationConfig, expected_photon_rate, simulate_emission
from .errors import AnalysisError
from .events import clicks_to_records, write_events
from .fitting import MODELS, conversion_model
from .report import Curve, build_report, emit_plot_data, write_report
from .streams import ORIGIN_NOISE, STAGES, stage_rng

logger = logging.getLogger(__name__)


def sub_seed(seed, index):
    """Independent seed for the index-th point of a sweep."""
    return int(np.random.SeedSequence([int(seed), STAGES["sweep"], int(index)]).generate_state(1)[0])


def dead_time_corrected_rate(rate_hz, dead_time_ps, period_ps):
    """Undo non-paralyzable dead-time loss for a pulsed source.

    A click blocks the next ceil(dead_time/period) - 1 pulses.
    """
    blocked = max(math.ceil(dead_time_ps / period_ps) - 1, 0)
    p = rate_hz * period_ps * 1e-12
    if blocked * p >= 1:
        raise AnalysisError(f"click rate {rate_hz:.0f} Hz saturates the detector dead time")
    return rate_hz / (1.0 - blocked * p)


class ScenarioRun:
    """Outputs of one run: fits, derived numbers, errors and written files."""

    def __init__(self, scenario, out_dir, threads=None, svg=False, save_events=True):
        self.scenario = scenario
        self.out_dir = Path(out_dir)
        self.threads = threads
        self.svg = svg
        self.save_events = save_events
        self.fits = {}
        self.derived = {}
        self.errors = []
        self.outputs = []
        self.period_ps = scenario.excitation.period_ps
        self.span_ps = scenario.excitation.acquisition_ps

    def path(self, suffix):
        return self.out_dir / f"{self.scenario.name}_{suffix}"

    def save_clicks(self, suffix, channels):
        if self.save_events:
            target = self.path(suffix)
            write_events(clicks_to_records(channels), target, channels=len(channels))
            self.outputs.append(str(target))

    def plot(self, data, suffix, fit=None, extra=None):
        self.outputs.extend(emit_plot_data(data, self.path(suffix), fit=fit, svg=self.svg, extra=extra))

    def guarded(self, name, fn, *args):
        """Run one measurement; analysis failures are recorded, not raised."""
        try:
            fn(*args)
        except AnalysisError as e:
            logger.error(f"{name} analysis failed: {e}")
            self.errors.append(f"{name}: {e}")


# ── Streams ──────────────────────────────────────────────────────────────────


def simulate_streams(scenario, threads=None):
    """Photons in the NIR collection fibre and the stream sent to the measurement bench."""
    emitted = simulate_emission(scenario.emitter, scenario.excitation, scenario.seed, threads)
    if scenario.converted:
        under_test = convert_stream(
            emitted, scenario.conversion, scenario.laser, scenario.seed,
            scenario.excitation.period_ps, scenario.excitation.acquisition_ps, threads,
        )
    else:
        under_test = filter_stream(emitted, scenario.bench.nir_filter_transmission,
                                   stage_rng(scenario.seed, "filter"))
    return emitted, under_test


# ── Measurements ─────────────────────────────────────────────────────────────


def measure_lifetime(run, stream):
    bench = run.scenario.bench
    clicks = lifetime_measure(stream, run.scenario.detector_a, run.scenario.seed, run.span_ps)
    hist = start_stop_histogram(clicks, run.period_ps, bench.lifetime_bin_ps, bench.lifetime_span_ps)
    run.save_clicks("lifetime_clicks.phtx", [clicks])
    report = fit_lifetime(hist, bench.lifetime_fit_start_ps)
    run.fits["lifetime"] = report
    fit_curve = MODELS["lifetime"](hist.taus / 1e3, list(report.params.values()))
    run.plot(hist, "lifetime.csv", fit=fit_curve)


def _normalized(hist, run):
    """Counts relative to the uncorrelated per-bin level of the outer side peaks."""
    bench = run.scenario.bench
    peaks = peak_areas(hist, run.period_ps, bench.peak_window_ps)
    outer = sorted(peaks.side_areas, key=lambda item: -abs(item[0]))[: 2 * bench.n_side_peaks]
    window = peaks.window_ps or run.period_ps / 2.0
    level = np.mean([a for _, a in outer]) * hist.bin_width_ps / window if outer else 0.0
    return hist.counts / level if level > 0 else np.zeros(hist.n_bins)


def measure_hbt(run, stream):
    scenario, bench = run.scenario, run.scenario.bench
    clicks_a, clicks_b = hbt_measure(stream, bench.splitter_ratio, scenario.detector_a,
                                     scenario.detector_b, scenario.seed, run.span_ps)
    run.save_clicks("hbt_clicks.phtx", [clicks_a, clicks_b])
    hist = correlate(clicks_a, clicks_b, bench.correlation_bin_ps, rep_period_ps=run.period_ps,
                     acquisition_ps=run.span_ps, threads=run.threads)
    run.plot(hist, "g2.csv", extra={"normalized": _normalized(hist, run)})
    g2, sigma = g2_zero(hist, run.period_ps, bench.peak_window_ps, bench.n_side_peaks)
    run.derived.update(g2_zero=g2, g2_zero_sigma=sigma)
    logger.info(f"g2(0) = {g2:.4f} ± {sigma:.4f}")


def measure_hom(run, stream):
    scenario, bench = run.scenario, run.scenario.bench
    hists = {}
    for polarization in ("parallel", "cross"):
        config = HomConfig(bench.hom.delay_ps, polarization, bench.hom.splitter_ratio, bench.hom.pairing_window_t1)
        clicks_a, clicks_b = hom_measure(stream, config, scenario.emitter, scenario.detector_a,
                                         scenario.detector_b, scenario.seed, run.span_ps)
        run.save_clicks(f"hom_{polarization}_clicks.phtx", [clicks_a, clicks_b])
        hists[polarization] = correlate(clicks_a, clicks_b, bench.correlation_bin_ps, rep_period_ps=run.period_ps,
                                        acquisition_ps=run.span_ps, threads=run.threads)
        run.plot(hists[polarization], f"hom_{polarization}.csv",
                 extra={"normalized": _normalized(hists[polarization], run)})
    visibility, sigma = hom_visibility(hists["parallel"], hists["cross"], run.period_ps,
                                       bench.peak_window_ps, bench.n_side_peaks)
    run.derived.update(hom_visibility=visibility, hom_visibility_sigma=sigma)
    logger.info(f"V_HOM = {visibility:.3f} ± {sigma:.3f}")


def measure_rates(run, emitted, stream):
    scenario = run.scenario
    det = scenario.detector_a
    noise = stream["origin"] == ORIGIN_NOISE
    total = detect(stream["t"], det, stage_rng(scenario.seed, "rates", 0), run.span_ps)
    signal = detect(stream["t"][~noise], det, stage_rng(scenario.seed, "rates", 1), run.span_ps)
    noise_clicks = detect(stream["t"][noise], det, stage_rng(scenario.seed, "rates", 2), run.span_ps)

    rate = count_rate(total, run.span_ps)
    signal_rate = count_rate(signal, run.span_ps)
    noise_only = count_rate(noise_clicks, run.span_ps)
    run.derived.update(
        count_rate_hz=rate,
        signal_rate_hz=signal_rate,
        noise_rate_hz=noise_only,
        snr=signal_rate / noise_only if noise_only > 0 else None,
        expected_fibre_rate_hz=expected_photon_rate(scenario.emitter, scenario.excitation),
    )
    if scenario.converted:
        ref = scenario.reference_detector
        fibre = detect(emitted["t"], ref, stage_rng(scenario.seed, "rates", 3), run.span_ps)
        bench_stream = filter_stream(emitted, scenario.bench.nir_filter_transmission, stage_rng(scenario.seed, "filter"))
        nir = detect(bench_stream["t"], ref, stage_rng(scenario.seed, "rates", 4), run.span_ps)
        fibre_rate = count_rate(fibre, run.span_ps)
        corrected_out = dead_time_corrected_rate(signal_rate, det.dead_time_ps, run.period_ps) / det.efficiency
        corrected_in = dead_time_corrected_rate(fibre_rate, ref.dead_time_ps, run.period_ps) / ref.efficiency
        run.derived.update(
            nir_rate_hz=count_rate(nir, run.span_ps),
            nir_fibre_rate_hz=fibre_rate,
            end_to_end_efficiency=corrected_out / corrected_in if corrected_in > 0 else None,
            expected_end_to_end_efficiency=end_to_end_efficiency(scenario.conversion.seed_power_w, scenario.conversion),
        )
    logger.info(f"Detected rate {rate / 1e3:.1f} kHz, signal {signal_rate / 1e3:.1f} kHz, noise {noise_only:.0f} Hz")


def measure_eta_sweep(run):
    """Synthetic η(P) with multiplicative noise, sin² efficiency fit, and simulated SNR per power."""
    scenario = run.scenario
    conversion, sweep = scenario.conversion, scenario.sweep
    rng = stage_rng(scenario.seed, "sweep")
    powers_w = np.asarray(sweep.powers_mw) * 1e-3
    eta_true = np.array([internal_efficiency(p, conversion) for p in powers_w])
    eta_measured = eta_true * (1.0 + sweep.relative_noise * rng.standard_normal(len(powers_w)))
    sigmas = np.maximum(sweep.relative_noise * np.abs(eta_measured), 1e-9) if sweep.relative_noise > 0 else None
    report = fit_conversion_curve(np.column_stack([powers_w, eta_measured]), conversion.length_cm, sigmas)
    run.fits["conversion"] = report
    fit = conversion_model(conversion.length_cm)(powers_w, [report.params["eta_max"], report.params["eta_nor"]])
    run.plot(Curve("P_W", "eta_measured", powers_w, eta_measured, fit), "eta_sweep.csv")

    fibre_rate = expected_photon_rate(scenario.emitter, scenario.excitation)
    det = scenario.detector_a
    snrs = []
    for power_mw in sweep.powers_mw:
        signal_rate = fibre_rate * end_to_end_efficiency(power_mw * 1e-3, conversion) * det.efficiency
        signal = rng.poisson(signal_rate * sweep.acquisition_s)
        noise = rng.poisson(noise_rate(power_mw, conversion) * sweep.acquisition_s)
        snrs.append(signal / noise if noise > 0 else math.inf)
    run.plot(Curve("P_mW", "snr", np.asarray(sweep.powers_mw), np.asarray(snrs)), "snr_sweep.csv")
    finite = [s for s in snrs if math.isfinite(s)]
    run.derived.update(
        min_snr=min(finite) if finite else None,
        snr_by_power={f"{p:g}": (s if math.isfinite(s) else None) for p, s in zip(sweep.powers_mw, snrs)},
    )


def measure_power_sweep(run):
    """Detected rate vs excitation power from full emitter-to-detector runs."""
    scenario = run.scenario
    base = scenario.excitation
    n_pulses = scenario.sweep.pulses_per_point or scenario.n_pulses
    rates = []
    for i, power in enumerate(scenario.sweep.powers_uw):
        excitation = ExcitationConfig(base.mode, power, base.reference_power, base.rep_rate_mhz, n_pulses)
        seed = sub_seed(scenario.seed, i)
        photons = simulate_emission(scenario.emitter, excitation, seed, run.threads)
        photons = filter_stream(photons, scenario.bench.nir_filter_transmission, stage_rng(seed, "filter"))
        clicks = detect(photons["t"], scenario.detector_a, stage_rng(seed, "rates"), excitation.acquisition_ps)
        rates.append(count_rate(clicks, excitation.acquisition_ps))
    powers = np.asarray(scenario.sweep.powers_uw, dtype=np.float64)
    rates = np.asarray(rates)
    acquisition_s = n_pulses * base.period_ps * 1e-12
    sigmas = np.sqrt(np.maximum(rates * acquisition_s, 1.0)) / acquisition_s
    report = fit_power_curve(np.column_stack([powers, rates]), base.mode, sigmas)
    run.fits["power"] = report
    fit = MODELS[report.model](powers, list(report.params.values()))
    run.plot(Curve("P_uW", "rate_measured", powers, rates, fit), "power_sweep.csv")


# ── Entry ────────────────────────────────────────────────────────────────────


def run_scenario(scenario, out_dir, threads=None, svg=False, save_events=True):
    """Run every measurement listed by the scenario; returns the report dict.

    Writes event files, CSV plot data and <name>_report.json into out_dir.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    run = ScenarioRun(scenario, out_dir, threads, svg, save_events)
    wanted = set(scenario.measurements)
    logger.info(f"Running scenario {scenario.name}: {sorted(wanted)}, {scenario.n_pulses} pulses, seed {scenario.seed}")

    if wanted & {"lifetime", "hbt", "hom", "rates"}:
        emitted, stream = simulate_streams(scenario, threads)
        if save_events:
            target = run.path("photons.phtx")
            write_events(stream, target)
            run.outputs.append(str(target))
        if "lifetime" in wanted:
            run.guarded("lifetime", measure_lifetime, run, stream)
        if "hbt" in wanted:
            run.guarded("hbt", measure_hbt, run, stream)
        if "hom" in wanted:
            run.guarded("hom", measure_hom, run, stream)
        if "rates" in wanted:
            run.guarded("rates", measure_rates, run, emitted, stream)
    if "eta_sweep" in wanted:
        run.guarded("eta_sweep", measure_eta_sweep, run)
    if "power_sweep" in wanted:
        run.guarded("power_sweep", measure_power_sweep, run)

    if "g2_zero" in run.derived and "hom_visibility" in run.derived and run.derived["g2_zero"] < 1:
        run.derived["indistinguishability"] = indistinguishability(run.derived["hom_visibility"], run.derived["g2_zero"])

    report = build_report(scenario, run.fits, run.derived, run.errors, run.outputs)
    report_path = run.path("report.json")
    report["outputs"].append(str(report_path))
    write_report(report, report_path)
    return report
