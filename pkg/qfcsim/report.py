"""Report JSON, CSV plot data, quick-look SVG plots and the summary text table."""

import csv
import json
import logging
from dataclasses import dataclass

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from . import __version__  # noqa: E402
from .analysis import CorrelationHistogram  # noqa: E402
from .errors import EventFormatError  # noqa: E402

logger = logging.getLogger(__name__)

HISTOGRAM_META = ("bin_width_ps", "tau_min_ps", "tau_max_ps", "singles_a", "singles_b", "acquisition_ps")

TABLE_ROWS = (
    ("T1 (ns)", "fits", "lifetime", "t1_ns", "{:.4f}"),
    ("fss (GHz)", "fits", "lifetime", "fss_ghz", "{:.3f}"),
    ("g2(0)", "derived", None, "g2_zero", "{:.3f}"),
    ("V_HOM", "derived", None, "hom_visibility", "{:.2f}"),
    ("M_s", "derived", None, "indistinguishability", "{:.2f}"),
    ("rate (kHz)", "derived", None, "count_rate_hz", "{:.0f}"),
    ("end-to-end eff.", "derived", None, "end_to_end_efficiency", "{:.3f}"),
    ("SNR", "derived", None, "snr", "{:.0f}"),
)


@dataclass
class Curve:
    x_name: str
    y_name: str
    x: np.ndarray
    y: np.ndarray
    fit: np.ndarray = None


def build_report(scenario, fits, derived, errors=None, outputs=None):
    """Assemble the report dict written next to the event files."""
    errors = list(errors or [])
    unreliable = [name for name, fit in fits.items() if not fit.converged]
    return {
        "scenario": scenario.name,
        "digest": scenario.digest,
        "status": "partial" if errors or unreliable else "ok",
        "fits": {name: fit.to_dict() for name, fit in fits.items()},
        "derived": derived,
        "errors": errors,
        "unconverged": unreliable,
        "outputs": sorted(outputs or []),
        "provenance": {
            "seed": scenario.seed,
            "version": __version__,
            "n_pulses": scenario.n_pulses,
            "measurements": scenario.measurements,
        },
    }


def write_report(report, path):
    with open(path, "w", encoding="utf-8") as f:
        json.dump(report, f, indent=2, sort_keys=True, default=float)
        f.write("\n")
    logger.info(f"Wrote report {path} (status {report['status']})")


def read_report(path):
    with open(path, encoding="utf-8") as f:
        return json.load(f)


# ── CSV ──────────────────────────────────────────────────────────────────────


def write_histogram_csv(hist, path, extra=None):
    """Histogram as (tau_ps, counts, *extra) rows with binning metadata in # lines."""
    meta = {
        "bin_width_ps": hist.bin_width_ps,
        "tau_min_ps": hist.tau_min_ps,
        "tau_max_ps": hist.tau_max_ps,
        "singles_a": hist.singles[0],
        "singles_b": hist.singles[1],
        "acquisition_ps": hist.acquisition_ps,
    }
    extra = extra or {}
    with open(path, "w", newline="", encoding="utf-8") as f:
        for key in HISTOGRAM_META:
            f.write(f"# {key}={meta[key]!r}\n")
        writer = csv.writer(f)
        writer.writerow(["tau_ps", "counts", *extra])
        columns = [hist.taus, hist.counts, *extra.values()]
        for row in zip(*columns):
            writer.writerow([f"{row[0]:.3f}", int(row[1]), *(f"{v:.6g}" for v in row[2:])])


def read_histogram_csv(path):
    meta = {}
    counts = []
    with open(path, newline="", encoding="utf-8") as f:
        lines = [line for line in f]
    body = []
    for line in lines:
        if line.startswith("#"):
            key, _, value = line[1:].strip().partition("=")
            meta[key] = value
        else:
            body.append(line)
    missing = [k for k in HISTOGRAM_META if k not in meta]
    if missing:
        raise EventFormatError(f"histogram CSV lacks metadata {missing}", 0)
    for row in csv.DictReader(body):
        counts.append(int(row["counts"]))
    return CorrelationHistogram(
        float(meta["bin_width_ps"]),
        float(meta["tau_min_ps"]),
        float(meta["tau_max_ps"]),
        np.array(counts, dtype=np.int64),
        (int(meta["singles_a"]), int(meta["singles_b"])),
        float(meta["acquisition_ps"]),
    )


def write_curve_csv(curve, path):
    names = [curve.x_name, curve.y_name] + ([curve.y_name.replace("_measured", "") + "_fit"] if curve.fit is not None else [])
    columns = [curve.x, curve.y] + ([curve.fit] if curve.fit is not None else [])
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(names)
        for row in zip(*columns):
            writer.writerow([f"{v:.8g}" for v in row])


def read_curve_csv(path):
    with open(path, newline="", encoding="utf-8") as f:
        rows = list(csv.reader(f))
    header, data = rows[0], np.array(rows[1:], dtype=np.float64).reshape(-1, len(rows[0]))
    return header, data


# ── Plot data ────────────────────────────────────────────────────────────────


def _svg(x, y, fit, xlabel, ylabel, path, points):
    fig, ax = plt.subplots(figsize=(6, 4))
    if points:
        ax.plot(x, y, "o", ms=3, label="data")
    else:
        ax.step(x, y, where="mid", lw=0.8, label="data")
    if fit is not None:
        ax.plot(x, fit, "-", lw=1.2, label="fit")
        ax.legend()
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)


def emit_plot_data(data, path, fit=None, svg=False, extra=None):
    """Write a histogram or Curve as CSV (plus fitted-model column) and optionally an SVG.

    Returns the list of files written.
    """
    path = str(path)
    written = [path]
    if isinstance(data, CorrelationHistogram):
        columns = dict(extra or {})
        if fit is not None:
            columns["fit"] = fit
        write_histogram_csv(data, path, columns)
        if svg:
            _svg(data.taus, data.counts, fit, "tau (ps)", "counts", path.rsplit(".", 1)[0] + ".svg", False)
    elif isinstance(data, Curve):
        write_curve_csv(data, path)
        if svg:
            _svg(data.x, data.y, data.fit, data.x_name, data.y_name, path.rsplit(".", 1)[0] + ".svg", True)
    else:
        raise TypeError(f"cannot emit plot data for {type(data).__name__}")
    if svg:
        written.append(path.rsplit(".", 1)[0] + ".svg")
    logger.debug(f"Wrote plot data {written}")
    return written


# ── Text table ───────────────────────────────────────────────────────────────


def _cell(report, source, fit_name, key, fmt):
    if source == "fits":
        fit = report.get("fits", {}).get(fit_name)
        if not fit:
            return "-"
        value, sigma = fit["params"].get(key), fit["sigmas"].get(key)
        return fmt.format(value) if sigma is None else f"{fmt.format(value)}±{fmt.format(sigma)}"
    value = report.get("derived", {}).get(key)
    if value is None:
        return "-"
    if key == "count_rate_hz":
        value = value / 1e3
    return fmt.format(value)


def render_table(reports):
    """Summary table of the headline figures, one column per report."""
    names = [r["scenario"] for r in reports]
    width = max([18] + [len(n) + 2 for n in names])
    lines = ["".ljust(18) + "".join(n.rjust(width) for n in names)]
    lines.append("-" * len(lines[0]))
    for label, source, fit_name, key, fmt in TABLE_ROWS:
        cells = [_cell(r, source, fit_name, key, fmt) for r in reports]
        if all(c == "-" for c in cells):
            continue
        lines.append(label.ljust(18) + "".join(c.rjust(width) for c in cells))
    status = ["ok" if r["status"] == "ok" else r["status"].upper() for r in reports]
    lines.append("status".ljust(18) + "".join(s.rjust(width) for s in status))
    return "\n".join(lines)
