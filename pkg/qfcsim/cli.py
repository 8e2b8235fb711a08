import argparse
import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

from . import __version__
from .analysis import (
    correlate,
    fit_conversion_curve,
    fit_lifetime,
    fit_power_curve,
    g2_zero,
    hom_visibility,
    indistinguishability,
    start_stop_histogram,
)
from .config import CORRELATION_BIN_PS, LIFETIME_BIN_PS, LIFETIME_FIT_START_PS, N_SIDE_PEAKS
from .errors import EventFormatError
from .events import KIND_CLICK, read_events, split_channels
from .guards import EXIT_ANALYSIS, EXIT_OK, exit_on_error
from .pipeline import run_scenario
from .report import emit_plot_data, read_curve_csv, read_histogram_csv, read_report, render_table
from .scenario import bundled_scenarios, load_scenario

logger = logging.getLogger(__name__)

DEFAULT_PERIOD_PS = 1e6 / 80.3

# common flags that only some commands act on
RUN_FLAGS = ("seed", "pulses", "threads")


@dataclass
class Command:
    name: str
    fn: object
    help: str
    arguments: list = field(default_factory=list)
    uses: tuple = ()


class CommandRegistry:
    """Subcommand table; commands are registered with the `command` decorator."""

    def __init__(self):
        self.commands = {}

    def command(self, name, help="", arguments=(), uses=()):
        def decorator(fn):
            self.commands[name] = Command(name, fn, help, list(arguments), tuple(uses))
            return fn
        return decorator

    def build_parser(self):
        common = argparse.ArgumentParser(add_help=False)
        common.add_argument("--seed", type=int, help="override scenario.seed")
        common.add_argument("--pulses", type=int, help="override scenario.n_pulses")
        common.add_argument("--out-dir", default="out", help="directory for outputs (default: out)")
        common.add_argument("--threads", type=int, default=None, help="worker threads for pulse blocks")
        common.add_argument("--format", choices=("csv", "json"), default="json", help="result file format")
        common.add_argument("--log-level", default=None, help="DEBUG, INFO, WARNING, ERROR")
        common.add_argument("--svg", action="store_true", help="also write SVG quick-look plots")

        parser = argparse.ArgumentParser(prog="qfcsim", description="Quantum-dot telecom single-photon source simulator")
        parser.add_argument("--version", action="version", version=f"qfcsim {__version__}")
        sub = parser.add_subparsers(dest="command", required=True)
        for command in self.commands.values():
            sp = sub.add_parser(command.name, help=command.help, parents=[common])
            for flags, kwargs in command.arguments:
                sp.add_argument(*flags, **kwargs)
        return parser

    def run(self, argv=None):
        args = self.build_parser().parse_args(argv)
        if args.log_level:
            logging.getLogger().setLevel(getattr(logging, args.log_level.upper(), logging.INFO))
        command = self.commands[args.command]
        for flag in RUN_FLAGS:
            if flag not in command.uses and getattr(args, flag) is not None:
                logger.warning(f"--{flag} has no effect on {command.name}")
        return command.fn(args)


# ── Output helpers ───────────────────────────────────────────────────────────


def _flatten(payload, prefix=""):
    rows = []
    for key, value in payload.items():
        name = f"{prefix}{key}"
        if isinstance(value, dict):
            rows.extend(_flatten(value, f"{name}."))
        else:
            rows.append((name, value))
    return rows


def emit_result(args, name, payload):
    """Write payload to <out-dir>/<name>.<format> and echo it on stdout."""
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    target = out_dir / f"{name}.{args.format}"
    if args.format == "json":
        text = json.dumps(payload, indent=2, sort_keys=True)
        target.write_text(text + "\n", encoding="utf-8")
    else:
        with open(target, "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f)
            writer.writerow(["key", "value"])
            writer.writerows(_flatten(payload))
        text = target.read_text(encoding="utf-8")
    print(text)
    logger.info(f"Wrote {target}")
    return target


def _fit_exit(report):
    return EXIT_OK if report.converged else EXIT_ANALYSIS


def _load_clicks(path):
    header, records = read_events(path)
    if header.kind != KIND_CLICK:
        raise EventFormatError("expected a click event file", 6)
    return split_channels(records, header.channels)


def _load_points(path):
    _, data = read_curve_csv(path)
    return data[:, :2]


_PERIOD = (("--period-ps",), {"type": float, "default": DEFAULT_PERIOD_PS, "help": "repetition period in ps"})
_WINDOW = (("--window-ps",), {"type": float, "default": None, "help": "peak window (default: period/2)"})
_SIDES = (("--n-side-peaks",), {"type": int, "default": N_SIDE_PEAKS, "help": "outer side peaks per side"})


def register_commands(cli):
    """Register all qfcsim subcommands with the registry."""

    # ── Pipeline ─────────────────────────────────────────────────────────

    @cli.command("simulate", help="run a scenario end to end", arguments=[
        (("config",), {"help": "scenario file or bundled name (" + ", ".join(bundled_scenarios()) + ")"}),
        (("--no-events",), {"action": "store_true", "help": "skip writing binary event files"}),
    ], uses=RUN_FLAGS)
    @exit_on_error("simulate")
    def handle_simulate(args):
        overrides = {}
        if args.seed is not None:
            overrides["scenario.seed"] = args.seed
        if args.pulses is not None:
            overrides["scenario.n_pulses"] = args.pulses
        scenario = load_scenario(args.config, overrides)
        report = run_scenario(scenario, args.out_dir, args.threads, args.svg, not args.no_events)
        print(render_table([report]))
        if report["status"] != "ok":
            logger.warning(f"Scenario {scenario.name} finished with status {report['status']}: {report['errors']}")
            return EXIT_ANALYSIS
        return EXIT_OK

    @cli.command("report", help="render report JSON files as a summary table", arguments=[
        (("reports",), {"nargs": "+", "help": "report JSON files"}),
    ])
    @exit_on_error("report")
    def handle_report(args):
        reports = [read_report(p) for p in args.reports]
        print(render_table(reports))

    # ── Analysis on stored data ──────────────────────────────────────────

    @cli.command("correlate", help="correlation histogram of channels 0 and 1 of a click file", arguments=[
        (("clicks",), {"help": "click event file"}),
        (("--bin-ps",), {"type": float, "default": CORRELATION_BIN_PS}),
        _PERIOD,
        (("--range-ps",), {"type": float, "default": None, "help": "half range (default: 6.5 periods)"}),
    ], uses=("threads",))
    @exit_on_error("correlate")
    def handle_correlate(args):
        channels = _load_clicks(args.clicks)
        if len(channels) < 2:
            raise EventFormatError("correlation needs a two-channel click file", 11)
        tau_range = (-args.range_ps, args.range_ps) if args.range_ps else None
        hist = correlate(channels[0], channels[1], args.bin_ps, tau_range, args.period_ps, threads=args.threads)
        out_dir = Path(args.out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        written = emit_plot_data(hist, out_dir / f"{Path(args.clicks).stem}_correlation.csv", svg=args.svg)
        print("\n".join(written))

    @cli.command("fit-g2", help="g2(0) from a correlation histogram CSV", arguments=[
        (("histogram",), {"help": "histogram CSV"}), _PERIOD, _WINDOW, _SIDES,
    ])
    @exit_on_error("fit-g2")
    def handle_fit_g2(args):
        hist = read_histogram_csv(args.histogram)
        g2, sigma = g2_zero(hist, args.period_ps, args.window_ps, args.n_side_peaks)
        emit_result(args, "g2", {"g2_zero": g2, "sigma": sigma})

    @cli.command("fit-lifetime", help="beat-modulated lifetime fit from clicks or a start-stop histogram", arguments=[
        (("data",), {"help": "click event file or start-stop histogram CSV"}),
        _PERIOD,
        (("--bin-ps",), {"type": float, "default": LIFETIME_BIN_PS}),
        (("--fit-start-ps",), {"type": float, "default": LIFETIME_FIT_START_PS}),
    ])
    @exit_on_error("fit-lifetime")
    def handle_fit_lifetime(args):
        if args.data.endswith(".csv"):
            hist = read_histogram_csv(args.data)
        else:
            hist = start_stop_histogram(_load_clicks(args.data)[0], args.period_ps, args.bin_ps)
        report = fit_lifetime(hist, args.fit_start_ps)
        emit_result(args, "lifetime_fit", report.to_dict())
        return _fit_exit(report)

    @cli.command("fit-hom", help="HOM visibility from parallel and cross histograms", arguments=[
        (("parallel",), {"help": "parallel-polarization histogram CSV"}),
        (("cross",), {"help": "cross-polarization histogram CSV"}),
        _PERIOD, _WINDOW, _SIDES,
        (("--g2",), {"type": float, "default": None, "help": "g2(0) for the indistinguishability"}),
    ])
    @exit_on_error("fit-hom")
    def handle_fit_hom(args):
        visibility, sigma = hom_visibility(read_histogram_csv(args.parallel), read_histogram_csv(args.cross),
                                           args.period_ps, args.window_ps, args.n_side_peaks)
        payload = {"hom_visibility": visibility, "sigma": sigma}
        if args.g2 is not None:
            payload["indistinguishability"] = indistinguishability(visibility, args.g2)
        emit_result(args, "hom", payload)

    @cli.command("fit-eta", help="fit conversion efficiency vs seed power (CSV: P_W, eta)", arguments=[
        (("points",), {"help": "CSV with a header row; first two columns are P in W and efficiency"}),
        (("--length-cm",), {"type": float, "default": 4.8}),
    ])
    @exit_on_error("fit-eta")
    def handle_fit_eta(args):
        report = fit_conversion_curve(_load_points(args.points), args.length_cm)
        emit_result(args, "eta_fit", report.to_dict())
        return _fit_exit(report)

    @cli.command("fit-power", help="fit detected rate vs excitation power", arguments=[
        (("points",), {"help": "CSV with a header row; first two columns are power and rate"}),
        (("--model",), {"choices": ("rabi", "saturation"), "default": "rabi"}),
    ])
    @exit_on_error("fit-power")
    def handle_fit_power(args):
        report = fit_power_curve(_load_points(args.points), args.model)
        emit_result(args, "power_fit", report.to_dict())
        return _fit_exit(report)

    return cli


def build_cli():
    return register_commands(CommandRegistry())
