"""Simulator and analysis toolkit for a quantum-dot single-photon source with
frequency conversion to the telecom C-band."""

__version__ = "0.1.0"
