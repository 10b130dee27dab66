"""Provenance-graph threat detection with a distilled label-propagation student."""

__version__ = "0.1.0"
