"""Desk-scale dynamic detector: cascaded toy detectors, a difficulty router
and quantile-threshold variable-speed inference."""

__version__ = "0.1.0"
