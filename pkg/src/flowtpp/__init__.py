"""Synthetic network header traces from a multi-mark log-normal mixture point process."""

__version__ = "0.1.0"
