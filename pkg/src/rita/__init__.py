"""Reactive traffic-flow generation toolkit."""

__version__ = "0.1.0"
