"""Islanding detection from PMU angles that is immune to fixed instrumentation offsets."""

__version__ = "0.1.0"
