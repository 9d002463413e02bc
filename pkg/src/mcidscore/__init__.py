"""Smoothed decorrelated score tests for high-dimensional linear threshold models."""

__version__ = "0.1.0"
