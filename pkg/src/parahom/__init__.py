"""Locally periodic parabolic homogenization toolkit."""

__version__ = "0.1.0"
