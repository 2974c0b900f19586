"""Continuous-time tug-of-war games and normalized p(x,t)-Laplace terminal value problems."""

__version__ = "0.1.0"
