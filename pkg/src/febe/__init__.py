"""2D FE-BE coupling library for nonlinear transmission and friction-contact problems."""

__version__ = "0.1.0"
