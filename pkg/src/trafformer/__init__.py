"""TrafFormer long-horizon traffic speed forecasting on a from-scratch autodiff engine."""

__version__ = "0.1.0"
