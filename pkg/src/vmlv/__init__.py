"""Volatility-modulated Levy-driven Volterra processes for energy spot prices.

Simulation, second-order structure, forward and option pricing under
Esscher/Girsanov measure changes, and ACF-based calibration.
"""

__version__ = "0.1.0"
