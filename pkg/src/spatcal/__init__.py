"""spatcal: spatially adaptive calibration of dense sensor networks.

Calibrates a dense, noisy sensor network against a sparse, accurate
reference network with a spatially varying-coefficient model, and produces
calibrated prediction surfaces with uncertainty.
"""

__version__ = "0.1.0"
