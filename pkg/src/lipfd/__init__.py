"""lipfd: robust fault detection for Lipschitz nonlinear systems.

Library layout:
  model       plants, residual structures, Lipschitz bound estimation
  modelio     JSON serialization of plants and residual structures
  synthesis   H-infinity observer design via LMI / semidefinite programming
  sim         fixed-step plant/observer co-simulation
  residuals   ARR / EARR / IEARR generation, windowed evaluation, detection
  manipulator single-link manipulator benchmark and scenario driver
  plots       figure rendering for scenario bundles
  cli         batch command line (`lipfd`)
"""

__version__ = "0.1.0"
