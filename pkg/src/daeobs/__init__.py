"""daeobs: joint dynamic/algebraic state estimation for power networks.

Builds the stacked differential-algebraic model of a multi-machine grid,
synthesizes robust observer gains by semidefinite programming, simulates
plant and observer through faults and disturbances, and provides the
decoupled LAV + EKF/UKF estimation baseline for comparison.
"""

__version__ = "0.1.0"
