"""Factor-graph optimization over continuous-time spline trajectories.

Gaussian belief propagation with manifold-valued variables, a centralized
Gauss-Newton/Levenberg-Marquardt baseline, a measurement simulator and an
experiment CLI.
"""

__version__ = "0.1.0"
