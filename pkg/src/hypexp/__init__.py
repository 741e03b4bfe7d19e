"""Numerical laboratory for kicked time-1 maps of Anosov-like flows.

The package builds two concrete partially hyperbolic systems (a
cat-map suspension and a constant-curvature geodesic model), applies a
compactly supported shear that tilts the center direction into the
unstable one, and measures the resulting central Lyapunov exponent
together with the cone, slope and u-Gibbs machinery that explains it.
"""

__version__ = "0.3.0"
