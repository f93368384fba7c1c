"""Berry-Esseen bound estimation for functionals of independent inputs.

Monte Carlo and exact estimators for the ingredients of multivariate normal
approximation bounds in the convex distance, with two applications: the
intrinsic volumes of a binomial Boolean model and nearest-neighbour
statistics.
"""

__version__ = "0.1.0"
