"""Numba kernels for the sequential orbit loops.

Only single-orbit iteration lives here: everything else in the package is
vectorized across ensembles with numpy.  The modulation is evaluated inline in
the universal closed form coef * log(1/x)**(-expo) shared by all built-in
families.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def fill_orbit(x0, gamma, coef, expo, out):
    """Iterate the map from x0, writing iterates into out.

    Returns the number of steps completed; a value short of out.size means
    the orbit stalled (hit an exact fixed point or a precision stall where
    f(x) <= x on the left branch) and the caller should restart.
    """
    x = x0
    n = out.size
    for k in range(n):
        if x > 0.5:
            fx = 2.0 * x - 1.0
            if fx == x:          # x == 1.0 exactly
                return k
        else:
            if x <= 0.0:
                return k
            L = -np.log(x)
            fx = x * (1.0 + x**gamma * coef * L ** (-expo))
            if fx <= x:          # precision stall near the neutral point
                return k
        x = fx
        out[k] = x
    return n
