"""Shared numerical oracles for the test suite."""
import numpy as np


def fd_orders(energy, grad_inner, u, directions, hs=(1e-3, 1e-4)):
    """Observed convergence order of central differences against <grad, phi>.

    energy(v) -> float on arrays; grad_inner(phi) -> <grad E(u), phi>.
    Returns a list with one order per direction.
    """
    out = []
    for phi in directions:
        exact = grad_inner(phi)
        errs = []
        for h in hs:
            fd = (energy(u + h * phi) - energy(u - h * phi)) / (2 * h)
            errs.append(abs(fd - exact))
        out.append(float(np.log(errs[0] / errs[1]) / np.log(hs[0] / hs[1])))
    return out
