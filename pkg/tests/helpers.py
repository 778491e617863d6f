"""Random problem generators shared by the test modules."""
import numpy as np

from geobias.variogram import FAMILIES, VariogramModel


def random_variogram(rng, nugget=None):
    family = FAMILIES[rng.integers(3)]
    if nugget is None:
        nugget = rng.uniform(0.0, 0.5)
    if family == "gaussian":
        nugget = max(nugget, 0.05)  # keeps the gaussian system well conditioned
    return VariogramModel(family, float(nugget), float(rng.uniform(0.5, 2.0)),
                          float(rng.uniform(5.0, 40.0)))


def random_instance(rng, n_max=20, p_max=4, nugget=None):
    """Locations, values, drift (intercept first) and a variogram."""
    p = int(rng.integers(1, p_max + 1))
    n = int(rng.integers(max(p + 2, 4), n_max + 1))
    locs = rng.uniform(0.0, 50.0, size=(n, 2))
    cols = [np.ones(n), locs[:, 0] / 50.0, locs[:, 1] / 50.0, rng.uniform(0, 1, n)]
    F = np.column_stack(cols[:p])
    z = F @ rng.normal(size=p) + rng.normal(size=n)
    return locs, z, F, random_variogram(rng, nugget)


def target_drift(F_template_p, t, rng):
    """Drift row for target ``t`` matching the column recipe of :func:`random_instance`."""
    cols = [1.0, t[0] / 50.0, t[1] / 50.0, rng.uniform(0, 1)]
    return np.array(cols[:F_template_p])
