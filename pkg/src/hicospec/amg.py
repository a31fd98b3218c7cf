"""Deterministic construction of pyamg smoothed-aggregation hierarchies.

pyamg estimates spectral radii from random start vectors drawn from the
legacy global numpy generator; the setup is wrapped so that results do not
depend on global random state, and that state is left untouched.
"""

from __future__ import annotations

import numpy as np
import pyamg

AMG_SEED = 20240101


def smoothed_aggregation(A, **kw):
    state = np.random.get_state()
    np.random.seed(AMG_SEED)
    try:
        return pyamg.smoothed_aggregation_solver(A, **kw)
    finally:
        np.random.set_state(state)
