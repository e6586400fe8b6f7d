"""Depth-dependent choice of the fixed residual coefficient."""

import numpy as np

# (depth, tau) settings the unit-scaled recipe reports; linear in between
TAU_ANCHORS = ((4, 0.4), (24, 0.3), (32, 0.3), (40, 0.2))


def select_tau(depth: int) -> float:
    if depth < 1:
        raise ValueError(f"depth must be >= 1, got {depth}")
    xs, ys = zip(*TAU_ANCHORS)
    return float(np.interp(depth, xs, ys))
