"""Shared random-instance builders for the test suite."""

import numpy as np

from povmsim.operators import DensityOperator, Povm, SubPovm, matrix_sqrt_and_pinv_sqrt


# ---------------------------------------------------------------------------
# random instances
# ---------------------------------------------------------------------------

def random_density(rng, dims):
    """Full-rank-ish random density operator with the given subsystem dims."""
    d = int(np.prod(dims))
    a = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    m = a @ a.conj().T
    return DensityOperator(m / np.trace(m).real, dims)


def random_povm(rng, dim, k):
    """Random complete POVM with k outcomes labeled 0..k-1.

    Draws k random PSD parts and conjugates by the inverse square root of
    their sum, so the family sums to the support projector (identity almost
    surely for random draws).
    """
    parts = []
    for _ in range(k):
        a = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
        parts.append(a @ a.conj().T)
    total = sum(parts)
    _, pinv = matrix_sqrt_and_pinv_sqrt(total)
    ops = [pinv @ p @ pinv for p in parts]
    return Povm(tuple(range(k)), tuple(ops), tol=1e-7)


def random_sub_povm(rng, povm, floor=0.5):
    """Shrink each operator of a complete POVM by an independent factor."""
    scales = rng.uniform(floor, 1.0, size=len(povm.outcomes))
    ops = tuple(s * op for s, op in zip(scales, povm.operators))
    return SubPovm(povm.outcomes, ops, tol=povm.tol)
