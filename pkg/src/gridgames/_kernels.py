"""Numba-compiled value-iteration sweeps. Import lazily; numba is optional at runtime."""

from __future__ import annotations

import numpy as np

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        def wrap(fn):
            return fn

        return wrap


@njit(cache=True)
def gauss_seidel_sweep(choice_start, trans_start, target, prob, minimizing, frozen, values):
    """One in-place Gauss-Seidel sweep in state order; returns the max absolute update."""
    residual = 0.0
    n = choice_start.shape[0] - 1
    for s in range(n):
        if frozen[s]:
            continue
        best = 2.0 if minimizing[s] else -1.0
        for c in range(choice_start[s], choice_start[s + 1]):
            acc = 0.0
            for k in range(trans_start[c], trans_start[c + 1]):
                acc += prob[k] * values[target[k]]
            if minimizing[s]:
                if acc < best:
                    best = acc
            else:
                if acc > best:
                    best = acc
        diff = best - values[s]
        if diff < 0.0:
            diff = -diff
        if diff > residual:
            residual = diff
        values[s] = best
    return residual


def gauss_seidel_sweep_py(choice_start, trans_start, target, prob, minimizing, frozen, values):
    """Pure-Python mirror of gauss_seidel_sweep (identical operation order)."""
    residual = 0.0
    n = choice_start.shape[0] - 1
    for s in range(n):
        if frozen[s]:
            continue
        best = 2.0 if minimizing[s] else -1.0
        for c in range(choice_start[s], choice_start[s + 1]):
            acc = 0.0
            for k in range(trans_start[c], trans_start[c + 1]):
                acc += prob[k] * values[target[k]]
            if minimizing[s]:
                if acc < best:
                    best = acc
            else:
                if acc > best:
                    best = acc
        diff = best - values[s]
        if diff < 0.0:
            diff = -diff
        if diff > residual:
            residual = diff
        values[s] = best
    return residual
