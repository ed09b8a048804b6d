"""Finite-difference oracle and small fixtures shared by the test modules."""
import numpy as np


def numeric_grad(f, arrays, h=1e-5):
    """Central differences of scalar ``f()`` with respect to each array, perturbed in place."""
    out = []
    for arr in arrays:
        g = np.zeros_like(arr)
        it = np.nditer(arr, flags=["multi_index"])
        for _ in it:
            i = it.multi_index
            old = arr[i]
            arr[i] = old + h
            up = f()
            arr[i] = old - h
            down = f()
            arr[i] = old
            g[i] = (up - down) / (2 * h)
        out.append(g)
    return out


def max_rel_error(analytic, numeric, floor=1e-7):
    worst = 0.0
    for a, n in zip(analytic, numeric):
        err = np.abs(a - n)
        scale = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
        # absolute floor: differences below 1e-7 count as agreement
        rel = np.where(err <= floor, 0.0, err / scale)
        worst = max(worst, float(rel.max()) if rel.size else 0.0)
    return worst
