"""Central finite-difference gradient checking."""

import numpy as np


def relative_error(analytic, numeric, floor=1e-12):
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    return np.abs(analytic - numeric) / np.maximum(np.abs(analytic) + np.abs(numeric), floor)


def numeric_grad(fn, array, index, step=1e-5):
    """(f(x + h e_i) - f(x - h e_i)) / 2h, perturbing ``array`` in place and restoring it."""
    old = array[index]
    array[index] = old + step
    plus = fn()
    array[index] = old - step
    minus = fn()
    array[index] = old
    return (plus - minus) / (2.0 * step)


def check_gradients(fn, arrays, grads, n_coords=100, rng=None, step=1e-5):
    """Compare analytic ``grads`` against central differences of scalar ``fn()``.

    ``arrays`` and ``grads`` are dicts keyed alike; ``fn`` must read the
    arrays by reference. ``n_coords`` coordinates are drawn uniformly over
    the concatenation of all arrays. Returns the per-coordinate relative
    errors as a 1-D array along with the (name, index) list.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    names = [k for k in arrays if arrays[k].size]
    sizes = np.array([arrays[k].size for k in names])
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    total = int(offsets[-1])
    picks = rng.choice(total, size=min(n_coords, total), replace=False)
    errs, where = [], []
    for flat in picks:
        i = int(np.searchsorted(offsets, flat, side="right") - 1)
        name = names[i]
        idx = np.unravel_index(int(flat - offsets[i]), arrays[name].shape)
        num = numeric_grad(fn, arrays[name], idx, step)
        errs.append(float(relative_error(grads[name][idx], num)))
        where.append((name, idx))
    return np.array(errs), where
