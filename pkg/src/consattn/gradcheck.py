"""Central finite-difference gradient estimates, the independent oracle
against which tape gradients are verified."""

import numpy as np


def finite_diff_grad(f, store, h=1e-6):
    """Estimate d f / d theta for every parameter coordinate in ``store``.

    ``f`` maps the ParamStore to a float and must be deterministic.  Each
    coordinate is perturbed in place by +/- h and restored; the central
    difference (f(x+h) - f(x-h)) / 2h is returned per parameter name.
    """
    if h <= 0:
        raise ValueError(f"step must be positive, got {h}")
    grads = {}
    for name, t in store.items():
        flat = t.data.reshape(-1)
        est = np.zeros(flat.shape[0])
        for i in range(flat.shape[0]):
            orig = flat[i]
            flat[i] = orig + h
            fp = f(store)
            flat[i] = orig - h
            fm = f(store)
            flat[i] = orig
            est[i] = (fp - fm) / (2.0 * h)
        grads[name] = est.reshape(t.data.shape)
    return grads


def max_rel_err(analytic, numeric, floor=1e-3):
    """Worst-case |a - n| / max(|a|, |n|, floor) over two same-shape arrays.

    The floor keeps coordinates whose true gradient is ~0 from dividing
    finite-difference noise by itself.
    """
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    if a.shape != n.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {n.shape}")
    if a.size == 0:
        return 0.0
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom))
