"""Central finite-difference oracle used to validate the analytic gradients."""
import numpy as np


def numeric_grad(f, x, step=1e-3):
    """Central differences of scalar ``f`` at every entry of float64 array ``x``."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + step
        fp = f(x)
        flat[i] = old - step
        fm = f(x)
        flat[i] = old
        gflat[i] = (fp - fm) / (2 * step)
    return g


def rel_error(analytic, numeric, floor=1e-8):
    """Max relative error, normalised by the larger gradient norm."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    scale = max(np.abs(analytic).max(initial=0.0), np.abs(numeric).max(initial=0.0), floor)
    return float(np.abs(analytic - numeric).max(initial=0.0) / scale)
