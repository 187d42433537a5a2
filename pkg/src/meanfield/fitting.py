"""Convergence-order fits on log-log data."""
import numpy as np

from .errors import InsufficientDataError


def fit_order(h, err, log_power=0.0, tail=4):
    """Exponent p in ``err ~ C h^p |log h|^log_power`` by least squares.

    The fit uses the ``tail`` smallest values of ``h``. Returns ``(p, C)``.
    """
    h = np.asarray(h, dtype=float)
    err = np.abs(np.asarray(err, dtype=float))
    if len(h) < tail:
        raise InsufficientDataError(f"need at least {tail} points for an order fit, got {len(h)}")
    idx = np.argsort(h)[:tail]
    x = np.log(h[idx])
    y = np.log(err[idx]) - log_power * np.log(np.abs(np.log(h[idx])))
    p, c = np.polyfit(x, y, 1)
    return float(p), float(np.exp(c))


def extrapolate_limit(h, values, rate=1.0):
    """Limit as h -> 0 of values ~ L + c h^rate, from the two smallest h."""
    h = np.asarray(h, dtype=float)
    v = np.asarray(values, dtype=float)
    i = np.argsort(h)
    h1, h2 = h[i[0]], h[i[1]]
    v1, v2 = v[i[0]], v[i[1]]
    w1, w2 = h1**rate, h2**rate
    return float((v1 * w2 - v2 * w1) / (w2 - w1))
