"""Activations and fully connected chains with hand-written backward passes.

A layer is a ``(W, b)`` pair with ``W`` shaped ``(out, in)``; inputs are
batched row vectors, so a layer computes ``x @ W.T + b``.
"""

import numpy as np


def sigmoid(x):
    """Logistic function, stable for large ``|x|``."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    if out.ndim == 0:
        return float(out)
    return out


def _relu(z):
    return np.maximum(z, 0.0)


def _drelu(z, a):
    return (z > 0).astype(z.dtype)


def _swish(z):
    return z * sigmoid(z)


def _dswish(z, a):
    s = sigmoid(z)
    return s * (1.0 + z * (1.0 - s))


def _tanh(z):
    return np.tanh(z)


def _dtanh(z, a):
    return 1.0 - a * a


def _dsigmoid(z, a):
    return a * (1.0 - a)


ACTIVATIONS = {
    "relu": (_relu, _drelu),
    "swish": (_swish, _dswish),
    "tanh": (_tanh, _dtanh),
    "sigmoid": (sigmoid, _dsigmoid),
}


def he_init(rng, fan_out, fan_in, dtype=np.float32):
    w = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_out, fan_in)).astype(dtype)
    return w, np.zeros(fan_out, dtype=dtype)


def chain_forward(x, layers, activation, activate_last=True):
    """Run ``x`` through ``layers``; returns the output and a cache for backward."""
    act = ACTIVATIONS[activation][0]
    cache = []
    h = x
    last = len(layers) - 1
    for t, (W, b) in enumerate(layers):
        z = h @ W.T.astype(np.float64) + b
        a = act(z) if (activate_last or t < last) else z
        cache.append((h, z, a))
        h = a
    return h, cache


def chain_backward(dout, layers, cache, activation, activate_last=True):
    """Backward through a chain. Returns ``(dx, [(dW, db), ...])``."""
    dact = ACTIVATIONS[activation][1]
    grads = [None] * len(layers)
    g = dout
    last = len(layers) - 1
    for t in range(last, -1, -1):
        W, _ = layers[t]
        h, z, a = cache[t]
        dz = g * dact(z, a) if (activate_last or t < last) else g
        grads[t] = (dz.T @ h, dz.sum(axis=0))
        g = dz @ W.astype(np.float64)
    return g, grads
