"""Pure-numpy reference implementation of the local-SGD kernels.

Each kernel runs K gradient steps from ``w0`` with pre-drawn additive noise
and returns (sum of sampled gradients, final local iterate). The gradient
sum is accumulated directly rather than recovered from the displacement, so
small steps never suffer cancellation.
"""

from __future__ import annotations

import numpy as np


def quad_local_sgd(hessian, center, w0, eta, n_steps, noise):
    w = w0.copy()
    total = np.zeros_like(w0)
    for k in range(n_steps):
        g = hessian @ (w - center) + noise[k]
        total += g
        w -= eta * g
    return total, w


def trig_local_sgd(center, curvature, amplitude, w0, eta, n_steps, noise):
    w = w0.copy()
    total = np.zeros_like(w0)
    for k in range(n_steps):
        g = curvature * (w - center) - amplitude * np.sin(w) + noise[k]
        total += g
        w -= eta * g
    return total, w
