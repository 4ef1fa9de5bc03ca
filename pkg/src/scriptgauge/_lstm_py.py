"""Pure-numpy LSTM recurrence; reference and fallback for the compiled kernel.

Gate layout along the last axis is [input, forget, cell, output], each of
width H.  Inputs are already projected: ``xproj[t] = x_t @ W_in + b``.
"""

import numpy as np


def _sigmoid(x):
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def lstm_forward(xproj, w_rec, gates, cells, hidden):
    """Fill ``gates`` (post-activation), ``cells`` and ``hidden`` in place."""
    T = xproj.shape[0]
    H = w_rec.shape[0]
    h_prev = np.zeros(H, dtype=xproj.dtype)
    c_prev = np.zeros(H, dtype=xproj.dtype)
    for t in range(T):
        pre = xproj[t] + h_prev @ w_rec
        i = _sigmoid(pre[:H])
        f = _sigmoid(pre[H:2 * H])
        g = np.tanh(pre[2 * H:3 * H])
        o = _sigmoid(pre[3 * H:])
        c_prev = f * c_prev + i * g
        h_prev = o * np.tanh(c_prev)
        gates[t, :H], gates[t, H:2 * H], gates[t, 2 * H:3 * H], gates[t, 3 * H:] = i, f, g, o
        cells[t] = c_prev
        hidden[t] = h_prev


def lstm_backward(w_rec, gates, cells, dhidden, dpre):
    """Back-propagate ``dhidden`` (dL/dh_t from above) into gate pre-activation grads ``dpre``."""
    T, H = cells.shape
    dh_next = np.zeros(H, dtype=cells.dtype)
    dc_next = np.zeros(H, dtype=cells.dtype)
    for t in range(T - 1, -1, -1):
        i, f = gates[t, :H], gates[t, H:2 * H]
        g, o = gates[t, 2 * H:3 * H], gates[t, 3 * H:]
        c_prev = cells[t - 1] if t > 0 else np.zeros(H, dtype=cells.dtype)
        tc = np.tanh(cells[t])
        dh = dhidden[t] + dh_next
        dc = dh * o * (1.0 - tc * tc) + dc_next
        dpre[t, :H] = dc * g * i * (1.0 - i)
        dpre[t, H:2 * H] = dc * c_prev * f * (1.0 - f)
        dpre[t, 2 * H:3 * H] = dc * i * (1.0 - g * g)
        dpre[t, 3 * H:] = dh * tc * o * (1.0 - o)
        dc_next = dc * f
        dh_next = w_rec @ dpre[t]
