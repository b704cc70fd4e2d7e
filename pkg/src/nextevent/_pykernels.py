"""Pure numpy implementations of the hot loops.

These mirror ``_kernels.pyx`` one to one and are used when the compiled
extension is unavailable (or disabled with ``NEXTEVENT_BACKEND=python``).

Array conventions for one LSTM layer over a window of ``T`` steps with batch
``B`` and width ``m``:

* ``XW``  (T, B, 4m)  input projection ``x_t @ Wx.T + b``, gate order f, i, c, o
* ``Wh``  (4m, m)     recurrent weights (C-contiguous)
* ``P``   (3m, m)     peephole weights for f, i, o, or ``None``
* ``H``, ``C`` (T+1, B, m)  states; index 0 holds the incoming state
* ``G``   (T, B, 4m)  activated gates f, i, c-bar, o
"""
from __future__ import annotations

import numpy as np


def _sig(z):
    return 0.5 * (np.tanh(0.5 * z) + 1.0)


def layer_forward(XW, Wh, P, H, C, G):
    T = XW.shape[0]
    m = Wh.shape[1]
    for t in range(T):
        z = XW[t] + H[t] @ Wh.T
        if P is not None:
            z[:, : 2 * m] += C[t] @ P[: 2 * m].T
        f = _sig(z[:, :m])
        i = _sig(z[:, m : 2 * m])
        g = np.tanh(z[:, 2 * m : 3 * m])
        c = f * C[t] + i * g
        zo = z[:, 3 * m :]
        if P is not None:
            zo = zo + c @ P[2 * m :].T
        o = _sig(zo)
        C[t + 1] = c
        H[t + 1] = o * np.tanh(c)
        G[t, :, :m] = f
        G[t, :, m : 2 * m] = i
        G[t, :, 2 * m : 3 * m] = g
        G[t, :, 3 * m :] = o


def layer_backward(dH, Wh, P, H, C, G, dZ):
    """Fill ``dZ`` with gradients w.r.t. gate pre-activations.

    ``dH[t]`` is the loss gradient arriving at ``H[t+1]`` from above. No
    gradient enters from beyond the window end, and none is returned for the
    incoming state (truncated BPTT).
    """
    T, B, m = dH.shape
    dh_next = np.zeros((B, m))
    dc_next = np.zeros((B, m))
    for t in range(T - 1, -1, -1):
        f = G[t, :, :m]
        i = G[t, :, m : 2 * m]
        g = G[t, :, 2 * m : 3 * m]
        o = G[t, :, 3 * m :]
        dh = dH[t] + dh_next
        tc = np.tanh(C[t + 1])
        dzo = dh * tc * o * (1.0 - o)
        dc = dh * o * (1.0 - tc * tc) + dc_next
        if P is not None:
            dc += dzo @ P[2 * m :]
        cp = C[t]
        dZ[t, :, :m] = dc * cp * f * (1.0 - f)
        dZ[t, :, m : 2 * m] = dc * g * i * (1.0 - i)
        dZ[t, :, 2 * m : 3 * m] = dc * i * (1.0 - g * g)
        dZ[t, :, 3 * m :] = dzo
        dc_next = dc * f
        if P is not None:
            dc_next += dZ[t, :, : 2 * m] @ P[: 2 * m]
        dh_next = dZ[t] @ Wh


def osa_distance(a, b) -> int:
    """Optimal-string-alignment edit distance between two integer sequences."""
    n, k = len(a), len(b)
    if n == 0:
        return k
    if k == 0:
        return n
    prev2 = None
    prev = list(range(k + 1))
    for x in range(1, n + 1):
        cur = [x] + [0] * k
        ax = a[x - 1]
        for y in range(1, k + 1):
            cost = 0 if ax == b[y - 1] else 1
            v = min(prev[y] + 1, cur[y - 1] + 1, prev[y - 1] + cost)
            if x > 1 and y > 1 and ax == b[y - 2] and a[x - 2] == b[y - 1]:
                v = min(v, prev2[y - 2] + 1)
            cur[y] = v
        prev2, prev = prev, cur
    return prev[k]
