"""Independent slow reference implementations used only by the tests."""

import math

import numpy as np


def brute_force_mask(T, nb, schedule, anchor=True):
    """Evaluate the piecewise mask rule one block pair at a time."""
    n = T * nb
    bits = [[0] * n for _ in range(n)]
    for q in range(n):
        i, u = divmod(q, nb)
        for k in range(n):
            j, v = divmod(k, nb)
            d = abs(i - j)
            s = schedule[min(d, len(schedule) - 1)]
            if (anchor and j == 0) or u % s == v % s:
                bits[q][k] = 1
    return bits


def brute_force_ones(T, nb, schedule, anchor=True):
    return sum(map(sum, brute_force_mask(T, nb, schedule, anchor)))


def loop_attention(x, w_q, w_k, w_v, w_o, heads, q_gain, k_gain, token_mask=None, eps=1e-6):
    """Scalar-loop multi-head attention: explicit sums, explicit softmax."""
    T, P, d = x.shape
    n = T * P
    hd = d // heads
    flat = x.reshape(n, d)

    def proj(w):
        out = [[0.0] * d for _ in range(n)]
        for a in range(n):
            for c in range(d):
                out[a][c] = sum(flat[a][e] * w[e][c] for e in range(d))
        return out

    def rms(vec, gain):
        r = math.sqrt(sum(t * t for t in vec) / len(vec) + eps)
        return [t / r * g for t, g in zip(vec, gain)]

    Q, K, V = proj(w_q), proj(w_k), proj(w_v)
    heads_out = [[0.0] * d for _ in range(n)]
    scale = hd ** -0.5
    for h in range(heads):
        sl = slice(h * hd, (h + 1) * hd)
        qh = [rms(Q[a][sl], q_gain) for a in range(n)]
        kh = [rms(K[a][sl], k_gain) for a in range(n)]
        for a in range(n):
            allowed = [b for b in range(n) if token_mask is None or token_mask[a][b]]
            scores = [scale * sum(p * q for p, q in zip(qh[a], kh[b])) for b in allowed]
            m = max(scores)
            ex = [math.exp(s - m) for s in scores]
            z = sum(ex)
            for c in range(hd):
                heads_out[a][h * hd + c] = sum(e / z * V[b][h * hd + c] for e, b in zip(ex, allowed))
    out = [[sum(heads_out[a][e] * w_o[e][c] for e in range(d)) for c in range(d)] for a in range(n)]
    return np.array(out).reshape(T, P, d)
