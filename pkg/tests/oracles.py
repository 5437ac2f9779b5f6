"""Slow, loop-based reference implementations used as independent test oracles."""

import math

import numpy as np


def reference_phase(t_pos, n_pos, dim, theta):
    """Per-coordinate rotary angle for one (time, node) cell, half-duplicated."""
    half = []
    for i in range(1, dim // 2 + 1):
        freq = math.pi * (2 * i - 1) / (dim - 1) * theta / 2
        half.append((t_pos + n_pos) * freq)
    return half


def linspace_positions(length):
    return [-1.0 + 2.0 * i / (length - 1) for i in range(length)]


def rotate_pairs(x, angles):
    h = len(x) // 2
    out = [0.0] * len(x)
    for i in range(h):
        c, s = math.cos(angles[i]), math.sin(angles[i])
        out[i] = x[i] * c - x[i + h] * s
        out[i + h] = x[i + h] * c + x[i] * s
    return out


def vec_mat(x, w):
    return [sum(x[r] * w[r][c] for r in range(len(x))) for c in range(len(w[0]))]


def attention_loops(v, wq, wk, wv, theta, spatial, use_rope=True):
    """Single-head attention on one ``(N, T, D)`` sample, one output cell at a time.

    ``spatial`` attends across sensors at each time step; otherwise across time at each sensor.
    """
    n_nodes, n_steps, dim = v.shape
    p_t, p_n = linspace_positions(n_steps), linspace_positions(n_nodes)
    wq, wk, wv = wq.tolist(), wk.tolist(), wv.tolist()

    def rope(x, n, t):
        if not use_rope:
            return x
        return rotate_pairs(x, reference_phase(p_t[t], p_n[n], dim, theta))

    out = np.zeros_like(v)
    for n in range(n_nodes):
        for t in range(n_steps):
            q = rope(vec_mat(v[n, t].tolist(), wq), n, t)
            others = [(m, t) for m in range(n_nodes)] if spatial else [(n, s) for s in range(n_steps)]
            scores = []
            for m, s in others:
                k = rope(vec_mat(v[m, s].tolist(), wk), m, s)
                scores.append(sum(a * b for a, b in zip(q, k)) / math.sqrt(dim))
            top = max(scores)
            weights = [math.exp(x - top) for x in scores]
            total = sum(weights)
            acc = [0.0] * dim
            for w, (m, s) in zip(weights, others):
                val = vec_mat(v[m, s].tolist(), wv)
                for d in range(dim):
                    acc[d] += w / total * val[d]
            out[n, t] = acc
    return out


def adam_reference(p0, grad_fn, steps, lr, b1, b2, eps, wd):
    """Textbook decoupled-decay Adam on a flat float list, element by element."""
    p = list(p0)
    m = [0.0] * len(p)
    v = [0.0] * len(p)
    for step in range(1, steps + 1):
        g = grad_fn(p)
        for i in range(len(p)):
            p[i] = p[i] - lr * wd * p[i]
            m[i] = b1 * m[i] + (1 - b1) * g[i]
            v[i] = b2 * v[i] + (1 - b2) * g[i] * g[i]
            m_hat = m[i] / (1 - b1 ** step)
            v_hat = v[i] / (1 - b2 ** step)
            p[i] = p[i] - lr * m_hat / (math.sqrt(v_hat) + eps)
    return p
