"""Pure-numpy implementations of the hot evaluation kernels.

Mirror of the compiled module in ``_speedups.pyx``; the two must agree to
float precision (see tests/test_backend.py).  Kernel programs arrive here
flattened to postorder opcode/parameter arrays, so evaluation is a stack
machine over full matrices.
"""
from __future__ import annotations

import numpy as np

# opcodes for flattened covariance programs
OP_CONST, OP_WN, OP_LIN, OP_SE, OP_PER, OP_ADD, OP_MUL, OP_CP = range(8)

# column kinds for mixture tables
KIND_NUMERIC, KIND_COUNT, KIND_NOMINAL = range(3)

_LOG_2PI = float(np.log(2.0 * np.pi))


def gp_cov(codes, p0, p1, x1, x2):
    """Covariance of a flattened kernel program over the grid x1 x x2."""
    X1 = np.asarray(x1, dtype=float)[:, None]
    X2 = np.asarray(x2, dtype=float)[None, :]
    stack = []
    for code, a, b in zip(codes, p0, p1):
        if code == OP_CONST:
            stack.append(np.full((X1.shape[0], X2.shape[1]), a))
        elif code == OP_WN:
            stack.append(np.where(X1 == X2, a, 0.0))
        elif code == OP_LIN:
            stack.append((X1 - a) * (X2 - a))
        elif code == OP_SE:
            d = X1 - X2
            stack.append(np.exp(-(d * d) / a))
        elif code == OP_PER:
            s = np.sin((2.0 * np.pi / b) * np.abs(X1 - X2))
            stack.append(np.exp((-2.0 / a) * (s * s)))
        elif code == OP_ADD:
            rhs = stack.pop()
            stack[-1] = stack[-1] + rhs
        elif code == OP_MUL:
            rhs = stack.pop()
            stack[-1] = stack[-1] * rhs
        elif code == OP_CP:
            k2 = stack.pop()
            k1 = stack.pop()
            d1 = 0.5 * (1.0 + np.tanh(10.0 * (X1 - a)))
            d2 = 0.5 * (1.0 + np.tanh(10.0 * (X2 - a)))
            stack.append(d1 * d2 * k1 + (1.0 - d1) * (1.0 - d2) * k2)
        else:  # pragma: no cover
            raise ValueError(f"bad opcode {code}")
    if len(stack) != 1:  # pragma: no cover
        raise ValueError("malformed kernel program")
    return stack[0]


def block_row_logliks(values, kinds, params, log_weights):
    """Per-row log likelihood of one block: logsumexp over clusters.

    values      (n, l) float64, NaN marks a missing cell
    kinds       (l,)   int: 0 numeric, 1 count, 2 nominal
    params      (t, l, pmax) float64 cluster/column parameters
    log_weights (t,)   log of cluster weight fractions
    """
    n = values.shape[0]
    t = params.shape[0]
    per_cluster = np.empty((t, n))
    lgam_cache = {}
    for j in range(t):
        acc = np.full(n, log_weights[j])
        for i in range(values.shape[1]):
            col = values[:, i]
            present = ~np.isnan(col)
            if not present.any():
                continue
            x = col[present]
            kind = kinds[i]
            if kind == KIND_NUMERIC:
                mean, sd = params[j, i, 0], params[j, i, 1]
                z = (x - mean) / sd
                acc[present] += -0.5 * (z * z) - np.log(sd) - 0.5 * _LOG_2PI
            elif kind == KIND_COUNT:
                rate = params[j, i, 0]
                key = i
                if key not in lgam_cache:
                    lgam_cache[key] = _lgamma_plus_one(x)
                acc[present] += x * np.log(rate) - rate - lgam_cache[key]
            else:
                w = params[j, i]
                acc[present] += np.log(w[x.astype(int) - 1])
        per_cluster[j] = acc
    top = per_cluster.max(axis=0)
    out = top + np.log(np.exp(per_cluster - top).sum(axis=0))
    # a row that is impossible under every cluster stays -inf
    out = np.where(np.isfinite(top), out, top)
    return out


def _lgamma_plus_one(x):
    from math import lgamma

    return np.array([lgamma(v + 1.0) for v in x])
