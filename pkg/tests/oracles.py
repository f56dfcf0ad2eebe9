"""Independent reference implementations the tests check the library against.

Everything here is deliberately naive (nested loops, direct formulas) and
shares no code with the production paths.
"""

import numpy as np


def conv2d_naive(x, kernel, bias, stride=1, padding=0):
    """Direct 6-nested-loop cross-correlation, float64 accumulation."""
    n, c, h, w = x.shape
    o, ci, kh, kw = kernel.shape
    assert c == ci
    if padding:
        xp = np.zeros((n, c, h + 2 * padding, w + 2 * padding), dtype=np.float64)
        xp[:, :, padding:padding + h, padding:padding + w] = x
    else:
        xp = x.astype(np.float64)
    oh = (h + 2 * padding - kh) // stride + 1
    ow = (w + 2 * padding - kw) // stride + 1
    out = np.zeros((n, o, oh, ow), dtype=np.float64)
    for b in range(n):
        for oc in range(o):
            for i in range(oh):
                for j in range(ow):
                    acc = 0.0
                    for ic in range(c):
                        for a in range(kh):
                            for z in range(kw):
                                acc += (
                                    xp[b, ic, i * stride + a, j * stride + z]
                                    * kernel[oc, ic, a, z]
                                )
                    out[b, oc, i, j] = acc + bias[oc]
    return out


def maxpool2x2_naive(x):
    """Per-window max with first-index tie break, loop form."""
    n, c, h, w = x.shape
    out = np.zeros((n, c, h // 2, w // 2), dtype=x.dtype)
    arg = np.zeros((n, c, h // 2, w // 2), dtype=np.int64)
    for b in range(n):
        for ch in range(c):
            for i in range(h // 2):
                for j in range(w // 2):
                    vals = [
                        x[b, ch, 2 * i, 2 * j],
                        x[b, ch, 2 * i, 2 * j + 1],
                        x[b, ch, 2 * i + 1, 2 * j],
                        x[b, ch, 2 * i + 1, 2 * j + 1],
                    ]
                    best = 0
                    for k in range(1, 4):
                        if vals[k] > vals[best]:
                            best = k
                    out[b, ch, i, j] = vals[best]
                    arg[b, ch, i, j] = best
    return out, arg


def adam_scalar_trajectory(theta0, grads, lr=0.001, b1=0.9, b2=0.999, eps=1e-8):
    """Scalar Adam recomputed with plain Python floats; returns theta history."""
    theta = theta0
    m = v = 0.0
    t = 0
    history = []
    for g in grads:
        t += 1
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        mhat = m / (1 - b1 ** t)
        vhat = v / (1 - b2 ** t)
        theta = theta - lr * mhat / (vhat ** 0.5 + eps)
        history.append(theta)
    return history


def adam_quadratic_trajectory(theta0, steps, **kw):
    """Adam on f(theta) = theta^2 (grad 2*theta), via the scalar oracle."""
    theta = theta0
    m = v = 0.0
    t = 0
    lr = kw.get("lr", 0.001)
    b1 = kw.get("b1", 0.9)
    b2 = kw.get("b2", 0.999)
    eps = kw.get("eps", 1e-8)
    history = []
    for _ in range(steps):
        g = 2.0 * theta
        t += 1
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        mhat = m / (1 - b1 ** t)
        vhat = v / (1 - b2 ** t)
        theta = theta - lr * mhat / (vhat ** 0.5 + eps)
        history.append(theta)
    return history


def confusion_tally(preds, labels, num_classes):
    """Independent counting pass over (pred, label) pairs."""
    mat = np.zeros((num_classes, num_classes), dtype=np.int64)
    for p, t in zip(preds, labels):
        mat[int(t), int(p)] += 1
    return mat


def mae_mse_loops(pred, target):
    """Direct elementwise loop over flattened arrays."""
    p = np.asarray(pred, dtype=np.float64).ravel()
    g = np.asarray(target, dtype=np.float64).ravel()
    sa = 0.0
    sq = 0.0
    for a, b in zip(p, g):
        d = a - b
        sa += abs(d)
        sq += d * d
    return sa / p.size, sq / p.size
