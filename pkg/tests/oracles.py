"""Independent reference implementations used only by the tests.

Each one takes the slow, literal route (explicit loops, dense DFT matrices,
per-window statistics) so it shares no code path with the package.
"""
import math

import numpy as np


def matmul_loops(a, b):
    m, k = a.shape
    k2, n = b.shape
    assert k == k2
    out = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            s = 0.0
            for t in range(k):
                s += a[i, t] * b[t, j]
            out[i, j] = s
    return out


def dft_matrix(n):
    j, k = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    return np.exp(-2j * np.pi * j * k / n) / math.sqrt(n)


def dft2_dense(x):
    H, W = x.shape
    return dft_matrix(H) @ x @ dft_matrix(W).T


def softmax_direct(v):
    e = [math.exp(t) for t in v]
    s = sum(e)
    return np.array([t / s for t in e])


def attention_direct(x, wq, bq, wk, bk, wv, bv, wo, bo, n_heads):
    """Per-head, per-query loops over the textbook formula."""
    n, d = x.shape
    dh = d // n_heads
    q, k, v = x @ wq + bq, x @ wk + bk, x @ wv + bv
    ctx = np.zeros((n, d))
    for h in range(n_heads):
        sl = slice(h * dh, (h + 1) * dh)
        for i in range(n):
            scores = np.array([q[i, sl] @ k[j, sl] / math.sqrt(dh) for j in range(n)])
            w = softmax_direct(scores - scores.max())
            ctx[i, sl] = sum(w[j] * v[j, sl] for j in range(n))
    return ctx @ wo + bo


def ssim_windows(x, y, size=11, sigma=1.5, k1=0.01, k2=0.03, data_range=1.0):
    """Mean SSIM computed window by window with an explicit 2D Gaussian kernel."""
    r = np.arange(size) - (size - 1) / 2
    g = np.exp(-(r[:, None] ** 2 + r[None, :] ** 2) / (2 * sigma ** 2))
    g /= g.sum()
    c1, c2 = (k1 * data_range) ** 2, (k2 * data_range) ** 2
    H, W = x.shape
    vals = []
    for i in range(H - size + 1):
        for j in range(W - size + 1):
            px, py = x[i:i + size, j:j + size], y[i:i + size, j:j + size]
            mx, my = (g * px).sum(), (g * py).sum()
            vx = (g * (px - mx) ** 2).sum()
            vy = (g * (py - my) ** 2).sum()
            cxy = (g * (px - mx) * (py - my)).sum()
            vals.append(((2 * mx * my + c1) * (2 * cxy + c2)) / ((mx ** 2 + my ** 2 + c1) * (vx + vy + c2)))
    return float(np.mean(vals))


def psnr_direct(x, y):
    mse = sum((a - b) ** 2 for a, b in zip(x.ravel(), y.ravel())) / x.size
    return 10 * math.log10(1.0 / mse)


def mae_direct(x, y):
    return sum(abs(a - b) for a, b in zip(x.ravel(), y.ravel())) / x.size


def gumbel_topk_inclusion(weights, k, n_draws, rng):
    """Inclusion frequency of each item under weighted sampling without replacement.

    Sequential proportional draws are equivalent to taking the k largest
    ``log w + Gumbel`` keys.
    """
    keys = np.log(weights)[None, :] + rng.gumbel(size=(n_draws, weights.size))
    top = np.argpartition(-keys, k - 1, axis=1)[:, :k]
    counts = np.bincount(top.ravel(), minlength=weights.size)
    return counts / n_draws


def central_difference(f, x, h=1e-5):
    """Full numerical gradient of scalar ``f`` at array ``x``."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat, gf = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        up = f(x)
        flat[i] = old - h
        down = f(x)
        flat[i] = old
        gf[i] = (up - down) / (2 * h)
    return g
