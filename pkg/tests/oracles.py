"""Independent reference implementations used as test oracles.

Everything here is written as directly as possible (scalar loops, textbook
recursions) and shares no code with the package beyond plain numpy.
"""
import numpy as np


def uniform_knots(lo, hi, G, k):
    h = (hi - lo) / G
    return [lo + (i - k) * h for i in range(G + 2 * k + 1)]


def cox_de_boor(i, p, x, t):
    """Recursive B-spline ``B_{i,p}`` on half-open intervals."""
    if p == 0:
        return 1.0 if t[i] <= x < t[i + 1] else 0.0
    left = 0.0 if t[i + p] == t[i] else (x - t[i]) / (t[i + p] - t[i]) * cox_de_boor(i, p - 1, x, t)
    right = 0.0
    if t[i + p + 1] != t[i + 1]:
        right = (t[i + p + 1] - x) / (t[i + p + 1] - t[i + 1]) * cox_de_boor(i + 1, p - 1, x, t)
    return left + right


def naive_basis(x, lo, hi, G, k):
    t = uniform_knots(lo, hi, G, k)
    return np.array([cox_de_boor(i, k, x, t) for i in range(G + k)])


def naive_spline(x, lo, hi, G, k, coef):
    xc = min(max(x, lo), hi)
    if xc == hi:
        # right end is closed: approach it from inside the last interval
        xc = np.nextafter(hi, lo)
    return float(np.dot(naive_basis(xc, lo, hi, G, k), coef))


def silu(v):
    return v / (1.0 + np.exp(-v))


def naive_kan_forward(x, coef, w_s, w_b, beta, lo, hi, G, k):
    """Loop over every sample, output node and edge."""
    n, d_in = x.shape
    d_out = coef.shape[0]
    out = np.zeros((n, d_out))
    for s in range(n):
        for q in range(d_out):
            acc = 0.0
            for p in range(d_in):
                acc += w_b[q, p] * silu(x[s, p]) + w_s[q, p] * naive_spline(x[s, p], lo, hi, G, k, coef[q, p])
            out[s, q] = acc + (beta[q] if beta is not None else 0.0)
    return out


def naive_conv_same(x, w, b):
    """Direct cross-correlation with 'same' zero padding (before=(k-1)//2)."""
    n, c, H, W = x.shape
    f, _, ks, _ = w.shape
    before = (ks - 1) // 2
    out = np.zeros((n, f, H, W))
    for s in range(n):
        for o in range(f):
            for i in range(H):
                for j in range(W):
                    acc = b[o]
                    for ch in range(c):
                        for u in range(ks):
                            for v in range(ks):
                                r, cc = i + u - before, j + v - before
                                if 0 <= r < H and 0 <= cc < W:
                                    acc += w[o, ch, u, v] * x[s, ch, r, cc]
                    out[s, o, i, j] = acc
    return out


def naive_maxpool(x, f):
    n, c, H, W = x.shape
    out = np.zeros((n, c, H // f, W // f))
    for s in range(n):
        for ch in range(c):
            for i in range(H // f):
                for j in range(W // f):
                    out[s, ch, i, j] = x[s, ch, i * f:(i + 1) * f, j * f:(j + 1) * f].max()
    return out


def tally(pred, labels, n=10):
    m = [[0] * n for _ in range(n)]
    for p, t in zip(pred, labels):
        m[t][p] += 1
    return np.array(m)


def central_diff(f, arr, eps=1e-6):
    """Numerical gradient of scalar ``f()`` w.r.t. every entry of ``arr`` (modified in place, then restored)."""
    g = np.zeros_like(arr)
    it = np.nditer(arr, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = arr[i]
        arr[i] = old + eps
        fp = f()
        arr[i] = old - eps
        fm = f()
        arr[i] = old
        g[i] = (fp - fm) / (2 * eps)
    return g


def rel_err(a, b, floor=1e-12):
    return np.max(np.abs(a - b)) / max(np.max(np.abs(b)), floor)


def spot_check(f, arr, analytic, n=12, eps=1e-6, seed=0):
    """Relative error of ``analytic`` against central differences at ``n`` sampled entries.

    The denominator is floored at 1e-5 so exactly-zero gradients (e.g. a bias
    cancelled by batch norm) compare on finite-difference noise, not on 0/0.
    """
    rng = np.random.default_rng(seed)
    flat = rng.choice(arr.size, size=min(n, arr.size), replace=False)
    num, ana = [], []
    for fi in flat:
        i = np.unravel_index(fi, arr.shape)
        old = arr[i]
        arr[i] = old + eps
        fp = f()
        arr[i] = old - eps
        fm = f()
        arr[i] = old
        num.append((fp - fm) / (2 * eps))
        ana.append(analytic[i])
    return rel_err(np.array(ana), np.array(num), floor=1e-5)
