"""Reference computations kept independent of the package code paths."""
import numpy as np
from scipy.optimize import linprog


def transport_cost_lp(p, q):
    """Optimal transport cost between histograms with ground cost |i - j| (linear program)."""
    p, q = np.asarray(p, float), np.asarray(q, float)
    n = p.size
    cost = np.abs(np.subtract.outer(np.arange(n), np.arange(n))).ravel()
    rows = np.kron(np.eye(n), np.ones((1, n)))
    cols = np.kron(np.ones((1, n)), np.eye(n))
    res = linprog(cost, A_eq=np.vstack([rows, cols]), b_eq=np.concatenate([p, q]), bounds=(0, None),
                  method="highs", options={"primal_feasibility_tolerance": 1e-9, "dual_feasibility_tolerance": 1e-9})
    assert res.status == 0
    return res.fun


def transport_cost_greedy(p, q):
    """Monotone (north-west corner) transport, optimal for convex 1-D costs."""
    p, q = list(map(float, p)), list(map(float, q))
    i = j = 0
    total = 0.0
    while i < len(p) and j < len(q):
        moved = min(p[i], q[j])
        total += moved * abs(i - j)
        p[i] -= moved
        q[j] -= moved
        if p[i] <= 1e-15:
            i += 1
        if q[j] <= 1e-15:
            j += 1
    return total


def central_diff(f, x, h=1e-5):
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    for i in range(x.size):
        xp, xm = x.copy(), x.copy()
        xp.flat[i] += h
        xm.flat[i] -= h
        g.flat[i] = (f(xp) - f(xm)) / (2 * h)
    return g


def rel_err(a, b):
    a, b = np.ravel(a), np.ravel(b)
    scale = max(np.linalg.norm(a), np.linalg.norm(b))
    return 0.0 if scale == 0 else float(np.linalg.norm(a - b) / scale)


def softmax_ref(z):
    e = np.exp(z - np.max(z))
    return e / e.sum()


def emd2_ref(p, q):
    """Squared-CDF EMD written out with explicit loops."""
    n = len(p)
    acc, cp, cq = 0.0, 0.0, 0.0
    for k in range(n):
        cp += p[k]
        cq += q[k]
        acc += (cp - cq) ** 2
    return (acc / n) ** 0.5


def bilinear_ref(img, out_h, out_w):
    """Pixel-by-pixel half-pixel-center bilinear resize."""
    img = np.asarray(img, float)
    h, w = img.shape[:2]
    out = np.zeros((out_h, out_w) + img.shape[2:])
    for oy in range(out_h):
        sy = min(max((oy + 0.5) * h / out_h - 0.5, 0), h - 1)
        y0 = int(np.floor(sy)); y1 = min(y0 + 1, h - 1); ty = sy - y0
        for ox in range(out_w):
            sx = min(max((ox + 0.5) * w / out_w - 0.5, 0), w - 1)
            x0 = int(np.floor(sx)); x1 = min(x0 + 1, w - 1); tx = sx - x0
            top = img[y0, x0] * (1 - tx) + img[y0, x1] * tx
            bot = img[y1, x0] * (1 - tx) + img[y1, x1] * tx
            out[oy, ox] = top * (1 - ty) + bot * ty
    return out
