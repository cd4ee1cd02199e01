"""Independent scalar-loop reference implementations used as test oracles.

Everything here is deliberately written with plain Python loops and the math
module so it shares no code path with the library being tested.
"""

import math


def attention_ref(q, k, v):
    """Rows of softmax(q k^T / sqrt(d)) v via explicit loops."""
    n_q, d = len(q), len(q[0])
    n_k = len(k)
    d_v = len(v[0])
    out = [[0.0] * d_v for _ in range(n_q)]
    for i in range(n_q):
        logits = []
        for j in range(n_k):
            s = 0.0
            for a in range(d):
                s += q[i][a] * k[j][a]
            logits.append(s / math.sqrt(d))
        mx = max(logits)
        exps = [math.exp(x - mx) for x in logits]
        z = sum(exps)
        for j in range(n_k):
            w = exps[j] / z
            for b in range(d_v):
                out[i][b] += w * v[j][b]
    return out


def softmax_ref(xs):
    mx = max(xs)
    es = [math.exp(x - mx) for x in xs]
    z = sum(es)
    return [e / z for e in es]


def conv2d_ref(x, w, b, stride=1, pad=0):
    """NCHW conv with loops. x: [C,H,W] nested lists, w: [Cout][Cin][kh][kw]."""
    cin, H, W = len(x), len(x[0]), len(x[0][0])
    cout, _, kh, kw = len(w), len(w[0]), len(w[0][0]), len(w[0][0][0])
    oh = (H + 2 * pad - kh) // stride + 1
    ow = (W + 2 * pad - kw) // stride + 1
    out = [[[0.0] * ow for _ in range(oh)] for _ in range(cout)]
    for co in range(cout):
        for i in range(oh):
            for j in range(ow):
                acc = b[co] if b is not None else 0.0
                for ci in range(cin):
                    for a in range(kh):
                        for c in range(kw):
                            ii = i * stride + a - pad
                            jj = j * stride + c - pad
                            if 0 <= ii < H and 0 <= jj < W:
                                acc += x[ci][ii][jj] * w[co][ci][a][c]
                out[co][i][j] = acc
    return out


def bilinear_ref(grid, u, v):
    """Sample one point from a [R0][R1][C] grid at clamped (u, v)."""
    R0, R1, C = len(grid), len(grid[0]), len(grid[0][0])
    u = min(max(u, 0.0), R0 - 1.0)
    v = min(max(v, 0.0), R1 - 1.0)
    i0 = min(int(math.floor(u)), R0 - 2)
    j0 = min(int(math.floor(v)), R1 - 2)
    fu, fv = u - i0, v - j0
    out = []
    for c in range(C):
        val = ((1 - fu) * (1 - fv) * grid[i0][j0][c]
               + fu * (1 - fv) * grid[i0 + 1][j0][c]
               + (1 - fu) * fv * grid[i0][j0 + 1][c]
               + fu * fv * grid[i0 + 1][j0 + 1][c])
        out.append(val)
    return out


def kernel_ref(f_s, f_t, g_s, g_t, sigma_s, sigma_t, sigma_st, alpha):
    """Joint space-time Gaussian kernel evaluated with scalar loops."""
    ds2 = sum((a - b) ** 2 for a, b in zip(f_s, g_s))
    dt2 = sum((a - b) ** 2 for a, b in zip(f_t, g_t))
    inner = sum((a - b) * (c - d) for a, b, c, d in zip(f_s, g_s, f_t, g_t))
    q = ds2 / sigma_s ** 2 + dt2 / sigma_t ** 2 + 2.0 * alpha * inner / sigma_st ** 2
    return math.exp(-0.5 * q)


def psnr_ref(a, b):
    """PSNR over flat lists of [0,1] values."""
    n = len(a)
    mse = sum((x - y) ** 2 for x, y in zip(a, b)) / n
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def ssim_ref(a, b, win=8, c1=0.01 ** 2, c2=0.03 ** 2):
    """Mean SSIM of two [H][W] images over sliding win x win uniform windows."""
    H, W = len(a), len(a[0])
    vals = []
    for i in range(H - win + 1):
        for j in range(W - win + 1):
            xs, ys = [], []
            for di in range(win):
                for dj in range(win):
                    xs.append(a[i + di][j + dj])
                    ys.append(b[i + di][j + dj])
            n = win * win
            mx = sum(xs) / n
            my = sum(ys) / n
            vx = sum((x - mx) ** 2 for x in xs) / n
            vy = sum((y - my) ** 2 for y in ys) / n
            cov = sum((x - mx) * (y - my) for x, y in zip(xs, ys)) / n
            num = (2 * mx * my + c1) * (2 * cov + c2)
            den = (mx * mx + my * my + c1) * (vx + vy + c2)
            vals.append(num / den)
    return sum(vals) / len(vals)


def composite_ref(alphas, colors, depths, bg):
    """Front-to-back alpha compositing at one pixel.

    alphas: per-gaussian alpha at this pixel, already sorted front first.
    Returns (rgb, depth, alpha).
    """
    T = 1.0
    rgb = [0.0, 0.0, 0.0]
    depth = 0.0
    for a, c, z in zip(alphas, colors, depths):
        w = a * T
        for ch in range(3):
            rgb[ch] += w * c[ch]
        depth += w * z
        T *= (1.0 - a)
    for ch in range(3):
        rgb[ch] += T * bg[ch]
    return rgb, depth, 1.0 - T
