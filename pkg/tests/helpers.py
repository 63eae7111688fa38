"""Independent reference implementations used as test oracles.

Nothing here calls into the package's numerical kernels.
"""

import numpy as np


def ray_march(img, theta, sub=64, step=0.01):
    """Bin-averaged line integrals of a piecewise-constant image.

    Each detector bin is sampled by ``sub`` parallel rays spread uniformly
    across its width; each ray is marched at ``step`` pixel spacing and the
    pixel containing every sample is looked up directly.
    """
    n = img.shape[0]
    half = 0.5 * (n - 1)
    ct, st = np.cos(theta), np.sin(theta)
    tau = np.arange(-n, n, step) + 0.5 * step
    out = np.zeros(n)
    for j in range(n):
        s = j - n / 2 + (np.arange(sub) + 0.5) / sub
        x = s[:, None] * ct - tau[None, :] * st
        y = s[:, None] * st + tau[None, :] * ct
        c = np.floor(x + half + 0.5).astype(int)
        r = np.floor(half - y + 0.5).astype(int)
        inside = (c >= 0) & (c < n) & (r >= 0) & (r < n)
        vals = np.where(inside, img[np.clip(r, 0, n - 1), np.clip(c, 0, n - 1)], 0.0)
        out[j] = vals.sum(axis=1).mean() * step
    return out


def rotate_geometric(img, theta, sub=16):
    """Rotate a piecewise-constant (square-pixel) image by ``-theta``.

    Each output pixel is the area average, over ``sub x sub`` sample points,
    of the input pixel found at ``R(theta) q`` (y axis pointing up), so
    projecting the result at angle 0 should match projecting the input at
    ``theta`` up to the resampling blur.
    """
    n = img.shape[0]
    half = 0.5 * (n - 1)
    off = (np.arange(sub) + 0.5) / sub - 0.5
    r, c = np.mgrid[0:n, 0:n].astype(float)
    acc = np.zeros((n, n))
    for dr in off:
        for dc in off:
            x, y = c + dc - half, half - (r + dr)
            xs = np.cos(theta) * x - np.sin(theta) * y
            ys = np.sin(theta) * x + np.cos(theta) * y
            ci = np.floor(xs + half + 0.5).astype(int)
            ri = np.floor(half - ys + 0.5).astype(int)
            inside = (ci >= 0) & (ci < n) & (ri >= 0) & (ri < n)
            acc += np.where(inside, img[np.clip(ri, 0, n - 1), np.clip(ci, 0, n - 1)], 0.0)
    return acc / sub ** 2


def naive_compose(lam, z, u):
    n2, k = lam.shape
    p, d = u.shape
    out = np.zeros((n2, p))
    for i in range(n2):
        for t in range(p):
            acc = 0.0
            for kk in range(k):
                psi = 0.0
                for j in range(d):
                    psi += u[t, j] * z[j, kk]
                acc += lam[i, kk] * psi
            out[i, t] = acc
    return out


def central_diff(fun, x, h=1e-6):
    """Central finite-difference gradient of a scalar function of an array."""
    x = np.array(x, dtype=float)
    g = np.zeros_like(x)
    flat, gf = x.ravel(), g.ravel()
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        fp = fun(x)
        flat[i] = old - h
        fm = fun(x)
        flat[i] = old
        gf[i] = (fp - fm) / (2 * h)
    return g


def rel_err(a, b):
    a, b = np.asarray(a, float), np.asarray(b, float)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300))


def ssim_loop(a, b, data_range, win=11, sigma=1.5, k1=0.01, k2=0.03):
    """Per-window SSIM averaged over all fully-contained windows."""
    r = np.arange(win) - (win - 1) / 2
    g = np.exp(-(r * r) / (2 * sigma * sigma))
    w = np.outer(g, g)
    w /= w.sum()
    c1, c2 = (k1 * data_range) ** 2, (k2 * data_range) ** 2
    vals = []
    for i in range(a.shape[0] - win + 1):
        for j in range(a.shape[1] - win + 1):
            pa = a[i:i + win, j:j + win]
            pb = b[i:i + win, j:j + win]
            ma, mb = (w * pa).sum(), (w * pb).sum()
            va = (w * (pa - ma) ** 2).sum()
            vb = (w * (pb - mb) ** 2).sum()
            cov = (w * (pa - ma) * (pb - mb)).sum()
            vals.append(((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2)))
    return float(np.mean(vals))


def log_kernel_direct(size=15, sigma=1.5):
    """MATLAB-style ``fspecial('log')``: normalised Gaussian times the Laplacian factor, made zero-sum."""
    h = (size - 1) / 2
    k = np.zeros((size, size))
    for i in range(size):
        for j in range(size):
            x, y = j - h, i - h
            k[i, j] = np.exp(-(x * x + y * y) / (2 * sigma * sigma))
    k /= k.sum()
    out = np.zeros_like(k)
    for i in range(size):
        for j in range(size):
            x, y = j - h, i - h
            out[i, j] = k[i, j] * (x * x + y * y - 2 * sigma * sigma) / sigma ** 4
    return out - out.sum() / out.size


def correlate_reflect(img, kernel):
    """Direct 2-D correlation with half-sample symmetric padding."""
    kh = kernel.shape[0] // 2
    pad = np.pad(img, kh, mode="symmetric")
    out = np.zeros_like(img)
    for i in range(img.shape[0]):
        for j in range(img.shape[1]):
            out[i, j] = (pad[i:i + kernel.shape[0], j:j + kernel.shape[1]] * kernel).sum()
    return out


def conv_same_loop(x, kernels, biases, residual=False):
    """Loop implementation of the CNN forward pass (symmetric padding, ReLU between layers)."""
    h = x[None].astype(float)
    for li, (k, b) in enumerate(zip(kernels, biases)):
        o, i_ch, kh, kw = k.shape
        pad = np.pad(h, ((0, 0), (kh // 2, kh // 2), (kw // 2, kw // 2)), mode="symmetric")
        out = np.zeros((o, x.shape[0], x.shape[1]))
        for oc in range(o):
            for ic in range(i_ch):
                for a in range(kh):
                    for c in range(kw):
                        out[oc] += float(k[oc, ic, a, c]) * pad[ic, a:a + x.shape[0], c:c + x.shape[1]]
            out[oc] += float(b[oc])
        if li < len(kernels) - 1:
            out = np.maximum(out, 0.0)
        h = out
    return x - h[0] if residual else h[0]
