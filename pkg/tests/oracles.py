"""Independent brute-force reference implementations.

These are deliberately written in the most literal way possible (nested
loops, pairwise counts, direct formulas) and stay independent of the
library code paths they check.
"""

import numpy as np


def conv2d_loops(x, w, b=None, stride=1, padding=0, groups=1):
    """Direct six-nested-loop cross-correlation."""
    n_batch, cin, h, wdt = x.shape
    cout, cg, kh, kw = w.shape
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (wdt + 2 * padding - kw) // stride + 1
    xp = np.zeros((n_batch, cin, h + 2 * padding, wdt + 2 * padding), dtype=np.float64)
    xp[:, :, padding:padding + h, padding:padding + wdt] = x
    out = np.zeros((n_batch, cout, ho, wo), dtype=np.float64)
    cog = cout // groups
    for n in range(n_batch):
        for co in range(cout):
            g = co // cog
            for oy in range(ho):
                for ox in range(wo):
                    acc = 0.0
                    for ci in range(cg):
                        for i in range(kh):
                            for j in range(kw):
                                acc += (xp[n, g * cg + ci, oy * stride + i, ox * stride + j]
                                        * w[co, ci, i, j])
                    out[n, co, oy, ox] = acc
    if b is not None:
        out += b[None, :, None, None]
    return out


def gap_loops(x):
    n, c, h, w = x.shape
    out = np.zeros((n, c, 1, 1), dtype=np.float64)
    for ni in range(n):
        for ci in range(c):
            acc = 0.0
            for i in range(h):
                for j in range(w):
                    acc += x[ni, ci, i, j]
            out[ni, ci, 0, 0] = acc / (h * w)
    return out


def cross_entropy_highprec(logits, targets):
    """Cross-entropy via mpmath at 50 significant digits."""
    import mpmath
    mpmath.mp.dps = 50
    n, k = logits.shape
    total = mpmath.mpf(0)
    for i in range(n):
        row = [mpmath.mpf(float(v)) for v in logits[i]]
        m = max(row)
        exps = [mpmath.e ** (v - m) for v in row]
        z = sum(exps)
        for j in range(k):
            logp = (row[j] - m) - mpmath.log(z)
            total += mpmath.mpf(float(targets[i, j])) * logp
    return float(-total / n)


def auc_pairwise(scores, labels):
    """(wins + 0.5 * ties) / (P * N) over all positive-negative pairs."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    pos = scores[labels == 1]
    neg = scores[labels == 0]
    wins = ties = 0
    for p in pos:
        for n in neg:
            if p > n:
                wins += 1
            elif p == n:
                ties += 1
    return (wins + 0.5 * ties) / (len(pos) * len(neg))


def auc_ovr_macro(scores, labels):
    """Unweighted mean of one-vs-rest pairwise AUCs over present classes."""
    labels = np.asarray(labels)
    vals = []
    for c in range(scores.shape[1]):
        binary = (labels == c).astype(int)
        if binary.sum() in (0, len(labels)):
            continue
        vals.append(auc_pairwise(scores[:, c], binary))
    return float(np.mean(vals))


def kappa_direct(y_true, y_pred, k):
    """Quadratic kappa straight from the definition, double loops."""
    n = len(y_true)
    observed = np.zeros((k, k))
    for t, p in zip(y_true, y_pred):
        observed[t, p] += 1
    hist_t = np.zeros(k)
    hist_p = np.zeros(k)
    for t in y_true:
        hist_t[t] += 1
    for p in y_pred:
        hist_p[p] += 1
    num = den = 0.0
    for i in range(k):
        for j in range(k):
            w = (i - j) ** 2 / (k - 1) ** 2
            num += w * observed[i, j]
            den += w * hist_t[i] * hist_p[j] / n
    return 1.0 - num / den


def f1_direct(confusion):
    """Per-class F1 from precision/recall, macro and support-weighted."""
    confusion = np.asarray(confusion, dtype=np.float64)
    k = confusion.shape[0]
    f1 = np.zeros(k)
    for c in range(k):
        tp = confusion[c, c]
        fp = confusion[:, c].sum() - tp
        fn = confusion[c, :].sum() - tp
        prec = tp / (tp + fp) if tp + fp > 0 else 0.0
        rec = tp / (tp + fn) if tp + fn > 0 else 0.0
        f1[c] = 2 * prec * rec / (prec + rec) if prec + rec > 0 else 0.0
    support = confusion.sum(axis=1)
    macro = f1.mean()
    weighted = (f1 * support / support.sum()).sum()
    return macro, weighted


def scalar_adam_reference(w, g, lr, beta1, beta2, eps, steps=1):
    """Independent scalar Adam(W without decay) trajectory."""
    m = v = 0.0
    for t in range(1, steps + 1):
        m = beta1 * m + (1 - beta1) * g
        v = beta2 * v + (1 - beta2) * g * g
        mhat = m / (1 - beta1 ** t)
        vhat = v / (1 - beta2 ** t)
        w = w - lr * mhat / (np.sqrt(vhat) + eps)
    return w


def bilinear_resize_point(img, oy, ox, out_h, out_w):
    """Hand bilinear sample with half-pixel centers and edge clamp."""
    h, w = img.shape
    sy = (oy + 0.5) * (h / out_h) - 0.5
    sx = (ox + 0.5) * (w / out_w) - 0.5
    y0, x0 = int(np.floor(sy)), int(np.floor(sx))
    fy, fx = sy - y0, sx - x0

    def px(y, x):
        return img[min(max(y, 0), h - 1), min(max(x, 0), w - 1)]

    top = px(y0, x0) * (1 - fx) + px(y0, x0 + 1) * fx
    bot = px(y0 + 1, x0) * (1 - fx) + px(y0 + 1, x0 + 1) * fx
    return top * (1 - fy) + bot * fy
