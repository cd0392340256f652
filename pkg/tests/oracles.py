"""Independent reference implementations used as test oracles.

Nothing here imports the code paths it checks.
"""

import math

import numpy as np


def naive_matmul(a, b):
    m, k = len(a), len(a[0])
    n = len(b[0])
    out = [[0.0] * n for _ in range(m)]
    for i in range(m):
        for j in range(n):
            acc = 0.0
            for t in range(k):
                acc += a[i][t] * b[t][j]
            out[i][j] = acc
    return np.array(out)


def central_differences(loss_fn, arrays, h=1e-5):
    """Numerical gradient of ``loss_fn()`` w.r.t. every entry of each array (mutated in place)."""
    grads = []
    for arr in arrays:
        g = np.zeros_like(arr)
        it = np.nditer(arr, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            orig = arr[idx]
            arr[idx] = orig + h
            up = loss_fn()
            arr[idx] = orig - h
            down = loss_fn()
            arr[idx] = orig
            g[idx] = (up - down) / (2.0 * h)
        grads.append(g)
    return grads


def max_relative_error(analytic, numeric, floor=1e-8):
    worst = 0.0
    for a, n in zip(analytic, numeric):
        a = np.asarray(a, dtype=float)
        n = np.asarray(n, dtype=float)
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
        worst = max(worst, float(np.max(np.abs(a - n) / denom)) if a.size else 0.0)
    return worst


def scalar_adam(theta, grads, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    m = v = 0.0
    for t, g in enumerate(grads, start=1):
        m = beta1 * m + (1 - beta1) * g
        v = beta2 * v + (1 - beta2) * g * g
        mh = m / (1 - beta1**t)
        vh = v / (1 - beta2**t)
        theta = theta - lr * mh / (math.sqrt(vh) + eps)
    return theta


def pairwise_auc(scores, labels):
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    total = 0.0
    for p in pos:
        for q in neg:
            total += 1.0 if p > q else 0.5 if p == q else 0.0
    return total / (len(pos) * len(neg))


def hand_confusion(pred, labels):
    tp = tn = fp = fn = 0
    for p, y in zip(pred, labels):
        if p == 1 and y == 1:
            tp += 1
        elif p == 0 and y == 0:
            tn += 1
        elif p == 1:
            fp += 1
        else:
            fn += 1
    return tp, tn, fp, fn


def hand_f1_macro(pred, labels):
    tp, tn, fp, fn = hand_confusion(pred, labels)
    f1s = []
    for t, f_pos, f_neg in ((tp, fp, fn), (tn, fn, fp)):
        prec = t / (t + f_pos) if t + f_pos else 0.0
        rec = t / (t + f_neg) if t + f_neg else 0.0
        f1s.append(2 * prec * rec / (prec + rec) if prec + rec else 0.0)
    return sum(f1s) / 2


def hand_g_mean(pred, labels):
    tp, tn, fp, fn = hand_confusion(pred, labels)
    tpr = tp / (tp + fn) if tp + fn else 0.0
    tnr = tn / (tn + fp) if tn + fp else 0.0
    return math.sqrt(tpr * tnr)


def scalar_softmax(values):
    m = max(values)
    e = [math.exp(v - m) for v in values]
    s = sum(e)
    return [x / s for x in e]


def scalar_leaky(v, slope=0.2):
    return v if v > 0 else slope * v


def scalar_cosine(a, b):
    dot = sum(x * y for x, y in zip(a, b))
    na = math.sqrt(sum(x * x for x in a))
    nb = math.sqrt(sum(y * y for y in b))
    return dot / (na * nb)


def cumulative_rounding_sizes(count, ratios):
    total = sum(ratios)
    acc, prev, sizes = 0.0, 0, []
    for r in ratios:
        acc += r
        bound = int(math.floor(acc / total * count + 0.5))
        sizes.append(bound - prev)
        prev = bound
    sizes[-1] += count - prev
    return tuple(sizes)
