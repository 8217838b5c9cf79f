"""Independent reference implementations used to check the library.

Everything here is written with explicit Python loops and `math`
functions, deliberately sharing no code with the vectorized package
internals. Slow and obvious beats fast and clever for an oracle.
"""

import math

import numpy as np


def dot(a, b):
    return sum(float(x) * float(y) for x, y in zip(a, b))


def softmax_denominator(z, i, tau):
    return sum(math.exp(dot(z[i], z[k]) / tau) for k in range(len(z)) if k != i)


def log_prob(z, i, j, tau):
    return math.log(math.exp(dot(z[i], z[j]) / tau) / softmax_denominator(z, i, tau))


def info_nce_ref(z, pair, tau):
    total = 0.0
    for i in range(len(z)):
        total += -log_prob(z, i, pair[i], tau)
    return total / len(z)


def scl_ref(z, labels, tau):
    total = 0.0
    for i in range(len(z)):
        same = [j for j in range(len(z)) if j != i and labels[j] == labels[i]]
        inner = sum(-log_prob(z, i, j, tau) for j in same)
        total += inner / len(same)
    return total / len(z)


def labeled_risk_ref(z, s, tau):
    """Raw sum over labeled anchors; zero if fewer than two labeled."""
    labeled = [i for i in range(len(z)) if s[i] == 1]
    if len(labeled) < 2:
        return 0.0
    total = 0.0
    for i in labeled:
        inner = sum(-log_prob(z, i, j, tau) for j in labeled if j != i)
        total += inner / (len(labeled) - 1)
    return total


def unlabeled_risk_ref(z, s, pair, tau, pi):
    """Raw sum over unlabeled anchors of the pi-weighted two-hypothesis term."""
    labeled = [i for i in range(len(z)) if s[i] == 1]
    total = 0.0
    for i in range(len(z)):
        if s[i] == 1:
            continue
        pos_targets = labeled + [pair[i]]
        pos = sum(log_prob(z, i, j, tau) for j in pos_targets) * pi / len(pos_targets)
        neg = (1.0 - pi) * log_prob(z, i, pair[i], tau)
        total += -(pos + neg)
    return total


def punce_ref(z, s, pair, tau, pi):
    return (labeled_risk_ref(z, s, tau) + unlabeled_risk_ref(z, s, pair, tau, pi)) / len(z)


def scl_pu_ref(z, s, pair, tau):
    total = labeled_risk_ref(z, s, tau)
    for i in range(len(z)):
        if s[i] == 0:
            total += -log_prob(z, i, pair[i], tau)
    return total / len(z)


def punce_pnu_ref(z, s, labels, pair, tau, pi):
    pos = [i for i in range(len(z)) if s[i] == 1 and labels[i] == 1]
    neg = [i for i in range(len(z)) if s[i] == 1 and labels[i] == -1]
    total = 0.0
    for i in pos + neg:
        group = pos if labels[i] == 1 else neg
        same = [j for j in group if j != i]
        total += sum(-log_prob(z, i, j, tau) for j in same) / len(same)
    for i in range(len(z)):
        if s[i] == 1:
            continue
        pos_targets = pos + [pair[i]]
        neg_targets = neg + [pair[i]]
        p_term = sum(log_prob(z, i, j, tau) for j in pos_targets) * pi / len(pos_targets)
        n_term = sum(log_prob(z, i, j, tau) for j in neg_targets) * (1.0 - pi) / len(neg_targets)
        total += -(p_term + n_term)
    return total / len(z)


def gemm_ref(a, b):
    n, k = a.shape
    k2, m = b.shape
    assert k == k2
    out = np.zeros((n, m))
    for i in range(n):
        for j in range(m):
            acc = 0.0
            for t in range(k):
                acc += a[i, t] * b[t, j]
            out[i, j] = acc
    return out


def central_difference(f, x, h=1e-5):
    """Gradient of scalar f at x, one entry at a time."""
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    while not it.finished:
        idx = it.multi_index
        orig = x[idx]
        x[idx] = orig + h
        hi = f(x)
        x[idx] = orig - h
        lo = f(x)
        x[idx] = orig
        grad[idx] = (hi - lo) / (2.0 * h)
        it.iternext()
    return grad


def grads_close(analytic, numeric, rtol, atol):
    """Elementwise |a-b| <= atol or <= rtol*max(|a|,|b|); atol only covers
    the finite-difference noise floor."""
    a = np.asarray(analytic, dtype=np.float64)
    b = np.asarray(numeric, dtype=np.float64)
    if a.shape != b.shape:
        return False
    diff = np.abs(a - b)
    scale = np.maximum(np.abs(a), np.abs(b))
    return bool(np.all((diff <= atol) | (diff <= rtol * scale)))


def random_unit_rows(gen, rows, cols):
    z = gen.normal(size=(rows, cols))
    return z / np.sqrt(np.sum(z * z, axis=1, keepdims=True))


def random_batch(gen, b, k, n_labeled_sources=None):
    """Random embedded-batch ingredients: unit rows, sibling pairing, s."""
    z = random_unit_rows(gen, 2 * b, k)
    pair = np.arange(2 * b)
    pair[0::2] += 1
    pair[1::2] -= 1
    if n_labeled_sources is None:
        n_labeled_sources = int(gen.integers(0, b + 1))
    src_s = np.zeros(b, dtype=np.int64)
    if n_labeled_sources:
        chosen = gen.choice(b, size=n_labeled_sources, replace=False)
        src_s[chosen] = 1
    return z, pair, np.repeat(src_s, 2)
