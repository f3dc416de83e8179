"""Loop-based reference implementations used as independent test oracles."""
import math

import numpy as np

from emokd.distillation import DistillHead, DistillHeadConfig, DistillHyperparams, loss_gradients


def naive_softmax(z, tau):
    m = max(v / tau for v in z)
    e = [math.exp(v / tau - m) for v in z]
    s = sum(e)
    return [v / s for v in e]


def naive_kl(p, q):
    return sum(pi * math.log(pi / qi) for pi, qi in zip(p, q) if pi > 0)


def naive_total_loss(params, x, teacher, y, alpha, tau):
    """Forward pass and the weighted KD + CE objective written from scratch, averaged over rows."""
    n_layers = len(params) // 2
    total = 0.0
    for row, t_row, label in zip(x, teacher, y):
        h = list(row)
        for k in range(n_layers):
            w, b = params[2 * k], params[2 * k + 1]
            z = [sum(w[o, i] * h[i] for i in range(len(h))) + b[o] for o in range(w.shape[0])]
            h = [max(v, 0.0) for v in z] if k < n_layers - 1 else z
        kd = tau * tau * naive_kl(naive_softmax(t_row, tau), naive_softmax(h, tau))
        ce = -math.log(naive_softmax(h, 1.0)[label])
        total += alpha * kd + (1 - alpha) * ce
    return total / len(y)


def _pre_activations(params, x):
    out, h = [], x
    for k in range(len(params) // 2 - 1):
        z = h @ params[2 * k].T + params[2 * k + 1]
        out.append(z)
        h = np.maximum(z, 0)
    return out


def fd_check(seed, alpha, tau, step=1e-4, max_dim=8, max_classes=4, max_hidden=2):
    """Worst per-coordinate relative error of analytic vs central-difference gradients.

    Returns None when a hidden pre-activation sits too close to the ReLU kink
    for central differences to be meaningful; callers draw another head.
    """
    rng = np.random.default_rng(seed)
    d, C = int(rng.integers(2, max_dim + 1)), int(rng.integers(2, max_classes + 1))
    hidden = tuple(int(v) for v in rng.integers(2, 6, size=int(rng.integers(0, max_hidden + 1))))
    head = DistillHead.init(DistillHeadConfig(d, hidden, C), seed=seed)
    for p in head.params:
        p += rng.normal(scale=0.3, size=p.shape)
    n = 3
    x = rng.normal(size=(n, d))
    if any(np.min(np.abs(z)) < 1e-2 for z in _pre_activations(head.params, x)):
        return None
    teacher = rng.normal(scale=2.0, size=(n, C))
    y = rng.integers(0, C, size=n)
    grads = loss_gradients(x, head, teacher, y, DistillHyperparams(alpha=alpha, tau=tau))
    worst = 0.0
    for p, g in zip(head.params, grads):
        for idx in np.ndindex(p.shape):
            orig = p[idx]
            p[idx] = orig + step
            up = naive_total_loss(head.params, x, teacher, y, alpha, tau)
            p[idx] = orig - step
            down = naive_total_loss(head.params, x, teacher, y, alpha, tau)
            p[idx] = orig
            num = (up - down) / (2 * step)
            worst = max(worst, abs(g[idx] - num) / max(abs(g[idx]), abs(num), 1e-3))
    return worst
