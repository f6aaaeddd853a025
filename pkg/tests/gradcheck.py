import numpy as np

from openpu.heads import multi_pu_risk
from openpu.losses import ce_loss, kl_align
from openpu.numerics import backward, forward, init_network


def composed_loss(net, xk, yk, xw, loss, weights, t, other=None, beta=1.0):
    """CE on the labeled part + multi-PU risk (+ beta * KL against ``other`` on wild rows).

    Returns ``(value, grads)`` where ``grads`` are the analytic parameter gradients.
    """
    nk = len(yk)
    q, f, cache = forward(net, np.vstack([xk, xw]))
    ce, g_ce = ce_loss(q[:nk], yk)
    dq = np.zeros_like(q)
    dq[:nk] = g_ce / nk
    r, gk, gw = multi_pu_risk(f[:nk], yk, f[nk:], loss, weights, t)
    df = np.vstack([gk, gw])
    value = ce.mean() + r
    if other is not None:
        _, f2, _ = forward(other, xw)
        kl, gp, _ = kl_align(f[nk:], f2)
        value += beta * kl
        df[nk:] += beta * gp
    return float(value), backward(net, cache, dq, df)


def finite_difference(fn, net, eps=1e-5):
    """Central differences of ``fn(net)`` with respect to every parameter entry."""
    out = {}
    for name, w in net.params.items():
        g = np.zeros_like(w)
        it = np.nditer(w, flags=["multi_index"])
        for _ in it:
            i = it.multi_index
            old = w[i]
            w[i] = old + eps
            up = fn(net)
            w[i] = old - eps
            down = fn(net)
            w[i] = old
            g[i] = (up - down) / (2 * eps)
        out[name] = g
    return out


def max_rel_error(a: dict, b: dict, floor=1e-7) -> float:
    worst = 0.0
    for k in a:
        denom = np.maximum(np.maximum(np.abs(a[k]), np.abs(b[k])), floor)
        worst = max(worst, float(np.max(np.abs(a[k] - b[k]) / denom)))
    return worst


def random_problem(rng):
    """Small random net + batch as used by the gradient checks."""
    d_in = int(rng.integers(2, 9))
    C = int(rng.integers(2, 5))
    hidden = tuple(int(h) for h in rng.integers(2, 17, size=rng.integers(1, 3)))
    heads = C if rng.uniform() < 0.7 else 1
    net = init_network(d_in, C, hidden, heads, seed=int(rng.integers(1 << 30)))
    for v in net.params.values():
        v += 0.1 * rng.standard_normal(v.shape)
    n_k = int(rng.integers(C, 9))
    yk = np.concatenate([np.arange(1, C + 1), rng.integers(1, C + 1, size=n_k - C)])
    xk = rng.standard_normal((n_k, d_in))
    xw = rng.standard_normal((int(rng.integers(1, 9)), d_in))
    return net, xk, yk, xw
