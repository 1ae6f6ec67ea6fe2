"""Independent numerical oracles shared by the unit and acceptance tests.

Nothing here calls the package's gradient code: derivatives are central
differences of forward evaluations only.
"""

import numpy as np

from distq.bounds import parallel_message_law
from distq.net import forward, init_mlp
from distq.training import fc_loss, quantizer_loss

HEADS = ("sigmoid", "tanh", "softmax", "identity")


def rel_err(a, b, floor=1e-8):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(b)), floor))


def central_diff(f, x, step=1e-6):
    """Gradient of scalar f at array x by central differences."""
    x = np.array(x, dtype=float)
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        orig = x[i]
        x[i] = orig + step
        fp = f(x)
        x[i] = orig - step
        fm = f(x)
        x[i] = orig
        g[i] = (fp - fm) / (2 * step)
    return g


def random_net_case(rng, head):
    """(net, x, upstream) with a random shape and the given head."""
    depth = int(rng.integers(1, 4))
    in_dim = int(rng.integers(1, 4))
    out_dim = int(rng.integers(2, 5)) if head == "softmax" else int(rng.integers(1, 3))
    sizes = [in_dim] + [int(rng.integers(2, 7)) for _ in range(depth - 1)] + [out_dim]
    acts = [str(rng.choice(["relu", "tanh", "sigmoid"])) for _ in range(depth - 1)] + [head]
    net = init_mlp(sizes, acts, int(rng.integers(0, 2**31)))
    net = net.with_params([p + rng.normal(0, 0.3, p.shape) for p in net.params()])
    n = int(rng.integers(1, 4))
    x = rng.normal(0, 1, (n, in_dim))
    up = rng.normal(0, 1, (n, out_dim))
    return net, x, up


def net_fd_grads(net, x, up, step=1e-6):
    params = net.params()
    out = []
    for j, p in enumerate(params):

        def f(pj, j=j):
            ps = list(params)
            ps[j] = pj
            return float(np.sum(up * forward(net.with_params(ps), x)))

        out.append(central_diff(f, p, step))
    gx = central_diff(lambda xx: float(np.sum(up * forward(net, xx))), x, step)
    return out, gx


def quantizer_loss_fd(thetas, gammas, K, scheme, step=1e-7):
    return central_diff(lambda g: quantizer_loss(thetas, g, K, scheme)[0], gammas, step)


def fc_loss_fd(thetas, gammas, net, K, scheme, step=1e-6):
    params = net.params()
    out = []
    for j, p in enumerate(params):

        def f(pj, j=j):
            ps = list(params)
            ps[j] = pj
            return fc_loss(thetas, gammas, net.with_params(ps), K, scheme)[0]

        out.append(central_diff(f, p, step))
    return out


def random_gammas(rng, scheme, B, dim):
    if scheme == "onehot":
        g = rng.dirichlet(np.ones(dim) * 2.0, size=B)
        return g
    g = rng.uniform(0.1, 0.9, size=(B, dim))
    return g[:, 0] if scheme == "binary" else g


def posterior_mean_bruteforce(message_law, prior):
    """E[theta | message matrix] for each enumerated message, straight from Bayes."""
    nodes, w = prior.quadrature
    P = message_law.prob(nodes)
    den = P @ w
    num = P @ (w * nodes)
    out = np.full(len(den), prior.mean)
    pos = den > 0
    out[pos] = num[pos] / den[pos]
    return out, den


__all__ = ["parallel_message_law"]
