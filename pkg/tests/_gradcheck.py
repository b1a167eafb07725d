"""Central finite-difference gradient checking shared by the test modules."""

import numpy as np


def central_diff(loss_fn, x, eps=1e-5):
    """Numerical gradient of a scalar function with respect to array x."""
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + eps
        fp = loss_fn()
        flat[i] = old - eps
        fm = loss_fn()
        flat[i] = old
        gflat[i] = (fp - fm) / (2.0 * eps)
    return g


def rel_error(analytic, numeric):
    scale = max(float(np.abs(numeric).max()), float(np.abs(analytic).max()), 1e-8)
    return float(np.abs(analytic - numeric).max()) / scale


def layer_input_grad(layer, x, probe, rng=None):
    """Analytic d(sum(forward(x) * probe))/dx via the layer's backward."""
    layer.forward(x, train=True, rng=rng)
    return layer.backward(probe.copy())


def check_layer(layer, x, *, param_names=(), seed=7, eps=1e-5, rng_factory=None):
    """Compare backward() and parameter grads against finite differences.

    Returns the worst relative error across the input and all named
    parameters.  The layer must be deterministic given ``rng_factory``.
    """
    rng = np.random.default_rng(seed)

    def fresh_rng():
        return rng_factory() if rng_factory is not None else None

    out = layer.forward(x.copy(), train=True, rng=fresh_rng())
    probe = rng.standard_normal(out.shape).astype(x.dtype)

    def loss():
        return float((layer.forward(x, train=True, rng=fresh_rng()) * probe).sum())

    analytic_dx = layer_input_grad(layer, x, probe, rng=fresh_rng())
    worst = rel_error(analytic_dx, central_diff(loss, x, eps))

    for name in param_names:
        layer.forward(x, train=True, rng=fresh_rng())
        layer.backward(probe.copy())
        analytic = layer.grads()[name].copy()
        numeric = central_diff(loss, layer.params()[name], eps)
        worst = max(worst, rel_error(analytic, numeric))
    return worst
