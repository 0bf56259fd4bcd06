"""Independent reference computations shared by the unit and acceptance tests."""

import math

import numpy as np

from deltasampling.denoiser import init_mlp, mlp_forward, mlp_gradient


def loss(model, x, t, target):
    out = mlp_forward(model, x, t)
    return 0.5 * float(np.mean(np.sum((np.atleast_2d(out) - np.atleast_2d(target)) ** 2, axis=1)))


def finite_difference_error(model, x, t, target, h=1e-5, floor=1e-8):
    """Worst relative error of ``mlp_gradient`` against central differences.

    Entries where both values are below ``floor`` are compared absolutely.
    """
    analytic = mlp_gradient(model, x, t, target)
    params = [p.copy() for p in model.params()]
    worst = 0.0
    for k, p in enumerate(params):
        for idx in np.ndindex(p.shape):
            orig = p[idx]
            p[idx] = orig + h
            up = loss(model.with_params(params), x, t, target)
            p[idx] = orig - h
            down = loss(model.with_params(params), x, t, target)
            p[idx] = orig
            num = (up - down) / (2 * h)
            a = analytic[k][idx]
            scale = max(abs(a), abs(num))
            err = abs(a - num) if scale < floor else abs(a - num) / scale
            worst = max(worst, err)
    return worst


def gradient_check_suite(n_nets=20, seed=0):
    """Max relative error over ``n_nets`` random small nets, inputs and targets."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_nets):
        depth = int(rng.integers(0, 3))
        hidden = [int(rng.integers(2, 7)) for _ in range(depth)]
        T = int(rng.integers(2, 50))
        model = init_mlp(2, hidden, T, rng)
        x = rng.normal(size=(int(rng.integers(1, 4)), 2)) * 2
        t = rng.integers(1, T + 1, size=x.shape[0])
        target = rng.normal(size=x.shape)
        worst = max(worst, finite_difference_error(model, x, t, target))
    return worst


def straight_line_forward(weights, biases, x, t, T):
    """Plain-Python forward pass: scalar loops, no numpy broadcasting."""
    inp = list(x)
    for f in (1.0, 2.0, 4.0, 8.0):
        inp.append(math.sin(2 * math.pi * f * t / T))
    for f in (1.0, 2.0, 4.0, 8.0):
        inp.append(math.cos(2 * math.pi * f * t / T))
    act = inp
    for layer, (W, b) in enumerate(zip(weights, biases)):
        z = [sum(W[i][j] * act[j] for j in range(len(act))) + b[i] for i in range(len(W))]
        act = z if layer == len(weights) - 1 else [math.tanh(v) for v in z]
    return act


def chi2_mean_distance(scale):
    """E||X - Y|| for X - Y ~ N(0, scale^2 I_2), by quadrature of the chi(2) density."""
    from scipy.integrate import quad

    val, _ = quad(lambda r: r * r * math.exp(-r * r / 2), 0, math.inf)
    return scale * val
