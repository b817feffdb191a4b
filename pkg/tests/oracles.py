"""Independent reference computations used by several test modules.

None of these go through the package's update code; they only use the
package to evaluate losses and gradients.
"""

import math

import numpy as np

from gbmeta import model as mdl


def finetune_cycle_fixed_point_a(lr: float, T: int) -> float:
    """Fixed point of (T steps on task 1) then (T steps on task 2), scenario a.

    Each block of plain gradient steps on a quadratic is affine:
    task 1 maps x - 5 to A (x - 5), task 2 maps x - 100 to B (x - 100).
    """
    A = (1 - 2.6 * lr) ** T
    B = (1 - 2.0 * lr) ** T
    return (100 - 95 * B - 5 * A * B) / (1 - A * B)


def sgd_reference(arrays, grad_fn, lr, batches):
    """Plain list-of-arrays SGD; returns the trajectory (one flat vector per step)."""
    arrays = [np.array(a) for a in arrays]
    traj = []
    for batch in batches:
        grads = grad_fn(arrays, batch)
        arrays = [a - lr * g for a, g in zip(arrays, grads)]
        traj.append(np.concatenate([a.ravel() for a in arrays]))
    return traj


def network_grad(template: mdl.LayeredParams):
    def grad_fn(arrays, batch):
        _, g = mdl.loss_and_grads(template.from_arrays(arrays), batch.x, batch.y)
        return g.arrays()

    return grad_fn


def pearson_bruteforce(xs, ys):
    """Textbook sums, and the two-sided p-value by numerically integrating the t density."""
    n = len(xs)
    mx, my = sum(xs) / n, sum(ys) / n
    sxy = sum((a - mx) * (b - my) for a, b in zip(xs, ys))
    sxx = sum((a - mx) ** 2 for a in xs)
    syy = sum((b - my) ** 2 for b in ys)
    r = sxy / math.sqrt(sxx * syy)
    df = n - 2
    t = abs(r) * math.sqrt(df / (1 - r * r))
    c = math.gamma((df + 1) / 2) / (math.sqrt(df * math.pi) * math.gamma(df / 2))
    # Simpson's rule over [0, t] of the t density; p = 1 - 2 * integral
    m = 20000
    h = t / m
    dens = [c * (1 + (i * h) ** 2 / df) ** (-(df + 1) / 2) for i in range(m + 1)]
    integral = h / 3 * (dens[0] + dens[-1] + 4 * sum(dens[1:-1:2]) + 2 * sum(dens[2:-1:2]))
    return r, 1 - 2 * integral
