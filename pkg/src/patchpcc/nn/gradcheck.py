"""Central finite-difference verification of analytic gradients."""

from dataclasses import dataclass

import numpy as np


@dataclass
class GradCheckReport:
    max_rel_error: float
    n_checked: int
    worst: tuple          # (tensor index, flat entry, analytic, numeric)
    tolerance: float

    @property
    def passed(self):
        return self.max_rel_error < self.tolerance


def relative_error(analytic, numeric, floor=1e-8):
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def grad_check(loss_fn, tensors, tolerance=1e-4, step=1e-5, max_entries=None,
               rng=None, floor=1e-8):
    """Compare backprop gradients of ``loss_fn()`` against central differences.

    ``loss_fn`` must rebuild the graph from the current tensor values on every
    call.  With ``max_entries`` set, that many entries per tensor are sampled
    (with ``rng``) instead of sweeping all of them.
    """
    for t in tensors:
        t.grad = None
    loss_fn().backward()
    analytic = [np.zeros(t.shape) if t.grad is None else t.grad.copy() for t in tensors]

    worst = (None, None, 0.0, 0.0)
    max_err = 0.0
    checked = 0
    for ti, t in enumerate(tensors):
        flat = t.data.reshape(-1)
        entries = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            rng = rng or np.random.default_rng(0)
            entries = rng.choice(flat.size, size=max_entries, replace=False)
        for e in entries:
            orig = flat[e]
            flat[e] = orig + step
            up = loss_fn().item()
            flat[e] = orig - step
            down = loss_fn().item()
            flat[e] = orig
            numeric = (up - down) / (2.0 * step)
            a = analytic[ti].reshape(-1)[e]
            err = relative_error(a, numeric, floor)
            checked += 1
            if err > max_err:
                max_err = err
                worst = (ti, int(e), float(a), float(numeric))
    for t in tensors:
        t.grad = None
    return GradCheckReport(max_err, checked, worst, tolerance)
