"""First-order optimizers operating in place on Tensor parameters."""

import numpy as np

from patchpcc._jit import njit


# Fused single-pass updates; the big decoder layer makes temporaries expensive.
@njit(cache=True)
def _adam_kernel(p, g, m, v, beta1, beta2, step, eps_hat):
    for i in range(p.size):
        gi = g[i]
        mi = beta1 * m[i] + (1.0 - beta1) * gi
        vi = beta2 * v[i] + (1.0 - beta2) * (gi * gi)
        m[i] = mi
        v[i] = vi
        p[i] -= step * mi / (np.sqrt(vi) + eps_hat)


@njit(cache=True)
def _rmsprop_kernel(p, g, v, alpha, lr, eps):
    for i in range(p.size):
        gi = g[i]
        vi = alpha * v[i] + (1.0 - alpha) * (gi * gi)
        v[i] = vi
        p[i] -= lr * gi / (np.sqrt(vi) + eps)


def _flat(a):
    if not a.flags.c_contiguous:
        raise ValueError("optimizer state must be C-contiguous")
    return a.reshape(-1)


class Optimizer:
    def __init__(self, params, lr):
        self.params = list(params)
        self.lr = float(lr)
        self.step_count = 0

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        self.step_count += 1
        for i, p in enumerate(self.params):
            if p.grad is not None:
                self._update(i, p, p.grad)

    def _update(self, i, p, g):
        raise NotImplementedError


class Adam(Optimizer):
    def __init__(self, params, lr=5e-4, betas=(0.9, 0.999), eps=1e-8):
        super().__init__(params, lr)
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.m = [np.zeros(p.shape) for p in self.params]
        self.v = [np.zeros(p.shape) for p in self.params]

    def _update(self, i, p, g):
        t = self.step_count
        step = self.lr * np.sqrt(1.0 - self.beta2 ** t) / (1.0 - self.beta1 ** t)
        eps_hat = self.eps * np.sqrt(1.0 - self.beta2 ** t)
        # Equivalent to lr * m_hat / (sqrt(v_hat) + eps) with the bias corrections folded in.
        _adam_kernel(_flat(p.data), np.ascontiguousarray(g).reshape(-1),
                     _flat(self.m[i]), _flat(self.v[i]),
                     self.beta1, self.beta2, step, eps_hat)


class RMSprop(Optimizer):
    def __init__(self, params, lr=5e-5, alpha=0.99, eps=1e-8):
        super().__init__(params, lr)
        self.alpha = alpha
        self.eps = eps
        self.v = [np.zeros(p.shape) for p in self.params]

    def _update(self, i, p, g):
        _rmsprop_kernel(_flat(p.data), np.ascontiguousarray(g).reshape(-1),
                        _flat(self.v[i]), self.alpha, self.lr, self.eps)
