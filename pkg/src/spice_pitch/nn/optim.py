import numpy as np


class Adam:
    """Adam with bias correction; moments live on each :class:`Parameter`."""

    def __init__(self, params, lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        b1, b2 = self.beta1, self.beta2
        for p in self.params:
            if p.grad is None:
                continue
            g = p.grad.astype(p.data.dtype, copy=False)
            p.step += 1
            p.m *= b1
            p.m += (1.0 - b1) * g
            p.v *= b2
            p.v += (1.0 - b2) * (g * g)
            mhat = p.m / (1.0 - b1 ** p.step)
            vhat = p.v / (1.0 - b2 ** p.step)
            p.data -= (self.lr * mhat / (np.sqrt(vhat) + self.eps)).astype(p.data.dtype)
