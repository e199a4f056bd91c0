"""Independent scalar-arithmetic oracle for the optimizer steppers.

Pure-Python floats and ``math`` only; deliberately written without the
library so stepper tests have a second, independent arithmetic path.
"""

import math


class ScalarAdamOracle:
    def __init__(self, alpha, beta1=0.9, beta2=0.999, eps=1e-8, weight_decay=0.0):
        self.alpha = alpha
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = 0.0
        self.v = 0.0

    def step(self, theta, grad, eta=1.0):
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * (grad * grad)
        mhat = self.m / (1 - self.beta1**self.t)
        vhat = self.v / (1 - self.beta2**self.t)
        return theta - eta * (self.alpha * mhat / (math.sqrt(vhat) + self.eps)
                              + self.weight_decay * theta)


def quadratic_bowl_trace(steps, alpha=0.1, theta0=1.0, weight_decay=0.0):
    """Adam trajectory on f(theta) = 0.5 * theta^2 (gradient is theta)."""
    oracle = ScalarAdamOracle(alpha, weight_decay=weight_decay)
    theta = theta0
    out = []
    for _ in range(steps):
        theta = oracle.step(theta, theta)
        out.append(theta)
    return out
