"""Scripted reference of the bias-corrected Adam recurrence.

Prints the parameter after each step of minimizing f(x) = x^2 from x = 1.
Values are frozen into tests/unit/test_tensor.cpp.
"""
import math


def adam(x, grad_fn, steps, lr, b1=0.9, b2=0.999, eps=1e-8):
    m = v = 0.0
    out = []
    for t in range(1, steps + 1):
        g = grad_fn(x)
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        mhat = m / (1 - b1 ** t)
        vhat = v / (1 - b2 ** t)
        x = x - lr * mhat / (math.sqrt(vhat) + eps)
        out.append(x)
    return out


if __name__ == "__main__":
    for lr in (0.1, 1e-3):
        print(lr, [repr(v) for v in adam(1.0, lambda x: 2 * x, 2, lr)])
