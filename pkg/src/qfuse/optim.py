"""In-place optimisers over lists of :class:`~qfuse.tensor.Parameter`."""
import numpy as np

from qfuse.tensor import ContractError


def _grads(params):
    for p in params:
        if p.grad is None:
            raise ContractError(f"parameter {p.name!r} has no gradient")
        yield p, p.grad


def adagrad_step(params, lr, weight_decay=0.0, eps=1e-8):
    """AdaGrad with L2 weight decay folded into the gradient; clears grads."""
    for p, grad in list(_grads(params)):
        g = grad + p.dtype.type(weight_decay) * p.data if weight_decay else grad
        p.accumulator += g * g
        p.data -= p.dtype.type(lr) * g / (np.sqrt(p.accumulator) + p.dtype.type(eps))
        p.grad = None


def sgd_step(params, lr):
    for p, grad in list(_grads(params)):
        p.data -= p.dtype.type(lr) * grad
        p.grad = None
