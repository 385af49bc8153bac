"""Layer containers and parameter initialisation."""
from __future__ import annotations

from contextlib import contextmanager

import numpy as np

from qfuse import tensor as T
from qfuse.tensor import Parameter


def he_uniform(rng, shape, fan_in, dtype):
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Module:
    """Base class: parameters are discovered from attributes in definition order."""

    def parameters(self):
        params = []
        for value in vars(self).values():
            if isinstance(value, Parameter):
                params.append(value)
            elif isinstance(value, Module):
                params.extend(value.parameters())
            elif isinstance(value, (list, tuple)):
                for item in value:
                    if isinstance(item, Module):
                        params.extend(item.parameters())
        return params

    def named_parameters(self):
        return [(p.name, p) for p in self.parameters()]

    def zero_grads(self):
        T.zero_grads(self.parameters())

    @contextmanager
    def frozen(self):
        """Treat the parameters as constants (no gradients) inside the block."""
        params = self.parameters()
        for p in params:
            p.requires_grad = False
        try:
            yield self
        finally:
            for p in params:
                p.requires_grad = True

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


class Conv2d(Module):
    def __init__(self, name, in_ch, out_ch, k, rng, stride=1, pad=None, act="relu", dtype=np.float32):
        self.stride = stride
        self.pad = (k - 1) // 2 if pad is None else pad
        self.act = act
        self.weight = Parameter(he_uniform(rng, (out_ch, in_ch, k, k), in_ch * k * k, dtype), f"{name}.weight")
        self.bias = Parameter(np.zeros(out_ch, dtype=dtype), f"{name}.bias")

    def forward(self, x):
        y = T.conv2d(x, self.weight, self.bias, self.stride, self.pad)
        return T.activation(y, self.act) if self.act else y


class Dense(Module):
    def __init__(self, name, n_in, n_out, rng, act=None, dtype=np.float32):
        self.act = act
        self.weight = Parameter(he_uniform(rng, (n_in, n_out), n_in, dtype), f"{name}.weight")
        self.bias = Parameter(np.zeros(n_out, dtype=dtype), f"{name}.bias")

    def forward(self, x):
        y = T.dense(x, self.weight, self.bias)
        return T.activation(y, self.act) if self.act else y


def copy_parameters(src, dst):
    """Overwrite ``dst``'s parameter values with ``src``'s (same architecture)."""
    sp, dp = src.parameters(), dst.parameters()
    if len(sp) != len(dp) or any(a.shape != b.shape or a.name != b.name for a, b in zip(sp, dp)):
        raise T.ContractError("parameter layouts differ")
    for a, b in zip(sp, dp):
        b.data = a.data.copy()
