"""Module base class and the stateless layers used to build connection functions.

Every layer consumes and produces sequences shaped ``(T, B, ...)``.  Stateless
layers fold time into the batch axis, so batch-norm statistics are computed
jointly over batch and time.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor


class Module:
    """Parameter container with train/eval switching."""

    training = True

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def _children(self):
        for value in vars(self).values():
            if isinstance(value, (Module, Parameter)):
                yield value
            elif isinstance(value, (list, tuple)):
                for item in value:
                    if isinstance(item, (Module, Parameter)):
                        yield item

    def modules(self):
        yield self
        for child in self._children():
            if isinstance(child, Module):
                yield from child.modules()

    def parameters(self):
        seen = set()
        for mod in self.modules():
            for child in mod._children():
                if isinstance(child, Parameter) and id(child) not in seen:
                    seen.add(id(child))
                    yield child

    def num_parameters(self):
        return int(sum(p.size for p in self.parameters()))

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def train(self, mode=True):
        for mod in self.modules():
            mod.training = mode
        return self

    def eval(self):
        return self.train(False)


def fold_time(x, fn):
    """Apply ``fn`` to a (T, B, ...) sequence with time folded into the batch."""
    t, b = x.shape[:2]
    y = fn(ad.reshape(x, (t * b,) + x.shape[2:]))
    return ad.reshape(y, (t, b) + y.shape[1:])


def kaiming_uniform(rng, shape, fan_in):
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Conv2d(Module):
    def __init__(self, in_channels, out_channels, kernel_size=3, stride=1, padding=None, bias=False, rng=None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel_size = kernel_size
        self.stride = stride
        self.padding = kernel_size // 2 if padding is None else padding
        fan_in = in_channels * kernel_size * kernel_size
        self.weight = Parameter(kaiming_uniform(rng, (out_channels, in_channels, kernel_size, kernel_size), fan_in))
        self.bias = Parameter(np.zeros(out_channels)) if bias else None

    def forward(self, x):
        return fold_time(x, lambda z: ad.conv2d(z, self.weight, self.bias, self.stride, self.padding))


class Linear(Module):
    """Fully connected layer; inputs with more than one feature axis are flattened."""

    def __init__(self, in_features, out_features, bias=True, rng=None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.in_features = in_features
        self.out_features = out_features
        self.weight = Parameter(kaiming_uniform(rng, (in_features, out_features), in_features))
        self.bias = Parameter(np.zeros(out_features)) if bias else None

    def forward(self, x):
        def f(z):
            z = ad.reshape(z, (z.shape[0], -1))
            y = ad.matmul(z, self.weight)
            return y + self.bias if self.bias is not None else y

        return fold_time(x, f)


class BatchNorm(Module):
    def __init__(self, channels, momentum=0.9, eps=1e-5):
        self.channels = channels
        self.momentum = momentum
        self.eps = eps
        self.weight = Parameter(np.ones(channels))
        self.bias = Parameter(np.zeros(channels))
        self.running_mean = np.zeros(channels)
        self.running_var = np.ones(channels)

    def forward(self, x):
        return fold_time(
            x,
            lambda z: ad.batch_norm(
                z,
                self.weight,
                self.bias,
                self.running_mean,
                self.running_var,
                self.training,
                self.momentum,
                self.eps,
            ),
        )


class MaxPool(Module):
    def __init__(self, kernel_size=2, stride=None):
        self.kernel_size = kernel_size
        self.stride = stride or kernel_size

    def forward(self, x):
        return fold_time(x, lambda z: ad.max_pool2d(z, self.kernel_size, self.stride))


class AvgPool(Module):
    def __init__(self, kernel_size=2, stride=None):
        self.kernel_size = kernel_size
        self.stride = stride or kernel_size

    def forward(self, x):
        return fold_time(x, lambda z: ad.avg_pool2d(z, self.kernel_size, self.stride))


class Dropout(Module):
    """Inverted dropout with an independent mask at every time-step."""

    def __init__(self, p=0.5, rng=None):
        self.p = p
        self.rng = rng if rng is not None else np.random.default_rng(0)

    def forward(self, x):
        if not self.training or self.p == 0:
            return x
        keep = self.rng.random(x.shape) >= self.p
        return x * Tensor._wrap(keep / (1.0 - self.p))


class Sequential(Module):
    def __init__(self, *layers):
        self.layers = list(layers)

    def forward(self, x):
        for layer in self.layers:
            x = layer(x)
        return x

    def __iter__(self):
        return iter(self.layers)

    def __getitem__(self, i):
        return self.layers[i]

    def __len__(self):
        return len(self.layers)
