"""Named parameter storage and the small layer helpers the networks share."""
import math
from collections import OrderedDict

import numpy as np

from .tensorcore import Tensor, conv2d, conv3d, relu


class ParamStore:
    """Ordered mapping of parameter name to leaf tensor.

    Names are dotted; the first component is the parameter *group*
    (``spx``, ``feat``, ``guide``, ``agg``) used by gradient checks.
    Initialisation is He-style fan-in scaling from a seeded generator.
    """

    def __init__(self, seed=0):
        self.rng = np.random.default_rng(seed)
        self.params = OrderedDict()

    def __getitem__(self, name):
        return self.params[name]

    def __contains__(self, name):
        return name in self.params

    def __iter__(self):
        return iter(self.params)

    def __len__(self):
        return len(self.params)

    def items(self):
        return self.params.items()

    def add(self, name, data):
        if name in self.params:
            raise KeyError(f"duplicate parameter {name!r}")
        t = Tensor(data, requires_grad=True, name=name)
        self.params[name] = t
        return t

    def conv(self, name, c_in, c_out, k, dims=2, gain=math.sqrt(2.0), bias=True):
        fan_in = c_in * k ** dims
        w = self.rng.standard_normal((c_out, c_in) + (k,) * dims) * (gain / math.sqrt(fan_in))
        self.add(f"{name}.weight", w)
        if bias:
            self.add(f"{name}.bias", np.zeros(c_out))

    def groups(self):
        out = OrderedDict()
        for name, t in self.params.items():
            out.setdefault(name.split(".", 1)[0], []).append(t)
        return out

    def zero_grad(self):
        for t in self.params.values():
            t.grad = None

    def num_parameters(self):
        return sum(t.size for t in self.params.values())

    def state(self):
        return OrderedDict((k, v.data.copy()) for k, v in self.params.items())

    def load_state(self, state):
        missing = set(self.params) ^ set(state)
        if missing:
            raise KeyError(f"parameter sets differ: {sorted(missing)}")
        for name, arr in state.items():
            if arr.shape != self.params[name].shape:
                raise ValueError(f"{name}: shape {arr.shape} != {self.params[name].shape}")
            self.params[name].data = np.array(arr, dtype=np.float64)


def conv2(p, name, x, stride=1, act=True):
    w = p[f"{name}.weight"]
    k = w.shape[-1]
    y = conv2d(x, w, p[f"{name}.bias"], stride=stride, padding=k // 2)
    return relu(y) if act else y


def conv3(p, name, x, act=True):
    w = p[f"{name}.weight"]
    k = w.shape[-1]
    y = conv3d(x, w, p[f"{name}.bias"], stride=1, padding=k // 2)
    return relu(y) if act else y
