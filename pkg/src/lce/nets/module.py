"""Parameter containers and the basic layers every block is built from."""
from __future__ import annotations

from typing import Callable, Iterator, Optional

import numpy as np

from .. import ops
from ..tensor import Parameter, Tensor, get_default_dtype


class Module:
    """Base class: attributes that are Parameters, Modules or lists of Modules
    are discovered (in assignment order) by :meth:`named_parameters`."""

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def __call__(self, *args, **kwargs):
        out = self.forward(*args, **kwargs)
        sink = self.__dict__.get("_sink")
        if sink is not None:
            sink(out)
        return out

    def named_children(self) -> Iterator[tuple[str, "Module"]]:
        for name, value in vars(self).items():
            if isinstance(value, Module):
                yield name, value
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield f"{name}.{i}", item

    def named_modules(self, prefix: str = "") -> Iterator[tuple[str, "Module"]]:
        yield prefix, self
        for name, child in self.named_children():
            yield from child.named_modules(f"{prefix}.{name}" if prefix else name)

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for name, value in vars(self).items():
            if isinstance(value, Parameter):
                yield (f"{prefix}.{name}" if prefix else name), value
        for name, child in self.named_children():
            yield from child.named_parameters(f"{prefix}.{name}" if prefix else name)

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def trainable(self) -> list[tuple[str, Parameter]]:
        return [(n, p) for n, p in self.named_parameters() if p.requires_grad]

    def freeze(self) -> None:
        for p in self.parameters():
            p.requires_grad = False
            p.grad = None

    def unfreeze(self) -> None:
        for p in self.parameters():
            p.requires_grad = True

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def num_params(self) -> int:
        return int(sum(p.data.size for p in self.parameters()))

    def state_dict(self) -> dict[str, np.ndarray]:
        return {n: p.data.copy() for n, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray], strict: bool = True) -> None:
        own = dict(self.named_parameters())
        if strict:
            missing = own.keys() - state.keys()
            if missing:
                raise KeyError(f"missing parameters: {sorted(missing)[:5]}")
        for name, p in own.items():
            if name in state:
                arr = np.asarray(state[name])
                if arr.shape != p.shape:
                    raise ValueError(f"{name}: shape {arr.shape} != {p.shape}")
                p.data = arr.astype(p.dtype, copy=True)

    def multadds(self, h: int, w: int) -> int:
        """Multiply-accumulate count for one forward pass at spatial size h x w."""
        return int(sum(child.multadds(h, w) for _, child in self.named_children()))

    def set_sink(self, fn: Optional[Callable]) -> None:
        if fn is None:
            self.__dict__.pop("_sink", None)
        else:
            self.__dict__["_sink"] = fn


def uniform_fan_in(rng: np.random.Generator, shape: tuple, fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(get_default_dtype())


def trunc_normal(rng: np.random.Generator, shape: tuple, std: float = 0.02) -> np.ndarray:
    """Normal(0, std) redrawn outside +-2 std."""
    out = rng.normal(0.0, std, size=shape)
    bad = np.abs(out) > 2 * std
    while bad.any():
        out[bad] = rng.normal(0.0, std, size=int(bad.sum()))
        bad = np.abs(out) > 2 * std
    return out.astype(get_default_dtype())


class Conv2d(Module):
    def __init__(self, cin: int, cout: int, k: int, rng: np.random.Generator, bias: bool = True,
                 pad_mode: str = "reflect"):
        fan_in = cin * k * k
        self.weight = Parameter(uniform_fan_in(rng, (cout, cin, k, k), fan_in))
        self.bias = Parameter(uniform_fan_in(rng, (cout,), fan_in)) if bias else None
        self.k = k
        self.pad_mode = pad_mode

    def forward(self, x: Tensor) -> Tensor:
        return ops.conv2d(x, self.weight, self.bias, padding=self.k // 2, pad_mode=self.pad_mode)

    def multadds(self, h: int, w: int) -> int:
        cout, cin, kh, kw = self.weight.shape
        return cout * cin * kh * kw * h * w


class Linear(Module):
    def __init__(self, fin: int, fout: int, rng: np.random.Generator, bias: bool = True):
        self.weight = Parameter(trunc_normal(rng, (fout, fin)))
        self.bias = Parameter(np.zeros(fout, dtype=get_default_dtype())) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return ops.linear(x, self.weight, self.bias)

    def tokens_multadds(self, tokens: int) -> int:
        return tokens * self.weight.shape[0] * self.weight.shape[1]


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-5):
        dtype = get_default_dtype()
        self.weight = Parameter(np.ones(dim, dtype=dtype))
        self.bias = Parameter(np.zeros(dim, dtype=dtype))
        self.eps = eps

    def forward(self, x: Tensor) -> Tensor:
        return ops.layer_norm(x, self.weight, self.bias, self.eps)
