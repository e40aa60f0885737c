"""Parameter containers, initialisation and the AdamW optimiser."""

from __future__ import annotations

from typing import Iterator

import numpy as np

from .tensor import DTYPE, Tensor


class Param(Tensor):
    """Trainable leaf tensor; ``grad`` always has the value's shape."""

    __slots__ = ()

    def __init__(self, data, name: str | None = None):
        super().__init__(data, requires_grad=True, name=name)
        self.grad = np.zeros_like(self.data)

    @property
    def value(self) -> Tensor:
        return self

    def zero_grad(self) -> None:
        if self.grad is None or self.grad.shape != self.data.shape:
            self.grad = np.zeros_like(self.data)
        else:
            self.grad.fill(0.0)


def xavier(rng: np.random.Generator, shape, fan_in: int, fan_out: int) -> Param:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return Param(rng.uniform(-bound, bound, size=shape))


def zeros(shape) -> Param:
    return Param(np.zeros(shape, dtype=DTYPE))


def ones(shape) -> Param:
    return Param(np.ones(shape, dtype=DTYPE))


class Module:
    """Attribute-registered tree of Params and sub-Modules.

    Names follow attribute paths (``blocks.0.lin.W``), which is also the
    checkpoint key layout.
    """

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Param]]:
        for key, val in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(val, Param):
                yield name, val
            elif isinstance(val, Module):
                yield from val.named_parameters(name + ".")
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")
                    elif isinstance(item, Param):
                        yield f"{name}.{i}", item

    def parameters(self) -> list[Param]:
        return [p for _, p in self.named_parameters()]

    def state_dict(self) -> dict[str, np.ndarray]:
        return {n: p.data.copy() for n, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        missing = sorted(set(own) - set(state))
        extra = sorted(set(state) - set(own))
        if missing or extra:
            raise KeyError(f"state mismatch: missing={missing[:5]} unexpected={extra[:5]}")
        for n, p in own.items():
            arr = np.asarray(state[n], dtype=DTYPE)
            if arr.shape != p.shape:
                raise ValueError(f"{n}: checkpoint shape {arr.shape} != model shape {p.shape}")
            p.data[...] = arr

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())


class AdamW:
    """Adam with decoupled weight decay."""

    def __init__(self, params, lr: float = 1.5e-5, betas=(0.9, 0.999),
                 eps: float = 1e-8, weight_decay: float = 1e-4):
        self.params = list(params)
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.wd = weight_decay
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self, lr: float | None = None) -> None:
        lr = self.lr if lr is None else lr
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            if self.wd:
                p.data *= 1.0 - lr * self.wd
            p.data -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()
