"""Dense layers and residual MLPs on top of the autodiff core."""

from __future__ import annotations

from collections.abc import Iterator

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .rng import Rng


class Module:
    """Anything holding trainable tensors.

    Subclasses list their own tensors in ``_params`` and child modules in
    ``_children``; ``named_parameters`` walks both in declaration order so the
    parameter order is stable across runs.
    """

    _params: tuple[str, ...] = ()
    _children: tuple[str, ...] = ()

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name in self._params:
            yield prefix + name, getattr(self, name)
        for name in self._children:
            child = getattr(self, name)
            if child is None:
                continue
            if isinstance(child, (list, tuple)):
                for i, c in enumerate(child):
                    yield from c.named_parameters(f"{prefix}{name}.{i}.")
            else:
                yield from child.named_parameters(f"{prefix}{name}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None


class Dense(Module):
    """y = x W + b."""

    _params = ("weight", "bias")

    def __init__(self, n_in: int, n_out: int, rng: Rng | None = None, *, gain: float = 1.0,
                 zero: bool = False):
        self.n_in, self.n_out = n_in, n_out
        if zero or rng is None:
            w = np.zeros((n_in, n_out))
        else:
            w = rng.normal((n_in, n_out)) * (gain / np.sqrt(n_in))
        self.weight = Tensor(w, requires_grad=True)
        self.bias = Tensor(np.zeros(n_out), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return ad.broadcast_add_row(ad.matmul(x, self.weight), self.bias)


class ResidualBlock(Module):
    """h -> h + dense(relu(dense(h)))."""

    _children = ("inner", "outer")

    def __init__(self, width: int, rng: Rng):
        self.inner = Dense(width, width, rng, gain=np.sqrt(2.0))
        self.outer = Dense(width, width, rng, gain=0.5)

    def __call__(self, h: Tensor) -> Tensor:
        return ad.add(h, self.outer(ad.relu(self.inner(h))))


class ResidualMLP(Module):
    """Linear lift to ``hidden``, ``blocks`` residual steps, linear readout.

    ``zero_out`` zero-initializes the readout so the network starts as the
    constant zero map.
    """

    _children = ("lift", "blocks", "readout")

    def __init__(self, n_in: int, hidden: int, n_out: int, blocks: int, rng: Rng, *,
                 zero_out: bool = False):
        self.n_in, self.hidden, self.n_out = n_in, hidden, n_out
        self.lift = Dense(n_in, hidden, rng)
        self.blocks = [ResidualBlock(hidden, rng) for _ in range(blocks)]
        self.readout = Dense(hidden, n_out, rng, zero=zero_out)

    def features(self, x: Tensor) -> Tensor:
        h = self.lift(x)
        for block in self.blocks:
            h = block(h)
        return h

    def __call__(self, x: Tensor) -> Tensor:
        return self.readout(self.features(x))


def randomize(module: Module, rng: Rng, std: float = 0.3) -> None:
    """Overwrite every parameter with random draws (used by checks).

    Matrices get N(0, std^2 / fan_in), everything else N(0, std^2).
    """
    for p in module.parameters():
        scale = std / np.sqrt(p.shape[0]) if p.ndim == 2 else std
        p.data = rng.normal(p.shape) * scale
