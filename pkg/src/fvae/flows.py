"""Coupling layers, feature reversals and unconditional flow stacks.

Every layer maps a batch ``(n, dim)`` to ``(y, logdet)`` where ``logdet`` has
shape ``(n,)``. A coupling keeps the first ``split_index`` features and
transforms the rest:

    y1 = x1
    y2 = s(x1) * x2 + t(x1),     log s = c * tanh(raw(x1))

so ``e^-c <= s <= e^c`` and the log-determinant is ``sum(log s)``. The inverse
recomputes ``s`` and ``t`` from ``y1`` (equal to ``x1``).
"""

from __future__ import annotations

from collections.abc import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import ShapeError, Tensor
from .nets import Module, ResidualMLP
from .rng import Rng

AFFINE = "affine"
ADDITIVE = "additive"


def _check_width(x: Tensor, dim: int, who: str) -> None:
    if x.ndim != 2 or x.shape[1] != dim:
        raise ShapeError(f"{who}: expected (n, {dim}) input, got {x.shape}")


def _zeros(n: int) -> Tensor:
    return ad.constant(0.0, (n,))


class CouplingLayer(Module):
    _children = ("scale_net", "shift_net")

    def __init__(self, dim: int, rng: Rng, *, hidden: int = 32, blocks: int = 1,
                 split_index: int | None = None, mode: str = AFFINE,
                 log_scale_clamp: float = 2.0):
        if dim < 2:
            raise ValueError(f"coupling needs dim >= 2, got {dim}")
        split_index = dim // 2 if split_index is None else split_index
        if not 1 <= split_index <= dim - 1:
            raise ValueError(f"split_index must be in [1, {dim - 1}], got {split_index}")
        if mode not in (AFFINE, ADDITIVE):
            raise ValueError(f"unknown coupling mode {mode!r}")
        if log_scale_clamp <= 0:
            raise ValueError("log_scale_clamp must be positive")
        self.dim = dim
        self.split_index = split_index
        self.mode = mode
        self.log_scale_clamp = float(log_scale_clamp)
        d1, d2 = split_index, dim - split_index
        self.scale_net = (ResidualMLP(d1, hidden, d2, blocks, rng, zero_out=True)
                          if mode == AFFINE else None)
        self.shift_net = ResidualMLP(d1, hidden, d2, blocks, rng, zero_out=True)

    def _log_scale(self, h: Tensor) -> Tensor | None:
        if self.scale_net is None:
            return None
        return ad.scale(ad.tanh(self.scale_net(h)), self.log_scale_clamp)

    def forward(self, x: Tensor) -> tuple[Tensor, Tensor]:
        _check_width(x, self.dim, "coupling_forward")
        x1, x2 = ad.split(x, self.split_index, axis=1)
        t = self.shift_net(x1)
        log_s = self._log_scale(x1)
        if log_s is None:
            return ad.concat([x1, ad.add(x2, t)], axis=1), _zeros(x.shape[0])
        y2 = ad.add(ad.mul(ad.exp(log_s), x2), t)
        return ad.concat([x1, y2], axis=1), ad.sum(log_s, axis=1)

    def inverse(self, y: Tensor) -> Tensor:
        _check_width(y, self.dim, "coupling_inverse")
        y1, y2 = ad.split(y, self.split_index, axis=1)
        diff = ad.sub(y2, self.shift_net(y1))
        log_s = self._log_scale(y1)
        if log_s is not None:
            diff = ad.mul(diff, ad.exp(ad.scale(log_s, -1.0)))
        return ad.concat([y1, diff], axis=1)


class Reversal(Module):
    """Reverses feature order; an involution with zero log-determinant."""

    def __init__(self, dim: int):
        self.dim = dim
        self._perm = Tensor(np.eye(dim)[::-1].copy())

    def forward(self, x: Tensor) -> tuple[Tensor, Tensor]:
        _check_width(x, self.dim, "reversal")
        return ad.matmul(x, self._perm), _zeros(x.shape[0])

    def inverse(self, y: Tensor) -> Tensor:
        _check_width(y, self.dim, "reversal")
        return ad.matmul(y, self._perm)


class FlowStack(Module):
    _children = ("layers",)

    def __init__(self, dim: int, layers: Sequence[Module] = ()):
        for layer in layers:
            if layer.dim != dim:
                raise ValueError(f"layer dim {layer.dim} does not match stack dim {dim}")
        self.dim = dim
        self.layers = list(layers)

    def __len__(self) -> int:
        return len(self.layers)

    def forward(self, x: Tensor) -> tuple[Tensor, Tensor]:
        _check_width(x, self.dim, "flow_forward")
        logdet = _zeros(x.shape[0])
        for layer in self.layers:
            x, ld = layer.forward(x)
            logdet = ad.add(logdet, ld)
        return x, logdet

    def inverse(self, z: Tensor) -> Tensor:
        _check_width(z, self.dim, "flow_inverse")
        for layer in reversed(self.layers):
            z = layer.inverse(z)
        return z

    def __add__(self, other: FlowStack) -> FlowStack:
        return FlowStack(self.dim, self.layers + other.layers)


def build_flow(dim: int, n_couplings: int, rng: Rng, *, hidden: int = 32, blocks: int = 1,
               mode: str = AFFINE, log_scale_clamp: float = 2.0,
               split_index: int | None = None) -> FlowStack:
    """Couplings separated by reversals so every coordinate gets transformed.

    A closing reversal keeps the reversal count even, so a freshly built
    stack (zero-initialized couplings) is exactly the identity.
    """
    layers: list[Module] = []
    for i in range(n_couplings):
        if i > 0:
            layers.append(Reversal(dim))
        layers.append(CouplingLayer(dim, rng, hidden=hidden, blocks=blocks, mode=mode,
                                    log_scale_clamp=log_scale_clamp, split_index=split_index))
    if n_couplings > 1 and n_couplings % 2 == 0:
        layers.append(Reversal(dim))
    return FlowStack(dim, layers)


def coupling_forward(x: Tensor, layer: CouplingLayer) -> tuple[Tensor, Tensor]:
    return layer.forward(x)


def coupling_inverse(y: Tensor, layer: CouplingLayer) -> Tensor:
    return layer.inverse(y)


def flow_forward(x: Tensor, stack: FlowStack) -> tuple[Tensor, Tensor]:
    return stack.forward(x)


def flow_inverse(z: Tensor, stack: FlowStack) -> Tensor:
    return stack.inverse(z)
