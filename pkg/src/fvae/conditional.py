"""Conditional flows z = F_x(u): bijections in u whose parameters depend on x.

Four forms are supported:

``combined``          z = F(s1 * u + E(x)),  log|det| = logdet_F(v) + d log s1
``gaussian-reparam``  z = sigma(x) * u + mu(x),  log|det| = sum log sigma(x)
``noisy-flow``        z = F(s1 * u + x)  (E is the identity, s1 is fixed)
``hybrid``            f1 = F1(sigma1(x) * u + mu1(x))
                      f2 = F2(sigma2(x) * f1 + mu2(x))
                      z  = sigma3(x) * f2 + mu3(x)

``s1 = exp(log_sigma1)`` is a trainable scalar except in ``noisy-flow`` where
it is the fixed input-noise level. Per-coordinate scales are softplus outputs
plus a tiny floor, since softplus rounds to exactly 0 for inputs below about -37.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import NumericalError, ShapeError, Tensor
from .flows import FlowStack, build_flow
from .nets import Module, ResidualMLP
from .rng import Rng

COMBINED = "combined"
GAUSSIAN = "gaussian-reparam"
NOISY_FLOW = "noisy-flow"
HYBRID = "hybrid"
FORMS = (COMBINED, GAUSSIAN, NOISY_FLOW, HYBRID)

SIGMA_FLOOR = 1e-8
# softplus(SOFTPLUS_ONE) + SIGMA_FLOOR == 1
SOFTPLUS_ONE = math.log(math.exp(1.0 - SIGMA_FLOOR) - 1.0)
LOG_2PI = math.log(2.0 * math.pi)


@dataclass
class CondOutput:
    z: Tensor
    logdet: Tensor
    # pre-flow point s1*u + E(x) for combined/noisy-flow; None otherwise
    base: Tensor | None = None


def scalar_column(s: Tensor, n: int) -> Tensor:
    """(1, 1) tensor -> (n,) tensor with the same value in every entry."""
    return ad.sum(ad.expand_scalar(s, n, 1), axis=1)


def _gaussian_log_density(u: np.ndarray) -> np.ndarray:
    d = u.shape[1]
    return -0.5 * np.sum(u * u, axis=1) - 0.5 * d * LOG_2PI


class ConditionalFlow(Module):
    _params = ("log_sigma1",)
    _children = ("encoder", "flow", "flow2")

    def __init__(self, form: str, data_dim: int, latent_dim: int, rng: Rng, *,
                 hidden: int = 64, encoder_blocks: int = 2, flow_layers: int = 4,
                 coupling_hidden: int = 32, coupling_blocks: int = 1,
                 log_scale_clamp: float = 2.0, noise_sigma: float = 0.05):
        if form not in FORMS:
            raise ValueError(f"unknown conditional-flow form {form!r}; expected one of {FORMS}")
        if latent_dim < 1 or data_dim < 1:
            raise ValueError("data_dim and latent_dim must be positive")
        if form == NOISY_FLOW and latent_dim != data_dim:
            raise ValueError(f"noisy-flow needs latent_dim == data_dim, got {latent_dim} != {data_dim}")
        if form in (COMBINED, NOISY_FLOW, HYBRID) and latent_dim < 2 and flow_layers > 0:
            raise ValueError("coupling flows need latent_dim >= 2; set flow_layers = 0")
        self.form = form
        self.data_dim = data_dim
        self.latent_dim = latent_dim

        flow_kw = dict(hidden=coupling_hidden, blocks=coupling_blocks,
                       log_scale_clamp=log_scale_clamp)
        self.encoder = None
        self.flow2 = None
        if form == COMBINED:
            self.encoder = ResidualMLP(data_dim, hidden, latent_dim, encoder_blocks, rng)
            self.flow = build_flow(latent_dim, flow_layers, rng, **flow_kw)
        elif form == NOISY_FLOW:
            if noise_sigma <= 0:
                raise ValueError("noise_sigma must be positive")
            self.flow = build_flow(latent_dim, flow_layers, rng, **flow_kw)
        elif form == GAUSSIAN:
            self.encoder = self._heads(2, hidden, encoder_blocks, rng)
            self.flow = FlowStack(latent_dim)
        else:
            self.encoder = self._heads(6, hidden, encoder_blocks, rng)
            self.flow = build_flow(latent_dim, flow_layers, rng, **flow_kw)
            self.flow2 = build_flow(latent_dim, flow_layers, rng, **flow_kw)

        init = math.log(noise_sigma) if form == NOISY_FLOW else 0.0
        self.log_sigma1 = Tensor([[init]], requires_grad=form != NOISY_FLOW)

    def _heads(self, count: int, hidden: int, blocks: int, rng: Rng) -> ResidualMLP:
        # heads alternate (mu, raw sigma); raw sigma bias starts at softplus^-1(1)
        net = ResidualMLP(self.data_dim, hidden, count * self.latent_dim, blocks, rng)
        net.readout.weight.data *= 0.1
        bias = net.readout.bias.data
        for k in range(1, count, 2):
            bias[k * self.latent_dim:(k + 1) * self.latent_dim] = SOFTPLUS_ONE
        return net

    # ------------------------------------------------------------------
    def _check(self, x: Tensor, other: Tensor, who: str) -> None:
        if x.ndim != 2 or x.shape[1] != self.data_dim:
            raise ShapeError(f"{who}: x must be (n, {self.data_dim}), got {x.shape}")
        if other.ndim != 2 or other.shape != (x.shape[0], self.latent_dim):
            raise ShapeError(f"{who}: expected ({x.shape[0]}, {self.latent_dim}), got {other.shape}")

    @property
    def sigma1(self) -> float:
        return float(np.exp(self.log_sigma1.data[0, 0]))

    def affine_params(self, x: Tensor) -> list[tuple[Tensor, Tensor]]:
        """[(mu, sigma), ...] heads for gaussian-reparam (one) and hybrid (three)."""
        out = self.encoder(x)
        L = self.latent_dim
        parts = []
        rest = out
        while rest.shape[1] > L:
            head, rest = ad.split(rest, L, axis=1)
            parts.append(head)
        parts.append(rest)
        n = x.shape[0]
        return [(parts[i], ad.add(ad.softplus(parts[i + 1]), ad.constant(SIGMA_FLOOR, (n, L))))
                for i in range(0, len(parts), 2)]

    def _base(self, x: Tensor, u: Tensor) -> tuple[Tensor, Tensor]:
        """v = s1 * u + E(x) and the per-sample d log s1 term."""
        n = x.shape[0]
        s1 = ad.expand_scalar(ad.exp(self.log_sigma1), n, self.latent_dim)
        shift = x if self.encoder is None else self.encoder(x)
        v = ad.add(ad.mul(s1, u), shift)
        return v, ad.scale(scalar_column(self.log_sigma1, n), float(self.latent_dim))

    def forward_full(self, x: Tensor, u: Tensor) -> CondOutput:
        self._check(x, u, "cond_forward")
        if self.form in (COMBINED, NOISY_FLOW):
            v, ld_scale = self._base(x, u)
            z, ld_flow = self.flow.forward(v)
            return CondOutput(z, ad.add(ld_flow, ld_scale), v)
        heads = self.affine_params(x)
        if self.form == GAUSSIAN:
            mu, sigma = heads[0]
            z = ad.add(ad.mul(sigma, u), mu)
            return CondOutput(z, ad.sum(ad.log(sigma), axis=1))
        h = u
        logdet = None
        for k, (mu, sigma) in enumerate(heads):
            h = ad.add(ad.mul(sigma, h), mu)
            ld = ad.sum(ad.log(sigma), axis=1)
            logdet = ld if logdet is None else ad.add(logdet, ld)
            if k < 2:
                h, ld = (self.flow if k == 0 else self.flow2).forward(h)
                logdet = ad.add(logdet, ld)
        return CondOutput(h, logdet)

    def forward(self, x: Tensor, u: Tensor) -> tuple[Tensor, Tensor]:
        out = self.forward_full(x, u)
        return out.z, out.logdet

    def inverse(self, x: Tensor, z: Tensor) -> Tensor:
        self._check(x, z, "cond_inverse")
        n = x.shape[0]
        if self.form in (COMBINED, NOISY_FLOW):
            v = self.flow.inverse(z)
            shift = x if self.encoder is None else self.encoder(x)
            inv_s1 = ad.expand_scalar(ad.exp(ad.scale(self.log_sigma1, -1.0)), n, self.latent_dim)
            return ad.mul(ad.sub(v, shift), inv_s1)
        heads = self.affine_params(x)
        h = z
        for k in reversed(range(len(heads))):
            mu, sigma = heads[k]
            h = ad.mul(ad.sub(h, mu), ad.exp(ad.scale(ad.log(sigma), -1.0)))
            if k > 0:
                h = (self.flow if k == 1 else self.flow2).inverse(h)
        return h

    def posterior_log_density(self, x: Tensor, z: Tensor) -> np.ndarray:
        """log p(z|x) = log N(u; 0, I) - log|det dF_x/du| at u = F_x^{-1}(z), per row."""
        u = self.inverse(x, z)
        _, logdet = self.forward(x, u)
        out = _gaussian_log_density(u.data) - logdet.data
        bad = np.flatnonzero(~np.isfinite(out))
        if bad.size:
            raise NumericalError(f"posterior_log_density: non-finite value at row {bad[0]}",
                                 index=int(bad[0]))
        return out


def cond_forward(x: Tensor, u: Tensor, cf: ConditionalFlow) -> tuple[Tensor, Tensor]:
    return cf.forward(x, u)


def cond_inverse(x: Tensor, z: Tensor, cf: ConditionalFlow) -> Tensor:
    return cf.inverse(x, z)


def posterior_log_density(x, z, cf: ConditionalFlow):
    """Accepts single vectors (returns float) or batches (returns array)."""
    xa, za = np.asarray(x, dtype=np.float64), np.asarray(z, dtype=np.float64)
    single = xa.ndim == 1
    out = cf.posterior_log_density(Tensor(np.atleast_2d(xa)), Tensor(np.atleast_2d(za)))
    return float(out[0]) if single else out
