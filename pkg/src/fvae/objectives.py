"""The flow-posterior VAE loss, its Gaussian and flow special cases, and a 1-D Gaussian toy.

Per datum, with z = F_x(u) and u ~ N(0, I), the loss is

    recon       1/(2 s2^2) ||decode(z) - x||^2
    sigma2_norm d log s2 + (d/2) log 2 pi
    prior       1/2 ||z||^2
    base        -1/2 ||u||^2
    neg_logdet  -log|det dF_x/du|

The (latent_dim/2) log 2 pi constants of log q(z) and log q(u) cancel and are
dropped; the data entropy log p~(x) is dropped as well. ``sigma2_norm`` is
kept because s2 is trainable and would otherwise run off to infinity.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields

import numpy as np

from . import autodiff as ad
from .autodiff import NumericalError, Tensor
from .conditional import GAUSSIAN, LOG_2PI, scalar_column
from .flows import FlowStack

TERMS = ("reconstruction", "sigma2_norm", "prior", "base_entropy", "neg_logdet")


@dataclass
class LossBreakdown:
    reconstruction: float
    sigma2_norm: float
    prior: float
    base_entropy: float
    neg_logdet: float
    total: float
    tensor: Tensor | None = field(default=None, repr=False, compare=False)

    def as_dict(self) -> dict[str, float]:
        return {f.name: getattr(self, f.name) for f in fields(self) if f.name != "tensor"}


def loss_terms(x: Tensor, u: Tensor, model) -> dict[str, Tensor]:
    """Per-sample (n,) tensors for every loss term plus ``total``."""
    n, d = x.shape
    out = model.cf.forward_full(x, u)
    x_hat = model.decode_from(out)
    resid = ad.sum(ad.square(ad.sub(x_hat, x)), axis=1)
    inv_var = scalar_column(ad.exp(ad.scale(model.log_sigma2, -2.0)), n)
    terms = {
        "reconstruction": ad.scale(ad.mul(resid, inv_var), 0.5),
        "sigma2_norm": ad.add(ad.scale(scalar_column(model.log_sigma2, n), float(d)),
                              ad.constant(0.5 * d * LOG_2PI, (n,))),
        "prior": ad.scale(ad.sum(ad.square(out.z), axis=1), 0.5),
        "base_entropy": ad.scale(ad.sum(ad.square(u), axis=1), -0.5),
        "neg_logdet": ad.scale(out.logdet, -1.0),
    }
    total = terms["reconstruction"]
    for name in TERMS[1:]:
        total = ad.add(total, terms[name])
    terms["total"] = total
    return terms


def _check_finite(terms: dict[str, Tensor]) -> None:
    for name, t in terms.items():
        if not np.all(np.isfinite(t.data)):
            raise NumericalError(f"non-finite loss term {name!r}", term=name)


def fvae_loss(x, u, model) -> LossBreakdown:
    """Single-sample Monte Carlo loss averaged over the batch.

    ``tensor`` on the result is the differentiable batch-mean total.
    """
    x = x if isinstance(x, Tensor) else Tensor(x)
    u = u if isinstance(u, Tensor) else Tensor(u)
    terms = loss_terms(x, u, model)
    _check_finite(terms)
    means = {k: float(np.mean(v.data)) for k, v in terms.items()}
    return LossBreakdown(**means, tensor=ad.mean(terms["total"]))


def fvae_loss_per_sample(x, u, model) -> dict[str, np.ndarray]:
    x = x if isinstance(x, Tensor) else Tensor(x)
    u = u if isinstance(u, Tensor) else Tensor(u)
    terms = loss_terms(x, u, model)
    _check_finite(terms)
    return {k: v.data.copy() for k, v in terms.items()}


def kl_gaussian(mu, sigma) -> float:
    """KL(N(mu, diag sigma^2) || N(0, I))."""
    mu = np.asarray(mu, dtype=np.float64)
    sigma = np.asarray(sigma, dtype=np.float64)
    if np.any(sigma <= 0):
        raise ValueError("kl_gaussian: sigma must be positive")
    return float(np.sum(0.5 * (mu * mu + sigma * sigma - 1.0) - np.log(sigma)))


def vae_elbo_closed(x, model, u) -> float:
    """Standard VAE loss with the analytic KL.

    Batch mean of recon(single draw u) + sigma2_norm + KL(N(mu(x), sigma(x)) || N(0, I)).
    Its expectation over u equals that of ``fvae_loss`` in gaussian-reparam mode;
    both leave out log p~(x).
    """
    if model.cf.form != GAUSSIAN:
        raise ValueError(f"vae_elbo_closed needs a gaussian-reparam model, got {model.cf.form!r}")
    x = x if isinstance(x, Tensor) else Tensor(x)
    u = u if isinstance(u, Tensor) else Tensor(u)
    terms = loss_terms(x, u, model)
    (mu, sigma), = model.cf.affine_params(x)
    kl = np.array([kl_gaussian(m, s) for m, s in zip(mu.data, sigma.data)])
    per = terms["reconstruction"].data + terms["sigma2_norm"].data + kl
    return float(np.mean(per))


def flow_nll_per_sample(x, noise_sigma: float, flow: FlowStack, u) -> Tensor:
    """-[log N(F(s u + x); 0, I) + log|det dF/dv|] per row, v = s u + x."""
    if noise_sigma <= 0:
        raise ValueError("flow_nll: noise_sigma must be positive")
    x = x if isinstance(x, Tensor) else Tensor(x)
    u = u if isinstance(u, Tensor) else Tensor(u)
    if flow.dim != x.shape[1]:
        raise ValueError(f"flow_nll: flow dim {flow.dim} != data dim {x.shape[1]}")
    v = ad.add(ad.scale(u, noise_sigma), x)
    z, logdet = flow.forward(v)
    d = x.shape[1]
    log_q = ad.add(ad.scale(ad.sum(ad.square(z), axis=1), -0.5),
                   ad.constant(-0.5 * d * LOG_2PI, (x.shape[0],)))
    return ad.scale(ad.add(log_q, logdet), -1.0)


def flow_nll(x, noise_sigma: float, flow: FlowStack, u) -> float:
    return float(np.mean(flow_nll_per_sample(x, noise_sigma, flow, u).data))


def flow_reduction_constant(u, log_sigma1: float, log_sigma2: float) -> np.ndarray:
    """Per-sample fvae_loss - flow_nll for a noisy-flow model.

    recon is (s1^2 / s2^2) ||u||^2 / 2, the base term -||u||^2 / 2, and the
    log-determinant w.r.t. u exceeds the one w.r.t. v by d log s1. None of
    this depends on flow parameters; with s1 == s2 it vanishes.
    """
    u = np.asarray(u, dtype=np.float64)
    d = u.shape[1]
    ratio = math.exp(2.0 * (log_sigma1 - log_sigma2))
    return 0.5 * (ratio - 1.0) * np.sum(u * u, axis=1) + d * (log_sigma2 - log_sigma1)


# ---------------------------------------------------------------------------
# 1-D Gaussian toy for the joint-KL upper bound


@dataclass
class GaussianToy:
    """p~(x) = N(data_mean, data_sd^2), q(z) = N(0, 1),
    q(x|z) = N(gain z + offset, noise_sd^2), p(z|x) = N(enc_gain x + enc_offset, enc_sd^2)."""

    data_mean: float = 0.0
    data_sd: float = 1.0
    gain: float = 1.0
    offset: float = 0.0
    noise_sd: float = 1.0
    enc_gain: float = 0.5
    enc_offset: float = 0.0
    enc_sd: float = math.sqrt(0.5)

    def exact_posterior(self) -> GaussianToy:
        var = 1.0 / (1.0 + self.gain**2 / self.noise_sd**2)
        k = var * self.gain / self.noise_sd**2
        return GaussianToy(self.data_mean, self.data_sd, self.gain, self.offset, self.noise_sd,
                           enc_gain=k, enc_offset=-k * self.offset, enc_sd=math.sqrt(var))

    def marginal_sd(self) -> float:
        return math.sqrt(self.gain**2 + self.noise_sd**2)


def _log_normal(x, mean, sd):
    return -0.5 * ((x - mean) / sd) ** 2 - math.log(sd) - 0.5 * LOG_2PI


def joint_kl_toy(params: GaussianToy, half_width: float = 10.0, resolution: int = 1201,
                 leak_tol: float = 1e-4) -> tuple[float, float]:
    """(KL(p~ p(z|x) || q(z) q(x|z)), KL(p~ || q(x))) by midpoint-rule grids.

    The grid spans ``half_width`` standard deviations around each variable's
    mean under p~(x) p(z|x).
    """
    p = params
    z_mean = p.enc_gain * p.data_mean + p.enc_offset
    z_sd = math.sqrt(p.enc_gain**2 * p.data_sd**2 + p.enc_sd**2)
    hx = half_width * p.data_sd
    hz = half_width * z_sd
    xs = p.data_mean - hx + (np.arange(resolution) + 0.5) * (2 * hx / resolution)
    zs = z_mean - hz + (np.arange(resolution) + 0.5) * (2 * hz / resolution)
    dx, dz = 2 * hx / resolution, 2 * hz / resolution

    log_px = _log_normal(xs, p.data_mean, p.data_sd)
    mass_x = float(np.sum(np.exp(log_px)) * dx)
    X, Z = np.meshgrid(xs, zs, indexing="ij")
    log_post = _log_normal(Z, p.enc_gain * X + p.enc_offset, p.enc_sd)
    log_joint_p = log_px[:, None] + log_post
    w = np.exp(log_joint_p)
    mass = float(np.sum(w) * dx * dz)
    if abs(1.0 - mass) > leak_tol or abs(1.0 - mass_x) > leak_tol:
        raise ValueError(f"joint_kl_toy: grid too narrow, mass {mass:.6f} (tolerance {leak_tol})")
    log_joint_q = _log_normal(Z, 0.0, 1.0) + _log_normal(X, p.gain * Z + p.offset, p.noise_sd)
    joint = float(np.sum(w * (log_joint_p - log_joint_q)) * dx * dz)
    log_qx = _log_normal(xs, p.offset, p.marginal_sd())
    marginal = float(np.sum(np.exp(log_px) * (log_px - log_qx)) * dx)
    return joint, marginal
