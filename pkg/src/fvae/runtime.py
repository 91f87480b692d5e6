"""Sampling, reconstruction, interpolation and likelihood estimation."""

from __future__ import annotations

import numpy as np
from scipy.special import logsumexp

from .autodiff import NumericalError, Tensor
from .conditional import LOG_2PI
from .rng import Rng


def _as_batch(x) -> tuple[Tensor, bool]:
    arr = np.asarray(x, dtype=np.float64)
    single = arr.ndim == 1
    return Tensor(np.atleast_2d(arr)), single


def sample(model, n: int, temperature: float = 1.0, rng: Rng | None = None,
           seed: int = 0) -> np.ndarray:
    """Draw z ~ N(0, T^2 I) in prior space and return the decoder mean decode(z)."""
    if n < 1:
        raise ValueError("sample: n must be >= 1")
    if temperature < 0:
        raise ValueError("sample: temperature must be >= 0")
    rng = rng or Rng(seed)
    z = rng.normal((n, model.latent_dim)) * temperature
    return model.decode(Tensor(z)).data


def reconstruct(model, x) -> np.ndarray:
    """Noise-free reconstruction; in fvae mode this is G(E(x)) since F cancels."""
    xt, single = _as_batch(x)
    out = model.reconstruct(xt).data
    return out[0] if single else out


def encode(model, x) -> np.ndarray:
    xt, single = _as_batch(x)
    out = model.encode(xt).data
    return out[0] if single else out


def interpolate(model, x_a, x_b, steps: int) -> np.ndarray:
    """Decode straight-line blends of the codes of ``x_a`` and ``x_b``."""
    if steps < 2:
        raise ValueError("interpolate: steps must be >= 2")
    codes = encode(model, np.stack([np.asarray(x_a, float), np.asarray(x_b, float)]))
    t = np.linspace(0.0, 1.0, steps)[:, None]
    w = (1.0 - t) * codes[0] + t * codes[1]
    w[0], w[-1] = codes[0], codes[1]
    return model.decode(Tensor(w)).data


def interpolate_grid(model, corners, steps: int) -> np.ndarray:
    """Bilinear blend between four points (top-left, top-right, bottom-left,
    bottom-right); returns (steps, steps, data_dim)."""
    if steps < 2:
        raise ValueError("interpolate_grid: steps must be >= 2")
    corners = np.asarray(corners, dtype=np.float64)
    if corners.shape[0] != 4:
        raise ValueError("interpolate_grid: need exactly 4 corner points")
    c = encode(model, corners)
    t = np.linspace(0.0, 1.0, steps)
    a, b = np.meshgrid(t, t, indexing="ij")
    a, b = a.reshape(-1, 1), b.reshape(-1, 1)
    w = (1 - a) * (1 - b) * c[0] + (1 - a) * b * c[1] + a * (1 - b) * c[2] + a * b * c[3]
    out = model.decode(Tensor(w)).data
    return out.reshape(steps, steps, -1)


def log_importance_weights(model, x: np.ndarray, u: np.ndarray) -> np.ndarray:
    """log q(x|z) + log q(z) - log p(z|x) for z = F_x(u); x and u aligned rows."""
    xt, ut = Tensor(x), Tensor(u)
    out = model.cf.forward_full(xt, ut)
    x_hat = model.decode_from(out).data
    d, L = x.shape[1], u.shape[1]
    s2 = model.sigma2
    log_lik = (-0.5 * np.sum((x_hat - x) ** 2, axis=1) / s2**2
               - d * np.log(s2) - 0.5 * d * LOG_2PI)
    z = out.z.data
    log_prior = -0.5 * np.sum(z * z, axis=1) - 0.5 * L * LOG_2PI
    log_post = -0.5 * np.sum(u * u, axis=1) - 0.5 * L * LOG_2PI - out.logdet.data
    return log_lik + log_prior - log_post


def estimate_log_likelihood(model, x, K: int, rng: Rng | None = None, seed: int = 0,
                            chunk: int = 65536):
    """Importance-sampled log q(x) with the posterior as proposal.

    log (1/K) sum_k w_k, computed with log-sum-exp. Returns a float for a single
    point, else one estimate per row.
    """
    if K < 1:
        raise ValueError("estimate_log_likelihood: K must be >= 1")
    rng = rng or Rng(seed)
    xs = np.atleast_2d(np.asarray(x, dtype=np.float64))
    single = np.asarray(x).ndim == 1
    n = xs.shape[0]
    rep = np.repeat(xs, K, axis=0)
    u = rng.normal((n * K, model.latent_dim))
    logw = np.concatenate([
        log_importance_weights(model, rep[i:i + chunk], u[i:i + chunk])
        for i in range(0, n * K, chunk)
    ]).reshape(n, K)
    if np.any(np.all(np.isneginf(logw), axis=1)) or np.any(np.isnan(logw)):
        raise NumericalError("estimate_log_likelihood: all importance weights vanished")
    est = logsumexp(logw, axis=1) - np.log(K)
    return float(est[0]) if single else est


def posterior_code_noise(model, x) -> np.ndarray:
    """cond_inverse(x, encode(x)); zero up to rounding."""
    xt, _ = _as_batch(x)
    return model.cf.inverse(xt, model.encode(xt)).data


__all__ = [
    "sample",
    "reconstruct",
    "encode",
    "interpolate",
    "interpolate_grid",
    "estimate_log_likelihood",
    "log_importance_weights",
    "posterior_code_noise",
]
