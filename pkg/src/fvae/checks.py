"""Numerical verification suites run by ``fvae check``.

Each suite returns a list of :class:`CheckResult`; a result passes when its
observed value is within tolerance. All randomness is seeded.
"""

from __future__ import annotations

import math
from collections.abc import Callable
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, backward, grad_check
from .conditional import FORMS, ConditionalFlow
from .datasets import gen_two_moons
from .evaluation import flow_exact_log_density, grid_integral_2d
from .flows import ADDITIVE, AFFINE, FlowStack, build_flow
from .model import ModelConfig, build_model
from .nets import randomize
from .objectives import (
    GaussianToy,
    fvae_loss,
    fvae_loss_per_sample,
    flow_nll_per_sample,
    flow_reduction_constant,
    joint_kl_toy,
    kl_gaussian,
)
from .rng import Rng
from .training import TrainConfig, train

SCOPES = ("invertibility", "logdet", "gradients", "reductions", "normalization")


@dataclass
class CheckResult:
    name: str
    value: float
    tolerance: float
    passed: bool
    detail: str = ""

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        extra = f"  ({self.detail})" if self.detail else ""
        return f"[{status}] {self.name}: {self.value:.3e} (tolerance {self.tolerance:.0e}){extra}"


def _below(name: str, value: float, tol: float, detail: str = "") -> CheckResult:
    return CheckResult(name, float(value), tol, bool(value < tol), detail)


# ---------------------------------------------------------------------------
# oracles


def fd_jacobian(fn: Callable[[np.ndarray], np.ndarray], x: np.ndarray, step: float = 1e-5) -> np.ndarray:
    """Central-difference Jacobian of a vector map at a single point."""
    x = np.asarray(x, dtype=np.float64)
    cols = []
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = step
        cols.append((fn(x + e) - fn(x - e)) / (2.0 * step))
    return np.stack(cols, axis=1)


def fd_logabsdet(fn, x, step: float = 1e-5) -> float:
    return float(np.linalg.slogdet(fd_jacobian(fn, x, step))[1])


def _rel(a: float, b: float) -> float:
    return abs(a - b) / max(1.0, abs(b))


def random_flow(dim: int, layers: int, rng: Rng, *, mode: str = AFFINE, std: float = 0.3,
                hidden: int = 16) -> FlowStack:
    flow = build_flow(dim, layers, rng.split(), hidden=hidden, mode=mode)
    randomize(flow, rng.split(), std)
    return flow


def random_cond_flow(form: str, dim: int, rng: Rng, std: float = 0.3, **kw) -> ConditionalFlow:
    cf = ConditionalFlow(form, dim, dim, rng.split(), hidden=16, coupling_hidden=16,
                         encoder_blocks=1, flow_layers=kw.pop("flow_layers", 2), **kw)
    keep = cf.log_sigma1.data.copy()
    randomize(cf, rng.split(), std)
    if form == "noisy-flow":
        cf.log_sigma1.data = keep
    return cf


# ---------------------------------------------------------------------------
# suites


def check_invertibility(seed: int = 0) -> list[CheckResult]:
    rng = Rng(seed)
    results = []
    for d in (2, 16, 64):
        for layers in (1, 4, 16):
            flow = random_flow(d, layers, rng, std=0.2)
            x = Tensor(rng.normal((64, d)))
            z, _ = flow.forward(x)
            back = flow.inverse(z)
            err_x = float(np.max(np.abs(back.data - x.data)))
            again, _ = flow.forward(flow.inverse(x))
            err_z = float(np.max(np.abs(again.data - x.data)))
            tol = 1e-7 if layers == 16 else 1e-9
            results.append(_below(f"invertibility d={d} couplings={layers}", max(err_x, err_z), tol))
    return results


def check_logdet(seed: int = 0, configs: int = 50) -> list[CheckResult]:
    rng = Rng(seed)
    results = []
    for mode in (AFFINE, ADDITIVE):
        worst = 0.0
        for _ in range(configs):
            d = 2 + int(rng.integers(5, 1)[0])
            layers = 1 + int(rng.integers(4, 1)[0])
            flow = random_flow(d, layers, rng, mode=mode)
            x = rng.normal(d)
            _, ld = flow.forward(Tensor(x[None]))
            oracle = fd_logabsdet(lambda p: flow.forward(Tensor(p[None]))[0].data[0], x)
            worst = max(worst, _rel(float(ld.data[0]), oracle))
        results.append(_below(f"logdet flow ({mode}), {configs} configs", worst, 1e-5))
    for form in FORMS:
        worst = 0.0
        for _ in range(configs):
            d = 2 + int(rng.integers(5, 1)[0])
            cf = random_cond_flow(form, d, rng)
            x = Tensor(rng.normal((1, d)))
            u = rng.normal(d)
            _, ld = cf.forward(x, Tensor(u[None]))
            oracle = fd_logabsdet(lambda p: cf.forward(x, Tensor(p[None]))[0].data[0], u)
            worst = max(worst, _rel(float(ld.data[0]), oracle))
        results.append(_below(f"logdet conditional flow ({form}), {configs} configs", worst, 1e-5))
    return results


def _primitive_cases(rng: Rng) -> list[tuple[str, Callable[[Tensor], Tensor], np.ndarray]]:
    """(label, scalar fn of one tensor, point) covering every primitive and argument slot."""
    A = rng.normal((3, 4))
    B = rng.normal((3, 4))
    M = rng.normal((4, 2))
    r = rng.normal(4)
    w34 = Tensor(rng.normal((3, 4)))
    w32 = Tensor(rng.normal((3, 2)))
    w3 = Tensor(rng.normal(3))
    w4 = Tensor(rng.normal(4))
    w35 = Tensor(rng.normal((3, 5)))
    w64 = Tensor(rng.normal((6, 4)))
    pos = np.abs(A) + 0.5
    away = np.where(np.abs(A) < 0.1, 0.3, A)
    c = Tensor

    def wsum(t: Tensor, w: Tensor) -> Tensor:
        return ad.sum(ad.mul(t, w))

    def split_fn(x: Tensor) -> Tensor:
        a, b = ad.split(x, 1, axis=1)
        return ad.add(ad.sum(ad.square(a)), ad.sum(ad.tanh(b)))

    return [
        ("add[0]", lambda x: wsum(ad.add(x, c(B)), w34), A),
        ("add[1]", lambda x: wsum(ad.add(c(A), x), w34), B),
        ("sub[0]", lambda x: wsum(ad.sub(x, c(B)), w34), A),
        ("sub[1]", lambda x: wsum(ad.sub(c(A), x), w34), B),
        ("mul[0]", lambda x: wsum(ad.mul(x, c(B)), w34), A),
        ("mul[1]", lambda x: wsum(ad.mul(c(A), x), w34), B),
        ("mul[shared]", lambda x: wsum(ad.mul(x, x), w34), A),
        ("scale", lambda x: wsum(ad.scale(x, -2.5), w34), A),
        ("matmul[0]", lambda x: wsum(ad.matmul(x, c(M)), w32), A),
        ("matmul[1]", lambda x: wsum(ad.matmul(c(A), x), w32), M),
        ("tanh", lambda x: wsum(ad.tanh(x), w34), A),
        ("relu", lambda x: wsum(ad.relu(x), w34), away),
        ("exp", lambda x: wsum(ad.exp(x), w34), A),
        ("log", lambda x: wsum(ad.log(x), w34), pos),
        ("square", lambda x: wsum(ad.square(x), w34), A),
        ("sum[all]", lambda x: ad.sum(ad.square(x)), A),
        ("sum[axis0]", lambda x: wsum(ad.sum(x, axis=0), w4), A),
        ("sum[axis1]", lambda x: wsum(ad.sum(x, axis=1), w3), A),
        ("mean[all]", lambda x: ad.mean(ad.square(x)), A),
        ("mean[axis0]", lambda x: wsum(ad.mean(x, axis=0), w4), A),
        ("mean[axis1]", lambda x: wsum(ad.mean(x, axis=1), w3), A),
        ("split", split_fn, A),
        ("concat[0]", lambda x: wsum(ad.concat([x, c(B[:, :1])], axis=1), w35), A),
        ("concat[1]", lambda x: wsum(ad.concat([c(A), x], axis=0), w64), B),
        ("broadcast-add-row[0]", lambda x: wsum(ad.broadcast_add_row(x, c(r)), w34), A),
        ("broadcast-add-row[1]", lambda x: wsum(ad.broadcast_add_row(c(A), x), w34), r),
    ]


def model_grad_error(model, loss_fn: Callable[[], Tensor], step: float = 1e-5) -> float:
    """grad_check over every trainable tensor of ``model`` for a scalar loss closure."""
    worst = 0.0
    params = model.trainable()
    for p in params:
        p.grad = None
    backward(loss_fn())
    for p in params:
        analytic = p.grad if p.grad is not None else np.zeros_like(p.data)
        flat = p.data.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            fp = loss_fn().item()
            flat[i] = orig - step
            fm = loss_fn().item()
            flat[i] = orig
            num = (fp - fm) / (2.0 * step)
            worst = max(worst, abs(analytic.reshape(-1)[i] - num) / max(1.0, abs(num)))
    return worst


def check_gradients(seed: int = 0) -> list[CheckResult]:
    rng = Rng(seed)
    results = []
    worst = 0.0
    for label, fn, point in _primitive_cases(rng):
        worst = max(worst, grad_check(fn, point, 1e-5))
    results.append(_below("gradients: every primitive", worst, 1e-4))
    for mode in ("fvae", "vae", "flow", "hybrid"):
        model = build_model(ModelConfig(data_dim=4, mode=mode, hidden=8, coupling_hidden=8,
                                        encoder_blocks=1, decoder_blocks=1, flow_layers=2,
                                        noise_sigma=0.3, seed=seed))
        prng = rng.split()
        for p in model.trainable():
            p.data = p.data + 0.2 * prng.normal(p.shape)
        x = prng.normal((5, 4))
        u = prng.normal((5, 4))
        err = model_grad_error(model, lambda: fvae_loss(x, u, model).tensor)
        results.append(_below(f"gradients: full loss d=4 ({mode})", err, 1e-4))
    return results


def check_vae_reduction(seed: int = 0, configs: int = 20, draws: int = 100_000) -> list[CheckResult]:
    rng = Rng(seed)
    worst = 0.0
    for _ in range(configs):
        d = 2 + int(rng.integers(3, 1)[0])
        model = build_model(ModelConfig(data_dim=d, mode="vae", hidden=16, encoder_blocks=1,
                                        decoder_blocks=1, seed=int(rng.integers(2**31, 1)[0])))
        randomize(model.cf, rng.split(), 0.4)
        x = rng.normal((1, d))
        (mu, sigma), = model.cf.affine_params(Tensor(x))
        closed = kl_gaussian(mu.data[0], sigma.data[0])
        u = rng.normal((draws, d))
        terms = fvae_loss_per_sample(np.repeat(x, draws, axis=0), u, model)
        kl_part = terms["prior"] + terms["base_entropy"] + terms["neg_logdet"]
        se = kl_part.std(ddof=1) / math.sqrt(draws)
        worst = max(worst, abs(kl_part.mean() - closed) / se)
    return [_below(f"VAE reduction: |MC KL - closed form| in standard errors, {configs} configs",
                   worst, 3.0)]


def check_flow_reduction(seed: int = 0, configs: int = 20) -> list[CheckResult]:
    rng = Rng(seed)
    worst_val = 0.0
    worst_grad = 0.0
    for _ in range(configs):
        d = 2 + 2 * int(rng.integers(3, 1)[0])
        noise = float(0.01 + 0.49 * rng.uniform(1)[0])
        model = build_model(ModelConfig(data_dim=d, mode="flow", noise_sigma=noise, flow_layers=3,
                                        coupling_hidden=16, seed=int(rng.integers(2**31, 1)[0])))
        randomize(model.cf.flow, rng.split(), 0.3)
        x = rng.normal((16, d))
        u = rng.normal((16, d))
        per = fvae_loss_per_sample(x, u, model)["total"]
        nll = flow_nll_per_sample(x, noise, model.cf.flow, u).data
        const = flow_reduction_constant(u, float(model.cf.log_sigma1.data[0, 0]),
                                        float(model.log_sigma2.data[0, 0]))
        worst_val = max(worst_val, float(np.max(np.abs(per - nll - const))))

        params = model.cf.flow.parameters()
        model.zero_grad()
        backward(fvae_loss(x, u, model).tensor)
        g_loss = [p.grad.copy() for p in params]
        model.zero_grad()
        backward(ad.mean(flow_nll_per_sample(x, noise, model.cf.flow, u)))
        g_nll = [p.grad.copy() for p in params]
        diff = max(float(np.max(np.abs(a - b))) for a, b in zip(g_loss, g_nll))
        worst_grad = max(worst_grad, diff)
    return [
        _below(f"flow reduction: |fvae_loss - flow_nll - constant|, {configs} models", worst_val, 1e-8),
        _below(f"flow reduction: parameter-gradient difference, {configs} models", worst_grad, 1e-8),
    ]


def random_toy(rng: Rng) -> GaussianToy:
    a = rng.uniform(8)
    return GaussianToy(
        data_mean=4 * a[0] - 2, data_sd=0.3 + 1.7 * a[1], gain=4 * a[2] - 2, offset=2 * a[3] - 1,
        noise_sd=0.3 + 1.7 * a[4], enc_gain=2 * a[5] - 1, enc_offset=2 * a[6] - 1,
        enc_sd=0.2 + 1.3 * a[7])


def check_upper_bound(seed: int = 0, configs: int = 100) -> list[CheckResult]:
    rng = Rng(seed)
    slack = 0.0
    gap = 0.0
    for _ in range(configs):
        toy = random_toy(rng)
        joint, marginal = joint_kl_toy(toy)
        slack = max(slack, marginal - joint)
        joint, marginal = joint_kl_toy(toy.exact_posterior())
        gap = max(gap, abs(joint - marginal))
    return [
        CheckResult(f"upper bound: max(marginal_kl - joint_kl), {configs} configs", slack, 1e-6,
                    slack <= 1e-6),
        _below(f"upper bound: |joint_kl - marginal_kl| at exact posterior, {configs} configs", gap, 1e-4),
    ]


def check_reductions(seed: int = 0) -> list[CheckResult]:
    return check_vae_reduction(seed) + check_flow_reduction(seed) + check_upper_bound(seed)


def posterior_box(cf: ConditionalFlow, x: np.ndarray, rng: Rng, pad: float = 0.5):
    """Bounding box of 20k posterior draws, widened by ``pad`` of its size per side."""
    u = rng.normal((20_000, cf.latent_dim))
    z = cf.forward(Tensor(np.repeat(x, 20_000, axis=0)), Tensor(u))[0].data
    lo, hi = z.min(axis=0), z.max(axis=0)
    span = hi - lo
    return tuple((float(lo[i] - pad * span[i]), float(hi[i] + pad * span[i])) for i in range(2))


def trained_moons_flow(seed: int = 0, steps: int = 600) -> FlowStack:
    model = build_model(ModelConfig(data_dim=2, mode="flow", noise_sigma=0.05, flow_layers=6,
                                    coupling_hidden=32, seed=seed))
    train(model, gen_two_moons(4096, 0.1, seed=seed), TrainConfig(steps=steps, batch_size=256,
                                                                   seed=seed))
    return model.cf.flow


def check_normalization(seed: int = 0, resolution: int = 400) -> list[CheckResult]:
    rng = Rng(seed)
    results = []
    for form in FORMS:
        cf = random_cond_flow(form, 2, rng, std=0.25)
        x = rng.normal((1, 2))
        box = posterior_box(cf, x, rng.split())

        def logp(z, cf=cf, x=x):
            return cf.posterior_log_density(Tensor(np.repeat(x, z.shape[0], axis=0)), Tensor(z))

        mass = grid_integral_2d(logp, box, resolution)
        results.append(_below(f"normalization: posterior ({form})", abs(mass - 1.0), 1e-2,
                              f"integral {mass:.6f}"))
    flow = trained_moons_flow(seed)
    mass = grid_integral_2d(lambda p: flow_exact_log_density(flow, p), ((-6, 6), (-6, 6)), 300)
    results.append(_below("normalization: trained flow density", abs(mass - 1.0), 1e-2,
                          f"integral {mass:.6f}"))
    return results


SUITES: dict[str, Callable[..., list[CheckResult]]] = {
    "invertibility": check_invertibility,
    "logdet": check_logdet,
    "gradients": check_gradients,
    "reductions": check_reductions,
    "normalization": check_normalization,
}


def run_checks(scope: str = "all", seed: int = 0) -> list[CheckResult]:
    if scope == "all":
        return [r for name in SCOPES for r in SUITES[name](seed=seed)]
    if scope not in SUITES:
        raise ValueError(f"unknown check scope {scope!r}; expected one of {SCOPES + ('all',)}")
    return SUITES[scope](seed=seed)
