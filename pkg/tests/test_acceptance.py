"""Acceptance criteria, each at its stated tolerance.

Every criterion prints one ``[PASS]``/``[FAIL]`` line and asserts. Under
pytest the lines are collected into an "acceptance criteria" section of the
terminal summary. ``python3 tests/test_acceptance.py`` runs the whole list
without pytest.
"""

from __future__ import annotations

import functools
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from fvae.autodiff import Tensor
from fvae.checks import (check_flow_reduction, check_gradients, check_invertibility, check_logdet,
                         check_normalization, check_upper_bound, check_vae_reduction)
from fvae.cli import main as cli_main
from fvae.datasets import gen_shapes, gen_two_moons
from fvae.evaluation import energy_distance
from fvae.model import ModelConfig, build_model
from fvae.objectives import fvae_loss
from fvae.rng import Rng
from fvae.runtime import reconstruct, sample
from fvae.training import TrainConfig, train

SEED = 0


# lines collected here are printed by the terminal-summary hook in conftest.py
REPORT: list[str] = []


def report(number: int, title: str, passed: bool, detail: str) -> bool:
    line = f"[{'PASS' if passed else 'FAIL'}] criterion {number:2d} {title}: {detail}"
    REPORT.append(line)
    print(line)
    return passed


def _suite(number: int, title: str, results, elapsed: float | None = None,
           limit: float | None = None) -> bool:
    failed = [r for r in results if not r.passed]
    worst = max(results, key=lambda r: r.value / r.tolerance if r.tolerance else r.value)
    detail = f"{len(results) - len(failed)}/{len(results)} checks, worst {worst.name} = {worst.value:.3e}"
    ok = not failed
    if elapsed is not None:
        detail += f", {elapsed:.1f} s (limit {limit:.0f} s)"
        ok = ok and elapsed < limit
    for r in failed:
        detail += f"; failed {r.name} = {r.value:.3e} (tolerance {r.tolerance:.0e})"
    return report(number, title, ok, detail)


# ---- 1-7: numerical properties ----

def criterion_1() -> bool:
    t = time.perf_counter()
    results = check_invertibility(SEED)
    return _suite(1, "invertibility", results, time.perf_counter() - t, 10.0)


def criterion_2() -> bool:
    return _suite(2, "log-det vs finite-difference Jacobian", check_logdet(SEED))


def criterion_3() -> bool:
    return _suite(3, "gradients vs central differences", check_gradients(SEED))


def criterion_4() -> bool:
    return _suite(4, "VAE reduction", check_vae_reduction(SEED))


def criterion_5() -> bool:
    return _suite(5, "flow reduction", check_flow_reduction(SEED))


def criterion_6() -> bool:
    return _suite(6, "posterior and flow normalization", check_normalization(SEED))


def criterion_7() -> bool:
    return _suite(7, "joint KL upper bound", check_upper_bound(SEED))


# ---- 8, 10: two-moons training ----

@functools.lru_cache(maxsize=None)
def trained_moons():
    """Default model and train configs; returns (model, data, held-out, history, seconds)."""
    data = gen_two_moons(8192, 0.1, seed=1)
    held_out = gen_two_moons(2048, 0.1, seed=2).points
    model = build_model(ModelConfig(data_dim=2, seed=SEED))
    rng = Rng(3)
    x_fixed, u_fixed = held_out[:256], rng.normal((256, 2))
    initial = fvae_loss(x_fixed, u_fixed, model).total
    t = time.perf_counter()
    history = train(model, data, TrainConfig(steps=2000, batch_size=256, seed=SEED))
    elapsed = time.perf_counter() - t
    final = fvae_loss(x_fixed, u_fixed, model).total
    return model, data.points, held_out, (initial, final), history, elapsed


def criterion_8() -> bool:
    model, train_pts, held_out, (initial, final), history, elapsed = trained_moons()
    n = 2048
    samples = sample(model, n, 1.0, seed=4)
    ed_model = energy_distance(samples, held_out[:n])
    mean, cov = train_pts.mean(axis=0), np.cov(train_pts, rowvar=False)
    gauss = mean + Rng(5).normal((n, 2)) @ np.linalg.cholesky(cov).T
    ed_gauss = energy_distance(gauss, held_out[:n])
    ratio = final / initial
    ok = ratio <= 0.7 and ed_model < ed_gauss and elapsed < 300.0
    return report(8, "two-moons training", ok,
                  f"loss {initial:.4f} -> {final:.4f} (ratio {ratio:.3f}, limit 0.7); "
                  f"energy distance {ed_model:.5f} vs Gaussian baseline {ed_gauss:.5f}; "
                  f"{elapsed:.1f} s (limit 300 s)")


def criterion_10() -> bool:
    model = trained_moons()[0]
    variances = [sample(model, 4096, t, seed=6).var(axis=0) for t in (0.25, 0.5, 1.0)]
    increasing = bool(np.all(variances[0] < variances[1]) and np.all(variances[1] < variances[2]))
    zero = sample(model, 4096, 0.0, seed=7)
    identical = bool(np.all(zero == zero[0]))
    detail = ", ".join(f"T={t}: {np.array2string(v, precision=4)}"
                       for t, v in zip((0.25, 0.5, 1.0), variances))
    return report(10, "temperature behavior", increasing and identical,
                  f"per-coordinate variance {detail}; T=0 identical: {identical}")


# ---- 9: shapes ----

def criterion_9() -> bool:
    data = gen_shapes(4096, 8, seed=11)
    held_out = gen_shapes(1024, 8, seed=12).points
    model = build_model(ModelConfig(data_dim=64, seed=SEED))
    t = time.perf_counter()
    train(model, data, TrainConfig(steps=5000, batch_size=64, seed=SEED))
    elapsed = time.perf_counter() - t
    mse = float(np.mean((reconstruct(model, held_out) - held_out) ** 2))
    var = float(np.mean(held_out.var(axis=0)))
    ok = mse < 0.1 * var and elapsed < 900.0
    return report(9, "8x8 shapes reconstruction", ok,
                  f"held-out MSE {mse:.5f} vs 0.1 x per-pixel variance {0.1 * var:.5f} "
                  f"(ratio {mse / var:.4f}); {elapsed:.1f} s (limit 900 s)")


# ---- 11: determinism of the train command ----

DETERMINISM_CONFIG = """\
mode = fvae
data.kind = two_moons
data.n = 2048
data.seed = 1
train.steps = 100
train.batch = 64
train.seed = 0
"""


def criterion_11(tmp: Path) -> bool:
    cfg = tmp / "run.cfg"
    cfg.write_text(DETERMINISM_CONFIG)
    codes = [cli_main(["train", str(cfg), "--out", str(tmp / name)]) for name in ("a", "b")]
    same = {name: (tmp / "a" / name).read_bytes() == (tmp / "b" / name).read_bytes()
            for name in ("history.csv", "model.fvck")}
    ok = codes == [0, 0] and all(same.values())
    return report(11, "train determinism", ok,
                  f"exit codes {codes}; byte-identical: "
                  + ", ".join(f"{k} {v}" for k, v in same.items()))


# ---- pytest entry points ----

@pytest.mark.parametrize("fn", [criterion_1, criterion_2, criterion_3, criterion_4, criterion_5,
                                criterion_6, criterion_7], ids=lambda f: f.__name__)
def test_numerical_criteria(fn):
    assert fn()


def test_criterion_8_two_moons():
    assert criterion_8()


def test_criterion_9_shapes():
    assert criterion_9()


def test_criterion_10_temperature():
    assert criterion_10()


def test_criterion_11_determinism(tmp_path):
    assert criterion_11(tmp_path)


if __name__ == "__main__":
    import tempfile

    with tempfile.TemporaryDirectory() as d:
        outcomes = [criterion_1(), criterion_2(), criterion_3(), criterion_4(), criterion_5(),
                    criterion_6(), criterion_7(), criterion_8(), criterion_9(), criterion_10(),
                    criterion_11(Path(d))]
    print(f"{sum(outcomes)}/{len(outcomes)} criteria passed")
    sys.exit(0 if all(outcomes) else 1)
