import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fvae.autodiff import NumericalError, Tensor
from fvae.checkpoint import (CheckpointError, decode_entries, encode_entries, load_checkpoint,
                             save_checkpoint)
from fvae.conditional import SOFTPLUS_ONE
from fvae.datasets import gen_two_moons
from fvae.model import ModelConfig, build_model
from fvae.nets import randomize
from fvae.objectives import fvae_loss
from fvae.rng import Rng
from fvae.runtime import (encode, estimate_log_likelihood, interpolate, interpolate_grid,
                          posterior_code_noise, reconstruct, sample)
from fvae.training import Adam, TrainConfig, train


def _params(model):
    return {k: v.data.copy() for k, v in model.named_parameters()}


def linear_gaussian_toy(a, b, s2, exact=True):
    """vae-mode model with G(z) = a*z + b and the exact diagonal posterior.

    With hidden == d and no residual blocks, encoder and decoder are
    products of two dense layers, so both can be set to exact linear maps.
    """
    d = len(a)
    model = build_model(ModelConfig(data_dim=d, mode="vae", hidden=d, encoder_blocks=0,
                                    decoder_blocks=0))
    model.log_sigma2.data[:] = math.log(s2)
    dec = model.decoder
    dec.lift.weight.data[:] = np.eye(d)
    dec.lift.bias.data[:] = 0.0
    dec.readout.weight.data[:] = np.diag(a)
    dec.readout.bias.data[:] = b
    var = 1.0 / (1.0 + a**2 / s2**2)
    k = var * a / s2**2
    sd = np.sqrt(var) if exact else 1.3 * np.sqrt(var)
    enc = model.cf.encoder
    enc.lift.weight.data[:] = np.eye(d)
    enc.lift.bias.data[:] = 0.0
    w = np.zeros((d, 2 * d))
    w[:, :d] = np.diag(k)
    enc.readout.weight.data[:] = w
    raw = np.log(np.expm1(sd - 1e-8))  # softplus^-1 with the sigma floor removed
    enc.readout.bias.data[:] = np.concatenate([-k * b if exact else -k * b + 0.2, raw])
    return model


def toy_log_marginal(x, a, b, s2):
    var = a**2 + s2**2
    return np.sum(-0.5 * (x - b) ** 2 / var - 0.5 * np.log(2 * np.pi * var), axis=-1)


# ---- build_model ----

def test_default_flow_is_identity():
    model = build_model(data_dim=2)
    x = Rng(0).normal((5, 2))
    z, ld = model.cf.flow.forward(Tensor(x))
    np.testing.assert_array_equal(z.data, x)
    for layer in model.cf.flow.layers:
        if hasattr(layer, "shift_net"):
            y, l = layer.forward(Tensor(x))
            np.testing.assert_array_equal(y.data, x)
            np.testing.assert_array_equal(l.data, 0.0)
    np.testing.assert_array_equal(ld.data, 0.0)


def test_same_seed_same_parameters():
    a, b = build_model(data_dim=3, seed=4), build_model(data_dim=3, seed=4)
    pa, pb = _params(a), _params(b)
    assert all(pa[k].tobytes() == pb[k].tobytes() for k in pa)


def test_dimension_reduced_latent_accepted():
    model = build_model(data_dim=4, latent_dim=2)
    assert model.latent_dim == 2
    assert sample(model, 3).shape == (3, 4)


def test_inconsistent_config_names_fields():
    with pytest.raises(ValueError, match="latent_dim"):
        build_model(data_dim=4, latent_dim=2, mode="flow")
    with pytest.raises(ValueError, match="hidden"):
        build_model(data_dim=2, hidden=0)
    with pytest.raises(ValueError, match="mode"):
        build_model(data_dim=2, mode="glow")


def test_mode_aliases():
    assert build_model(data_dim=2, mode="vae-reduction").mode == "vae"
    assert build_model(data_dim=2, mode="flow-reduction").mode == "flow"


def test_config_dict_roundtrip():
    cfg = ModelConfig(data_dim=3, mode="hybrid", tanh_output=True)
    assert ModelConfig.from_dict(cfg.to_dict()) == cfg


# ---- training ----

def test_zero_steps_leaves_model_unchanged():
    model = build_model(data_dim=2)
    before = _params(model)
    assert train(model, gen_two_moons(64, seed=0), TrainConfig(steps=0)) == []
    after = _params(model)
    assert all(before[k].tobytes() == after[k].tobytes() for k in before)


def test_history_length_and_determinism():
    data = gen_two_moons(256, seed=1)

    def run():
        model = build_model(data_dim=2, hidden=16, coupling_hidden=8, flow_layers=2)
        hist = train(model, data, TrainConfig(steps=12, batch_size=32, log_every=4))
        return hist, _params(model)

    (h1, p1), (h2, p2) = run(), run()
    assert [e.step for e in h1] == [4, 8, 12]
    assert [e.losses for e in h1] == [e.losses for e in h2]
    assert all(p1[k].tobytes() == p2[k].tobytes() for k in p1)


def test_train_updates_both_sigmas():
    model = build_model(data_dim=2, hidden=8, flow_layers=1)
    s1, s2 = model.cf.sigma1, model.sigma2
    train(model, gen_two_moons(128, seed=0), TrainConfig(steps=5, batch_size=16))
    assert model.cf.sigma1 != s1 and model.sigma2 != s2


def test_training_halts_on_non_finite_loss():
    model = build_model(data_dim=2, hidden=8, flow_layers=1)
    model.log_sigma2.data[:] = -400.0
    with np.errstate(over="ignore"), pytest.raises(NumericalError) as info:
        train(model, gen_two_moons(64, seed=0), TrainConfig(steps=3, batch_size=8))
    assert info.value.step == 1 and info.value.term is not None


def test_train_rejects_bad_inputs():
    model = build_model(data_dim=2)
    with pytest.raises(ValueError):
        train(model, np.zeros((4, 3)), TrainConfig(steps=1))
    with pytest.raises(ValueError):
        train(model, np.zeros((4, 2)), TrainConfig(steps=1, batch_size=0))


def test_adam_first_step_moves_by_lr():
    p = Tensor([1.0, -1.0], requires_grad=True)
    p.grad = np.array([0.5, -3.0])
    Adam([p], lr=0.01).step()
    np.testing.assert_allclose(p.data, [0.99, -0.99], rtol=0, atol=1e-9)


# ---- sampling ----

def test_zero_temperature_samples_identical():
    model = build_model(data_dim=2, hidden=8)
    randomize(model, Rng(0), 0.3)
    s = sample(model, 10, 0.0)
    assert np.all(s == s[0])
    expected = model.decode(Tensor(np.zeros((1, 2)))).data[0]
    np.testing.assert_allclose(s[0], expected, rtol=0, atol=1e-12)


def test_identity_model_samples_are_standard_gaussian():
    model = build_model(data_dim=2, mode="flow")
    n = 20_000
    s = sample(model, n, 1.0, seed=3)
    assert np.all(np.abs(s.mean(axis=0)) < 4 / math.sqrt(n))


def test_sample_validation():
    model = build_model(data_dim=2)
    with pytest.raises(ValueError):
        sample(model, 0)
    with pytest.raises(ValueError):
        sample(model, 3, -1.0)


def test_sample_variance_grows_with_temperature():
    model = build_model(data_dim=2, mode="flow")
    randomize(model.cf.flow, Rng(1), 0.3)
    v = [sample(model, 4096, t, seed=0).var(axis=0) for t in (0.25, 0.5, 1.0)]
    assert np.all(v[0] < v[1]) and np.all(v[1] < v[2])


# ---- reconstruction and interpolation ----

def test_untrained_reconstruction_is_zero():
    model = build_model(data_dim=3)
    np.testing.assert_array_equal(reconstruct(model, np.ones(3)), np.zeros(3))


def test_interpolation_endpoints_and_degenerate_path():
    model = build_model(data_dim=2, hidden=8)
    randomize(model, Rng(2), 0.3)
    xa, xb = np.array([0.5, -0.3]), np.array([-1.0, 0.8])
    path = interpolate(model, xa, xb, 2)
    assert np.max(np.abs(path[0] - reconstruct(model, xa))) < 1e-9
    assert np.max(np.abs(path[-1] - reconstruct(model, xb))) < 1e-9
    same = interpolate(model, xa, xa, 5)
    assert np.max(np.abs(same[2] - reconstruct(model, xa))) < 1e-9
    with pytest.raises(ValueError):
        interpolate(model, xa, xb, 1)


def test_interpolation_path_is_continuous_for_trained_model():
    model = build_model(data_dim=2, hidden=16, flow_layers=2, coupling_hidden=8)
    train(model, gen_two_moons(1024, seed=2), TrainConfig(steps=150, batch_size=64))
    xa, xb = np.array([-1.0, 0.0]), np.array([2.0, 0.5])
    path = interpolate(model, xa, xb, 32)
    steps = np.linalg.norm(np.diff(path, axis=0), axis=1)
    assert np.all(steps < np.linalg.norm(path[-1] - path[0]))


def test_interpolate_grid_corners():
    model = build_model(data_dim=2, hidden=8)
    randomize(model, Rng(3), 0.3)
    corners = Rng(4).normal((4, 2))
    g = interpolate_grid(model, corners, 3)
    assert g.shape == (3, 3, 2)
    for (i, j), c in zip([(0, 0), (0, 2), (2, 0), (2, 2)], corners):
        assert np.max(np.abs(g[i, j] - reconstruct(model, c))) < 1e-9


def test_code_noise_is_zero():
    model = build_model(data_dim=3, hidden=8, mode="hybrid")
    randomize(model, Rng(5), 0.3)
    x = Rng(6).normal((4, 3))
    assert np.max(np.abs(posterior_code_noise(model, x))) < 1e-9
    assert encode(model, x).shape == (4, 3)


# ---- likelihood estimation ----

A, B, S2 = np.array([1.5, -0.7]), np.array([0.3, -0.2]), 0.6


@pytest.mark.parametrize("K", [1, 7, 100])
def test_exact_posterior_gives_exact_marginal(K):
    model = linear_gaussian_toy(A, B, S2)
    x = Rng(7).normal((5, 2))
    est = estimate_log_likelihood(model, x, K, seed=K)
    np.testing.assert_allclose(est, toy_log_marginal(x, A, B, S2), rtol=0, atol=1e-6)


def test_estimate_non_decreasing_in_K_on_average():
    model = linear_gaussian_toy(A, B, S2, exact=False)
    x = Rng(8).normal((4, 2))
    means = [np.mean([estimate_log_likelihood(model, x, K, seed=r) for r in range(100)])
             for K in (1, 10, 100)]
    assert means[0] <= means[1] <= means[2]
    assert means[2] <= np.mean(toy_log_marginal(x, A, B, S2)) + 1e-3


def test_large_K_beats_loss_bound():
    model = linear_gaussian_toy(A, B, S2, exact=False)
    rng = Rng(9)
    x = rng.normal((50, 2))
    est = np.mean(estimate_log_likelihood(model, x, 500, seed=1))
    bound = -np.mean([fvae_loss(x, rng.normal((50, 2)), model).total for _ in range(50)])
    assert est >= bound


def test_duplicated_points_same_estimate():
    model = linear_gaussian_toy(A, B, S2)
    x = np.array([0.4, 0.1])
    single = estimate_log_likelihood(model, x, 8, seed=0)
    batch = estimate_log_likelihood(model, np.stack([x, x]), 8, seed=0)
    assert isinstance(single, float)
    assert abs(batch[0] - batch[1]) < 1e-12


def test_estimate_rejects_bad_K():
    with pytest.raises(ValueError):
        estimate_log_likelihood(build_model(data_dim=2), np.zeros(2), 0)


def test_sigma_floor_keeps_default_scale_one():
    assert abs(math.log1p(math.exp(SOFTPLUS_ONE)) + 1e-8 - 1.0) < 1e-15


# ---- checkpoints ----

@pytest.mark.parametrize("mode", ["fvae", "vae", "flow", "hybrid"])
def test_checkpoint_roundtrip(tmp_path, mode):
    model = build_model(data_dim=3, mode=mode, hidden=8, tanh_output=mode == "vae", seed=2)
    randomize(model, Rng(1), 0.3)
    path = tmp_path / "m.fvck"
    save_checkpoint(model, path)
    back = load_checkpoint(path)
    assert back.config == model.config
    pa, pb = _params(model), _params(back)
    assert pa.keys() == pb.keys()
    assert all(pa[k].tobytes() == pb[k].tobytes() for k in pa)
    rng = Rng(3)
    x, u = rng.normal((4, 3)), rng.normal((4, 3))
    assert fvae_loss(x, u, model).total == fvae_loss(x, u, back).total


def test_checkpoint_corrupted_magic(tmp_path):
    path = tmp_path / "m.fvck"
    save_checkpoint(build_model(data_dim=2), path)
    raw = bytearray(path.read_bytes())
    raw[:4] = b"XXXX"
    path.write_bytes(bytes(raw))
    with pytest.raises(CheckpointError, match="magic"):
        load_checkpoint(path)


def test_checkpoint_bad_version(tmp_path):
    raw = bytearray(encode_entries([("a", np.ones(2))]))
    raw[4] = 9
    with pytest.raises(CheckpointError, match="version"):
        decode_entries(bytes(raw))


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 200))
def test_checkpoint_truncation_reports_offset(cut):
    raw = encode_entries([("w", np.arange(6.0).reshape(2, 3)), ("b", np.ones(3))])
    cut = min(cut, len(raw) - 1)
    with pytest.raises(CheckpointError, match="offset"):
        decode_entries(raw[:cut])


def test_entries_roundtrip():
    entries = [("x", np.array([[1.5, -2.0]])), ("scalar", np.array(3.0))]
    back = decode_entries(encode_entries(entries))
    assert [n for n, _ in back] == ["x", "scalar"]
    assert back[0][1].tobytes() == entries[0][1].tobytes()
    assert back[1][1].shape == ()
