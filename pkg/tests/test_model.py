import math

import numpy as np
import pytest

from ddmix import autodiff as ad
from ddmix.autodiff import Parameter
from ddmix.epidemic import EpidemicParams, simulate_epidemic
from ddmix.errors import ParameterError, ShapeError
from ddmix.graphs import Graph
from ddmix.model import (DEFAULT_LOSS_WEIGHTS, DDmixConfig, DDmixModel, GaussianField, deprojection_forward,
                         kl_term, locality_term, posterior_forward, prior_forward, reconstruct,
                         reconstruction_term, sample_latent, total_loss, weight_decay_term)
from ddmix.observation import build_dataset, collapse_mean
from ddmix.training import TrainConfig, dataset_loss, train_model

from conftest import numeric_grad, random_connected_graph, rel_err


def field(rng, n, L):
    return GaussianField(rng.normal(size=(n, L)), rng.uniform(-1, 1, size=(n, L)))


def small_problem(n=6, T=4, seed=0, n_features=1):
    rng = np.random.default_rng(seed)
    g = random_connected_graph(n, seed)
    tr = simulate_epidemic(g, EpidemicParams(0.6, 0.2, 0.1), T, seed=seed)
    obs = collapse_mean(tr)
    if n_features == 2:
        obs.aux = rng.random(n)
    model = DDmixModel(DDmixConfig(T=T, n_features=n_features, seed=seed))
    return g, tr, obs, model, rng


def test_default_weights():
    assert DEFAULT_LOSS_WEIGHTS == (1.0, 1.0, 5e-4, 1.0)


def test_config_validation():
    with pytest.raises(ParameterError):
        DDmixConfig(T=0)
    with pytest.raises(ParameterError):
        DDmixConfig(T=5, n_features=3)
    with pytest.raises(ParameterError):
        DDmixConfig(T=5, kl_direction="sideways")
    cfg = DDmixConfig(T=7, pool_ratios=[0.6, 0.4])
    assert DDmixConfig.from_dict(cfg.to_dict()) == cfg


def test_field_shapes():
    g, tr, obs, model, _ = small_problem()
    for f in (prior_forward(obs, g.normalized, model), posterior_forward(tr.y, g.normalized, model)):
        assert f.mu.shape == f.log_var.shape == (6, 4)
        assert np.all(f.sigma > 0)


def test_feature_count_mismatch():
    g, tr, obs, model, rng = small_problem()
    obs.aux = rng.random(6)
    with pytest.raises(ShapeError):
        prior_forward(obs, g.normalized, model)


def test_zero_heads_give_zero_mean():
    g, _, _, model, _ = small_problem()
    model.prior.mu.W.value[:] = 0.0
    f = prior_forward(np.zeros(6), g.normalized, model)
    np.testing.assert_array_equal(f.mu.value, 0.0)


def test_sample_latent_limits():
    rng = np.random.default_rng(0)
    mu = rng.normal(size=(3, 2))
    noise = rng.normal(size=(3, 2))
    z = sample_latent(GaussianField(mu, np.full((3, 2), -60.0)), noise).value
    np.testing.assert_allclose(z, mu, atol=1e-12)
    f = GaussianField(mu, rng.normal(size=(3, 2)))
    shifted = GaussianField(mu + 2.5, f.log_var.value)
    np.testing.assert_allclose(sample_latent(shifted, noise).value - sample_latent(f, noise).value, 2.5)
    with pytest.raises(ShapeError):
        sample_latent(f, np.zeros((2, 2)))


def test_sample_latent_moments():
    n = 100_000
    z = sample_latent(GaussianField(np.zeros((n, 1)), np.zeros((n, 1))),
                      np.random.default_rng(1).standard_normal((n, 1))).value
    assert abs(z.mean()) < 3 / math.sqrt(n)
    assert abs(z.var() - 1) < 0.03


def test_kl_examples():
    rng = np.random.default_rng(0)
    f = field(rng, 4, 3)
    assert abs(kl_term(f, GaussianField(f.mu.value.copy(), f.log_var.value.copy())).item()) < 1e-12
    p = GaussianField(np.zeros((2, 3)), np.zeros((2, 3)))
    q = GaussianField(np.ones((2, 3)), np.zeros((2, 3)))
    assert kl_term(p, q).item() == pytest.approx(0.5 * 6)


def test_kl_direction_flag():
    rng = np.random.default_rng(3)
    p, q = field(rng, 3, 2), field(rng, 3, 2)
    assert kl_term(p, q, "posterior||prior").item() == pytest.approx(kl_term(q, p).item())
    assert kl_term(p, q).item() != pytest.approx(kl_term(q, p).item())


def test_kl_nonnegative_and_matches_coordinate_loop():
    rng = np.random.default_rng(4)
    for _ in range(20):
        p, q = field(rng, 3, 3), field(rng, 3, 3)
        got = kl_term(p, q).item()
        want = 0.0
        for mp, lp, mq, lq in zip(p.mu.value.ravel(), p.log_var.value.ravel(),
                                  q.mu.value.ravel(), q.log_var.value.ravel()):
            sp, sq = math.exp(lp / 2), math.exp(lq / 2)
            want += math.log(sq / sp) + (sp ** 2 + (mp - mq) ** 2) / (2 * sq ** 2) - 0.5
        assert got == pytest.approx(want, rel=1e-12)
        assert got >= 0


def test_reconstruction_examples():
    y = np.array([[1.0, 0.0], [0.0, 1.0]])
    assert reconstruction_term(y, y).item() <= 1e-6
    assert reconstruction_term(np.full((2, 2), 0.5), y).item() == pytest.approx(math.log(2))
    assert reconstruction_term(np.array([[0.25]]), np.array([[1.0]])).item() == pytest.approx(-math.log(0.25))


def test_weight_decay_examples():
    assert weight_decay_term([Parameter("z", np.zeros((2, 2)))]).item() == 0.0
    assert weight_decay_term([Parameter("v", [[3.0, 4.0]])]).item() == 25.0
    _, _, _, model, _ = small_problem()
    brute = sum(float(v) ** 2 for p in model.parameters() for v in p.value.ravel())
    assert weight_decay_term(model.parameters()).item() == pytest.approx(brute, rel=1e-12)


def test_locality_examples():
    g = Graph(2, frozenset())
    assert locality_term(np.array([[0.0, 1.0], [0.0, 0.0]]), g).item() == 1.0
    assert locality_term(np.array([[1.0], [0.0]]), g).item() == 0.0


@pytest.mark.parametrize("kind", ["SIR", "SIRS", "SIRSD"])
def test_locality_zero_on_simulations(kind):
    params = EpidemicParams.defaults(kind)
    for seed in range(100):
        g = random_connected_graph(10, seed)
        tr = simulate_epidemic(g, params, 12, seed=seed)
        assert locality_term(tr.y.astype(float), g).item() == 0.0


def test_total_is_weighted_sum_of_terms():
    g, tr, obs, model, rng = small_problem()
    noise = rng.standard_normal((6, 4))
    w = (0.7, 1.3, 0.01, 2.0)
    loss, parts = total_loss(obs, tr.y, model, noise, g, w)
    a = g.normalized
    prior = prior_forward(obs, a, model)
    post = posterior_forward(tr.y, a, model)
    y_hat = deprojection_forward(obs, sample_latent(post, noise), a, model)
    manual = (w[0] * kl_term(prior, post).item() + w[1] * reconstruction_term(y_hat, tr.y).item()
              + w[2] * weight_decay_term(model.parameters()).item()
              + w[3] * locality_term(y_hat, g.closed_adjacency).item())
    assert loss.item() == pytest.approx(manual, rel=1e-12)
    assert parts["total"] == pytest.approx(manual, rel=1e-12)
    zero, _ = total_loss(obs, tr.y, model, noise, g, (0, 0, 0, 0))
    assert zero.item() == 0.0


def test_reconstruct_uses_prior_and_is_deterministic():
    g, tr, obs, model, rng = small_problem()
    noise = rng.standard_normal((6, 4))
    a = reconstruct(obs, model, noise, g)
    b = reconstruct(obs, model, noise, g)
    np.testing.assert_array_equal(a, b)
    assert np.all((a > 0) & (a < 1))
    mean = prior_forward(obs, g.normalized, model).mu
    at_mean = deprojection_forward(obs, mean, g.normalized, model).value
    np.testing.assert_allclose(reconstruct(obs, model, np.zeros((6, 4)), g), at_mean)
    # posterior weights do not influence inference
    for p in model.posterior.parameters():
        p.value += 1.0
    np.testing.assert_array_equal(reconstruct(obs, model, noise, g), a)


@pytest.mark.parametrize("n", [3, 50, 130])
def test_reconstruct_any_size(n):
    _, _, _, model, rng = small_problem()
    g = random_connected_graph(n, n)
    assert reconstruct(rng.random(n), model, rng.standard_normal((n, 4)), g).shape == (n, 4)


def test_reconstruct_permutation_equivariance():
    g, _, _, model, rng = small_problem(n=12)
    perm = rng.permutation(12)
    inv = np.argsort(perm)
    h = Graph(12, frozenset((int(inv[i]), int(inv[j])) for i, j in g.edges))
    x = rng.random(12)
    noise = rng.standard_normal((12, 4))
    base = reconstruct(x, model, noise, g)
    np.testing.assert_allclose(reconstruct(x[perm], model, noise[perm], h), base[perm], atol=1e-9)


@pytest.mark.parametrize("n_features", [1, 2])
def test_total_loss_gradient(n_features):
    g, tr, obs, model, rng = small_problem(n_features=n_features, seed=n_features)
    noise = rng.standard_normal((6, 4))
    f = lambda: total_loss(obs, tr.y, model, noise, g)[0]
    params = model.parameters()
    for p in params:
        p.zero_grad()
    ad.backward(f())
    for p in params:
        assert rel_err(p.grad, numeric_grad(f, p)) < 1e-3


def test_training_descends():
    g = random_connected_graph(12, 0)
    data = build_dataset(g, EpidemicParams(0.5, 0.1, 0.05), 5, 20, seed=0)
    model = DDmixModel(DDmixConfig(T=5, seed=0))
    before = dataset_loss(model, data)
    train_model(model, data, data, TrainConfig(max_epochs=5, patience=5))
    assert dataset_loss(model, data) < before
