# coding: utf-8
import math

import numpy as np
import pytest
from scipy.special import expit

from hypergcl import diffnum as dn
from hypergcl.generator import (GeneratorError, VhgaeParams, anneal_tau, decode_logits, elbo_loss,
                                generate_view, generative_view, gumbel_sample, init_vhgae,
                                keep_ratios, kl_gauss, reconstruction_loss, reparam_sample,
                                vhgae_encode)
from hypergcl.hypergraph import Hypergraph, from_hyperedge_lists
from hypergcl.model import encode, init_encoder, zeros_like
from hypergcl.train import Adam

LN2 = math.log(2.0)


@pytest.fixture
def toy():
    rng = np.random.default_rng(0)
    return from_hyperedge_lists([[0, 1, 2], [1, 3], [2, 3, 4]], rng.standard_normal((5, 3)))


def _zero_params(d_in, latent):
    return VhgaeParams(zeros_like(init_encoder(d_in, latent, 1, seed=0)),
                       zeros_like(init_encoder(d_in, latent, 1, seed=1)))


def test_zero_params_give_the_prior(toy):
    mu_v, ls_v, mu_e, ls_e = vhgae_encode(toy, _zero_params(3, 4))
    assert mu_v.shape == (5, 4) and mu_e.shape == (3, 4)
    for t in (mu_v, ls_v, mu_e, ls_e):
        np.testing.assert_array_equal(t.data, 0.0)


def test_encode_needs_hyperedges(toy):
    empty = Hypergraph(5, 0, toy.features, np.zeros((0, 2)))
    with pytest.raises(GeneratorError):
        vhgae_encode(empty, init_vhgae(3, 4, 1, seed=0))


def test_mean_stack_gradient(toy):
    params = init_vhgae(3, 4, 1, seed=2)
    f = lambda _: dn.sum_(vhgae_encode(toy, params)[0])
    assert dn.grad_check(f, params.mu['blocks.0.e2v.1.weight']) < 1e-4


def test_log_std_is_clamped(toy):
    params = init_vhgae(3, 4, 1, seed=0)
    params.logsigma['blocks.0.e2v.1.bias'].data = np.full(4, 50.0)
    _, ls_v, _, _ = vhgae_encode(toy, params)
    assert ls_v.data.max() == 10.0


def test_reparam_degenerate_variance():
    mu = dn.constant(np.arange(6.0).reshape(3, 2))
    z, _ = reparam_sample(mu, dn.constant(np.full((3, 2), -10.0)), 0)
    np.testing.assert_allclose(z.data, mu.data, atol=1e-3)


def test_reparam_monte_carlo_moments():
    z, eps = reparam_sample(dn.constant(np.zeros((100000, 1))), dn.constant(np.zeros((100000, 1))), 7)
    assert abs(z.data.mean()) < 0.02
    assert abs(z.data.var() - 1.0) < 0.05
    again, _ = reparam_sample(dn.constant(np.zeros((100000, 1))), dn.constant(np.zeros((100000, 1))), 7)
    np.testing.assert_array_equal(z.data, again.data)


def test_reparam_mean_gradient_is_one():
    mu = dn.parameter(np.zeros((20000, 1)))
    logsigma = dn.parameter(np.zeros((20000, 1)))
    z, _ = reparam_sample(mu, logsigma, 3)
    dn.backward(dn.mean(z))
    assert abs(mu.grad.sum() - 1.0) < 0.02
    assert abs(logsigma.grad.sum()) < 0.05


def test_reparam_shape_mismatch():
    with pytest.raises(GeneratorError):
        reparam_sample(dn.constant(np.zeros((2, 2))), dn.constant(np.zeros((2, 3))), 0)


def test_decoder_examples():
    pairs = np.array([[0, 0], [1, 1]])
    w = decode_logits(dn.constant(np.zeros((2, 3))), dn.constant(np.zeros((2, 3))), pairs)
    np.testing.assert_array_equal(w.data, 0.0)
    np.testing.assert_array_equal(expit(w.data), 0.5)
    z = dn.constant([[2.0, 0.0, 0.0]])
    w = decode_logits(z, z, [[0, 0]])
    assert w.data.tolist() == [4.0]
    assert abs(expit(4.0) - 0.982) < 1e-3


def test_decoder_matches_dense_product():
    rng = np.random.default_rng(1)
    z_v, z_e = rng.standard_normal((6, 3)), rng.standard_normal((4, 3))
    pairs = np.array([[0, 1], [2, 3], [5, 0], [4, 2], [2, 1]])
    w = decode_logits(dn.constant(z_v), dn.constant(z_e), pairs)
    np.testing.assert_allclose(w.data, (z_v @ z_e.T)[pairs[:, 0], pairs[:, 1]])


def test_reconstruction_at_zero_codes_is_ln2(toy):
    loss = reconstruction_loss(toy, dn.constant(np.zeros((5, 4))), dn.constant(np.zeros((3, 4))))
    assert abs(loss.item() - LN2) < 1e-12
    sampled = reconstruction_loss(toy, dn.constant(np.zeros((5, 4))), dn.constant(np.zeros((3, 4))),
                                  seed=0, dense_budget=0)
    assert abs(sampled.item() - LN2) < 1e-12


def test_reconstruction_of_separated_logits(toy):
    target = np.zeros((5, 3))
    target[toy.vertex_index, toy.hyperedge_index] = 1.0
    z_v = dn.constant(10.0 * (2.0 * target - 1.0))
    loss = reconstruction_loss(toy, z_v, dn.constant(np.eye(3)))
    assert loss.item() < 1e-4


def test_sampled_reconstruction_is_unbiased(toy):
    rng = np.random.default_rng(5)
    z_v, z_e = rng.standard_normal((5, 2)), rng.standard_normal((3, 2))
    logits = z_v @ z_e.T
    target = np.zeros((5, 3), dtype=bool)
    target[toy.vertex_index, toy.hyperedge_index] = True
    pos = -np.log(expit(logits[target]))
    neg = -np.log(expit(-logits[~target]))
    P = pos.size
    expected = (pos.sum() + P * neg.mean()) / (2 * P)
    draws = np.array([reconstruction_loss(toy, dn.constant(z_v), dn.constant(z_e), neg_k=1,
                                          seed=s, dense_budget=0).item() for s in range(2000)])
    assert abs(draws.mean() - expected) <= 4 * draws.std() / math.sqrt(draws.size) + 1e-12


def test_kl_examples():
    assert abs(kl_gauss(dn.constant(np.zeros((4, 3))), dn.constant(np.zeros((4, 3)))).item()) < 1e-12
    assert abs(kl_gauss(dn.constant([[1.0]]), dn.constant([[0.0]])).item() - 0.5) < 1e-12


def test_kl_matches_direct_formula_and_is_non_negative():
    rng = np.random.default_rng(3)
    mu, ls = rng.standard_normal((6, 4)), rng.uniform(-2, 2, size=(6, 4))
    direct = np.mean(np.sum(0.5 * (mu ** 2 + np.exp(2 * ls) - 1 - 2 * ls), axis=1))
    value = kl_gauss(dn.constant(mu), dn.constant(ls)).item()
    assert abs(value - direct) < 1e-10
    assert value > 0


def test_elbo_of_zero_params(toy):
    elbo = elbo_loss(toy, _zero_params(3, 4), 0)
    assert elbo.kl_v.item() == 0.0 and elbo.kl_e.item() == 0.0
    assert elbo.loss.item() == elbo.recon.item()
    expected = reconstruction_loss(toy, dn.constant(elbo.sample.z_v.data), dn.constant(elbo.sample.z_e.data))
    assert abs(elbo.recon.item() - expected.item()) < 1e-12
    np.testing.assert_array_equal(elbo.sample.z_v.data, elbo.sample.eps_v)


def test_elbo_kl_weight(toy):
    params = init_vhgae(3, 4, 1, seed=4)
    full = elbo_loss(toy, params, 1)
    light = elbo_loss(toy, params, 1, kl_weight=0.1)
    kl = full.kl_v.item() + full.kl_e.item()
    assert abs(full.loss.item() - light.loss.item() - 0.9 * kl) < 1e-10


def test_elbo_gradients_match_finite_differences(toy):
    params = init_vhgae(3, 3, 1, seed=6)
    for name, tensor in params.items():
        error = dn.grad_check(lambda _: elbo_loss(toy, params, 123).loss, tensor)
        assert error < 1e-4, name
    grads = dn.backward(elbo_loss(toy, params, 123).loss)
    assert all(np.abs(grads[t]).sum() > 0 for t in params.tensors())


def test_elbo_gradient_wrt_posterior_mean(toy):
    params = init_vhgae(3, 3, 1, seed=6)
    mu_v, ls_v, mu_e, ls_e = [dn.parameter(t.data) for t in vhgae_encode(toy, params)]

    def f(mu):
        z_v, _ = reparam_sample(mu, ls_v, None, eps=np.ones(mu.shape) * 0.3)
        z_e, _ = reparam_sample(mu_e, ls_e, None, eps=np.ones(mu_e.shape) * -0.2)
        return dn.add(reconstruction_loss(toy, z_v, z_e), dn.add(kl_gauss(mu, ls_v), kl_gauss(mu_e, ls_e)))
    assert dn.grad_check(f, mu_v) < 1e-4


def test_gumbel_without_noise_is_tempered_sigmoid():
    w = dn.constant([-1.0, 0.0, 2.0])
    T = gumbel_sample(w, 0.5, None, delta=np.full(3, 0.5))
    np.testing.assert_allclose(T.data, expit(w.data / 0.5))


def test_gumbel_rejects_non_positive_temperature():
    with pytest.raises(GeneratorError):
        gumbel_sample(dn.constant([0.0]), 0.0, 0)


def test_gumbel_sharpens_as_temperature_drops():
    # T lies in (0.01, 0.99) iff |logistic noise| < tau * logit(0.99)
    w = dn.constant(np.zeros(10000))
    edge = math.log(0.99 / 0.01)
    for tau in (0.1, 0.5):
        T = gumbel_sample(w, tau, 11).data
        inside = np.mean((T > 0.01) & (T < 0.99))
        expected = 2.0 * expit(tau * edge) - 1.0
        assert abs(inside - expected) < 0.02
    T = gumbel_sample(w, 0.001, 11).data
    assert np.mean((T <= 0.01) | (T >= 0.99)) >= 0.99


@pytest.mark.parametrize('logit', [-2.0, 0.0, 2.0])
def test_gumbel_hard_threshold_matches_sigmoid(logit):
    T = gumbel_sample(dn.constant(np.full(10000, logit)), 0.5, 21).data
    assert abs(np.mean(T > 0.5) - expit(logit)) < 0.02


def test_gumbel_values_stay_inside_unit_interval():
    T = gumbel_sample(dn.constant([-80.0, 80.0]), 0.01, 0).data
    assert (T > 0).all() and (T < 1).all()


def test_generated_view_encoding(toy):
    params = init_encoder(3, 4, 2, seed=0)
    ones = generate_view(toy, dn.constant(np.ones(toy.num_incidences)))
    np.testing.assert_array_equal(encode(ones, params)[0].data, encode(toy, params)[0].data)
    zeros = generate_view(toy, dn.constant(np.zeros(toy.num_incidences)))
    empty = Hypergraph(5, 0, toy.features, np.zeros((0, 2)))
    np.testing.assert_allclose(encode(zeros, params)[0].data, encode(empty, params)[0].data)
    with pytest.raises(GeneratorError):
        generate_view(toy, dn.constant(np.ones(3)))


def test_keep_ratios():
    w = dn.constant([0.0, 0.0])
    T = dn.constant([0.2, 0.9])
    assert keep_ratios(w, T) == (0.5, 0.5)
    assert keep_ratios(dn.constant(np.zeros(0)), dn.constant(np.zeros(0))) == (0.0, 0.0)


def test_anneal_schedule():
    assert anneal_tau(0, 11, 0.5) == 0.5
    assert abs(anneal_tau(10, 11, 0.5) - 0.1) < 1e-12
    assert abs(anneal_tau(5, 11, 0.5) - 0.3) < 1e-12
    assert anneal_tau(0, 1, 0.5) == 0.5


def test_generative_view_carries_gradient_to_generator(toy):
    params = init_vhgae(3, 4, 1, seed=8)
    generated = generative_view(toy, params, 0.5, 3)
    assert generated.mask.shape == (toy.num_incidences,)
    assert generated.view.structurally_equal(toy)
    encoder = init_encoder(3, 4, 1, seed=1)
    z_v, _ = encode(generated.view, encoder)
    grads = dn.backward(dn.sum_(dn.square(z_v)))
    assert np.abs(grads[params.mu['input.weight']]).sum() > 0


def test_generative_view_is_seeded(toy):
    params = init_vhgae(3, 4, 1, seed=8)
    a = generative_view(toy, params, 0.5, 3)
    b = generative_view(toy, params, 0.5, 3)
    np.testing.assert_array_equal(a.mask.data, b.mask.data)
    assert a.elbo.loss.item() == b.elbo.loss.item()


def test_generator_learns_to_reconstruct():
    H = from_hyperedge_lists([[0, 1, 2], [1, 3], [2, 3, 4]], np.eye(5))
    params = init_vhgae(5, 4, 1, seed=0)
    opt = Adam(params.tensors(), lr=0.01)
    rng = np.random.default_rng(0)

    def recon():
        values = []
        for _ in range(20):
            mu_v, ls_v, mu_e, ls_e = vhgae_encode(H, params)
            z_v, _ = reparam_sample(mu_v, ls_v, rng)
            z_e, _ = reparam_sample(mu_e, ls_e, rng)
            values.append(reconstruction_loss(H, z_v, z_e).item())
        return float(np.mean(values))

    before = recon()
    for _ in range(2000):
        elbo = elbo_loss(H, params, rng, kl_weight=0.01)
        opt.zero_grad()
        dn.backward(elbo.loss)
        opt.step()
    after = recon()
    assert after < 0.5 * LN2
    assert after < before
    assert np.isfinite(elbo.kl_v.item()) and np.isfinite(elbo.kl_e.item())
