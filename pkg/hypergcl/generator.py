# coding: utf-8
"""Variational hypergraph auto-encoder that produces learned views (A6).

Two encoder stacks give Gaussian posteriors over vertex and hyperedge codes;
inner products of sampled codes score incidences, and a binary-concrete
sample of those scores becomes a soft incidence mask for the generated view.
"""
import logging
from collections import namedtuple

import numpy as np
from scipy.special import expit

from . import diffnum as dn
from .model import DEFAULT_BLOCKS, encode, init_encoder

log = logging.getLogger(__name__)

DEFAULT_LATENT = 64
DEFAULT_TAU = 0.5
TAU_FLOOR = 0.1
LOGSIGMA_CLAMP = 10.0
DENSE_PAIR_BUDGET = 10 ** 7
DEFAULT_NEG_K = 1
DEFAULT_KL_WEIGHT = 1.0
MASK_EPS = 1e-12


class GeneratorError(Exception):
    """Raised when the generative path cannot run on its inputs."""
    pass


class VhgaeParams(object):
    """Mean and log-std encoder stacks sharing input and latent dimensions."""

    def __init__(self, mu, logsigma):
        if mu.d_in != logsigma.d_in or mu.d_hidden != logsigma.d_hidden:
            raise GeneratorError('mean and log-std stacks must share input and latent dims')
        self.mu = mu
        self.logsigma = logsigma

    @property
    def latent_dim(self):
        return self.mu.d_hidden

    def __repr__(self):
        return '<VhgaeParams F={} latent={}>'.format(self.mu.d_in, self.latent_dim)

    def tensors(self):
        return self.mu.tensors() + self.logsigma.tensors()

    def items(self):
        return ([('mu.' + name, t) for name, t in self.mu.items()]
                + [('logsigma.' + name, t) for name, t in self.logsigma.items()])

    def copy(self):
        return VhgaeParams(self.mu.copy(), self.logsigma.copy())


def init_vhgae(d_in, latent_dim=DEFAULT_LATENT, num_blocks=DEFAULT_BLOCKS, seed=None):
    rng = np.random.default_rng(seed)
    return VhgaeParams(init_encoder(d_in, latent_dim, num_blocks, seed=rng),
                       init_encoder(d_in, latent_dim, num_blocks, seed=rng))


LatentSample = namedtuple('LatentSample', ['z_v', 'z_e', 'eps_v', 'eps_e',
                                           'mu_v', 'logsigma_v', 'mu_e', 'logsigma_e'])

ElboResult = namedtuple('ElboResult', ['loss', 'sample', 'recon', 'kl_v', 'kl_e'])


def vhgae_encode(H, params):
    """Return (mu_V, logsigma_V, mu_E, logsigma_E); log-stds clamped to +-10."""
    if H.num_hyperedges == 0:
        raise GeneratorError('the generative view needs at least one hyperedge slot')
    mu_v, mu_e = encode(H, params.mu, activate_output=False)
    ls_v, ls_e = encode(H, params.logsigma, activate_output=False)
    return (mu_v, dn.clip(ls_v, -LOGSIGMA_CLAMP, LOGSIGMA_CLAMP),
            mu_e, dn.clip(ls_e, -LOGSIGMA_CLAMP, LOGSIGMA_CLAMP))


def reparam_sample(mu, logsigma, seed, eps=None):
    """z = mu + exp(logsigma) * eps with eps ~ N(0, I); returns (z, eps)."""
    if mu.shape != logsigma.shape:
        raise GeneratorError('mu {} and logsigma {} differ in shape'.format(mu.shape, logsigma.shape))
    if eps is None:
        eps = np.random.default_rng(seed).standard_normal(mu.shape)
    z = dn.add(mu, dn.mul(dn.exp(logsigma), dn.constant(eps)))
    return z, eps


def decode_logits(z_v, z_e, incidences):
    """One logit per incidence: the inner product of its vertex and hyperedge codes."""
    incidences = np.asarray(incidences, dtype=np.int64).reshape(-1, 2)
    rows_v = dn.gather_rows(z_v, incidences[:, 0])
    rows_e = dn.gather_rows(z_e, incidences[:, 1])
    return dn.sum_(dn.mul(rows_v, rows_e), axis=1)


def _neg_log_sigmoid(logits):
    return dn.scalar_mul(dn.log_(dn.sigmoid(logits)), -1.0)


def _sample_non_incident(rng, H, count):
    n, m = H.num_vertices, H.num_hyperedges
    existing = H.vertex_index * m + H.hyperedge_index
    if count == 0 or existing.size >= n * m:
        return np.zeros((0, 2), dtype=np.int64)
    picked = np.zeros(0, dtype=np.int64)
    while picked.size < count:
        draw = rng.integers(0, n * m, size=2 * (count - picked.size))
        picked = np.concatenate([picked, draw[~np.isin(draw, existing)]])
    picked = picked[:count]
    return np.stack([picked // m, picked % m], axis=1)


def reconstruction_loss(H, z_v, z_e, neg_k=DEFAULT_NEG_K, seed=None, dense_budget=DENSE_PAIR_BUDGET):
    """Mean binary cross-entropy of incidences against non-incident pairs.

    Up to ``dense_budget`` vertex/hyperedge pairs every pair is scored;
    beyond it ``neg_k`` non-incident pairs are sampled per incidence.
    """
    if neg_k < 0:
        raise GeneratorError('neg_k must be >= 0')
    n, m = H.num_vertices, H.num_hyperedges
    if n * m <= dense_budget:
        target = np.zeros((n, m))
        target[H.vertex_index, H.hyperedge_index] = 1.0
        logits = dn.matmul(z_v, dn.transpose(z_e))
        pos = dn.mul(_neg_log_sigmoid(logits), dn.constant(target))
        neg = dn.mul(_neg_log_sigmoid(dn.scalar_mul(logits, -1.0)), dn.constant(1.0 - target))
        return dn.mean(dn.add(pos, neg))

    rng = np.random.default_rng(seed)
    positives = decode_logits(z_v, z_e, H.incidences)
    negative_pairs = _sample_non_incident(rng, H, neg_k * H.num_incidences)
    total = dn.sum_(_neg_log_sigmoid(positives))
    if negative_pairs.shape[0]:
        negatives = decode_logits(z_v, z_e, negative_pairs)
        total = dn.add(total, dn.sum_(_neg_log_sigmoid(dn.scalar_mul(negatives, -1.0))))
    return dn.scalar_mul(total, 1.0 / (H.num_incidences + negative_pairs.shape[0]))


def kl_gauss(mu, logsigma):
    """KL(N(mu, sigma^2) || N(0, I)) summed over dims, averaged over rows."""
    terms = dn.sub(dn.add(dn.square(mu), dn.exp(dn.scalar_mul(logsigma, 2.0))),
                   dn.add(dn.scalar_mul(logsigma, 2.0), 1.0))
    return dn.scalar_mul(dn.mean(dn.sum_(terms, axis=1)), 0.5)


def elbo_loss(H, params, seed, neg_k=DEFAULT_NEG_K, kl_weight=DEFAULT_KL_WEIGHT,
              dense_budget=DENSE_PAIR_BUDGET):
    """L_gen = reconstruction + kl_weight * (KL_V + KL_E) on a fresh sample."""
    rng = np.random.default_rng(seed)
    mu_v, ls_v, mu_e, ls_e = vhgae_encode(H, params)
    z_v, eps_v = reparam_sample(mu_v, ls_v, rng)
    z_e, eps_e = reparam_sample(mu_e, ls_e, rng)
    recon = reconstruction_loss(H, z_v, z_e, neg_k=neg_k, seed=rng, dense_budget=dense_budget)
    kl_v = kl_gauss(mu_v, ls_v)
    kl_e = kl_gauss(mu_e, ls_e)
    kl = dn.add(kl_v, kl_e)
    if kl_weight != 1.0:
        kl = dn.scalar_mul(kl, kl_weight)
    loss = dn.add(recon, kl)
    sample = LatentSample(z_v, z_e, eps_v, eps_e, mu_v, ls_v, mu_e, ls_e)
    return ElboResult(loss, sample, recon, kl_v, kl_e)


def gumbel_sample(w, tau, seed, delta=None):
    """Binary-concrete relaxation: sigmoid((w + log d - log(1 - d)) / tau), d ~ U(0, 1)."""
    if tau <= 0:
        raise GeneratorError('gumbel temperature must be > 0, got {}'.format(tau))
    if delta is None:
        delta = np.random.default_rng(seed).random(w.shape)
    delta = np.clip(delta, MASK_EPS, 1.0 - MASK_EPS)
    noise = np.log(delta) - np.log1p(-delta)
    relaxed = dn.sigmoid(dn.scalar_mul(dn.add(w, dn.constant(noise)), 1.0 / tau))
    return dn.clip(relaxed, MASK_EPS, 1.0 - MASK_EPS)


def generate_view(H, T):
    """Copy of ``H`` whose incidence weights are the soft mask ``T``."""
    if T.shape != (H.num_incidences,):
        raise GeneratorError('mask has shape {}, hypergraph has {} incidences'.format(
            T.shape, H.num_incidences))
    return H.replace(incidence_weights=T)


def keep_ratios(w, T):
    """(soft, hard) keep ratios: mean sigmoid(w) and the fraction of T above 0.5."""
    if w.data.size == 0:
        return 0.0, 0.0
    return float(np.mean(expit(w.data))), float(np.mean(T.data > 0.5))


def anneal_tau(epoch, epochs, tau, floor=TAU_FLOOR):
    """Linear schedule from ``tau`` at the first epoch to ``floor`` at the last."""
    if epochs <= 1:
        return tau
    return tau + (floor - tau) * min(epoch, epochs - 1) / float(epochs - 1)


GeneratedView = namedtuple('GeneratedView', ['view', 'elbo', 'logits', 'mask'])


def generative_view(H, params, tau, seed, neg_k=DEFAULT_NEG_K, kl_weight=DEFAULT_KL_WEIGHT,
                    dense_budget=DENSE_PAIR_BUDGET):
    """ELBO sample -> incidence logits -> Gumbel mask -> weighted view of ``H``."""
    rng = np.random.default_rng(seed)
    elbo = elbo_loss(H, params, rng, neg_k=neg_k, kl_weight=kl_weight, dense_budget=dense_budget)
    logits = decode_logits(elbo.sample.z_v, elbo.sample.z_e, H.incidences)
    mask = gumbel_sample(logits, tau, rng)
    return GeneratedView(generate_view(H, mask), elbo, logits, mask)
