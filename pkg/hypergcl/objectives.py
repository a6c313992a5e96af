# coding: utf-8
"""Supervised, contrastive and composite losses."""
import logging

import numpy as np

from . import diffnum as dn

log = logging.getLogger(__name__)

DEFAULT_TAU_CONTRAST = 0.5
DEFAULT_LAMBDA = 1.0
DEFAULT_BETA = 1.0
MAX_ANCHORS = 4096


class ObjectiveError(Exception):
    """Raised when a loss is evaluated outside its domain."""
    pass


class LossReport(object):
    """Scalar total plus named float components (ce, ntxent, recon, kl_v, kl_e)."""

    def __init__(self, total, **components):
        self.total = float(total)
        self.components = dict((k, float(v)) for k, v in components.items())

    def __getitem__(self, name):
        return self.components[name]

    def __repr__(self):
        parts = ' '.join('{}={:.6g}'.format(k, v) for k, v in sorted(self.components.items()))
        return '<LossReport total={:.6g} {}>'.format(self.total, parts)

    def as_dict(self):
        out = dict(self.components)
        out['total'] = self.total
        return out


def _mask_index(mask):
    mask = np.asarray(mask)
    if mask.dtype == bool:
        return np.flatnonzero(mask)
    return mask.astype(np.int64)


def cross_entropy(logits, labels, mask):
    """Mean negative log-softmax of the true class over the masked vertices."""
    index = _mask_index(mask)
    if index.size == 0:
        raise ObjectiveError('cross-entropy mask selects no vertices')
    picked = dn.gather_rows(logits, index)
    one_hot = np.zeros(picked.shape)
    one_hot[np.arange(index.size), np.asarray(labels)[index]] = 1.0
    log_probs = dn.log_(dn.softmax_rows(picked))
    return dn.scalar_mul(dn.sum_(dn.mul(log_probs, dn.constant(one_hot))), -1.0 / index.size)


def nt_xent(p1, p2, tau):
    """Normalized-temperature cross entropy between two aligned views.

    Each of the 2|V| anchors has its same-index row in the other view as the
    positive and every other projection of both views as a negative.
    """
    if tau <= 0:
        raise ObjectiveError('contrast temperature must be > 0, got {}'.format(tau))
    n = p1.shape[0]
    if n < 2:
        raise ObjectiveError('contrast needs at least two vertices, got {}'.format(n))
    if p1.shape != p2.shape:
        raise ObjectiveError('views differ in shape: {} vs {}'.format(p1.shape, p2.shape))
    both = dn.concat_rows([p1, p2])
    sim = dn.scalar_mul(dn.matmul(both, dn.transpose(both)), 1.0 / tau)
    not_self = dn.constant(1.0 - np.eye(2 * n))
    # per-row max over negatives, held constant; keeps exp() <= 1 and the sum >= 1
    shift = np.where(np.eye(2 * n, dtype=bool), -np.inf, sim.data).max(axis=1)
    shifted = dn.sub(sim, dn.constant(shift[:, None]))
    denom = dn.sum_(dn.mul(dn.exp(shifted), not_self), axis=1)
    log_denom = dn.add(dn.log_(denom), dn.constant(shift))
    partner = np.concatenate([np.arange(n, 2 * n), np.arange(n)])
    positive = dn.scalar_mul(dn.sum_(dn.mul(both, dn.gather_rows(both, partner)), axis=1), 1.0 / tau)
    return dn.mean(dn.sub(log_denom, positive))


def contrast_anchors(num_vertices, rng, max_anchors=MAX_ANCHORS):
    """Anchor subset for large graphs, or ``None`` to contrast every vertex."""
    if num_vertices <= max_anchors:
        return None
    return np.sort(rng.choice(num_vertices, size=max_anchors, replace=False))


def mtl_loss(ce, ntxent, lam):
    if lam < 0:
        raise ObjectiveError('lambda must be >= 0, got {}'.format(lam))
    return dn.add(ce, dn.scalar_mul(ntxent, lam))


def generator_objective(l_gen, l_cl, beta):
    """L_gen - beta * L_cl, minimized by the generator only."""
    if beta < 0:
        raise ObjectiveError('beta must be >= 0, got {}'.format(beta))
    return dn.sub(l_gen, dn.scalar_mul(l_cl, beta))
