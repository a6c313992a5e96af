# coding: utf-8
"""Two-stage hypergraph encoder, projection head and linear classifier.

Each block averages vertex states into hyperedges (weighted by the incidence
weights), runs a two-layer MLP, averages the hyperedge states back into the
vertices, and adds the result to the vertex state through a residual link.
"""
import io
import json
import logging
import math
from collections import OrderedDict

import numpy as np

from . import diffnum as dn
from .diffnum import SegmentIndex, Tensor

log = logging.getLogger(__name__)

DEFAULT_HIDDEN = 64
DEFAULT_PROJ = 64
DEFAULT_BLOCKS = 2
DEFAULT_DROPOUT = 0.5


class ModelError(Exception):
    """Raised when inputs do not match the encoder's dimensions."""
    pass


class EncoderParams(object):
    """Named parameter tensors of the encoder stack and its optional heads."""

    def __init__(self, tensors, d_in, d_hidden, num_blocks, num_classes=None, d_proj=None):
        if num_blocks < 1:
            raise ModelError('encoder needs at least one block')
        self._tensors = OrderedDict(tensors)
        self.d_in = d_in
        self.d_hidden = d_hidden
        self.num_blocks = num_blocks
        self.num_classes = num_classes
        self.d_proj = d_proj

    def __getitem__(self, name):
        return self._tensors[name]

    def __contains__(self, name):
        return name in self._tensors

    def __repr__(self):
        return '<EncoderParams F={} d={} L={} C={} proj={}>'.format(
            self.d_in, self.d_hidden, self.num_blocks, self.num_classes, self.d_proj)

    def names(self):
        return list(self._tensors)

    def items(self):
        return list(self._tensors.items())

    def tensors(self):
        return list(self._tensors.values())

    def group(self, prefix):
        return [t for name, t in self._tensors.items() if name.startswith(prefix)]

    def encoder_tensors(self):
        return self.group('input.') + self.group('blocks.')

    def classifier_tensors(self):
        return self.group('classifier.')

    def head_tensors(self):
        return self.group('head.')

    def meta(self):
        return dict(d_in=self.d_in, d_hidden=self.d_hidden, num_blocks=self.num_blocks,
                    num_classes=self.num_classes, d_proj=self.d_proj)

    def copy(self):
        tensors = [(name, dn.parameter(t.data, name=name)) for name, t in self._tensors.items()]
        return EncoderParams(tensors, **self.meta())


def glorot(rng, fan_in, fan_out):
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


def _affine(rng, tensors, prefix, fan_in, fan_out):
    tensors.append((prefix + '.weight', dn.parameter(glorot(rng, fan_in, fan_out), name=prefix + '.weight')))
    tensors.append((prefix + '.bias', dn.parameter(np.zeros(fan_out), name=prefix + '.bias')))


def init_encoder(d_in, d_hidden=DEFAULT_HIDDEN, num_blocks=DEFAULT_BLOCKS,
                 num_classes=None, d_proj=None, seed=None):
    """Glorot-uniform weights and zero biases, drawn in a fixed order."""
    rng = np.random.default_rng(seed)
    tensors = []
    _affine(rng, tensors, 'input', d_in, d_hidden)
    for i in range(num_blocks):
        for stage in ('v2e', 'e2v'):
            _affine(rng, tensors, 'blocks.{}.{}.0'.format(i, stage), d_hidden, d_hidden)
            _affine(rng, tensors, 'blocks.{}.{}.1'.format(i, stage), d_hidden, d_hidden)
    if num_classes is not None:
        _affine(rng, tensors, 'classifier', d_hidden, num_classes)
    if d_proj is not None:
        _affine(rng, tensors, 'head.0', d_hidden, d_hidden)
        _affine(rng, tensors, 'head.1', d_hidden, d_proj)
    return EncoderParams(tensors, d_in, d_hidden, num_blocks, num_classes=num_classes, d_proj=d_proj)


def zeros_like(params):
    tensors = [(name, dn.parameter(np.zeros_like(t.data), name=name)) for name, t in params.items()]
    return EncoderParams(tensors, **params.meta())


def sample_dropout_masks(rng, num_vertices, d_hidden, num_blocks, rate):
    """Inverted-dropout masks, one per block; ``None`` when ``rate`` is 0."""
    if rate <= 0:
        return None
    keep = 1.0 - rate
    return [(rng.random((num_vertices, d_hidden)) < keep) / keep for _ in range(num_blocks)]


def _linear(x, params, prefix):
    return dn.add(dn.matmul(x, params[prefix + '.weight']), params[prefix + '.bias'])


def _mlp(x, params, prefix):
    return _linear(dn.relu(_linear(x, params, prefix + '.0')), params, prefix + '.1')


def incidence_weight_tensor(H):
    if isinstance(H.incidence_weights, Tensor):
        return H.incidence_weights
    return dn.constant(H.weights_array())


def encode(H, params, dropout_masks=None, activate_output=True):
    """Return (Z_V, Z_E) for hypergraph ``H``.

    With ``activate_output=False`` the last vertex update skips its ReLU so
    the outputs can take either sign.
    """
    if H.num_features != params.d_in:
        raise ModelError('hypergraph has {} features, encoder expects {}'.format(
            H.num_features, params.d_in))
    by_hyperedge = SegmentIndex(H.hyperedge_index, H.num_hyperedges)
    by_vertex = SegmentIndex(H.vertex_index, H.num_vertices)
    weights = incidence_weight_tensor(H)

    x_v = dn.relu(_linear(dn.constant(H.features), params, 'input'))
    x_e = None
    for i in range(params.num_blocks):
        if dropout_masks is not None:
            x_v = dn.mul(x_v, dn.constant(dropout_masks[i]))
        to_edges = dn.segment_weighted_mean(dn.gather_rows(x_v, H.vertex_index), weights, by_hyperedge)
        x_e = _mlp(to_edges, params, 'blocks.{}.v2e'.format(i))
        to_vertices = dn.segment_weighted_mean(dn.gather_rows(x_e, H.hyperedge_index), weights, by_vertex)
        x_v = dn.add(x_v, _mlp(to_vertices, params, 'blocks.{}.e2v'.format(i)))
        if activate_output or i < params.num_blocks - 1:
            x_v = dn.relu(x_v)
    return x_v, x_e


def project(z_v, params):
    """Projection head: two affine layers with a ReLU, rows L2-normalized."""
    return dn.l2_normalize_rows(_mlp(z_v, params, 'head'))


def classify(z_v, params):
    return _linear(z_v, params, 'classifier')


def save_params(path, params, extra=None):
    """Write named tensors as JSON: dims metadata plus (name, shape, values) rows."""
    payload = {
        'meta': params.meta(),
        'extra': extra or {},
        'tensors': [{'name': name, 'shape': list(t.shape), 'values': t.data.reshape(-1).tolist()}
                    for name, t in params.items()],
    }
    with io.open(path, 'w', encoding='utf-8') as f:
        json.dump(payload, f, indent=1, sort_keys=True)
    log.info('saved %d tensors to %s', len(payload['tensors']), path)


def load_params(path):
    with io.open(path, encoding='utf-8') as f:
        payload = json.load(f)
    tensors = []
    for entry in payload['tensors']:
        values = np.array(entry['values'], dtype=np.float64).reshape(entry['shape'])
        tensors.append((entry['name'], dn.parameter(values, name=entry['name'])))
    return EncoderParams(tensors, **payload['meta'])
