# coding: utf-8
"""Hypergraph data model, ingestion, expansions, statistics and splits."""
import io
import itertools
import json
import logging
import math
import os
from dataclasses import dataclass

import numpy as np
import scipy.sparse
import scipy.sparse.csgraph

from .diffnum import Tensor

log = logging.getLogger(__name__)

HYPEREDGE_FILE = 'hyperedges.txt'
FEATURE_FILE = 'features.txt'
LABEL_FILE = 'labels.txt'
SENSITIVE_FILE = 'sensitive.txt'


class HypergraphError(Exception):
    """Raised when a hypergraph violates one of its invariants."""
    pass


class HypergraphParseError(HypergraphError):
    """Raised when an input file does not follow the text format."""

    def __init__(self, path, line, message):
        self.path = path
        self.line = line
        super(HypergraphParseError, self).__init__('{}:{}: {}'.format(path, line, message))


def _frozen(array):
    array.setflags(write=False)
    return array


class Hypergraph(object):
    """Vertices with features plus hyperedges stored as (vertex, hyperedge) pairs.

    ``incidence_weights`` is either ``None`` (all ones), a float array, or a
    :class:`~hypergcl.diffnum.Tensor` when the weights come from the
    generative augmenter and must carry gradients.
    """

    def __init__(self, num_vertices, num_hyperedges, features, incidences,
                 incidence_weights=None, labels=None, sensitive=None):
        self.num_vertices = int(num_vertices)
        self.num_hyperedges = int(num_hyperedges)
        self.features = _frozen(np.array(features, dtype=np.float64))
        incidences = np.array(incidences, dtype=np.int64)
        self.incidences = _frozen(incidences.reshape(-1, 2))
        if incidence_weights is None or isinstance(incidence_weights, Tensor):
            self.incidence_weights = incidence_weights
        else:
            self.incidence_weights = _frozen(np.array(incidence_weights, dtype=np.float64))
        self.labels = None if labels is None else _frozen(np.array(labels, dtype=np.int64))
        self.sensitive = None if sensitive is None else _frozen(np.array(sensitive, dtype=np.int64))
        self._validate()

    def _validate(self):
        n, m = self.num_vertices, self.num_hyperedges
        if self.features.ndim != 2 or self.features.shape[0] != n:
            raise HypergraphError('features must be a {} x F matrix, got {}'.format(n, self.features.shape))
        v, e = self.incidences[:, 0], self.incidences[:, 1]
        if v.size:
            if v.min() < 0 or v.max() >= n:
                raise HypergraphError('vertex index out of range [0, {})'.format(n))
            if e.min() < 0 or e.max() >= m:
                raise HypergraphError('hyperedge index out of range [0, {})'.format(m))
            if np.unique(v * m + e).size != v.size:
                raise HypergraphError('duplicate (vertex, hyperedge) incidence')
        if np.unique(e).size != m:
            raise HypergraphError('every hyperedge needs at least one incidence')
        if self.incidence_weights is not None:
            w = self.weights_array()
            if w.shape != (v.size,):
                raise HypergraphError('expected {} incidence weights, got {}'.format(v.size, w.shape))
            if w.size and (w.min() < 0 or w.max() > 1):
                raise HypergraphError('incidence weights must lie in [0, 1]')
        for name, values in (('labels', self.labels), ('sensitive', self.sensitive)):
            if values is None:
                continue
            if values.shape != (n,):
                raise HypergraphError('expected {} {} values, got {}'.format(n, name, values.shape))
            if values.size and values.min() < 0:
                raise HypergraphError('{} must be non-negative'.format(name))
        if self.sensitive is not None and self.sensitive.size and self.sensitive.max() > 1:
            raise HypergraphError('sensitive attribute must be binary')

    def __repr__(self):
        return '<Hypergraph |V|={} |E|={} incidences={} F={}>'.format(
            self.num_vertices, self.num_hyperedges, self.num_incidences, self.num_features)

    @property
    def num_incidences(self):
        return self.incidences.shape[0]

    @property
    def num_features(self):
        return self.features.shape[1]

    @property
    def num_classes(self):
        if self.labels is None or self.labels.size == 0:
            return 0
        return int(self.labels.max()) + 1

    @property
    def vertex_index(self):
        return self.incidences[:, 0]

    @property
    def hyperedge_index(self):
        return self.incidences[:, 1]

    def weights_array(self):
        if self.incidence_weights is None:
            return np.ones(self.num_incidences)
        if isinstance(self.incidence_weights, Tensor):
            return self.incidence_weights.data
        return self.incidence_weights

    def hyperedges(self):
        """Sorted member arrays, one per hyperedge."""
        order = np.lexsort((self.vertex_index, self.hyperedge_index))
        sorted_pairs = self.incidences[order]
        bounds = np.searchsorted(sorted_pairs[:, 1], np.arange(self.num_hyperedges + 1))
        return [sorted_pairs[bounds[i]:bounds[i + 1], 0] for i in range(self.num_hyperedges)]

    def incidence_set(self):
        return set(map(tuple, self.incidences.tolist()))

    def replace(self, **changes):
        fields = dict(num_vertices=self.num_vertices, num_hyperedges=self.num_hyperedges,
                      features=self.features, incidences=self.incidences,
                      incidence_weights=self.incidence_weights, labels=self.labels,
                      sensitive=self.sensitive)
        fields.update(changes)
        return Hypergraph(**fields)

    def structurally_equal(self, other):
        return (self.num_vertices == other.num_vertices
                and self.num_hyperedges == other.num_hyperedges
                and self.incidence_set() == other.incidence_set())

    def restrict(self, keep, features=None):
        """Keep the incidences selected by the boolean mask ``keep``.

        Hyperedges left without members are dropped and survivors are
        reindexed densely in their original order.
        """
        keep = np.asarray(keep, dtype=bool)
        pairs = self.incidences[keep]
        surviving = np.unique(pairs[:, 1])
        remap = np.full(self.num_hyperedges, -1, dtype=np.int64)
        remap[surviving] = np.arange(surviving.size)
        pairs = np.stack([pairs[:, 0], remap[pairs[:, 1]]], axis=1)
        weights = None
        if self.incidence_weights is not None:
            weights = self.weights_array()[keep]
        return self.replace(num_hyperedges=surviving.size, incidences=pairs,
                            incidence_weights=weights,
                            features=self.features if features is None else features)


def from_hyperedge_lists(hyperedges, features, labels=None, sensitive=None):
    """Build a hypergraph from vertex lists; repeated members are merged."""
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2:
        raise HypergraphError('features must be a 2-D matrix')
    n = features.shape[0]
    pairs = []
    for e, members in enumerate(hyperedges):
        unique = sorted(set(int(v) for v in members))
        if not unique:
            raise HypergraphError('hyperedge {} is empty'.format(e))
        for v in unique:
            if not 0 <= v < n:
                raise HypergraphError('hyperedge {}: vertex {} out of range [0, {})'.format(e, v, n))
            pairs.append((v, e))
    return Hypergraph(n, len(hyperedges), features, np.array(pairs, dtype=np.int64).reshape(-1, 2),
                      labels=labels, sensitive=sensitive)


def _read_lines(path):
    with io.open(path, encoding='utf-8') as f:
        lines = f.read().split('\n')
    if lines and lines[-1] == '':
        lines.pop()
    return lines


def _read_features(path):
    rows = []
    width = None
    for number, line in enumerate(_read_lines(path), 1):
        try:
            row = [float(tok) for tok in line.split()]
        except ValueError:
            raise HypergraphParseError(path, number, 'non-numeric feature value')
        if not row:
            raise HypergraphParseError(path, number, 'empty feature row')
        if width is None:
            width = len(row)
        elif len(row) != width:
            raise HypergraphParseError(path, number, 'expected {} features, got {}'.format(width, len(row)))
        rows.append(row)
    if not rows:
        raise HypergraphParseError(path, 1, 'no feature rows')
    return np.array(rows, dtype=np.float64)


def _read_hyperedges(path, num_vertices):
    hyperedges = []
    for number, line in enumerate(_read_lines(path), 1):
        tokens = line.split()
        if not tokens:
            raise HypergraphParseError(path, number, 'empty hyperedge line')
        try:
            members = [int(tok) for tok in tokens]
        except ValueError:
            raise HypergraphParseError(path, number, 'non-integer vertex index')
        for v in members:
            if not 0 <= v < num_vertices:
                raise HypergraphParseError(
                    path, number, 'vertex index {} out of range [0, {})'.format(v, num_vertices))
        hyperedges.append(members)
    return hyperedges


def _read_ints(path, expected, binary=False):
    values = []
    lines = _read_lines(path)
    for number, line in enumerate(lines, 1):
        try:
            value = int(line.strip())
        except ValueError:
            raise HypergraphParseError(path, number, 'expected one integer per line')
        if value < 0 or (binary and value > 1):
            raise HypergraphParseError(path, number, 'value {} out of range'.format(value))
        values.append(value)
    if len(values) != expected:
        raise HypergraphParseError(path, len(values) + 1,
                                   'expected {} rows to match the feature file, got {}'.format(expected, len(values)))
    return np.array(values, dtype=np.int64)


def load_hypergraph(hyperedge_path, feature_path, label_path=None, sensitive_path=None):
    """Read the four-file text format into a validated hypergraph."""
    features = _read_features(feature_path)
    n = features.shape[0]
    hyperedges = _read_hyperedges(hyperedge_path, n)
    labels = None if label_path is None else _read_ints(label_path, n)
    sensitive = None if sensitive_path is None else _read_ints(sensitive_path, n, binary=True)
    H = from_hyperedge_lists(hyperedges, features, labels=labels, sensitive=sensitive)
    log.info('loaded %r from %s', H, hyperedge_path)
    return H


def load_bundle(path):
    """Read the single-file JSON bundle format."""
    with io.open(path, encoding='utf-8') as f:
        try:
            bundle = json.load(f)
        except ValueError as e:
            raise HypergraphParseError(path, getattr(e, 'lineno', 1), 'invalid JSON: {}'.format(e))
    try:
        n = int(bundle['n'])
        features = np.array(bundle['features'], dtype=np.float64)
        hyperedges = bundle['hyperedges']
    except (KeyError, TypeError, ValueError) as e:
        raise HypergraphParseError(path, 1, 'malformed bundle: {}'.format(e))
    if features.ndim != 2 or features.shape[0] != n:
        raise HypergraphParseError(path, 1, 'features must have n={} rows'.format(n))
    return from_hyperedge_lists(hyperedges, features, labels=bundle.get('labels'),
                                sensitive=bundle.get('sensitive'))


def save_hypergraph(H, directory):
    """Write ``H`` in the text format; returns the written paths by kind."""
    if not os.path.isdir(directory):
        os.makedirs(directory)
    paths = {'hyperedges': os.path.join(directory, HYPEREDGE_FILE),
             'features': os.path.join(directory, FEATURE_FILE)}
    with io.open(paths['hyperedges'], 'w', encoding='utf-8', newline='\n') as f:
        for members in H.hyperedges():
            f.write(' '.join(str(v) for v in members) + '\n')
    with io.open(paths['features'], 'w', encoding='utf-8', newline='\n') as f:
        for row in H.features:
            f.write(' '.join(repr(float(x)) for x in row) + '\n')
    for kind, filename, values in (('labels', LABEL_FILE, H.labels),
                                   ('sensitive', SENSITIVE_FILE, H.sensitive)):
        if values is None:
            continue
        paths[kind] = os.path.join(directory, filename)
        with io.open(paths[kind], 'w', encoding='utf-8', newline='\n') as f:
            for value in values:
                f.write('{}\n'.format(int(value)))
    return paths


class BipartiteView(object):
    """Vertices on the left, hyperedges on the right, incidences as edges."""

    def __init__(self, num_vertices, num_hyperedges, edges, weights=None,
                 features=None, labels=None, sensitive=None):
        self.num_vertices = num_vertices
        self.num_hyperedges = num_hyperedges
        self.edges = edges
        self.weights = weights
        self.features = features
        self.labels = labels
        self.sensitive = sensitive

    def __repr__(self):
        return '<BipartiteView left={} right={} edges={}>'.format(
            self.num_vertices, self.num_hyperedges, len(self.edges))

    def edge_set(self):
        return set(map(tuple, np.asarray(self.edges).tolist()))

    def incidence_matrix(self):
        """Sparse ``|V| x |E|`` 0/1 incidence matrix."""
        edges = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        return scipy.sparse.csr_matrix(
            (np.ones(edges.shape[0]), (edges[:, 0], edges[:, 1])),
            shape=(self.num_vertices, self.num_hyperedges))

    def adjacency(self):
        """Symmetric adjacency over vertices followed by hyperedges."""
        edges = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        size = self.num_vertices + self.num_hyperedges
        left, right = edges[:, 0], edges[:, 1] + self.num_vertices
        return scipy.sparse.csr_matrix(
            (np.ones(2 * edges.shape[0]), (np.concatenate([left, right]), np.concatenate([right, left]))),
            shape=(size, size))

    def components(self):
        """Component label per node; vertices first, then hyperedges."""
        if self.num_vertices + self.num_hyperedges == 0:
            return np.zeros(0, dtype=np.int64)
        _, labels = scipy.sparse.csgraph.connected_components(self.adjacency(), directed=False)
        return labels

    def neighbors(self):
        """(hyperedges of each vertex, vertices of each hyperedge) as CSR index lists."""
        B = self.incidence_matrix()
        by_vertex = B.tocsr()
        by_edge = B.T.tocsr()
        return ([by_vertex.indices[by_vertex.indptr[i]:by_vertex.indptr[i + 1]]
                 for i in range(self.num_vertices)],
                [by_edge.indices[by_edge.indptr[j]:by_edge.indptr[j + 1]]
                 for j in range(self.num_hyperedges)])


def to_bipartite(H):
    return BipartiteView(H.num_vertices, H.num_hyperedges, H.incidences,
                         weights=H.incidence_weights, features=H.features,
                         labels=H.labels, sensitive=H.sensitive)


def from_bipartite(view):
    return Hypergraph(view.num_vertices, view.num_hyperedges, view.features, view.edges,
                      incidence_weights=view.weights, labels=view.labels,
                      sensitive=view.sensitive)


def clique_expand(H):
    """Replace each hyperedge by all member pairs, merging repeated pairs."""
    pairs = set()
    for members in H.hyperedges():
        pairs.update(itertools.combinations(members.tolist(), 2))
    pairs = sorted(pairs)
    incidences = [(v, e) for e, pair in enumerate(pairs) for v in pair]
    log.debug('clique expansion: %d hyperedges -> %d pairs', H.num_hyperedges, len(pairs))
    return Hypergraph(H.num_vertices, len(pairs), H.features,
                      np.array(incidences, dtype=np.int64).reshape(-1, 2),
                      labels=H.labels, sensitive=H.sensitive)


def homophily(H):
    """Return (h_edge, h_node).

    h_edge averages the same-label fraction of member pairs over hyperedges
    with at least two members; h_node averages, over vertices with at least
    one co-member, the fraction of distinct co-members sharing their label.
    """
    if H.labels is None:
        raise HypergraphError('homophily needs vertex labels')
    labels = H.labels
    edge_scores = []
    for members in H.hyperedges():
        size = members.size
        if size < 2:
            continue
        counts = np.bincount(labels[members])
        same = float(np.sum(counts * (counts - 1)) / 2.0)
        edge_scores.append(same / (size * (size - 1) / 2.0))
    if not edge_scores:
        raise HypergraphError('homophily needs a hyperedge with at least two vertices')

    B = to_bipartite(H).incidence_matrix()
    A = (B @ B.T).tocsr()
    A = (A - scipy.sparse.diags(A.diagonal())).tocsr()
    A.eliminate_zeros()
    A.data[:] = 1.0
    degree = np.asarray(A.sum(axis=1)).reshape(-1)
    one_hot = scipy.sparse.csr_matrix(
        (np.ones(H.num_vertices), (np.arange(H.num_vertices), labels)),
        shape=(H.num_vertices, H.num_classes))
    per_class = (A @ one_hot).toarray()
    same = per_class[np.arange(H.num_vertices), labels]
    has_neighbors = degree > 0
    h_node = float(np.mean(same[has_neighbors] / degree[has_neighbors]))
    return float(np.mean(edge_scores)), h_node


class SplitMasks(object):
    def __init__(self, train, val, test):
        self.train = train
        self.val = val
        self.test = test

    def __repr__(self):
        return '<SplitMasks train={} val={} test={}>'.format(
            int(self.train.sum()), int(self.val.sum()), int(self.test.sum()))


def split(H, train_frac, val_frac, seed):
    """Random transductive train/val/test masks, deterministic per seed."""
    if H.labels is None:
        raise HypergraphError('split needs vertex labels')
    if not (0 <= train_frac <= 1 and 0 <= val_frac <= 1 and train_frac + val_frac < 1):
        raise HypergraphError('split fractions out of range: train={} val={}'.format(train_frac, val_frac))
    n = H.num_vertices
    order = np.random.default_rng(seed).permutation(n)
    n_train = int(math.floor(train_frac * n + 1e-9))
    n_val = int(math.floor(val_frac * n + 1e-9))
    masks = [np.zeros(n, dtype=bool) for _ in range(3)]
    masks[0][order[:n_train]] = True
    masks[1][order[n_train:n_train + n_val]] = True
    masks[2][order[n_train + n_val:]] = True
    return SplitMasks(*masks)


@dataclass
class SynthConfig:
    num_vertices: int = 400
    num_classes: int = 4
    num_hyperedges: int = 120
    hyperedge_size_range: tuple = (3, 6)
    intra_class_probability: float = 0.9
    feature_dim: int = 16
    feature_noise: float = 1.0
    with_sensitive: bool = False

    def validate(self):
        low, high = self.hyperedge_size_range
        if self.num_vertices < 1 or self.num_classes < 1:
            raise HypergraphError('synthetic hypergraph needs vertices and classes')
        if self.num_hyperedges < 1:
            raise HypergraphError('synthetic hypergraph needs at least one hyperedge')
        if low < 2 or high < low:
            raise HypergraphError('hyperedge size range must satisfy 2 <= min <= max')
        if high > self.num_vertices:
            raise HypergraphError('hyperedge size {} exceeds {} vertices'.format(high, self.num_vertices))
        if not 0 < self.intra_class_probability <= 1:
            raise HypergraphError('intra-class probability must lie in (0, 1]')
        if self.feature_dim < 1 or self.feature_noise < 0:
            raise HypergraphError('feature_dim must be >= 1 and feature_noise >= 0')


SYNTH_PRESETS = {
    'default': SynthConfig(),
    'benchmark': SynthConfig(),
    'small': SynthConfig(num_vertices=60, num_classes=3, num_hyperedges=24, hyperedge_size_range=(2, 4)),
    'fair': SynthConfig(num_classes=2, with_sensitive=True),
}


def synth_hypergraph(cfg, seed):
    """Planted-partition hypergraph with noisy one-hot class features."""
    cfg.validate()
    rng = np.random.default_rng(seed)
    n, C = cfg.num_vertices, cfg.num_classes
    labels = rng.integers(0, C, size=n)
    pools = [np.flatnonzero(labels == c) for c in range(C)]
    class_choices = [c for c in range(C) if pools[c].size >= 2]
    low, high = cfg.hyperedge_size_range

    hyperedges = []
    for _ in range(cfg.num_hyperedges):
        size = int(rng.integers(low, high + 1))
        pool = np.arange(n)
        if rng.random() < cfg.intra_class_probability and class_choices:
            pool = pools[class_choices[int(rng.integers(len(class_choices)))]]
        hyperedges.append(rng.choice(pool, size=min(size, pool.size), replace=False))

    base = np.eye(C)[labels]
    if cfg.feature_dim >= C:
        base = np.pad(base, ((0, 0), (0, cfg.feature_dim - C)))
    else:
        base = base @ (rng.standard_normal((C, cfg.feature_dim)) / math.sqrt(cfg.feature_dim))
    features = base + cfg.feature_noise * rng.standard_normal((n, cfg.feature_dim))
    sensitive = rng.integers(0, 2, size=n) if cfg.with_sensitive else None
    return from_hyperedge_lists(hyperedges, features, labels=labels, sensitive=sensitive)
