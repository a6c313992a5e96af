# coding: utf-8
"""Fabricated hypergraph augmentations A0-A5 used to build contrastive views."""
import logging
import math

import numpy as np
from aenum import Enum

from .hypergraph import to_bipartite

log = logging.getLogger(__name__)

DEFAULT_RATIO = 0.2
DEFAULT_RETAIN = 0.8


class AugmentationKind(Enum):
    A0 = 'identity'
    A1 = 'hyperedge_removal'
    A2 = 'incidence_removal'
    A3 = 'vertex_drop'
    A4 = 'attribute_mask'
    A5 = 'subgraph'
    A6 = 'generative'


class AugmentationError(Exception):
    """Raised for malformed augmentation specs or ratios."""
    pass


class AugmentationSpec(object):
    def __init__(self, kind, ratio=DEFAULT_RATIO, walk_budget=DEFAULT_RETAIN):
        self.kind = kind
        self.ratio = float(ratio)
        self.walk_budget = float(walk_budget)
        if not 0 <= self.ratio <= 1:
            raise AugmentationError('ratio must lie in [0, 1], got {}'.format(ratio))
        if not 0 < self.walk_budget <= 1:
            raise AugmentationError('walk budget must lie in (0, 1], got {}'.format(walk_budget))

    @property
    def is_generative(self):
        return self.kind is AugmentationKind.A6

    def __repr__(self):
        return '<AugmentationSpec {}>'.format(self.to_str())

    def __eq__(self, other):
        return isinstance(other, AugmentationSpec) and self.to_str() == other.to_str()

    def __hash__(self):
        return hash(self.to_str())

    def to_str(self):
        if self.kind in (AugmentationKind.A0, AugmentationKind.A6):
            return self.kind.name
        if self.kind is AugmentationKind.A5:
            return '{}:{}'.format(self.kind.name, self.walk_budget)
        return '{}:{}'.format(self.kind.name, self.ratio)


def parse_spec(text):
    """Parse ``"A1:0.2"``, ``"A5:0.8"``, ``"A0"`` or ``"A6"``."""
    name, _, value = text.strip().partition(':')
    try:
        kind = AugmentationKind[name.upper()]
    except KeyError:
        raise AugmentationError('unknown augmentation "{}" (expected A0-A6)'.format(name))
    if not value:
        return AugmentationSpec(kind)
    if kind in (AugmentationKind.A0, AugmentationKind.A6):
        raise AugmentationError('{} takes no ratio'.format(kind.name))
    try:
        number = float(value)
    except ValueError:
        raise AugmentationError('ratio "{}" is not a number'.format(value))
    if kind is AugmentationKind.A5:
        return AugmentationSpec(kind, walk_budget=number)
    return AugmentationSpec(kind, ratio=number)


def _check_ratio(p):
    if not 0 <= p <= 1:
        raise AugmentationError('ratio must lie in [0, 1], got {}'.format(p))


def a0_identity(H):
    return H


def a1_hyperedge_removal(H, p, seed):
    """Drop each hyperedge independently with probability ``p``."""
    _check_ratio(p)
    rng = np.random.default_rng(seed)
    removed = rng.random(H.num_hyperedges) < p
    return H.restrict(~removed[H.hyperedge_index])


def a2_incidence_removal(H, p, seed):
    """Drop each (vertex, hyperedge) incidence independently with probability ``p``."""
    _check_ratio(p)
    rng = np.random.default_rng(seed)
    return H.restrict(rng.random(H.num_incidences) >= p)


def _mask_vertices(H, dropped):
    features = np.array(H.features)
    features[dropped] = 0.0
    return H.restrict(~dropped[H.vertex_index], features=features)


def a3_vertex_drop(H, p, seed):
    """Mask each vertex with probability ``p``: incidences removed, features zeroed, slot kept."""
    _check_ratio(p)
    rng = np.random.default_rng(seed)
    return _mask_vertices(H, rng.random(H.num_vertices) < p)


def a4_attr_mask(H, p, seed):
    """Zero each feature entry independently with probability ``p``."""
    _check_ratio(p)
    rng = np.random.default_rng(seed)
    keep = rng.random(H.features.shape) >= p
    return H.replace(features=H.features * keep)


def walk_target(retain_frac, num_vertices):
    return min(num_vertices, max(1, int(math.floor(retain_frac * num_vertices + 0.5))))


def a5_subgraph(H, retain_frac, seed):
    """Random-walk subgraph on the bipartite view; unvisited vertices are masked as in A3."""
    if not 0 < retain_frac <= 1:
        raise AugmentationError('retain fraction must lie in (0, 1], got {}'.format(retain_frac))
    rng = np.random.default_rng(seed)
    n = H.num_vertices
    if n == 0:
        return H
    target = walk_target(retain_frac, n)
    view = to_bipartite(H)
    vertex_edges, edge_vertices = view.neighbors()
    component = view.components()[:n]
    remaining = np.bincount(component)
    visited = np.zeros(n, dtype=bool)

    def visit(v):
        if not visited[v]:
            visited[v] = True
            remaining[component[v]] -= 1

    current = int(rng.integers(n))
    visit(current)
    while visited.sum() < target:
        if remaining[component[current]] == 0:
            current = int(rng.choice(np.flatnonzero(~visited)))
            visit(current)
            continue
        edges = vertex_edges[current]
        e = edges[rng.integers(edges.size)]
        members = edge_vertices[e]
        current = int(members[rng.integers(members.size)])
        visit(current)
    log.debug('subgraph walk kept %d/%d vertices', int(visited.sum()), n)
    return _mask_vertices(H, ~visited)


def apply_augmentation(H, spec, seed):
    """Apply one fabricated augmentation described by ``spec``."""
    kind = spec.kind
    if kind is AugmentationKind.A0:
        return a0_identity(H)
    if kind is AugmentationKind.A1:
        return a1_hyperedge_removal(H, spec.ratio, seed)
    if kind is AugmentationKind.A2:
        return a2_incidence_removal(H, spec.ratio, seed)
    if kind is AugmentationKind.A3:
        return a3_vertex_drop(H, spec.ratio, seed)
    if kind is AugmentationKind.A4:
        return a4_attr_mask(H, spec.ratio, seed)
    if kind is AugmentationKind.A5:
        return a5_subgraph(H, spec.walk_budget, seed)
    raise AugmentationError('{} is generated by the VHGAE, not fabricated'.format(kind.name))
