# coding: utf-8
import math

import numpy as np
import pytest

from hypergcl import diffnum as dn
from hypergcl.hypergraph import Hypergraph, from_hyperedge_lists
from hypergcl.model import (EncoderParams, ModelError, classify, encode, glorot, init_encoder,
                            load_params, project, sample_dropout_masks, save_params, zeros_like)


@pytest.fixture
def toy():
    rng = np.random.default_rng(0)
    return from_hyperedge_lists([[0, 1, 2], [1, 3], [2, 3, 4]], rng.standard_normal((5, 3)),
                                labels=[0, 1, 0, 1, 1])


@pytest.fixture
def params():
    return init_encoder(3, 6, 2, num_classes=2, d_proj=4, seed=1)


def _loss(out):
    return dn.sum_(dn.mul(out, dn.constant(np.linspace(-1, 1, out.data.size).reshape(out.shape))))


def test_shapes(toy, params):
    z_v, z_e = encode(toy, params)
    assert z_v.shape == (5, 6)
    assert z_e.shape == (3, 6)
    assert project(z_v, params).shape == (5, 4)
    assert classify(z_v, params).shape == (5, 2)


def test_parameter_groups(params):
    assert params.names()[:2] == ['input.weight', 'input.bias']
    assert len(params.encoder_tensors()) == 2 + 2 * 2 * 4
    assert len(params.classifier_tensors()) == 2
    assert len(params.head_tensors()) == 4
    assert params['blocks.1.e2v.1.weight'].shape == (6, 6)
    assert params['head.1.weight'].shape == (6, 4)


def test_init_is_seeded_glorot():
    a = init_encoder(3, 6, 1, seed=5)
    b = init_encoder(3, 6, 1, seed=5)
    np.testing.assert_array_equal(a['input.weight'].data, b['input.weight'].data)
    bound = math.sqrt(6.0 / (3 + 6))
    assert np.abs(a['input.weight'].data).max() <= bound
    assert not a['input.bias'].data.any()
    assert np.abs(glorot(np.random.default_rng(0), 100, 100)).max() <= math.sqrt(6.0 / 200)


def test_at_least_one_block():
    with pytest.raises(ModelError):
        EncoderParams([], 3, 6, 0)


def test_feature_mismatch(toy):
    with pytest.raises(ModelError):
        encode(toy, init_encoder(4, 6, 1, seed=0))


def test_structureless_hypergraph(toy, params):
    empty = Hypergraph(5, 0, toy.features, np.zeros((0, 2)))
    z_v, z_e = encode(empty, params)
    assert z_e.shape == (0, 6)
    x = np.maximum(toy.features @ params['input.weight'].data, 0.0)
    np.testing.assert_allclose(z_v.data, x)

    silent = toy.replace(incidence_weights=np.zeros(toy.num_incidences))
    np.testing.assert_allclose(encode(silent, params)[0].data, z_v.data)


def test_unit_weights_match_absent_weights(toy, params):
    weighted = toy.replace(incidence_weights=np.ones(toy.num_incidences))
    np.testing.assert_array_equal(encode(weighted, params)[0].data, encode(toy, params)[0].data)


def test_zero_weight_equals_deleted_incidence(toy, params):
    # incidence 0 is (0, 0); hyperedge 0 keeps two other members
    weights = np.ones(toy.num_incidences)
    weights[0] = 0.0
    keep = np.ones(toy.num_incidences, dtype=bool)
    keep[0] = False
    zeroed = encode(toy.replace(incidence_weights=weights), params)
    deleted = encode(toy.restrict(keep), params)
    np.testing.assert_allclose(zeroed[0].data, deleted[0].data, atol=1e-12)
    np.testing.assert_allclose(zeroed[1].data, deleted[1].data, atol=1e-12)


def test_vertex_permutation_equivariance(toy, params):
    perm = np.array([3, 0, 4, 1, 2])
    inverse = np.argsort(perm)
    pairs = np.stack([inverse[toy.vertex_index], toy.hyperedge_index], axis=1)
    permuted = Hypergraph(5, 3, toy.features[perm], pairs)
    np.testing.assert_allclose(encode(permuted, params)[0].data, encode(toy, params)[0].data[perm], atol=1e-12)


def test_hyperedge_permutation_equivariance(toy, params):
    perm = np.array([2, 0, 1])
    inverse = np.argsort(perm)
    pairs = np.stack([toy.vertex_index, inverse[toy.hyperedge_index]], axis=1)
    permuted = Hypergraph(5, 3, toy.features, pairs)
    z_v, z_e = encode(permuted, params)
    np.testing.assert_allclose(z_e.data, encode(toy, params)[1].data[perm], atol=1e-12)
    np.testing.assert_allclose(z_v.data, encode(toy, params)[0].data, atol=1e-12)


def test_encode_is_deterministic(toy, params):
    masks = sample_dropout_masks(np.random.default_rng(3), 5, 6, 2, 0.5)
    a = encode(toy, params, masks)[0].data
    b = encode(toy, params, masks)[0].data
    np.testing.assert_array_equal(a, b)


def test_dropout_masks():
    assert sample_dropout_masks(np.random.default_rng(0), 5, 4, 2, 0.0) is None
    masks = sample_dropout_masks(np.random.default_rng(0), 400, 50, 2, 0.5)
    assert len(masks) == 2
    assert set(np.unique(masks[0]).tolist()) <= {0.0, 2.0}
    assert abs(masks[0].mean() - 1.0) < 0.05


def test_linear_output_can_be_negative(toy, params):
    z_v, _ = encode(toy, params, activate_output=False)
    relu_z, _ = encode(toy, params)
    assert (relu_z.data >= 0).all()
    np.testing.assert_allclose(np.maximum(z_v.data, 0.0), relu_z.data)


def test_projection_rows_are_unit(toy, params):
    z_v, _ = encode(toy, params)
    norms = np.linalg.norm(project(dn.constant(np.random.default_rng(2).standard_normal((5, 6))), params).data, axis=1)
    np.testing.assert_allclose(norms, 1.0, atol=1e-12)
    assert project(z_v, params).shape == (5, 4)


def test_zero_input_to_zero_bias_head_gives_zero_rows(params):
    out = project(dn.constant(np.zeros((3, 6))), params)
    np.testing.assert_array_equal(out.data, 0.0)


def test_classifier_degenerate_cases(params):
    zero = zeros_like(params)
    z = dn.constant(np.random.default_rng(0).standard_normal((5, 6)))
    np.testing.assert_array_equal(classify(z, zero).data, 0.0)
    single = init_encoder(3, 6, 1, num_classes=1, seed=0)
    assert classify(z, single).shape == (5, 1)
    probs = dn.softmax_rows(classify(z, params)).data
    np.testing.assert_allclose(probs.sum(axis=1), 1.0)


@pytest.mark.parametrize('name', ['input.weight', 'blocks.0.v2e.0.weight', 'blocks.1.e2v.1.bias', 'head.0.weight'])
def test_gradients_match_finite_differences(toy, params, name):
    def f(_):
        z_v, _ = encode(toy, params)
        return _loss(project(z_v, params))
    assert dn.grad_check(f, params[name]) < 1e-4


def test_gradient_reaches_incidence_weights(toy, params):
    w = dn.parameter(np.random.default_rng(4).uniform(0.2, 0.9, size=toy.num_incidences))
    view = toy.replace(incidence_weights=w)
    assert dn.grad_check(lambda _: _loss(encode(view, params)[0]), w) < 1e-4
    assert np.abs(w.grad).sum() > 0


def test_checkpoint_round_trip(tmp_path, params):
    path = str(tmp_path / 'ckpt.json')
    save_params(path, params, extra={'seed': 3})
    loaded = load_params(path)
    assert loaded.names() == params.names()
    assert loaded.meta() == params.meta()
    for name, t in params.items():
        np.testing.assert_array_equal(loaded[name].data, t.data)


def test_copy_is_independent(params):
    clone = params.copy()
    clone['input.weight'].data = clone['input.weight'].data + 1.0
    assert not np.array_equal(clone['input.weight'].data, params['input.weight'].data)
