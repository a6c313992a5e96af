# coding: utf-8
import itertools
import json

import numpy as np
import pytest

from hypergcl.hypergraph import (SYNTH_PRESETS, Hypergraph, HypergraphError, HypergraphParseError,
                                 SynthConfig, clique_expand, from_bipartite, from_hyperedge_lists,
                                 homophily, load_bundle, load_hypergraph, save_hypergraph, split,
                                 synth_hypergraph, to_bipartite)


def _write(path, text):
    path.write_text(text, encoding='utf-8')
    return str(path)


def _random_hypergraph(rng, n=50, m=20, max_size=5):
    hyperedges = [rng.choice(n, size=int(rng.integers(1, max_size + 1)), replace=False) for _ in range(m)]
    return from_hyperedge_lists(hyperedges, rng.standard_normal((n, 3)), labels=rng.integers(0, 3, size=n))


def test_load_single_hyperedge(tmp_path):
    H = load_hypergraph(_write(tmp_path / 'h.txt', '0 1 2\n'),
                        _write(tmp_path / 'f.txt', '1 0\n0 1\n1 1\n'))
    assert (H.num_vertices, H.num_hyperedges, H.num_incidences) == (3, 1, 3)
    assert H.labels is None


def test_load_deduplicates_repeated_members(tmp_path):
    H = load_hypergraph(_write(tmp_path / 'h.txt', '0 1 1 0\n2\n'),
                        _write(tmp_path / 'f.txt', '1\n2\n3\n'),
                        label_path=_write(tmp_path / 'l.txt', '0\n1\n1\n'))
    assert H.num_incidences == 3
    assert [m.tolist() for m in H.hyperedges()] == [[0, 1], [2]]
    assert H.num_classes == 2


def test_load_rejects_vertex_out_of_range(tmp_path):
    with pytest.raises(HypergraphParseError) as excinfo:
        load_hypergraph(_write(tmp_path / 'h.txt', '0 1\n0 5\n'),
                        _write(tmp_path / 'f.txt', '1\n2\n3\n'))
    assert excinfo.value.line == 2
    assert 'h.txt' in str(excinfo.value)


def test_load_rejects_empty_line_and_bad_feature(tmp_path):
    features = _write(tmp_path / 'f.txt', '1\n2\n3\n')
    with pytest.raises(HypergraphParseError) as excinfo:
        load_hypergraph(_write(tmp_path / 'h.txt', '0 1\n\n1 2\n'), features)
    assert excinfo.value.line == 2
    with pytest.raises(HypergraphParseError) as excinfo:
        load_hypergraph(_write(tmp_path / 'h2.txt', '0 1\n'), _write(tmp_path / 'g.txt', '1\nx\n3\n'))
    assert excinfo.value.line == 2


def test_load_rejects_label_count_mismatch(tmp_path):
    with pytest.raises(HypergraphParseError):
        load_hypergraph(_write(tmp_path / 'h.txt', '0 1\n'), _write(tmp_path / 'f.txt', '1\n2\n3\n'),
                        label_path=_write(tmp_path / 'l.txt', '0\n1\n'))


def test_load_bundle(tmp_path):
    bundle = {'n': 3, 'hyperedges': [[0, 1], [1, 2]], 'features': [[1.0], [2.0], [3.0]],
              'labels': [0, 0, 1], 'sensitive': [1, 0, 1]}
    path = tmp_path / 'b.json'
    path.write_text(json.dumps(bundle), encoding='utf-8')
    H = load_bundle(str(path))
    assert H.num_hyperedges == 2
    assert H.sensitive.tolist() == [1, 0, 1]


def test_save_then_load_preserves_structure(tmp_path):
    H = synth_hypergraph(SYNTH_PRESETS['small'], 3)
    paths = save_hypergraph(H, str(tmp_path / 'out'))
    again = load_hypergraph(paths['hyperedges'], paths['features'], paths['labels'])
    assert again.structurally_equal(H)
    np.testing.assert_array_equal(again.features, H.features)


def test_invariants_are_enforced():
    with pytest.raises(HypergraphError):
        Hypergraph(2, 1, np.zeros((2, 1)), [(0, 0), (0, 0)])
    with pytest.raises(HypergraphError):
        Hypergraph(2, 2, np.zeros((2, 1)), [(0, 0)])
    with pytest.raises(HypergraphError):
        Hypergraph(2, 1, np.zeros((2, 1)), [(0, 0)], incidence_weights=[1.5])
    with pytest.raises(HypergraphError):
        Hypergraph(2, 1, np.zeros((2, 1)), [(0, 0)], sensitive=[0, 2])


def test_arrays_are_read_only():
    H = from_hyperedge_lists([[0, 1]], np.zeros((2, 2)))
    with pytest.raises(ValueError):
        H.features[0, 0] = 1.0


def test_bipartite_edges():
    H = from_hyperedge_lists([[0, 1], [1, 2]], np.zeros((3, 1)))
    assert to_bipartite(H).edge_set() == {(0, 0), (1, 0), (1, 1), (2, 1)}


def test_bipartite_round_trip():
    H = _random_hypergraph(np.random.default_rng(4))
    assert from_bipartite(to_bipartite(H)).structurally_equal(H)


def test_bipartite_of_empty_structure():
    H = Hypergraph(3, 0, np.zeros((3, 1)), np.zeros((0, 2)))
    view = to_bipartite(H)
    assert view.edge_set() == set()
    assert len(set(view.components())) == 3


def test_components_follow_shared_hyperedges():
    H = from_hyperedge_lists([[0, 1], [1, 2], [3, 4]], np.zeros((6, 1)))
    labels = to_bipartite(H).components()[:6]
    assert labels[0] == labels[1] == labels[2]
    assert labels[3] == labels[4]
    assert len({labels[0], labels[3], labels[5]}) == 3


def test_clique_expansion_pairs():
    H = from_hyperedge_lists([[0, 1, 2]], np.zeros((3, 1)))
    assert [m.tolist() for m in clique_expand(H).hyperedges()] == [[0, 1], [0, 2], [1, 2]]
    H = from_hyperedge_lists([[0, 1], [0, 1]], np.zeros((2, 1)))
    assert clique_expand(H).num_hyperedges == 1


def test_clique_expansion_matches_brute_force():
    rng = np.random.default_rng(9)
    H = _random_hypergraph(rng, n=20, m=12)
    expected = set()
    for members in H.hyperedges():
        expected.update(itertools.combinations(sorted(members.tolist()), 2))
    C = clique_expand(H)
    assert C.num_hyperedges == len(expected)
    assert set(tuple(m.tolist()) for m in C.hyperedges()) == expected
    np.testing.assert_array_equal(C.labels, H.labels)
    assert clique_expand(C).structurally_equal(C)


def test_homophily_examples():
    H = from_hyperedge_lists([[0, 1, 2], [2, 3]], np.zeros((4, 1)), labels=[1, 1, 1, 1])
    assert homophily(H) == (1.0, 1.0)
    H = from_hyperedge_lists([[0, 1]], np.zeros((2, 1)), labels=[0, 1])
    assert homophily(H) == (0.0, 0.0)


def test_homophily_errors():
    with pytest.raises(HypergraphError):
        homophily(from_hyperedge_lists([[0, 1]], np.zeros((2, 1))))
    with pytest.raises(HypergraphError):
        homophily(from_hyperedge_lists([[0], [1]], np.zeros((2, 1)), labels=[0, 1]))


def test_split_counts_and_determinism():
    H = from_hyperedge_lists([[0, 1]], np.zeros((100, 1)), labels=np.zeros(100, dtype=int))
    masks = split(H, 0.1, 0.1, seed=5)
    assert (masks.train.sum(), masks.val.sum(), masks.test.sum()) == (10, 10, 80)
    assert not np.any(masks.train & masks.val) and not np.any(masks.val & masks.test)
    again = split(H, 0.1, 0.1, seed=5)
    np.testing.assert_array_equal(masks.train, again.train)
    everything = split(H, 0.0, 0.0, seed=5)
    assert everything.test.all()
    with pytest.raises(HypergraphError):
        split(H, 0.6, 0.5, seed=0)


def test_synth_is_deterministic():
    a = synth_hypergraph(SYNTH_PRESETS['benchmark'], 7)
    b = synth_hypergraph(SYNTH_PRESETS['benchmark'], 7)
    assert a.structurally_equal(b)
    np.testing.assert_array_equal(a.features, b.features)
    assert (a.num_vertices, a.num_hyperedges, a.num_features, a.num_classes) == (400, 120, 16, 4)


def test_synth_pure_intra_class_is_fully_homophilous():
    cfg = SynthConfig(num_vertices=80, num_classes=3, num_hyperedges=30, intra_class_probability=1.0)
    assert homophily(synth_hypergraph(cfg, 2))[0] == 1.0


def test_synth_benchmark_edge_homophily():
    scores = [homophily(synth_hypergraph(SYNTH_PRESETS['benchmark'], seed))[0] for seed in range(10)]
    assert np.mean(scores) >= 0.8


def test_synth_rejects_bad_config():
    with pytest.raises(HypergraphError):
        synth_hypergraph(SynthConfig(num_hyperedges=0), 0)
    with pytest.raises(HypergraphError):
        synth_hypergraph(SynthConfig(num_vertices=4, hyperedge_size_range=(3, 6)), 0)


def test_synth_sensitive_attribute():
    H = synth_hypergraph(SYNTH_PRESETS['fair'], 0)
    assert H.num_classes == 2
    assert set(H.sensitive.tolist()) == {0, 1}
