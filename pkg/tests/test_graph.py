import json
from collections import deque

import numpy as np
import pytest
from conftest import random_connected, random_tree
from hypothesis import given, settings
from hypothesis import strategies as st

from morphnet.graph import (DisconnectedError, DuplicateEdgeError, Morphology, MorphologyParseError,
                            NodeIndexError, SelfLoopError, adjacency, floyd_distances, load_morphologies,
                            load_morphology, normalized_adjacency, permutation_matrix, permute,
                            save_morphologies, save_morphology, validate)


def path(K, types=None):
    return Morphology(f"path{K}", K, tuple(types or [0] * K), tuple((i, i + 1) for i in range(K - 1)))


def bfs_distances(m):
    D = np.full((m.num_nodes, m.num_nodes), -1, dtype=np.int64)
    for s in range(m.num_nodes):
        D[s, s] = 0
        q = deque([s])
        while q:
            v = q.popleft()
            for u in m.neighbors(v):
                if D[s, u] < 0:
                    D[s, u] = D[s, v] + 1
                    q.append(u)
    return D


# --- validation -----------------------------------------------------------------


def test_validate_accepts_path():
    validate(Morphology("p", 3, (0, 1, 1), ((0, 1), (1, 2))))


@pytest.mark.parametrize("m, err", [
    (Morphology("d", 2, (0, 1), ()), DisconnectedError),
    (Morphology("s", 1, (0,), ((0, 0),)), SelfLoopError),
    (Morphology("dup", 2, (0, 1), ((0, 1), (1, 0))), DuplicateEdgeError),
    (Morphology("idx", 2, (0, 1), ((0, 2),)), NodeIndexError),
    (Morphology("types", 2, (0,), ((0, 1),)), NodeIndexError),
    (Morphology("root", 2, (0, 1), ((0, 1),), root=5), NodeIndexError),
])
def test_validate_rejects_with_distinct_errors(m, err):
    with pytest.raises(err):
        validate(m)


def test_edges_are_normalized():
    m = Morphology("m", 3, (0, 1, 1), ((2, 1), (1, 0)))
    assert m.edges == ((0, 1), (1, 2))


# --- adjacency --------------------------------------------------------------------


def test_adjacency_examples():
    np.testing.assert_array_equal(adjacency(path(3)), [[0, 1, 0], [1, 0, 1], [0, 1, 0]])
    np.testing.assert_array_equal(adjacency(Morphology("one", 1, (0,), ())), [[0]])
    star = Morphology("star", 4, (0, 1, 1, 1), ((0, 1), (0, 2), (0, 3)))
    np.testing.assert_array_equal(adjacency(star)[0], [0, 1, 1, 1])


def test_normalized_adjacency_examples():
    np.testing.assert_allclose(normalized_adjacency(adjacency(path(2))), [[0.5, 0.5], [0.5, 0.5]], atol=1e-15)
    np.testing.assert_array_equal(normalized_adjacency(adjacency(Morphology("one", 1, (0,), ()))), [[1.0]])
    assert normalized_adjacency(adjacency(path(3)))[0, 1] == pytest.approx(1 / np.sqrt(6), abs=1e-15)


def test_normalized_adjacency_matches_entrywise_formula():
    rng = np.random.default_rng(1)
    for _ in range(30):
        m = random_connected(rng, int(rng.integers(1, 12)))
        A = adjacency(m)
        At = A + np.eye(m.num_nodes)
        d = At.sum(axis=1)
        brute = np.array([[At[i, j] / np.sqrt(d[i] * d[j]) for j in range(m.num_nodes)]
                          for i in range(m.num_nodes)])
        Ah = normalized_adjacency(A)
        assert np.max(np.abs(Ah - brute)) < 1e-14
        np.testing.assert_array_equal(Ah, Ah.T)
        assert np.all(Ah[At > 0] > 0) and np.all(Ah <= 1.0)


# --- distances ----------------------------------------------------------------------


def test_floyd_path_and_diagonal():
    D = floyd_distances(path(4))
    assert D[0, 3] == 3
    assert np.all(np.diag(D) == 0)


def test_floyd_matches_bfs_on_random_trees():
    rng = np.random.default_rng(2)
    for _ in range(100):
        m = random_tree(rng, int(rng.integers(1, 13)))
        np.testing.assert_array_equal(floyd_distances(m), bfs_distances(m))


def test_floyd_metric_properties():
    rng = np.random.default_rng(3)
    for _ in range(20):
        D = floyd_distances(random_connected(rng, 9))
        np.testing.assert_array_equal(D, D.T)
        off = ~np.eye(9, dtype=bool)
        assert np.all(D[off] >= 1)
        for k in range(9):
            assert np.all(D <= D[:, k:k + 1] + D[k:k + 1, :])


# --- permutation --------------------------------------------------------------------


def test_permute_identity_and_swap():
    m = path(3, [0, 1, 2])
    assert permute(m, [0, 1, 2]) == m
    swapped = permute(m, [1, 0, 2])
    assert swapped.edges == ((0, 1), (0, 2))


def test_permute_rejects_non_bijection():
    with pytest.raises(ValueError):
        permute(path(3), [0, 0, 1])


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 10), st.integers(0, 2**32 - 1))
def test_permute_conjugates_adjacency_and_distances(K, seed):
    rng = np.random.default_rng(seed)
    m = random_connected(rng, K)
    p = rng.permutation(K)
    P = permutation_matrix(p)
    mp = permute(m, p)
    np.testing.assert_array_equal(adjacency(mp), P @ adjacency(m) @ P.T)
    np.testing.assert_array_equal(floyd_distances(mp), (P @ floyd_distances(m) @ P.T).astype(np.int64))
    assert mp.limb_types[p[m.root]] == m.limb_types[m.root]


# --- files --------------------------------------------------------------------------


def test_save_load_round_trip(tmp_path):
    m = Morphology("walker", 4, (0, 1, 2, 3), ((0, 1), (1, 2), (2, 3)))
    save_morphology(m, tmp_path / "m.json")
    assert load_morphology(tmp_path / "m.json") == m
    save_morphologies([m, path(2)], tmp_path / "set.json")
    assert load_morphologies(tmp_path / "set.json") == [m, path(2)]


def test_load_missing_edges_is_parse_error(tmp_path):
    f = tmp_path / "bad.json"
    f.write_text(json.dumps({"name": "x", "num_nodes": 1, "root": 0, "limb_types": [0]}))
    with pytest.raises(MorphologyParseError, match="edges"):
        load_morphology(f)


def test_load_malformed_json_reports_line(tmp_path):
    f = tmp_path / "bad.json"
    f.write_text('{\n  "name": "x",\n  "num_nodes": 2,,\n}')
    with pytest.raises(MorphologyParseError, match=":3:"):
        load_morphology(f)


def test_load_duplicate_edge_is_validation_error(tmp_path):
    f = tmp_path / "dup.json"
    f.write_text(json.dumps({"name": "x", "num_nodes": 2, "root": 0, "limb_types": [0, 1],
                             "edges": [[0, 1], [1, 0]]}))
    with pytest.raises(DuplicateEdgeError):
        load_morphology(f)
