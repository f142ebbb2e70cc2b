import numpy as np
import pytest

from oracles import angle
from invfilt.algebra import coefficient_matrices, filter_direction, intersect_nullspaces
from invfilt.clustering import (InverseFilterConfig, canonical_order, inverse_filter,
                                refine_and_intersect, spherical_kmeans)
from invfilt.errors import StageError, ClusteringError, NotIdentifiableError, ValidationError
from invfilt.metrics import model_errors
from invfilt.relaxation import NullspaceCandidate, RelaxationConfig
from invfilt.stochastic import simulate, uniform


def bundle(rng, center, spread_deg, size):
    """Unit vectors within spread_deg of center, in 3-D."""
    c = center / np.linalg.norm(center)
    out = []
    for _ in range(size):
        d = rng.normal(size=3)
        d -= d @ c * c
        d /= np.linalg.norm(d)
        a = np.radians(spread_deg) * rng.uniform()
        out.append(np.cos(a) * c + np.sin(a) * d)
    return np.array(out)


# ---- spherical k-means ----------------------------------------------------

def test_single_cluster_is_normalized_mean():
    rng = np.random.default_rng(0)
    V = rng.uniform(0.5, 2.0, size=(20, 4))
    km = spherical_kmeans(V, 1)
    U = V / np.linalg.norm(V, axis=1, keepdims=True)
    m = U.sum(0)
    assert np.allclose(km.centroids[0], m / np.linalg.norm(m), atol=1e-12)
    assert np.all(km.labels == 0)


def test_two_bundles_separate():
    rng = np.random.default_rng(1)
    c1 = np.array([1.0, 0.0, 0.2])
    c2 = np.array([np.cos(np.radians(60)), np.sin(np.radians(60)), 0.2])
    V = np.vstack([bundle(rng, c1, 5, 15), bundle(rng, c2, 5, 15)])
    truth = np.r_[np.zeros(15, int), np.ones(15, int)]
    km = spherical_kmeans(V * rng.uniform(0.5, 3, size=(30, 1)), 2, seed=3)
    assert np.array_equal(km.labels, truth) or np.array_equal(km.labels, 1 - truth)
    assert km.distances.max() <= np.radians(5) + 1e-9


def test_duplicates_collapse():
    V = np.tile([3.0, 4.0, 0.0], (6, 1))
    km = spherical_kmeans(V, 1)
    assert np.allclose(km.centroids[0], [0.6, 0.8, 0.0])
    assert np.all(km.distances <= 1e-7)


def test_too_many_clusters_for_distinct_directions():
    V = np.tile([1.0, 2.0], (5, 1))
    with pytest.raises(ClusteringError) as exc:
        spherical_kmeans(V, 2)
    assert exc.value.details["reason"] == "degenerate"
    with pytest.raises(ClusteringError):
        spherical_kmeans(V, 6)


def test_kmeans_rejects_zero_vectors():
    with pytest.raises(ValidationError):
        spherical_kmeans(np.zeros((3, 2)), 1)


def test_kmeans_deterministic_given_seed():
    rng = np.random.default_rng(5)
    V = rng.uniform(size=(40, 5))
    a, b = spherical_kmeans(V, 3, seed=11), spherical_kmeans(V, 3, seed=11)
    assert np.array_equal(a.labels, b.labels) and np.array_equal(a.centroids, b.centroids)


# ---- refinement -----------------------------------------------------------

@pytest.fixture(scope="module")
def dense3_run():
    from invfilt.presets import get_preset
    P, B = get_preset("eq38")
    tr = simulate(P, B, uniform(3), 100, 7)
    return P, B, tr, coefficient_matrices(tr.posteriors)


def true_candidates(tr, order=None):
    obs = tr.observations
    dist = np.arange(len(obs), dtype=float) if order is None else order
    return [NullspaceCandidate(k, np.ones(9), int(obs[k]), float(dist[k])) for k in range(len(obs))]


def test_refine_recovers_true_directions(dense3_run):
    P, B, tr, A = dense3_run
    ref = refine_and_intersect(true_candidates(tr), A, 3)
    for y in range(3):
        assert angle(ref.directions[y], filter_direction(P, B, y)) <= 1e-6
        full = intersect_nullspaces(list(A[tr.observations == y]))
        assert angle(ref.directions[y], full.basis[:, 0]) <= 1e-6
        assert ref.cluster_sizes[y] == int(np.sum(tr.observations == y))
        assert len(ref.members_used[y]) <= ref.cluster_sizes[y]


def test_refine_stops_before_polluting_member(dense3_run):
    P, B, tr, A = dense3_run
    cands = true_candidates(tr)
    wrong = next(k for k in range(len(cands)) if tr.observations[k] != 0)
    cands[wrong] = NullspaceCandidate(wrong, np.ones(9), 0, 1e9)  # ranked last in cluster 0
    ref = refine_and_intersect(cands, A, 3)
    assert wrong not in ref.members_used[0]
    assert angle(ref.directions[0], filter_direction(P, B, 0)) <= 1e-6


def test_refine_misled_by_early_pollution(dense3_run):
    # a wrong member ranked first either breaks the intersection or yields a wrong direction
    P, B, tr, A = dense3_run
    cands = true_candidates(tr)
    wrong = next(k for k in range(len(cands)) if tr.observations[k] != 0)
    cands[wrong] = NullspaceCandidate(wrong, np.ones(9), 0, -1.0)
    try:
        ref = refine_and_intersect(cands, A, 3)
    except StageError as exc:
        assert exc.stage == "refine"
    else:
        assert angle(ref.directions[0], filter_direction(P, B, 0)) > 1e-3


def test_single_member_cluster_fails(dense3_run):
    P, B, tr, A = dense3_run
    cands = [NullspaceCandidate(0, np.ones(9), 0, 0.0)]
    cands += [NullspaceCandidate(k, np.ones(9), 1, 0.0) for k in range(1, 40)]
    with pytest.raises(NotIdentifiableError) as exc:
        refine_and_intersect(cands, A, 2)
    assert exc.value.details["cluster"] == 0
    assert exc.value.details["reason"] == "cluster_exhausted"


# ---- canonical order ------------------------------------------------------

def test_canonical_order_sorts_columns():
    B = np.array([[0.5, 0.2, 0.3], [0.1, 0.6, 0.3]])
    order = canonical_order(B)
    assert list(order) == [1, 2, 0]
    cols = [tuple(B[:, j]) for j in order]
    assert cols == sorted(cols)


# ---- end to end -----------------------------------------------------------

def test_two_steps_not_identifiable(dense3):
    tr = simulate(*dense3, uniform(3), 2, 0)
    with pytest.raises(NotIdentifiableError) as exc:
        inverse_filter(tr.posteriors, 3)
    assert exc.value.stage == "precheck"


def test_rejects_off_simplex():
    with pytest.raises(ValidationError):
        inverse_filter([[0.5, 0.6], [0.5, 0.5]], 2)
    with pytest.raises(ValidationError):
        inverse_filter([[0.5, 0.5]], 2)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_dense3_success_and_label_consistency(dense3, seed):
    P, B = dense3
    tr = simulate(P, B, uniform(3), 50, seed)
    res = inverse_filter(tr.posteriors, 3)
    eP, eB, perm = model_errors(res.P, res.B, P, B)
    assert eP < 1e-3 and eB < 1e-3
    # observation labels share the column permutation of B_hat
    assert np.array_equal(np.asarray(perm)[tr.observations], res.observations)
    assert np.abs(res.P.sum(1) - 1).max() <= 1e-8 and np.abs(res.B.sum(1) - 1).max() <= 1e-8
    assert list(canonical_order(res.B)) == [0, 1, 2]
    assert res.diagnostics["ambiguous_steps"] == 0
    assert sum(res.diagnostics["cluster_sizes"]) == 50


def test_oracle_dominates_on_same_data(dense3):
    from invfilt.algebra import invert_known_observations
    P, B = dense3
    for seed in range(6):
        tr = simulate(P, B, uniform(3), 40, seed)
        try:
            res = inverse_filter(tr.posteriors, 3)
        except Exception:
            continue
        eP, eB, _ = model_errors(res.P, res.B, P, B)
        if eP < 1e-3 and eB < 1e-3:
            Ph, Bh = invert_known_observations(tr.posteriors, tr.observations, 3)
            assert np.linalg.norm(Ph - P) < 1e-3 and np.linalg.norm(Bh - B) < 1e-3


def test_highs_backend_end_to_end(dense3):
    P, B = dense3
    tr = simulate(P, B, uniform(3), 30, 0)
    cfg = InverseFilterConfig(relaxation=RelaxationConfig(solver="highs"))
    res = inverse_filter(tr.posteriors, 3, cfg)
    eP, eB, _ = model_errors(res.P, res.B, P, B)
    assert eP < 1e-3 and eB < 1e-3


def test_config_from_dict():
    cfg = InverseFilterConfig.from_dict({"seed": 4, "relaxation": {"solver": "highs"}})
    assert cfg.seed == 4 and cfg.relaxation.solver == "highs"
    with pytest.raises(ValidationError):
        InverseFilterConfig.from_dict({"bogus": 1})
