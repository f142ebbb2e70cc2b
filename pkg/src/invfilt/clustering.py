"""Spherical k-means, cluster refinement and the end-to-end inverse filter."""
from dataclasses import dataclass, field, replace

import numpy as np

from .algebra import (NULL_TOL, _stack_nullspace, coefficient_matrices, factorize_directions,
                      orient_direction, reconstruct_observations)
from .errors import ClusteringError, NotIdentifiableError, RelaxationError, ValidationError
from .relaxation import RelaxationConfig, RelaxationProblem, solve_relaxation
from .rng import make_rng
from .stochastic import ROW_SUM_TOL


@dataclass(frozen=True)
class KMeansResult:
    centroids: np.ndarray   # (Y, n), unit rows
    labels: np.ndarray      # (N,)
    objective: float        # sum of cosine similarities
    distances: np.ndarray   # angle to assigned centroid, radians


def _normalize_rows(V):
    V = np.asarray(V, dtype=float)
    if V.ndim != 2 or len(V) == 0:
        raise ValidationError("vectors must be a non-empty 2-D array")
    nrm = np.linalg.norm(V, axis=1)
    if np.any(nrm == 0) or not np.all(np.isfinite(nrm)):
        raise ValidationError("vectors must be finite and nonzero")
    return V / nrm[:, None]


def _seed_centroids(U, k, rng):
    """k-means++ seeding with 1 - cos as the spread measure."""
    N = len(U)
    idx = [int(rng.integers(N))]
    d = 1.0 - U @ U[idx[0]]
    for _ in range(1, k):
        d = np.clip(d, 0.0, None)
        tot = d.sum()
        j = int(rng.integers(N)) if tot <= 0 else int(rng.choice(N, p=d / tot))
        idx.append(j)
        d = np.minimum(d, 1.0 - U @ U[j])
    return U[idx].copy()


def _lloyd(U, C, max_iter):
    labels = None
    k = len(C)
    for _ in range(max_iter):
        S = U @ C.T
        new = np.argmax(S, axis=1)
        counts = np.bincount(new, minlength=k)
        for c in np.flatnonzero(counts == 0):
            # re-seed an empty cluster at the worst-fitting point
            sim = S[np.arange(len(U)), new]
            sim[counts[new] <= 1] = np.inf
            j = int(np.argmin(sim))
            if not np.isfinite(sim[j]):
                return None
            counts[new[j]] -= 1
            new[j] = c
            counts[c] = 1
        if labels is not None and np.array_equal(new, labels):
            break
        labels = new
        C = np.zeros_like(C)
        np.add.at(C, labels, U)
        nrm = np.linalg.norm(C, axis=1)
        if np.any(nrm == 0):
            return None
        C /= nrm[:, None]
    S = U @ C.T
    labels = np.argmax(S, axis=1)
    if len(np.unique(labels)) < k:
        return None
    return C, labels, float(S[np.arange(len(U)), labels].sum())


def spherical_kmeans(vectors, n_clusters, restarts=20, max_iter=200, seed=0):
    """Cluster directions by cosine similarity; best of ``restarts`` runs."""
    U = _normalize_rows(vectors)
    k = int(n_clusters)
    if k < 1:
        raise ValidationError("n_clusters must be at least 1")
    if k > len(U):
        raise ClusteringError(f"{k} clusters requested for {len(U)} vectors", reason="degenerate")
    best = None
    for r in range(int(restarts)):
        rng = make_rng(seed, r)
        out = _lloyd(U, _seed_centroids(U, k, rng), int(max_iter))
        if out is not None and (best is None or out[2] > best[2] + 1e-12 * len(U)):
            best = out
    if best is None:
        raise ClusteringError(f"every restart left a cluster empty (k={k})", reason="degenerate")
    C, labels, obj = best
    cos = np.clip(np.sum(U * C[labels], axis=1), -1.0, 1.0)
    return KMeansResult(C, labels, obj, np.arccos(cos))


@dataclass(frozen=True)
class Refinement:
    directions: np.ndarray          # (Y, n) oriented unit vectors
    members_used: list              # per cluster, the step indices stacked
    cluster_sizes: list


def refine_and_intersect(candidates, matrices, Y, tol=NULL_TOL):
    """Stack each cluster's matrices nearest-first until one direction remains."""
    A = np.asarray(matrices, dtype=float)
    n = A.shape[2]
    dirs, used, sizes = [], [], []
    for y in range(Y):
        members = sorted((c for c in candidates if c.cluster == y), key=lambda c: (c.distance, c.k))
        sizes.append(len(members))
        rows = []
        found = None
        last_dim = n
        for m, c in enumerate(members, 1):
            rows.append(A[c.k])
            if sum(r.shape[0] for r in rows) < n - 1:
                continue
            nb = _stack_nullspace(np.vstack(rows), tol)
            last_dim = nb.dim
            if nb.is_one_dimensional:
                found = (orient_direction(nb.basis[:, 0]), [c.k for c in members[:m]])
                break
            if nb.dim == 0:
                raise RelaxationError(
                    f"cluster {y + 1} mixes steps with no common direction",
                    stage="refine", reason="inconsistent_cluster", cluster=y)
        if found is None:
            raise NotIdentifiableError(
                f"cluster {y + 1} exhausted its {len(members)} members at dimension {last_dim}",
                stage="refine", reason="cluster_exhausted", cluster=y, dim=last_dim)
        dirs.append(found[0])
        used.append(found[1])
    return Refinement(np.array(dirs), used, sizes)


def canonical_order(B):
    """Column order sorting the columns of B lexicographically."""
    B = np.asarray(B)
    return np.lexsort(B[::-1])


@dataclass(frozen=True)
class InverseFilterConfig:
    relaxation: RelaxationConfig = field(default_factory=RelaxationConfig)
    kmeans_restarts: int = 20
    kmeans_max_iter: int = 200
    seed: int = 0
    null_tol: float = NULL_TOL

    @classmethod
    def from_dict(cls, d):
        d = dict(d or {})
        rel = d.pop("relaxation", {}) or {}
        known = {f for f in cls.__dataclass_fields__} - {"relaxation"}
        unknown = set(d) - known
        if unknown:
            raise ValidationError(f"unknown inverse filter options: {sorted(unknown)}")
        return cls(relaxation=RelaxationConfig(**rel), **d)


@dataclass
class InverseFilterResult:
    P: np.ndarray
    B: np.ndarray
    observations: np.ndarray
    directions: np.ndarray
    candidates: list
    diagnostics: dict


def inverse_filter(posteriors, Y, config=None, deadline=None):
    """Recover (P, B, observations) from posteriors alone.

    Raises NotIdentifiableError when the data cannot determine the model and
    another StageError (tagged with the failing stage) when the relaxation
    pipeline does not deliver it.
    """
    cfg = config or InverseFilterConfig()
    post = np.asarray(posteriors, dtype=float)
    if post.ndim != 2 or post.shape[0] < 2:
        raise ValidationError("need at least two posteriors")
    if not np.all(post >= 0) or np.abs(post.sum(axis=1) - 1).max() > ROW_SUM_TOL:
        raise ValidationError("posteriors must lie on the simplex")
    N, X = post.shape[0] - 1, post.shape[1]
    Y = int(Y)
    if Y < 1:
        raise ValidationError("Y must be at least 1")
    if N < Y * (X + 1):
        raise NotIdentifiableError(
            f"{N} steps cannot determine {Y} symbols: each needs at least {X + 1}",
            stage="precheck", reason="too_few_steps")
    A = coefficient_matrices(post)
    rc = cfg.relaxation
    # each stage raises a StageError subclass carrying its stage name
    problem = RelaxationProblem.from_matrices(A, None, rc.max_full_pairs, rc.knn)
    sol = solve_relaxation(problem, rc, deadline)
    km = spherical_kmeans(sol.W, Y, cfg.kmeans_restarts, cfg.kmeans_max_iter, cfg.seed)
    cands = [replace(c, cluster=int(km.labels[c.k]), distance=float(km.distances[c.k]))
             for c in sol.candidates]
    ref = refine_and_intersect(cands, A, Y, cfg.null_tol)
    P, B = factorize_directions(ref.directions)
    order = canonical_order(B)
    relabel = np.argsort(order)
    B = B[:, order]
    dirs = ref.directions[order]
    fit = reconstruct_observations(P, B, post)
    cands = [replace(c, cluster=int(relabel[c.cluster])) for c in cands]
    diag = {
        "relaxation": {"solver": sol.solver, "status": sol.status, "iterations": sol.iterations,
                       "objective": sol.objective, "pairs": int(len(problem.pairs))},
        "kmeans_objective": km.objective,
        "cluster_sizes": [ref.cluster_sizes[j] for j in order],
        "members_used": [len(ref.members_used[j]) for j in order],
        "intersection_dims": [1] * Y,
        "max_residual": fit.max_residual,
        "ambiguous_steps": int(fit.ambiguous.sum()),
    }
    return InverseFilterResult(P, B, fit.observations, dirs, cands, diag)
