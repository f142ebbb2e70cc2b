"""Coefficient matrices, nullspaces, factorization and identifiability.

A filter step pi_k = T(pi_{k-1}, y) is linear in the unknown X-by-X matrix
W = diag(b_y) P'. With column-major vectorization it reads A_k vec(W) = 0,
where A_k = pi_{k-1}' (x) [pi_k 1' - I] has X rows and X^2 columns.
"""
from dataclasses import dataclass
from itertools import combinations

import numpy as np
from scipy.linalg import null_space

from .errors import FactorizationError, NotIdentifiableError, ValidationError
from .stochastic import ROW_SUM_TOL, as_posterior, check_hmm

NULL_TOL = 1e-8
GAP_RATIO = 10.0
ORIENT_CLAMP = 1e-8
NEG_TOL = 1e-6
BETA_TOL = 1e-6
RESIDUAL_TOL = 1e-6
TIE_RATIO = 10.0


def vec(M):
    """Column-major vectorization."""
    return np.asarray(M).reshape(-1, order="F")


def unvec(v, X=None):
    v = np.asarray(v)
    if X is None:
        X = int(round(np.sqrt(v.size)))
    if X * X != v.size:
        raise ValidationError(f"vector of length {v.size} is not a square matrix")
    return v.reshape(X, X, order="F")


def filter_direction(P, B, y):
    """vec(diag(b_y) P'), the direction annihilated by every y-step matrix."""
    P = np.asarray(P, dtype=float)
    B = np.asarray(B, dtype=float)
    return vec(B[:, y][:, None] * P.T)


def coefficient_matrix(pi_prev, pi_next):
    """X-by-X^2 matrix pi_prev' (x) [pi_next 1' - I]."""
    a = as_posterior(pi_prev, name="pi_prev")
    b = as_posterior(pi_next, a.size, name="pi_next")
    X = a.size
    return np.kron(a[None, :], b[:, None] - np.eye(X))


def coefficient_matrices(posteriors):
    """Stack of A_1..A_N from consecutive posteriors, shape (N, X, X^2)."""
    post = np.asarray(posteriors, dtype=float)
    if post.ndim != 2 or post.shape[0] < 2:
        raise ValidationError("need at least two posteriors as rows of a 2-D array")
    if not np.all(post >= 0) or np.abs(post.sum(1) - 1).max() > ROW_SUM_TOL:
        raise ValidationError("posteriors must lie on the simplex")
    N, X = post.shape[0] - 1, post.shape[1]
    M = post[1:, :, None] - np.eye(X)[None]
    A = post[:-1, None, :, None] * M[:, :, None, :]
    return A.reshape(N, X, X * X)


@dataclass(frozen=True)
class NullspaceBasis:
    """Orthonormal nullspace basis with the spectrum it came from."""
    basis: np.ndarray
    singular_values: np.ndarray
    sources: tuple = ()
    indeterminate: bool = False
    gap_ratio: float = float("inf")

    @property
    def dim(self):
        return self.basis.shape[1]

    @property
    def is_one_dimensional(self):
        return self.dim == 1 and not self.indeterminate


def _stack_nullspace(M, tol, sources=()):
    M = np.atleast_2d(np.asarray(M, dtype=float))
    n = M.shape[1]
    _, s, Vh = np.linalg.svd(M, full_matrices=True)
    s_full = np.zeros(n)
    s_full[:s.size] = s
    thresh = tol * s_full[0]
    rank = int(np.count_nonzero(s_full > thresh)) if s_full[0] > 0 else 0
    gap = float("inf")
    if 0 < rank < n:
        lo = s_full[rank]
        gap = float("inf") if lo == 0 else s_full[rank - 1] / lo
    return NullspaceBasis(Vh[rank:].T.copy(), s_full, tuple(sources), gap < GAP_RATIO, gap)


def nullspace_basis(A, tol=NULL_TOL, source=None):
    """Numerical nullspace by SVD, rank cut at tol * sigma_max."""
    if tol <= 0:
        raise ValidationError("tol must be positive")
    return _stack_nullspace(A, tol, () if source is None else (source,))


def intersect_nullspaces(items, tol=NULL_TOL, sources=None):
    """Nullspace of the stacked matrices.

    ``items`` may mix raw matrices and NullspaceBasis objects; a basis enters
    through the rows spanning its orthogonal complement.
    """
    items = list(items)
    if not items:
        raise ValidationError("cannot intersect an empty list")
    rows, src = [], []
    n = None
    for i, it in enumerate(items):
        if isinstance(it, NullspaceBasis):
            m = null_space(it.basis.T).T if it.dim else np.eye(it.basis.shape[0])
            src.extend(it.sources)
        else:
            m = np.atleast_2d(np.asarray(it, dtype=float))
            src.append(i if sources is None else sources[i])
        if n is None:
            n = m.shape[1]
        elif m.shape[1] != n:
            raise ValidationError("all matrices must have the same number of columns")
        rows.append(m)
    return _stack_nullspace(np.vstack(rows), tol, src)


def orient_direction(v):
    """Unit vector with positive entry sum; tiny negatives clamped to zero."""
    v = np.asarray(v, dtype=float).reshape(-1)
    v = v / np.linalg.norm(v)
    if v.sum() < 0:
        v = -v
    v = np.where((v < 0) & (v >= -ORIENT_CLAMP), 0.0, v)
    return v


def _renormalize(M):
    M = np.clip(M, 0.0, None)
    return M / M.sum(axis=1, keepdims=True)


def factorize_directions(V):
    """Recover (P, B) from directions proportional to vec(diag(b_y) P').

    The row sums of P fix the per-symbol scales, so the result does not
    depend on the unknown positive multipliers.
    """
    V = np.asarray(V, dtype=float)
    if V.ndim == 2:
        X = int(round(np.sqrt(V.shape[1])))
        if X * X != V.shape[1]:
            raise ValidationError("directions must have X^2 entries")
        mats = np.stack([unvec(v, X) for v in V])
    elif V.ndim == 3 and V.shape[1] == V.shape[2]:
        mats = V
    else:
        raise ValidationError(f"cannot interpret directions of shape {V.shape}")
    X = mats.shape[1]
    ones = np.ones(X)
    S = mats.sum(axis=0).T
    if np.linalg.cond(S) > 1e12:
        raise FactorizationError("sum of recovered directions is singular")
    P = S * np.linalg.solve(S, ones)[None, :]
    if np.linalg.cond(P) > 1e12:
        raise FactorizationError("recovered transition matrix is singular")
    r = np.linalg.solve(P.T, ones)
    Bbar = np.stack([m @ r for m in mats], axis=1)
    B = Bbar * (np.linalg.pinv(Bbar) @ ones)[None, :]
    worst = min(P.min(), B.min())
    if worst < -NEG_TOL:
        raise FactorizationError(f"recovered matrices have negative entries ({worst:.3g})",
                                 min_entry=float(worst))
    return _renormalize(P), _renormalize(B)


@dataclass(frozen=True)
class ObservationFit:
    """Best-fitting observation per step with residual diagnostics."""
    observations: np.ndarray
    residuals: np.ndarray       # (N, Y) L1 residuals, inf where impossible
    ambiguous: np.ndarray       # (N,) bool

    @property
    def any_ambiguous(self):
        return bool(self.ambiguous.any())

    @property
    def max_residual(self):
        if self.residuals.size == 0:
            return 0.0
        return float(self.residuals[np.arange(len(self.observations)), self.observations].max())


def reconstruct_observations(P, B, posteriors, residual_tol=RESIDUAL_TOL, tie_ratio=TIE_RATIO):
    """Pick, per step, the observation whose filter update best matches."""
    P, B = check_hmm(P, B)
    post = np.asarray(posteriors, dtype=float)
    if post.ndim != 2 or post.shape[1] != P.shape[0]:
        raise ValidationError("posteriors must have one column per state")
    pred = post[:-1] @ P
    U = pred[:, None, :] * B.T[None, :, :]
    Z = U.sum(axis=2)
    with np.errstate(divide="ignore", invalid="ignore"):
        cand = U / Z[:, :, None]
    res = np.abs(cand - post[1:, None, :]).sum(axis=2)
    res[~(Z > 0)] = np.inf
    N, Y = res.shape
    obs = np.argmin(res, axis=1) if N else np.zeros(0, dtype=int)
    best = res[np.arange(N), obs]
    amb = ~(best <= residual_tol)
    if Y > 1 and N:
        second = np.partition(res, 1, axis=1)[:, 1]
        amb |= second < tie_ratio * np.maximum(best, 1e-13)
    return ObservationFit(obs.astype(int), res, amb)


def group_priors(posteriors, observations, Y):
    """For each symbol y, the priors pi_{k-1} of steps with y_k = y."""
    post = np.asarray(posteriors, dtype=float)
    obs = np.asarray(observations, dtype=int)
    return [post[:-1][obs == y] for y in range(Y)]


def _independent(Z, rank_tol):
    s = np.linalg.svd(Z, compute_uv=False)
    return s[-1] > rank_tol * s[0]


def _full_support(beta, tol):
    return np.all(np.abs(beta) > tol * np.abs(beta).max(axis=0), axis=0)


def _greedy_basis(pts, skip, X, rank_tol):
    chosen = []
    Q = np.zeros((X, 0))
    scale = np.linalg.norm(pts, axis=1).max()
    for _ in range(X):
        R = pts - (pts @ Q) @ Q.T
        norms = np.linalg.norm(R, axis=1)
        norms[skip] = -1
        norms[chosen] = -1
        j = int(np.argmax(norms))
        if norms[j] <= rank_tol * scale:
            return None
        chosen.append(j)
        Q = np.column_stack([Q, R[j] / norms[j]])
    return chosen


def group_identifiable(points, rank_tol=1e-8, beta_tol=BETA_TOL, exhaustive_max_dim=5):
    """True if X independent points plus one more with full-support coordinates exist."""
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2:
        return False
    m, X = pts.shape
    if m < X + 1:
        return False
    s = np.linalg.svd(pts, compute_uv=False)
    if s[min(m, X) - 1] <= rank_tol * s[0]:
        return False
    # greedy: each point in turn plays the extra role
    for e in range(m):
        idx = _greedy_basis(pts, e, X, rank_tol)
        if idx is None:
            continue
        Z = pts[idx].T
        if not _independent(Z, rank_tol):
            continue
        beta = np.linalg.solve(Z, pts[e])
        if _full_support(beta[:, None], beta_tol)[0]:
            return True
    if X > exhaustive_max_dim:
        return False
    combos = np.array(list(combinations(range(m), X)), dtype=int)
    for start in range(0, len(combos), 4096):
        c = combos[start:start + 4096]
        Zs = pts[c].transpose(0, 2, 1)
        s = np.linalg.svd(Zs, compute_uv=False)
        ok = s[:, -1] > rank_tol * s[:, 0]
        if not ok.any():
            continue
        c, Zs = c[ok], Zs[ok]
        beta = np.linalg.solve(Zs, np.broadcast_to(pts.T, (len(c), X, m)))
        good = np.all(np.abs(beta) > beta_tol * np.abs(beta).max(axis=1, keepdims=True), axis=1)
        rows = np.arange(len(c))[:, None]
        good[rows, c] = False
        if good.any():
            return True
    return False


def check_identifiability(groups, rank_tol=1e-8, beta_tol=BETA_TOL):
    """Per-symbol identifiability of the filter from its priors.

    ``groups`` is a list (indexed by symbol) or a dict of point sets; the
    result has the same keys.
    """
    if isinstance(groups, dict):
        return {y: group_identifiable(g, rank_tol, beta_tol) for y, g in groups.items()}
    return [group_identifiable(g, rank_tol, beta_tol) for g in groups]


def known_observation_directions(posteriors, observations, Y, tol=NULL_TOL):
    """Per-symbol one-dimensional intersections, oriented; raises if any fails."""
    post = np.asarray(posteriors, dtype=float)
    obs = np.asarray(observations, dtype=int)
    if obs.size != post.shape[0] - 1:
        raise ValidationError("need exactly one observation per posterior step")
    if obs.size and (obs.min() < 0 or obs.max() >= Y):
        raise ValidationError(f"observations must lie in 0..{Y - 1}")
    A = coefficient_matrices(post)
    dirs, bases = [], []
    for y in range(Y):
        ks = np.flatnonzero(obs == y)
        if ks.size == 0:
            raise NotIdentifiableError(f"observation {y + 1} never occurs", y=y, dim=A.shape[2])
        nb = _stack_nullspace(A[ks].reshape(-1, A.shape[2]), tol, tuple(ks.tolist()))
        bases.append(nb)
        if not nb.is_one_dimensional:
            raise NotIdentifiableError(
                f"intersection not one-dimensional for observation {y + 1} "
                f"(dim {nb.dim}, {ks.size} steps)", y=y, dim=nb.dim)
        dirs.append(orient_direction(nb.basis[:, 0]))
    return np.array(dirs), bases


def invert_known_observations(posteriors, observations, Y, tol=NULL_TOL):
    """Recover (P, B) when the observation sequence is known."""
    V, _ = known_observation_directions(posteriors, observations, Y, tol)
    return factorize_directions(V)
