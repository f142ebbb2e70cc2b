"""Stochastic matrices, HMM simulation and the forward HMM filter.

States and observations are 0-based here; the CSV and CLI layers convert to
1-based labels.
"""
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError, ZeroLikelihoodError
from .rng import as_rng

ROW_SUM_TOL = 1e-12
EPS_POS = 1e-9
RANK_TOL = 1e-8


def as_stochastic(M, name="matrix", atol=ROW_SUM_TOL):
    """Validate a row-stochastic matrix and return it as a float array."""
    M = np.array(M, dtype=float)
    if M.ndim != 2 or M.shape[0] == 0 or M.shape[1] == 0:
        raise ValidationError(f"{name} must be a non-empty 2-D array, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise ValidationError(f"{name} has non-finite entries")
    if np.any(M < 0):
        raise ValidationError(f"{name} is not row-stochastic: negative entry {M.min():.3g}")
    dev = np.abs(M.sum(axis=1) - 1.0).max()
    if dev > atol:
        raise ValidationError(f"{name} is not row-stochastic: row sum off by {dev:.3g}")
    M.setflags(write=False)
    return M


def as_posterior(pi, dim=None, name="posterior", atol=ROW_SUM_TOL):
    """Validate a point on the probability simplex."""
    pi = np.array(pi, dtype=float)
    if pi.ndim != 1 or pi.size == 0:
        raise ValidationError(f"{name} must be a non-empty vector, got shape {pi.shape}")
    if dim is not None and pi.size != dim:
        raise ValidationError(f"{name} has length {pi.size}, expected {dim}")
    if not np.all(np.isfinite(pi)) or np.any(pi < 0):
        raise ValidationError(f"{name} has negative or non-finite weights")
    if abs(pi.sum() - 1.0) > atol:
        raise ValidationError(f"{name} does not sum to one (sum={pi.sum():.17g})")
    return pi


def on_simplex(pi, atol=ROW_SUM_TOL):
    pi = np.asarray(pi, dtype=float)
    return bool(np.all(pi >= 0) and np.all(np.abs(pi.sum(axis=-1) - 1.0) <= atol))


def strictly_positive(M, eps=EPS_POS):
    """All entries at least ``eps``."""
    return bool(np.min(M) >= eps)


def full_column_rank(M, rank_tol=RANK_TOL):
    """Smallest singular value above ``rank_tol`` times the largest."""
    M = np.asarray(M, dtype=float)
    if M.shape[0] < M.shape[1]:
        return False
    s = np.linalg.svd(M, compute_uv=False)
    return bool(s[-1] > rank_tol * s[0])


@dataclass(frozen=True)
class HmmValidity:
    P_positive: bool
    B_positive: bool
    P_full_rank: bool
    B_full_rank: bool

    @property
    def assumption1(self):
        """Both matrices strictly positive."""
        return self.P_positive and self.B_positive

    @property
    def assumption2(self):
        """Both matrices have full column rank."""
        return self.P_full_rank and self.B_full_rank

    def as_dict(self):
        return {"P_positive": self.P_positive, "B_positive": self.B_positive,
                "P_full_rank": self.P_full_rank, "B_full_rank": self.B_full_rank,
                "assumption1": self.assumption1, "assumption2": self.assumption2}


def check_hmm(P, B):
    P = as_stochastic(P, "P")
    B = as_stochastic(B, "B")
    if P.shape[0] != P.shape[1]:
        raise ValidationError(f"P must be square, got {P.shape}")
    if B.shape[0] != P.shape[0]:
        raise ValidationError(f"P has {P.shape[0]} states but B has {B.shape[0]} rows")
    return P, B


def validate_hmm(P, B, eps_pos=EPS_POS, rank_tol=RANK_TOL):
    """Report which of the positivity and rank assumptions hold."""
    P, B = check_hmm(P, B)
    return HmmValidity(strictly_positive(P, eps_pos), strictly_positive(B, eps_pos),
                       full_column_rank(P, rank_tol), full_column_rank(B, rank_tol))


def filter_update(P, B, pi_prev, y):
    """One step of the HMM filter: normalize diag(b_y) P' pi."""
    P = np.asarray(P, dtype=float)
    B = np.asarray(B, dtype=float)
    y = int(y)
    if not 0 <= y < B.shape[1]:
        raise ValidationError(f"observation {y} outside 0..{B.shape[1] - 1}")
    u = B[:, y] * (np.asarray(pi_prev, dtype=float) @ P)
    z = u.sum()
    if not z > 0:
        raise ZeroLikelihoodError(f"observation {y} has zero likelihood under the prior")
    return u / z


def filter_sequence(P, B, pi0, observations):
    """Posteriors pi_0..pi_N, shape (N+1, X)."""
    P, B = check_hmm(P, B)
    pi = as_posterior(pi0, P.shape[0], "pi0")
    obs = np.asarray(observations, dtype=int).reshape(-1)
    if obs.size and (obs.min() < 0 or obs.max() >= B.shape[1]):
        raise ValidationError(f"observations must lie in 0..{B.shape[1] - 1}")
    out = np.empty((obs.size + 1, P.shape[0]))
    out[0] = pi
    for k, y in enumerate(obs):
        u = B[:, y] * (out[k] @ P)
        z = u.sum()
        if not z > 0:
            raise ZeroLikelihoodError(
                f"observation {y} at step {k + 1} has zero likelihood", index=k + 1)
        out[k + 1] = u / z
    return out


@dataclass(frozen=True)
class HmmTrajectory:
    """States x_0..x_N, observations y_1..y_N, posteriors pi_0..pi_N."""
    states: np.ndarray
    observations: np.ndarray
    posteriors: np.ndarray

    def __post_init__(self):
        n = len(self.observations)
        if len(self.states) != n + 1 or len(self.posteriors) != n + 1:
            raise ValidationError("trajectory lengths are inconsistent")
        for a in (self.states, self.observations, self.posteriors):
            a.setflags(write=False)

    @property
    def N(self):
        return len(self.observations)


def _sample_chain(rows, start, u):
    cum = np.cumsum(rows, axis=1)
    cum /= cum[:, -1:]
    x = np.empty(len(u) + 1, dtype=int)
    x[0] = start
    for k, uk in enumerate(u):
        x[k + 1] = np.searchsorted(cum[x[k]], uk, side="right")
    return x


def sample_hmm(P, B, pi0, N, rng):
    """Draw states x_0..x_N from (pi0, P) and observations y_1..y_N from B."""
    x0 = int(np.searchsorted(np.cumsum(pi0) / np.sum(pi0), rng.random(), side="right"))
    states = _sample_chain(P, x0, rng.random(N))
    cumB = np.cumsum(B, axis=1)
    cumB /= cumB[:, -1:]
    u = rng.random(N)
    obs = np.array([np.searchsorted(cumB[x], v, side="right")
                    for x, v in zip(states[1:], u)], dtype=int)
    return states, obs


def simulate(P, B, pi0, N, seed=0):
    """Draw an HMM trajectory of length N and run the filter on it."""
    P, B = check_hmm(P, B)
    pi0 = as_posterior(pi0, P.shape[0], "pi0")
    N = int(N)
    if N < 0:
        raise ValidationError("N must be non-negative")
    states, obs = sample_hmm(P, B, pi0, N, as_rng(seed))
    post = filter_sequence(P, B, pi0, obs)
    return HmmTrajectory(states, obs, post)


def uniform(n):
    return np.full(n, 1.0 / n)


def random_stochastic(rng, rows, cols, low=0.0):
    """Random row-stochastic matrix; ``low`` > 0 keeps entries away from zero."""
    M = rng.random((rows, cols)) + low
    return M / M.sum(axis=1, keepdims=True)
