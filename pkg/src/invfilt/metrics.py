"""Error measures that ignore the arbitrary order of observation labels."""
from itertools import permutations

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import ValidationError

EXHAUSTIVE_MAX = 8


def permutation_aligned_error(B_hat, B, use_assignment=False):
    """min over column permutations of ||B_hat[:, perm] - B||_F.

    Returns (error, perm) with column perm[j] of B_hat matched to column j of
    B. Exhaustive search up to 8 columns; beyond that the (exact, since the
    squared error separates over columns) assignment solver must be enabled.
    Ties resolve to the lexicographically first permutation.
    """
    B_hat = np.asarray(B_hat, dtype=float)
    B = np.asarray(B, dtype=float)
    if B_hat.shape != B.shape:
        raise ValidationError(f"shape mismatch {B_hat.shape} vs {B.shape}")
    Y = B.shape[1]
    C = ((B[:, :, None] - B_hat[:, None, :]) ** 2).sum(axis=0)  # C[j, r]
    if Y <= EXHAUSTIVE_MAX and not use_assignment:
        perms = np.array(list(permutations(range(Y))), dtype=int).reshape(-1, Y)
        tot = C[np.arange(Y), perms].sum(axis=1)
        i = int(np.argmin(tot))
        return float(np.sqrt(max(tot[i], 0.0))), tuple(int(p) for p in perms[i])
    if not use_assignment:
        raise ValidationError(f"{Y} columns exceed exhaustive search; enable use_assignment")
    rows, cols = linear_sum_assignment(C)
    perm = tuple(int(c) for c in cols[np.argsort(rows)])
    return float(np.sqrt(max(C[np.arange(Y), list(perm)].sum(), 0.0))), perm


def model_errors(P_hat, B_hat, P, B):
    """(||P_hat - P||_F, permutation-aligned ||B_hat - B||_F, perm)."""
    eb, perm = permutation_aligned_error(B_hat, B)
    return float(np.linalg.norm(np.asarray(P_hat) - np.asarray(P))), eb, perm
