"""Fused l-infinity relaxation of the nullspace clustering problem.

Given matrices A_1..A_N, find w_k in ker(A_k) with w_k >= 1 (or w_k >= 0 and
1'w_k >= 1) minimizing the sum over pairs of ||w_i - w_j||_inf. The equality
constraints are removed by writing w_k = Z_k z_k with Z_k an orthonormal
nullspace basis; the rest is a linear program in epigraph form.

Two backends: a structured primal-dual interior point method (default) that
exploits the pair/block structure, and scipy's HiGHS for small cross-checks.
"""
import logging
import time
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np
from scipy import sparse
from scipy.linalg import cho_factor, cho_solve, null_space
from scipy.optimize import linprog

from .errors import RelaxationError, ValidationError

log = logging.getLogger(__name__)
_REFINE = 1  # iterative refinement steps per Newton solve
LOWER_BOUNDS = ("entrywise", "sum")


@dataclass(frozen=True)
class RelaxationConfig:
    lower_bound: str = "entrywise"
    solver: str = "ipm"
    tol: float = 1e-8
    accept_tol: float = 1e-7
    stall_gap: float = 1e-6
    max_iter: int = 200
    max_full_pairs: int = 100
    knn: int = 10
    null_rcond: float = 1e-10

    def __post_init__(self):
        if self.lower_bound not in LOWER_BOUNDS:
            raise ValidationError(f"lower_bound must be one of {LOWER_BOUNDS}")
        if self.solver not in SOLVERS:
            raise ValidationError(f"unknown solver {self.solver!r}; choose from {sorted(SOLVERS)}")


@dataclass(frozen=True)
class RelaxationProblem:
    """Matrices (N, rows, n) and the unordered pairs entering the penalty."""
    matrices: np.ndarray
    pairs: np.ndarray

    def __post_init__(self):
        A = self.matrices
        if A.ndim != 3 or A.shape[0] < 2:
            raise ValidationError("need at least two matrices stacked as (N, rows, n)")
        p = self.pairs
        if p.ndim != 2 or p.shape[1] != 2 or len(p) == 0:
            raise ValidationError("pairs must be a non-empty (M, 2) array")
        if np.any(p[:, 0] >= p[:, 1]) or p.min() < 0 or p.max() >= A.shape[0]:
            raise ValidationError("pairs must satisfy 0 <= i < j < N")
        if len(np.unique(p, axis=0)) != len(p):
            raise ValidationError("pairs must be unique")

    @property
    def N(self):
        return self.matrices.shape[0]

    @property
    def dim(self):
        return self.matrices.shape[2]

    @classmethod
    def from_matrices(cls, matrices, pairs=None, max_full_pairs=100, knn=10):
        A = np.asarray(matrices, dtype=float)
        if pairs is None:
            pairs = default_pairs(A, max_full_pairs, knn)
        return cls(A, np.asarray(pairs, dtype=int).reshape(-1, 2))


def all_pairs(N):
    return np.array(list(combinations(range(N), 2)), dtype=int).reshape(-1, 2)


def representative_directions(matrices):
    """Projection of the all-ones vector onto each nullspace, normalized."""
    A = np.asarray(matrices, dtype=float)
    ones = np.ones(A.shape[2])
    reps = []
    for Ak in A:
        coef, *_ = np.linalg.lstsq(Ak.T, ones, rcond=None)
        r = ones - Ak.T @ coef
        nrm = np.linalg.norm(r)
        reps.append(r / nrm if nrm > 0 else r)
    return np.array(reps)


def default_pairs(matrices, max_full_pairs=100, knn=10):
    """All pairs for small N; otherwise k nearest neighbours in angle."""
    N = len(matrices)
    if N <= max_full_pairs:
        return all_pairs(N)
    R = representative_directions(matrices)
    C = R @ R.T
    np.fill_diagonal(C, -np.inf)
    k = min(knn, N - 1)
    nbr = np.argsort(-C, axis=1, kind="stable")[:, :k]
    i = np.repeat(np.arange(N), k)
    j = nbr.reshape(-1)
    p = np.stack([np.minimum(i, j), np.maximum(i, j)], axis=1)
    return np.unique(p, axis=0)


@dataclass(frozen=True)
class NullspaceCandidate:
    """Relaxation output for one step; cluster data filled in by refinement."""
    k: int
    w: np.ndarray
    cluster: int = -1
    distance: float = float("nan")


@dataclass
class RelaxationSolution:
    W: np.ndarray
    objective: float
    status: str
    iterations: int
    solver: str
    primal_residual: float = 0.0
    dual_residual: float = 0.0
    gap: float = 0.0
    info: dict = field(default_factory=dict)

    @property
    def candidates(self):
        return [NullspaceCandidate(k, w) for k, w in enumerate(self.W)]


def fused_objective(W, pairs):
    W = np.asarray(W)
    return float(np.abs(W[pairs[:, 0]] - W[pairs[:, 1]]).max(axis=1).sum())


def nullspace_bases(matrices, rcond=1e-10):
    """Zero-padded orthonormal nullspace bases (N, n, q) and a column mask."""
    Zs = [null_space(Ak, rcond=rcond) for Ak in matrices]
    q = max(z.shape[1] for z in Zs)
    if q == 0:
        raise RelaxationError("a matrix has a trivial nullspace", reason="trivial_nullspace")
    n = matrices.shape[2]
    Z = np.zeros((len(Zs), n, q))
    mask = np.zeros((len(Zs), q), dtype=bool)
    for k, z in enumerate(Zs):
        if z.shape[1] == 0:
            raise RelaxationError(f"matrix {k} has a trivial nullspace", reason="trivial_nullspace", k=k)
        Z[k, :, :z.shape[1]] = z
        mask[k, :z.shape[1]] = True
    return Z, mask


def _check_deadline(deadline):
    if deadline is not None and time.monotonic() > deadline:
        raise RelaxationError("relaxation exceeded its time budget", reason="timeout")


def _solve_ipm(problem, cfg, deadline=None):
    A = problem.matrices
    N, n = A.shape[0], A.shape[2]
    Z, mask = nullspace_bases(A, cfg.null_rcond)
    q = Z.shape[2]
    ZT = Z.transpose(0, 2, 1)
    I, J = problem.pairs[:, 0], problem.pairs[:, 1]
    M = len(I)
    ZI, ZJ = Z[I], Z[J]
    # incidence operators replace scatter-adds over pairs
    cols = np.arange(M)
    inc_i = sparse.csr_matrix((np.ones(M), (I, cols)), shape=(N, M))
    inc_j = sparse.csr_matrix((np.ones(M), (J, cols)), shape=(N, M))
    inc_diff = (inc_i - inc_j).tocsr()
    inc_sum = (inc_i + inc_j).tocsr()
    ZIt = ZI.transpose(0, 2, 1)
    sumrow = cfg.lower_bound == "sum"
    lb = 0.0 if sumrow else 1.0
    pad = ~mask.reshape(-1)

    def to_w(z):
        return np.einsum("kdq,kq->kd", Z, z)

    def to_z(gw):
        return np.einsum("kdq,kd->kq", Z, gw)

    # inequality blocks G x <= h with x = (z, t):
    #   a: (w_i - w_j) - t_p <= 0     b: -(w_i - w_j) - t_p <= 0
    #   c: -w_k <= -lb                s: -1'w_k <= -1 (sum mode only)
    shapes = [(M, n), (M, n), (N, n)] + ([(N,)] if sumrow else [])
    sizes = [int(np.prod(s)) for s in shapes]
    offsets = np.cumsum([0] + sizes)

    def split(v):
        return [v[offsets[i]:offsets[i + 1]].reshape(s) for i, s in enumerate(shapes)]

    def G(z, t):
        w = to_w(z)
        d = w[I] - w[J]
        out = [(d - t[:, None]).ravel(), (-d - t[:, None]).ravel(), (-w).ravel()]
        if sumrow:
            out.append(-w.sum(axis=1))
        return np.concatenate(out)

    def GT(y):
        parts = split(y)
        dv = parts[0] - parts[1]
        gw = inc_diff @ dv - parts[2]
        if sumrow:
            gw -= parts[3][:, None]
        return to_z(gw), -(parts[0] + parts[1]).sum(axis=1)

    h = np.zeros(offsets[-1])
    h[offsets[2]:offsets[3]] = -lb
    if sumrow:
        h[offsets[3]:] = -1.0
    ct = np.ones(M)
    m = h.size
    hnorm = 1.0 + np.linalg.norm(h)

    z = np.zeros((N, q))
    t = np.zeros(M)
    s = np.ones(m)
    lam = np.ones(m)
    best = None
    stall = 0
    pobj_hist = []
    status = "iteration_limit"
    it = 0
    for it in range(cfg.max_iter + 1):
        _check_deadline(deadline)
        rp = G(z, t) + s - h
        gz, gt = GT(lam)
        rdz, rdt = gz, gt + ct
        mu = s @ lam / m
        pobj = ct @ t
        dobj = -h @ lam
        rpn = np.linalg.norm(rp) / hnorm
        rdn = np.sqrt(np.sum(rdz ** 2) + np.sum(rdt ** 2)) / (1.0 + np.sqrt(M))
        gap = abs(pobj - dobj) / (1.0 + abs(pobj))
        merit = max(rpn, rdn, gap)
        log.debug("ipm %d pobj=%.12g dobj=%.12g rp=%.2e rd=%.2e gap=%.2e", it, pobj, dobj, rpn, rdn, gap)
        if merit < cfg.tol:
            status = "optimal"
            break
        if not np.isfinite(merit) or np.abs(lam).max() > 1e12 * (1.0 + np.abs(h).max()):
            # unbounded dual growth: the primal has no feasible point
            status = "diverged"
            break
        if best is None or merit < 0.5 * best:
            best, stall = merit, 0
        else:
            stall += 1
        if merit < cfg.accept_tol and stall >= 5:
            status = "optimal_reduced_accuracy"
            break
        pobj_hist.append(pobj)
        if (len(pobj_hist) > 6 and rpn < cfg.tol and gap < cfg.stall_gap
                and abs(pobj - pobj_hist[-7]) <= 1e-12 * (1.0 + abs(pobj))):
            # the dual certificate stagnates at round-off level while the
            # primal iterate no longer moves
            status = "optimal_stalled"
            break
        if it == cfg.max_iter:
            break

        Wt = lam / s
        Wa, Wb, Wc = (Wt[offsets[i]:offsets[i + 1]].reshape(shapes[i]) for i in range(3))
        u = Wa + Wb
        v = Wa - Wb
        T = u.sum(axis=1)
        # Schur complement of the epigraph variable, per pair, in w_i - w_j
        # space: E = diag(dg) - v v'/T, with the diagonal written without
        # cancellation.
        dg = (4.0 * Wa * Wb + u * (T[:, None] - u)) / T[:, None] + v * v / T[:, None]
        ZIv = np.einsum("pdq,pd->pq", ZI, v)
        ZJv = np.einsum("pdq,pd->pq", ZJ, v)
        off = -(ZIt @ (dg[:, :, None] * ZJ)) + ZIv[:, :, None] * ZJv[:, None, :] / T[:, None, None]
        H = np.zeros((N, N, q, q))
        H[I, J] = off
        H[J, I] = off.transpose(0, 2, 1)
        node_d = inc_sum @ dg + Wc
        vv = (v[:, :, None] * v[:, None, :] / T[:, None, None]).reshape(M, n * n)
        node_vv = (inc_sum @ vv).reshape(N, n, n)
        D = ZT @ ((node_d[:, :, None] * np.eye(n)[None] - node_vv) @ Z)
        if sumrow:
            zs = Z.sum(axis=1)
            D += Wt[offsets[3]:][:, None, None] * zs[:, :, None] * zs[:, None, :]
        H[np.arange(N), np.arange(N)] = D
        H = H.transpose(0, 2, 1, 3).reshape(N * q, N * q)
        diag = np.diag(H).copy()
        diag[pad] = 1.0
        H[pad, pad] = 1.0
        dsc = 1.0 / np.sqrt(diag)
        Hs = H * dsc[:, None] * dsc[None, :]
        reg = 0.0
        while True:
            try:
                cf = cho_factor(Hs + reg * np.eye(len(Hs)) if reg else Hs, check_finite=False)
                break
            except np.linalg.LinAlgError:
                reg = 1e-14 if reg == 0 else reg * 100
                if reg > 1e-4:
                    raise RelaxationError("normal equations became singular",
                                          reason="numerical") from None

        def newton(rc):
            y = (rc + lam * rp) / s
            yz, yt = GT(y)
            bz = -rdz - yz
            bt = -rdt - yt
            r = bt / T
            gw = inc_diff @ (-v * r[:, None])
            rhs = (bz - to_z(gw)).ravel()
            dz = dsc * cho_solve(cf, dsc * rhs, check_finite=False)
            for _ in range(_REFINE):
                dz = dz + dsc * cho_solve(cf, dsc * (rhs - H @ dz), check_finite=False)
            dz = dz.reshape(N, q)
            dw = to_w(dz)
            dt = (bt + (v * (dw[I] - dw[J])).sum(axis=1)) / T
            ds = -rp - G(dz, dt)
            dl = (rc - lam * ds) / s
            return dz, dt, ds, dl

        def max_step(x, dx):
            neg = dx < 0
            return min(1.0, float(np.min(-x[neg] / dx[neg]))) if neg.any() else 1.0

        # Mehrotra predictor-corrector
        dz, dt, ds, dl = newton(-s * lam)
        ap, ad = max_step(s, ds), max_step(lam, dl)
        mu_aff = (s + ap * ds) @ (lam + ad * dl) / m
        sigma = (mu_aff / mu) ** 3
        dz, dt, ds, dl = newton(-s * lam - ds * dl + sigma * mu)
        ap = min(1.0, 0.99 * max_step(s, ds))
        ad = min(1.0, 0.99 * max_step(lam, dl))
        z = z + ap * dz
        t = t + ap * dt
        s = s + ap * ds
        lam = lam + ad * dl

    W = to_w(z)
    return RelaxationSolution(W, fused_objective(W, problem.pairs), status, it, "ipm",
                              float(rpn), float(rdn), float(gap))


def _solve_highs(problem, cfg, deadline=None):
    A = problem.matrices
    N, n = A.shape[0], A.shape[2]
    Z, mask = nullspace_bases(A, cfg.null_rcond)
    q = Z.shape[2]
    I, J = problem.pairs[:, 0], problem.pairs[:, 1]
    M = len(I)
    nz = N * q
    # w_k = Z_k z_k as a sparse (N n) x (N q) block diagonal
    Zblk = sparse.block_diag([Z[k] for k in range(N)], format="csr")
    Dp = sparse.csr_matrix((np.r_[np.ones(M * n), -np.ones(M * n)],
                            (np.r_[np.arange(M * n), np.arange(M * n)],
                             np.r_[(I[:, None] * n + np.arange(n)).ravel(),
                                   (J[:, None] * n + np.arange(n)).ravel()])),
                           shape=(M * n, N * n))
    Dz = Dp @ Zblk
    Tm = sparse.kron(sparse.eye(M), np.ones((n, 1)), format="csr")
    rows = [sparse.hstack([Dz, -Tm]), sparse.hstack([-Dz, -Tm]),
            sparse.hstack([-Zblk, sparse.csr_matrix((N * n, M))])]
    b = [np.zeros(M * n), np.zeros(M * n)]
    if cfg.lower_bound == "sum":
        b.append(np.zeros(N * n))
        S = sparse.kron(sparse.eye(N), np.ones((1, n))) @ Zblk
        rows.append(sparse.hstack([-S, sparse.csr_matrix((N, M))]))
        b.append(-np.ones(N))
    else:
        b.append(-np.ones(N * n))
    G = sparse.vstack(rows, format="csr")
    c = np.r_[np.zeros(nz), np.ones(M)]
    bounds = [(None, None)] * nz + [(0, None)] * M
    for k in range(N):
        for j in np.flatnonzero(~mask[k]):
            bounds[k * q + j] = (0, 0)
    opts = {"primal_feasibility_tolerance": cfg.tol, "dual_feasibility_tolerance": cfg.tol}
    if deadline is not None:
        opts["time_limit"] = max(0.0, deadline - time.monotonic())
    res = linprog(c, A_ub=G, b_ub=np.concatenate(b), bounds=bounds, method="highs",
                  options=opts)
    if res.status == 2:
        raise RelaxationError("relaxation is infeasible", reason="infeasible")
    if res.status != 0:
        reason = "timeout" if "time" in res.message.lower() else "iteration_limit"
        raise RelaxationError(f"HiGHS stopped: {res.message}", reason=reason)
    z = res.x[:nz].reshape(N, q)
    W = np.einsum("kdq,kq->kd", Z, z)
    return RelaxationSolution(W, fused_objective(W, problem.pairs), "optimal",
                              int(getattr(res, "nit", 0)), "highs")


SOLVERS = {"ipm": _solve_ipm, "highs": _solve_highs}
ACCEPTED = ("optimal", "optimal_reduced_accuracy", "optimal_stalled")


def _infeasible_steps(problem, cfg):
    """Steps whose nullspace holds no vector meeting the lower bound."""
    bad = []
    for k, Ak in enumerate(problem.matrices):
        Zk = null_space(Ak, rcond=cfg.null_rcond)
        if cfg.lower_bound == "sum":
            G = np.vstack([-Zk, -Zk.sum(axis=0, keepdims=True)])
            h = np.r_[np.zeros(Zk.shape[0]), -1.0]
        else:
            G, h = -Zk, -np.ones(Zk.shape[0])
        r = linprog(np.zeros(Zk.shape[1]), A_ub=G, b_ub=h,
                    bounds=[(None, None)] * Zk.shape[1], method="highs")
        if r.status == 2:
            bad.append(k)
    return bad


def solve_relaxation(problem, config=None, deadline=None):
    """Solve the fused relaxation; raises RelaxationError on failure."""
    cfg = config or RelaxationConfig()
    if not isinstance(problem, RelaxationProblem):
        problem = RelaxationProblem.from_matrices(problem, None, cfg.max_full_pairs, cfg.knn)
    sol = SOLVERS[cfg.solver](problem, cfg, deadline)
    if sol.status not in ACCEPTED:
        bad = _infeasible_steps(problem, cfg)
        if bad:
            raise RelaxationError(f"relaxation is infeasible at steps {bad[:10]}",
                                  reason="infeasible", steps=bad)
        raise RelaxationError(f"solver stopped without converging ({sol.status})",
                              reason=sol.status, iterations=sol.iterations)
    return sol
