"""Remote calibration of an adversary's sensor from its actions.

The adversary runs an HMM filter with its own estimates (P_hat, B_hat) of our
dynamics and its sensor, and acts myopically under a quadratic cost
c(x, u) = ||u - mu_x||^2. Its action is then the belief-weighted mean of the
targets, which we invert to recover beliefs, run the inverse filter on them,
rebuild its observation sequence and count observation frequencies against
our known states.
"""
from dataclasses import dataclass, field

import numpy as np

from .algebra import reconstruct_observations
from .clustering import InverseFilterConfig, inverse_filter
from .errors import ModelAssumptionError, NotIdentifiableError, StageError, ValidationError
from .metrics import permutation_aligned_error
from .rng import as_rng
from .stochastic import (as_posterior, as_stochastic, check_hmm, filter_sequence, sample_hmm,
                         validate_hmm)

SIMPLEX_TOL = 1e-8


@dataclass(frozen=True)
class QuadraticCostModel:
    """Targets mu_1..mu_X as rows of an (X, A) array."""
    targets: np.ndarray

    def __post_init__(self):
        M = np.array(self.targets, dtype=float)
        if M.ndim != 2:
            raise ValidationError("targets must be an (X, A) array")
        K = np.vstack([M.T, np.ones(M.shape[0])])
        s = np.linalg.svd(K, compute_uv=False)
        if len(s) < M.shape[0] or s[M.shape[0] - 1] <= 1e-10 * s[0]:
            raise ModelAssumptionError(
                "targets are not affinely independent; beliefs cannot be recovered from actions")
        M.setflags(write=False)
        object.__setattr__(self, "targets", M)

    @classmethod
    def default(cls, X, scale=1.0):
        return cls(scale * np.eye(X))

    @property
    def num_states(self):
        return self.targets.shape[0]

    @property
    def action_dim(self):
        return self.targets.shape[1]

    def cost(self, x, u):
        return float(np.sum((np.asarray(u) - self.targets[x]) ** 2))

    def gradients(self, u):
        """Columns are the action gradients 2 (u - mu_i), shape (A, X)."""
        return 2.0 * (np.asarray(u, dtype=float)[:, None] - self.targets.T)

    def F(self, u):
        """Gradients stacked over a row of ones, shape (A + 1, X)."""
        return np.vstack([self.gradients(u), np.ones(self.num_states)])


def best_action(cost, belief):
    """Minimizer of expected cost: the belief-weighted mean of the targets."""
    pi = np.asarray(belief, dtype=float)
    return pi @ cost.targets


def _check_belief(pi, residual, scale):
    if residual > SIMPLEX_TOL * max(1.0, scale):
        raise ModelAssumptionError(
            f"action is not an expected-cost minimizer for any belief (residual {residual:.3g})",
            stage="beliefs")
    if pi.min() < -SIMPLEX_TOL or abs(pi.sum() - 1.0) > SIMPLEX_TOL:
        raise ModelAssumptionError(
            f"reconstructed belief leaves the simplex (min {pi.min():.3g})", stage="beliefs")
    pi = np.clip(pi, 0.0, None)
    return pi / pi.sum()


def reconstruct_belief(cost, action):
    """Belief whose myopic action is ``action``: F(u)^+ applied to the last unit vector."""
    u = np.asarray(action, dtype=float).reshape(-1)
    if u.size != cost.action_dim:
        raise ValidationError(f"action has {u.size} entries, expected {cost.action_dim}")
    F = cost.F(u)
    s = np.linalg.svd(F, compute_uv=False)
    if s[-1] <= 1e-12 * s[0]:
        raise ModelAssumptionError("F(u) is rank deficient at this action", stage="beliefs")
    e = np.zeros(F.shape[0])
    e[-1] = 1.0
    pi = np.linalg.pinv(F) @ e
    return _check_belief(pi, np.linalg.norm(F @ pi - e), np.abs(F).max())


def reconstruct_beliefs(cost, actions):
    """Vectorized inverse of best_action for an (N, A) array of actions.

    Uses the equivalent affine system [M'; 1'] pi = [u; 1], whose matrix
    does not depend on u.
    """
    U = np.atleast_2d(np.asarray(actions, dtype=float))
    K = np.vstack([cost.targets.T, np.ones(cost.num_states)])
    rhs = np.vstack([U.T, np.ones(len(U))])
    Pi = (np.linalg.pinv(K) @ rhs).T
    res = np.linalg.norm(Pi @ K.T - rhs.T, axis=1)
    out = np.empty_like(Pi)
    for k in range(len(Pi)):
        out[k] = _check_belief(Pi[k], res[k], np.abs(K).max())
    return out


@dataclass(frozen=True)
class AdversaryModel:
    P_hat: np.ndarray
    B_hat: np.ndarray
    B_true: np.ndarray
    cost: QuadraticCostModel

    def __post_init__(self):
        P_hat, B_hat = check_hmm(self.P_hat, self.B_hat)
        B_true = as_stochastic(self.B_true, "B_true")
        if B_true.shape != B_hat.shape:
            raise ValidationError("B_true and B_hat must have the same shape")
        if B_hat.shape[1] < 2:
            raise ModelAssumptionError("a one-symbol sensor carries no information to calibrate")
        v = validate_hmm(P_hat, B_hat)
        if not (v.assumption1 and v.assumption2):
            raise ModelAssumptionError(
                f"adversary estimates violate the positivity/rank assumptions: {v.as_dict()}")
        if self.cost.num_states != P_hat.shape[0]:
            raise ValidationError("cost model and transition matrix disagree on the state count")
        object.__setattr__(self, "P_hat", P_hat)
        object.__setattr__(self, "B_hat", B_hat)
        object.__setattr__(self, "B_true", B_true)

    @property
    def X(self):
        return self.P_hat.shape[0]

    @property
    def Y(self):
        return self.B_hat.shape[1]


@dataclass(frozen=True)
class CaaTrace:
    """States x_0..x_N, observations y_1..y_N, beliefs pi_0..pi_N, actions u_1..u_N."""
    states: np.ndarray
    observations: np.ndarray
    beliefs: np.ndarray
    actions: np.ndarray


def simulate_adversary(P_true, model, pi0, N, seed=0):
    """Our chain runs on P_true; the adversary filters with its own estimates."""
    P_true = as_stochastic(P_true, "P_true")
    if P_true.shape != model.P_hat.shape:
        raise ValidationError("P_true and the adversary's P_hat differ in shape")
    pi0 = as_posterior(pi0, model.X, "pi0")
    states, obs = sample_hmm(P_true, model.B_true, pi0, int(N), as_rng(seed))
    beliefs = filter_sequence(model.P_hat, model.B_hat, pi0, obs)
    actions = beliefs[1:] @ model.cost.targets
    return CaaTrace(states, obs, beliefs, actions)


@dataclass(frozen=True)
class SensorCalibration:
    B: np.ndarray
    counts: np.ndarray
    unvisited: np.ndarray


def calibrate_sensor_ml(states, observations, X, Y):
    """Count-based maximum likelihood estimate of the observation matrix."""
    x = np.asarray(states, dtype=int).reshape(-1)
    y = np.asarray(observations, dtype=int).reshape(-1)
    if x.size != y.size:
        raise ValidationError("states and observations must have equal length")
    if x.size and (x.min() < 0 or x.max() >= X or y.min() < 0 or y.max() >= Y):
        raise ValidationError("state or observation index out of range")
    counts = np.zeros((X, Y))
    np.add.at(counts, (x, y), 1.0)
    visits = counts.sum(axis=1)
    unvisited = visits == 0
    B = np.full((X, Y), 1.0 / Y)
    B[~unvisited] = counts[~unvisited] / visits[~unvisited, None]
    return SensorCalibration(B, counts, unvisited)


@dataclass(frozen=True)
class PipelineConfig:
    window: int = 50
    max_window: int = 50
    inverse: InverseFilterConfig = field(default_factory=InverseFilterConfig)

    @classmethod
    def from_dict(cls, d):
        d = dict(d or {})
        inv = InverseFilterConfig.from_dict(d.pop("inverse", {}))
        window = int(d.pop("window", 50))
        max_window = int(d.pop("max_window", window))
        if d:
            raise ValidationError(f"unknown pipeline options: {sorted(d)}")
        if window < 1 or max_window < window:
            raise ValidationError("need 1 <= window <= max_window")
        return cls(window, max_window, inv)


@dataclass
class CalibrationReport:
    status: str
    stage: str = ""
    not_identifiable: bool = False
    message: str = ""
    window_used: int = 0
    P_hat: np.ndarray = None
    B_hat: np.ndarray = None
    observations: np.ndarray = None
    B_check: np.ndarray = None
    unvisited: np.ndarray = None
    sensor_permutation: list = None
    metrics: dict = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)
    trace: CaaTrace = None

    @property
    def ok(self):
        return self.status == "ok"

    def summary(self):
        out = {"status": self.status, "stage": self.stage, "message": self.message,
               "not_identifiable": self.not_identifiable,
               "window_used": self.window_used, "metrics": self.metrics,
               "diagnostics": self.diagnostics}
        for name in ("P_hat", "B_hat", "B_check"):
            v = getattr(self, name)
            out[name] = None if v is None else np.asarray(v).tolist()
        out["unvisited_states"] = ([] if self.unvisited is None
                                   else (np.flatnonzero(self.unvisited) + 1).tolist())
        out["sensor_permutation"] = (None if self.sensor_permutation is None
                                     else [int(j) + 1 for j in self.sensor_permutation])
        return out


def remote_calibration_pipeline(P_true, model, pi0, N, seed=0, config=None):
    """Actions to beliefs, inverse filtering, observations, then sensor counts."""
    cfg = config or PipelineConfig()
    trace = simulate_adversary(P_true, model, pi0, N, seed)
    X, Y = model.X, model.Y
    rep = CalibrationReport(status="failed", trace=trace)
    try:
        # step 1: beliefs from actions
        beliefs = np.vstack([trace.beliefs[:1], reconstruct_beliefs(model.cost, trace.actions)])
        rep.diagnostics["belief_error"] = float(np.abs(beliefs - trace.beliefs).max())
        # step 2: inverse filtering on a leading window, widened on failure
        window, result, last = cfg.window, None, None
        while result is None:
            w = min(window, len(beliefs) - 1)
            try:
                result = inverse_filter(beliefs[:w + 1], Y, cfg.inverse)
            except StageError as exc:
                last = exc
                if w >= min(cfg.max_window, len(beliefs) - 1):
                    raise
                window *= 2
        rep.window_used = w
        rep.P_hat, rep.B_hat = result.P, result.B
        rep.diagnostics["inverse_filter"] = result.diagnostics
        if last is not None:
            rep.diagnostics["window_escalated_after"] = f"{last.stage}: {last}"
        # step 3: observation labels for the whole horizon
        fit = reconstruct_observations(result.P, result.B, beliefs)
        rep.observations = fit.observations
        rep.diagnostics["max_observation_residual"] = fit.max_residual
        if fit.any_ambiguous:
            raise StageError(f"{int(fit.ambiguous.sum())} steps have ambiguous observations",
                             stage="observations")
        # step 4: count-based calibration, labels in the recovered order
        cal = calibrate_sensor_ml(trace.states[1:], fit.observations, X, Y)
        rep.B_check, rep.unvisited = cal.B, cal.unvisited
    except StageError as exc:
        rep.stage, rep.message = exc.stage, str(exc)
        rep.not_identifiable = isinstance(exc, NotIdentifiableError)
        return rep
    rep.status = "ok"
    err, perm = permutation_aligned_error(rep.B_check, model.B_true)
    rep.sensor_permutation = list(perm)
    p_adv = float(np.linalg.norm(rep.P_hat - model.P_hat))
    b_adv, perm_adv = permutation_aligned_error(rep.B_hat, model.B_hat)
    rep.metrics = {
        "sensor_error_fro": err,
        "sensor_error_max": float(np.abs(rep.B_check[:, perm] - model.B_true).max()),
        "adversary_P_error": p_adv,
        "adversary_B_error": b_adv,
        "P_error_vs_true": float(np.linalg.norm(rep.P_hat - P_true)),
        "adversary_sensor_error_max": float(np.abs(model.B_hat - model.B_true).max()),
        "observation_mismatches": int(np.sum(
            np.argsort(perm_adv)[fit.observations] != trace.observations)),
    }
    return rep


def perturbed_stochastic(M, magnitude, rng):
    """Add uniform noise in [0, magnitude) to every entry, then renormalize rows."""
    M = np.asarray(M, dtype=float) + magnitude * as_rng(rng).random(np.shape(M))
    return M / M.sum(axis=1, keepdims=True)
