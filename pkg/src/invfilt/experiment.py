"""Monte Carlo success-rate experiments for the inverse filter and the oracle."""
import csv
import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .algebra import invert_known_observations
from .clustering import InverseFilterConfig, inverse_filter
from .errors import InvFiltError, ValidationError
from .metrics import model_errors
from .presets import get_preset
from .rng import make_rng
from .stochastic import check_hmm, simulate, uniform

METHODS = ("algorithm1", "oracle")


@dataclass(frozen=True)
class ExperimentConfig:
    P: np.ndarray
    B: np.ndarray
    n_grid: tuple
    trials: int = 100
    threshold: float = 1e-3
    seed: int = 0
    methods: tuple = METHODS
    pi0: np.ndarray = None
    time_cap: float = 120.0
    preset: str = ""
    inverse: InverseFilterConfig = field(default_factory=InverseFilterConfig)

    def __post_init__(self):
        P, B = check_hmm(self.P, self.B)
        object.__setattr__(self, "P", P)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "n_grid", tuple(int(n) for n in self.n_grid))
        object.__setattr__(self, "methods", tuple(self.methods))
        if self.pi0 is None:
            object.__setattr__(self, "pi0", uniform(P.shape[0]))
        if not self.threshold > 0:
            raise ValidationError("threshold must be positive")
        if int(self.trials) < 1:
            raise ValidationError("trials must be at least 1")
        bad = set(self.methods) - set(METHODS)
        if bad or not self.methods:
            raise ValidationError(f"methods must be a non-empty subset of {METHODS}")
        if any(n < 1 for n in self.n_grid):
            raise ValidationError("every N must be at least 1")

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        preset = d.pop("preset", None)
        P, B = d.pop("P", None), d.pop("B", None)
        if preset is not None:
            if P is not None or B is not None:
                raise ValidationError("give either a preset or inline P and B, not both")
            P, B = get_preset(preset)
        elif P is None or B is None:
            raise ValidationError("experiment needs a preset or inline P and B")
        inv = InverseFilterConfig.from_dict(d.pop("inverse", {}))
        if "n_grid" not in d:
            raise ValidationError("experiment needs an n_grid")
        known = set(cls.__dataclass_fields__) - {"P", "B", "preset", "inverse"}
        unknown = set(d) - known
        if unknown:
            raise ValidationError(f"unknown experiment options: {sorted(unknown)}")
        if d.get("pi0") is not None:
            d["pi0"] = np.asarray(d["pi0"], dtype=float)
        return cls(P=np.asarray(P, dtype=float), B=np.asarray(B, dtype=float),
                   preset=preset or "", inverse=inv, **d)


@dataclass(frozen=True)
class TrialRecord:
    method: str
    N: int
    trial: int
    success: bool
    status: str
    P_error: float
    B_error: float
    seconds: float


@dataclass
class SuccessCurve:
    methods: tuple
    n_grid: tuple
    records: list

    def rows(self):
        """(method, N, successes, trials, fraction, mean_seconds) per cell."""
        out = []
        for m in self.methods:
            for n in self.n_grid:
                rs = [r for r in self.records if r.method == m and r.N == n]
                k = sum(r.success for r in rs)
                secs = float(np.mean([r.seconds for r in rs])) if rs else 0.0
                out.append((m, n, k, len(rs), k / len(rs) if rs else 0.0, secs))
        return out

    def fraction(self, method, N):
        for m, n, _, _, f, _ in self.rows():
            if m == method and n == N:
                return f
        raise KeyError((method, N))


def _evaluate(method, traj, cfg, Y):
    t0 = time.monotonic()
    deadline = t0 + cfg.time_cap
    try:
        if method == "oracle":
            P_hat, B_hat = invert_known_observations(traj.posteriors, traj.observations, Y)
        else:
            res = inverse_filter(traj.posteriors, Y, cfg.inverse, deadline=deadline)
            P_hat, B_hat = res.P, res.B
    except InvFiltError as exc:
        status = getattr(exc, "stage", "error")
        reason = getattr(exc, "details", {}).get("reason")
        return False, status if reason is None else f"{status}:{reason}", np.inf, np.inf, \
            time.monotonic() - t0
    secs = time.monotonic() - t0
    ep, eb, _ = model_errors(P_hat, B_hat, cfg.P, cfg.B)
    if secs > cfg.time_cap:
        return False, "timeout", ep, eb, secs
    ok = ep < cfg.threshold and eb < cfg.threshold
    return ok, "ok" if ok else "inaccurate", ep, eb, secs


def run_trial(cfg, N, trial):
    """All requested methods on one shared trajectory."""
    traj = simulate(cfg.P, cfg.B, cfg.pi0, N, make_rng(cfg.seed, N, trial))
    Y = cfg.B.shape[1]
    out = []
    for m in cfg.methods:
        ok, status, ep, eb, secs = _evaluate(m, traj, cfg, Y)
        out.append(TrialRecord(m, N, trial, bool(ok), status, float(ep), float(eb), float(secs)))
    return out


def _run_cell(args):
    return run_trial(*args)


def run_success_curve(cfg, threads=1):
    """Success counts per (method, N); order of execution does not matter."""
    tasks = [(cfg, n, t) for n in cfg.n_grid for t in range(int(cfg.trials))]
    if threads > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=threads) as ex:
            parts = list(ex.map(_run_cell, tasks, chunksize=1))
    else:
        parts = [run_trial(*a) for a in tasks]
    records = [r for p in parts for r in p]
    order = {m: i for i, m in enumerate(cfg.methods)}
    records.sort(key=lambda r: (order[r.method], r.N, r.trial))
    return SuccessCurve(cfg.methods, cfg.n_grid, records)


def _num(v):
    return repr(float(v))


def emit_results(curve, out_dir, fmt="csv", timing=False, plot=False, title=""):
    """Write the success table (and per-trial detail) to ``out_dir``.

    Wall-clock times are excluded unless ``timing`` is set, so that output
    files are byte-identical across runs with the same configuration.
    """
    if fmt not in ("csv", "json"):
        raise ValidationError(f"unknown format {fmt!r}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    header = ["method", "N", "successes", "trials", "fraction"] + (["mean_seconds"] if timing else [])
    rows = [list(r[:5]) + ([r[5]] if timing else []) for r in curve.rows()] if curve.records else []
    files = []
    if fmt == "csv":
        path = out / "success.csv"
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for r in rows:
                w.writerow([r[0], r[1], r[2], r[3]] + [_num(v) for v in r[4:]])
        files.append(path)
        path = out / "trials.csv"
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["method", "N", "trial", "success", "status", "P_error", "B_error"]
                       + (["seconds"] if timing else []))
            for r in curve.records:
                w.writerow([r.method, r.N, r.trial, int(r.success), r.status, _num(r.P_error),
                            _num(r.B_error)] + ([_num(r.seconds)] if timing else []))
        files.append(path)
    else:
        path = out / "success.json"
        doc = {"columns": header, "rows": rows,
               "trials": [{"method": r.method, "N": r.N, "trial": r.trial, "success": r.success,
                           "status": r.status, "P_error": _finite(r.P_error),
                           "B_error": _finite(r.B_error),
                           **({"seconds": r.seconds} if timing else {})}
                          for r in curve.records]}
        path.write_text(json.dumps(doc, indent=2) + "\n")
        files.append(path)
    if plot:
        files.append(plot_success_curve(curve, out / "success.png", title))
    return files


def _finite(v):
    return v if np.isfinite(v) else None


def plot_success_curve(curve, path, title=""):
    """Fraction of successful reconstructions against N, one series per method."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    style = {"oracle": ("o", "tab:green"), "algorithm1": ("x", "tab:red")}
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for m in curve.methods:
        pts = [(n, f) for mm, n, _, _, f, _ in curve.rows() if mm == m]
        if pts:
            xs, ys = zip(*pts)
            marker, color = style.get(m, ("s", None))
            ax.plot(xs, ys, marker=marker, color=color, label=m)
    ax.set_ylim(-0.02, 1.02)
    ax.set_xlabel("N")
    ax.set_ylabel("fraction of successful reconstructions")
    if title:
        ax.set_title(title)
    ax.legend(loc="lower right")
    fig.tight_layout()
    fig.savefig(path, dpi=120, metadata={"Software": None})
    plt.close(fig)
    return path
