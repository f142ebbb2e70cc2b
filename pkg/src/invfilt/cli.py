"""Command line interface: ``invfilt simulate|filter|invert|caa|experiment``.

Exit codes: 0 success, 1 usage or configuration error, 2 the data do not
identify the model, 3 the relaxation pipeline (or another stage) failed.
"""
import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import io
from .algebra import invert_known_observations, reconstruct_observations
from .caa import (AdversaryModel, PipelineConfig, QuadraticCostModel, perturbed_stochastic,
                  remote_calibration_pipeline)
from .clustering import InverseFilterConfig, inverse_filter
from .errors import InvFiltError, NotIdentifiableError, StageError
from .experiment import ExperimentConfig, emit_results, run_success_curve
from .presets import PRESETS, get_preset
from .rng import make_rng
from .stochastic import filter_sequence, simulate, uniform

EXIT_OK, EXIT_CONFIG, EXIT_NOT_IDENTIFIABLE, EXIT_FAILED = 0, 1, 2, 3

log = logging.getLogger("invfilt")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


class ConfigError(InvFiltError):
    pass


def load_config(path):
    """Read a JSON config; returns (dict, directory used for relative paths)."""
    if path is None:
        return {}, Path.cwd()
    p = Path(path)
    try:
        return json.loads(p.read_text()), p.parent
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None


def _matrix(value, base):
    """Inline nested list or a path to a CSV matrix."""
    if isinstance(value, str):
        return io.read_matrix_csv(base / value)
    return np.asarray(value, dtype=float)


def _hmm_from_args(args):
    if args.preset:
        return get_preset(args.preset)
    if not (args.P and args.B):
        raise ConfigError("give --preset or both --P and --B")
    return io.read_matrix_csv(args.P), io.read_matrix_csv(args.B)


def _pi0(args, X):
    return io.read_vector_csv(args.pi0) if args.pi0 else uniform(X)


def cmd_simulate(args):
    P, B = _hmm_from_args(args)
    traj = simulate(P, B, _pi0(args, P.shape[0]), args.steps, make_rng(args.seed))
    io.write_trajectory_csv(args.out, traj.posteriors, traj.states, traj.observations)
    return EXIT_OK


def cmd_filter(args):
    P, B = _hmm_from_args(args)
    obs = io.read_observations_csv(args.observations, B.shape[1])
    post = filter_sequence(P, B, _pi0(args, P.shape[0]), obs)
    io.write_trajectory_csv(args.out, post, None, obs)
    return EXIT_OK


def _write_inversion(out, P, B, obs, diag, directions=None):
    out.mkdir(parents=True, exist_ok=True)
    io.write_matrix_csv(out / "P_hat.csv", P)
    io.write_matrix_csv(out / "B_hat.csv", B)
    io.write_observations_csv(out / "observations.csv", obs)
    if directions is not None:
        io.write_matrix_csv(out / "directions.csv", directions)
    io.write_json(out / "diagnostics.json", diag)


def cmd_invert(args):
    post = io.read_posteriors(args.posteriors)
    cfg_dict, _ = load_config(args.config)
    out = Path(args.out)
    Y = args.num_observations
    try:
        if args.observations:
            obs = io.read_observations_csv(args.observations, Y)
            P, B = invert_known_observations(post, obs, Y)
            fit = reconstruct_observations(P, B, post)
            diag = {"status": "ok", "method": "oracle", "max_residual": fit.max_residual}
            _write_inversion(out, P, B, fit.observations, diag)
        else:
            cfg = InverseFilterConfig.from_dict(cfg_dict)
            res = inverse_filter(post, Y, cfg)
            diag = {"status": "ok", "method": "algorithm1", **res.diagnostics}
            _write_inversion(out, res.P, res.B, res.observations, diag, res.directions)
    except StageError as exc:
        code = EXIT_NOT_IDENTIFIABLE if isinstance(exc, NotIdentifiableError) else EXIT_FAILED
        kind = "not_identifiable" if code == EXIT_NOT_IDENTIFIABLE else "relaxation_failed"
        out.mkdir(parents=True, exist_ok=True)
        io.write_json(out / "diagnostics.json", {"status": kind, "stage": exc.stage,
                                                 "message": str(exc), "details": exc.details})
        print(f"invert: {kind} at stage {exc.stage}: {exc}", file=sys.stderr)
        return code
    return EXIT_OK


def caa_from_config(d, base):
    """Build (P_true, AdversaryModel, pi0, PipelineConfig) from a config dict."""
    d = dict(d)
    if "preset" in d:
        P_true, B_true = get_preset(d.pop("preset"))
    else:
        try:
            P_true, B_true = _matrix(d.pop("P_true"), base), _matrix(d.pop("B_true"), base)
        except KeyError as exc:
            raise ConfigError(f"caa config needs a preset or {exc.args[0]}") from None
    X = P_true.shape[0]

    def estimate(key, truth):
        v = d.pop(key, "matched")
        if isinstance(v, str) and v == "matched":
            return truth.copy()
        if isinstance(v, dict):
            mag = float(v.get("perturb", 0.0))
            return perturbed_stochastic(truth, mag, make_rng(int(v.get("seed", 0))))
        return _matrix(v, base)

    P_hat = estimate("P_hat_adv", P_true)
    B_hat = estimate("B_hat_adv", B_true)
    targets = d.pop("targets", None)
    cost = QuadraticCostModel.default(X) if targets is None else QuadraticCostModel(_matrix(targets, base))
    pi0 = np.asarray(d.pop("pi0"), dtype=float) if "pi0" in d else uniform(X)
    pipe = PipelineConfig.from_dict(d)
    return P_true, AdversaryModel(P_hat, B_hat, B_true, cost), pi0, pipe


def cmd_caa(args):
    d, base = load_config(args.config)
    P_true, model, pi0, pipe = caa_from_config(d, base)
    rep = remote_calibration_pipeline(P_true, model, pi0, args.steps, make_rng(args.seed), pipe)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    io.write_json(out / "report.json", rep.summary())
    tr = rep.trace
    io.write_trajectory_csv(out / "trace.csv", tr.beliefs, tr.states, tr.observations)
    io.write_matrix_csv(out / "actions.csv", tr.actions)
    if rep.ok:
        io.write_matrix_csv(out / "P_hat.csv", rep.P_hat)
        io.write_matrix_csv(out / "B_hat.csv", rep.B_hat)
        io.write_matrix_csv(out / "B_check.csv", rep.B_check)
        io.write_observations_csv(out / "observations.csv", rep.observations)
        return EXIT_OK
    print(f"caa: failed at stage {rep.stage}: {rep.message}", file=sys.stderr)
    return EXIT_NOT_IDENTIFIABLE if rep.not_identifiable else EXIT_FAILED


def cmd_experiment(args):
    d, base = load_config(args.config)
    for key in ("P", "B"):
        if isinstance(d.get(key), str):
            d[key] = _matrix(d[key], base)
    if args.seed is not None:
        d["seed"] = args.seed
    cfg = ExperimentConfig.from_dict(d)
    curve = run_success_curve(cfg, threads=args.threads)
    files = emit_results(curve, args.out, args.format, timing=args.timing, plot=args.plot,
                         title=cfg.preset)
    for f in files:
        print(f)
    return EXIT_OK


def build_parser():
    p = _Parser(prog="invfilt", description="Inverse filtering for hidden Markov models.")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def hmm_args(sp):
        sp.add_argument("--preset", choices=sorted(PRESETS))
        sp.add_argument("--P", help="transition matrix CSV")
        sp.add_argument("--B", help="observation matrix CSV")
        sp.add_argument("--pi0", help="prior CSV (default uniform)")

    sp = sub.add_parser("simulate", help="simulate an HMM trajectory with filter posteriors")
    hmm_args(sp)
    sp.add_argument("--steps", type=int, required=True)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", required=True, help="trajectory CSV")
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("filter", help="run the HMM filter on an observation file")
    hmm_args(sp)
    sp.add_argument("--observations", required=True, help="1-based observations, one per line")
    sp.add_argument("--out", required=True, help="trajectory CSV")
    sp.set_defaults(func=cmd_filter)

    sp = sub.add_parser("invert", help="recover P, B and observations from posteriors")
    sp.add_argument("--posteriors", required=True, help="trajectory CSV or bare posterior matrix")
    sp.add_argument("--num-observations", type=int, required=True)
    sp.add_argument("--config", help="JSON inverse-filter options")
    sp.add_argument("--observations", help="known observations (oracle inversion)")
    sp.add_argument("--out", required=True, help="output directory")
    sp.set_defaults(func=cmd_invert)

    sp = sub.add_parser("caa", help="remote sensor calibration from adversary actions")
    sp.add_argument("--config", required=True)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--steps", type=int, required=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_caa)

    sp = sub.add_parser("experiment", help="success rate against N for both methods")
    sp.add_argument("--config", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--seed", type=int, default=None, help="override the config seed")
    sp.add_argument("--threads", type=int, default=1, help="worker processes")
    sp.add_argument("--format", choices=["csv", "json"], default="csv")
    sp.add_argument("--plot", action="store_true", help="also write success.png")
    sp.add_argument("--timing", action="store_true", help="include wall-clock columns")
    sp.set_defaults(func=cmd_experiment)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s")
    try:
        return args.func(args)
    except (InvFiltError, ValueError, TypeError, KeyError, OSError) as exc:
        if isinstance(exc, StageError):
            print(f"{args.command}: failed at stage {exc.stage}: {exc}", file=sys.stderr)
            return EXIT_NOT_IDENTIFIABLE if isinstance(exc, NotIdentifiableError) else EXIT_FAILED
        print(f"{args.command}: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
