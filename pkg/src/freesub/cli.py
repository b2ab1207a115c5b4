"""Command line entry point: ``freesub <command> CONFIG [--seed N] [--out DIR]``.

Every command reads a versioned JSON config, writes its reports into the
output directory together with ``manifest.json`` and exits with

    0  success
    1  config error (unknown command or field, malformed or missing file)
    2  numerical failure (partial outputs are still written)
    3  a verification verdict of fail
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import os
import sys
from contextlib import contextmanager
from dataclasses import dataclass, field
from datetime import datetime, timezone

import numpy as np

from . import __version__
from ._rng import check_seed
from .freeconv import (ConvergenceError, SingularEvaluationError, SolverConfig, rectangular_transform,
                       solve_rectangular)
from .ldp_rates import RateQuery, exp_equiv_diagnostic, rate_eval, truncation_decompose
from .measures import EvaluationDomain, Measure, eps_ladder, invert_stieltjes
from .metrics import distance_report
from .rmt_sim import (EnsembleSpec, TailLaw, information_plus_noise, mean_stieltjes_mc, resolvent_suite,
                      trial_records)
from .verify import NoFitError, bound_scaling_experiment, concentration_audit

SCHEMA_VERSION = 1
EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_VERIFY = 0, 1, 2, 3


class ConfigError(Exception):
    pass


class NumericalFailure(Exception):
    pass


@contextmanager
def _parsing(what):
    try:
        yield
    except ConfigError:
        raise
    except (KeyError, TypeError, ValueError) as err:
        raise ConfigError(f"{what}: {err}") from err


def _check_fields(cfg, allowed, required=()):
    extra = set(cfg) - set(allowed) - {"version"}
    if extra:
        raise ConfigError(f"unknown config fields: {sorted(extra)}")
    missing = [k for k in required if k not in cfg]
    if missing:
        raise ConfigError(f"missing config fields: {missing}")


# -- outputs ------------------------------------------------------------------------

def _dumps(obj):
    return json.dumps(obj, sort_keys=True, indent=2, allow_nan=True, default=_json_default) + "\n"


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, complex):
        return [o.real, o.imag]
    raise TypeError(f"not JSON serialisable: {type(o).__name__}")


def _csv(header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    return buf.getvalue()


@dataclass
class Outputs:
    """Files collected during a run; written in one pass at the end."""

    files: dict = field(default_factory=dict)
    stdout: list = field(default_factory=list)

    def json(self, name, obj):
        self.files[name] = _dumps(obj)

    def csv(self, name, header, rows):
        self.files[name] = _csv(header, rows)

    def matrix(self, name, M):
        self.files[name] = _csv([f"c{k}" for k in range(M.shape[1])], M.tolist())


def _digest(text):
    return hashlib.sha256(text.encode()).hexdigest()


def _write(outdir, outputs, manifest):
    os.makedirs(outdir, exist_ok=True)
    listed = []
    for name in sorted(outputs.files):
        text = outputs.files[name]
        with open(os.path.join(outdir, name), "w", newline="") as fh:
            fh.write(text)
        listed.append({"path": name, "sha256": _digest(text)})
    manifest["outputs"] = listed
    with open(os.path.join(outdir, "manifest.json"), "w") as fh:
        fh.write(_dumps(manifest))


# -- shared config pieces --------------------------------------------------------------

def _domain(cfg):
    with _parsing("domain"):
        return EvaluationDomain.from_json(cfg.get("domain", {}))


def _solver(cfg, domain):
    raw = dict(cfg.get("solver", {}))
    extra = set(raw) - {"tolerance", "max_iterations", "damping"}
    if extra:
        raise ConfigError(f"unknown solver fields: {sorted(extra)}")
    with _parsing("solver"):
        return SolverConfig(domain=domain, **raw)


def _measure(obj, what):
    with _parsing(what):
        return Measure.from_json(obj)


def _ensemble(cfg, seed, base_dir):
    with _parsing("ensemble"):
        spec = EnsembleSpec.from_json(cfg["ensemble"], base_dir=base_dir)
    return spec if seed is None else spec.replace(seed=seed)


# -- commands ------------------------------------------------------------------------------

def cmd_convolve(cfg, seed, out, base_dir):
    _check_fields(cfg, {"measure", "c", "domain", "solver", "points"}, ("measure", "c"))
    domain = _domain(cfg)
    solver = _solver(cfg, domain)
    mu = _measure(cfg["measure"], "measure")
    with _parsing("points"):
        z = None if "points" not in cfg else np.array([complex(*pt) for pt in cfg["points"]])
        c = float(cfg["c"])
    res = solve_rectangular(mu, c, solver, z=z)
    out.csv("convolve.csv", ["re_z", "im_z", "re_G", "im_G", "iters", "residual"], res.rows())
    out.json("convolve.json", res.to_json())
    if not res.ok:
        raise NumericalFailure(f"{len(res.failures)} points did not converge")
    return EXIT_OK


def cmd_distance(cfg, seed, out, base_dir):
    _check_fields(cfg, {"mu", "nu", "domain"}, ("mu", "nu"))
    rep = distance_report(_measure(cfg["mu"], "mu"), _measure(cfg["nu"], "nu"), _domain(cfg))
    out.json("distance.json", rep.to_json())
    return EXIT_OK


def cmd_simulate(cfg, seed, out, base_dir):
    _check_fields(cfg, {"ensemble", "domain", "eigenvalues"}, ("ensemble",))
    spec = _ensemble(cfg, seed, base_dir)
    mc = mean_stieltjes_mc(spec, _domain(cfg))
    out.csv("simulate.csv", ["re_z", "im_z", "re_mean", "im_mean", "stderr"],
            [(z.real, z.imag, m.real, m.imag, s) for z, m, s in zip(mc.z, mc.mean, mc.stderr)])
    report = {"ensemble": spec.to_json(), "trials_ok": mc.trials_ok, "trials_failed": mc.trials_failed}
    if cfg.get("eigenvalues", False):
        report["trials"] = list(trial_records(spec))
    out.json("simulate.json", report)
    return EXIT_OK


def cmd_resolvent_check(cfg, seed, out, base_dir):
    _check_fields(cfg, {"n", "p", "z", "seed", "n_tuples"}, ("n", "p", "z"))
    with _parsing("resolvent-check"):
        n, p = int(cfg["n"]), int(cfg["p"])
        z = complex(*cfg["z"])
        s = int(cfg.get("seed", 0)) if seed is None else seed
        spec = EnsembleSpec(n=n, p=p, seed=s)
        n_tuples = int(cfg.get("n_tuples", 20))
    rep = resolvent_suite(information_plus_noise(spec), z, n_tuples=n_tuples, seed=s)
    out.json("resolvent.json", {
        "identity_error": rep.identity_error,
        "norms": {k: {"value": v, "bound": b} for k, (v, b) in rep.norms.items()},
        "max_relative_errors": rep.derivative_errors.max(axis=0).tolist(),
        "failures": [{k: (str(v) if isinstance(v, complex) else v) for k, v in f.items()}
                     for f in rep.failures],
        "ok": rep.ok,
    })
    if not rep.ok:
        raise NumericalFailure(f"{len(rep.failures)} resolvent checks failed")
    return EXIT_OK


def cmd_ldp_decompose(cfg, seed, out, base_dir):
    _check_fields(cfg, {"matrix_csv", "alpha"}, ("matrix_csv", "alpha"))
    path = os.path.join(base_dir, cfg["matrix_csv"])
    try:
        X = np.loadtxt(path, delimiter=",", ndmin=2)
    except OSError as err:
        raise ConfigError(f"cannot read matrix: {err}") from err
    with _parsing("ldp-decompose"):
        dec = truncation_decompose(X, float(cfg["alpha"]))
    for name in "ABCD":
        out.matrix(f"{name}.csv", getattr(dec, name))
    rep = dec.report()
    rep["index_set"] = [list(ij) for ij in dec.index_set]
    out.json("bands.json", rep)
    return EXIT_OK


def cmd_rate(cfg, seed, out, base_dir):
    _check_fields(cfg, {"query", "which", "solver"}, ("query", "which"))
    with _parsing("query"):
        q = RateQuery.from_json(cfg["query"])
    which = cfg["which"]
    if which == "j_prime_forward":
        mu, value = rate_eval(q, which, _solver(cfg, EvaluationDomain()))
        out.csv("density.csv", ["x", "density"], zip(mu.x, mu.f))
        out.json("rate.json", {"which": which, "value": value, "atoms": mu.atom_part()[1].tolist()})
    else:
        with _parsing("which"):
            value = rate_eval(q, which)
        out.json("rate.json", {"which": which, "value": value})
    out.stdout.append(f"{value:g}")
    return EXIT_OK


def cmd_exp_equiv(cfg, seed, out, base_dir):
    _check_fields(cfg, {"ensemble", "ladder", "domain", "c"}, ("ensemble", "ladder"))
    spec = _ensemble(cfg, seed, base_dir)
    with _parsing("exp-equiv"):
        c = cfg.get("c")
        rep = exp_equiv_diagnostic(spec, cfg["ladder"], _domain(cfg), c=c)
    out.csv("exp_equiv.csv", ["n", "mean_dist", "stderr"], rep.rows())
    out.json("exp_equiv.json", rep.to_json())
    return EXIT_OK


def cmd_verify_bound(cfg, seed, out, base_dir):
    allowed = {"mode", "M_family", "c", "ladder", "trials", "seed", "domain", "tail_law", "target_slope"}
    _check_fields(cfg, allowed, ("mode",))
    with _parsing("verify-bound"):
        law = cfg.get("tail_law")
        if law is not None:
            law = dict(law)
            if law.pop("kind", "tail") != "tail":
                raise ValueError("tail_law must be a tail law")
            law = TailLaw(**law)
        kw = dict(mode=cfg["mode"], M_family=cfg.get("M_family"), c=float(cfg.get("c", 1.0)),
                  ladder=cfg.get("ladder", (100, 200, 400, 800)), domain=_domain(cfg),
                  trials=int(cfg.get("trials", 64)),
                  seed=int(cfg.get("seed", 0)) if seed is None else seed,
                  tail_law=law, target_slope=cfg.get("target_slope"))
        if kw["mode"] not in ("gaussian", "general_tail"):
            raise ValueError(f"unknown mode {kw['mode']!r}")
        if kw["M_family"] not in (None, "zero", "rank1_log"):
            raise ValueError(f"unknown M_family {kw['M_family']!r}")
    rep = bound_scaling_experiment(**kw)
    out.csv("verify_bound.csv", ["n", "mean", "stderr"], rep.rows())
    out.json("verify_bound.json", rep.to_json())
    return EXIT_OK if rep.verdict == "pass" else EXIT_VERIFY


def _square_or_named(obj, n, p, M, what):
    if obj is None:
        return None
    if obj == "identity":
        return np.eye(n)
    if obj == "zero":
        return np.zeros((n, n) if what == "U" else (n, p))
    if obj == "deformation":
        return M
    return np.asarray(obj, dtype=float)


def cmd_verify_concentration(cfg, seed, out, base_dir):
    _check_fields(cfg, {"ensemble", "U", "V", "z", "n_resamples"}, ("ensemble", "z"))
    spec = _ensemble(cfg, seed, base_dir)
    with _parsing("verify-concentration"):
        U = _square_or_named(cfg.get("U"), spec.n, spec.p, spec.M, "U")
        V = _square_or_named(cfg.get("V"), spec.n, spec.p, spec.M, "V")
        z_set = [complex(*pt) for pt in cfg["z"]]
        audit = concentration_audit(spec, U, V, z_set, n_resamples=int(cfg.get("n_resamples", 2000)))
    rows = [(spec.n, r["estimate"], r["ci_high"] - r["estimate"], r["target"], r["z_re"], r["z_im"],
             r["ci_high"], r["bound"]) for r in audit.records]
    out.csv("verify_concentration.csv",
            ["n", "mean", "stderr", "target", "re_z", "im_z", "ci_high", "bound"], rows)
    out.json("verify_concentration.json", audit.to_json())
    return EXIT_OK if audit.holds and not audit.hard_violation else EXIT_VERIFY


def cmd_invert(cfg, seed, out, base_dir):
    allowed = {"measure", "signal", "c", "support_window", "eps_min", "rungs", "n_points"}
    _check_fields(cfg, allowed, ("support_window",))
    if ("measure" in cfg) == ("signal" in cfg):
        raise ConfigError("give exactly one of 'measure' or 'signal' (with 'c')")
    with _parsing("invert"):
        if "measure" in cfg:
            mu = _measure(cfg["measure"], "measure")
            transform = mu.stieltjes
        else:
            transform = rectangular_transform(_measure(cfg["signal"], "signal"), float(cfg["c"]))
        ladder = eps_ladder(float(cfg.get("eps_min", 1e-3)), int(cfg.get("rungs", 5)))
        window = [float(v) for v in cfg["support_window"]]
        n_points = int(cfg.get("n_points", 4096))
    rec = invert_stieltjes(transform, window, ladder, n_points=n_points)
    loc, w = rec.atom_part()
    if rec.kind == "grid":
        out.csv("invert.csv", ["x", "density"], zip(rec.x, rec.f))
    out.json("invert.json", {"atoms": [[float(a), float(b)] for a, b in zip(loc, w)], "kind": rec.kind})
    return EXIT_OK


COMMANDS = {
    "convolve": cmd_convolve,
    "distance": cmd_distance,
    "simulate": cmd_simulate,
    "resolvent-check": cmd_resolvent_check,
    "ldp-decompose": cmd_ldp_decompose,
    "rate": cmd_rate,
    "exp-equiv": cmd_exp_equiv,
    "verify-bound": cmd_verify_bound,
    "verify-concentration": cmd_verify_concentration,
    "invert": cmd_invert,
}

NUMERICAL_ERRORS = (ConvergenceError, SingularEvaluationError, NoFitError, np.linalg.LinAlgError,
                    NumericalFailure, ArithmeticError, RuntimeError)


def _parser():
    ap = argparse.ArgumentParser(prog="freesub", description=__doc__.splitlines()[0])
    ap.add_argument("command", help=", ".join(COMMANDS))
    ap.add_argument("config", help="JSON config file")
    ap.add_argument("--seed", type=int, default=None, help="override the config seed")
    ap.add_argument("--out", default=".", help="output directory (default: current)")
    return ap


def _load_config(path):
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except OSError as err:
        raise ConfigError(f"cannot read config: {err}") from err
    except json.JSONDecodeError as err:
        raise ConfigError(f"malformed JSON in {path}: {err}") from err
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a JSON object")
    if cfg.get("version") != SCHEMA_VERSION:
        raise ConfigError(f"config 'version' must be {SCHEMA_VERSION}, got {cfg.get('version')!r}")
    return cfg


def run_command(argv=None):
    """Run one command; returns the exit status."""
    try:
        args = _parser().parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    if args.command not in COMMANDS:
        print(f"freesub: unknown command {args.command!r}; choose from {', '.join(COMMANDS)}",
              file=sys.stderr)
        return EXIT_CONFIG

    started = datetime.now(timezone.utc).isoformat()
    out = Outputs()
    try:
        cfg = _load_config(args.config)
        if args.seed is not None:
            with _parsing("--seed"):
                check_seed(args.seed)
        status = COMMANDS[args.command](cfg, args.seed, out, os.path.dirname(os.path.abspath(args.config)))
    except (ConfigError, ValueError) as err:
        print(f"freesub: config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except NUMERICAL_ERRORS as err:
        print(f"freesub: numerical failure: {err}", file=sys.stderr)
        status = EXIT_NUMERIC

    manifest = {
        "command": args.command,
        "config_digest": _digest(json.dumps(cfg, sort_keys=True, separators=(",", ":"))),
        "master_seed": args.seed if args.seed is not None else _config_seed(cfg),
        "tool_version": __version__,
        "started": started,
        "finished": datetime.now(timezone.utc).isoformat(),
        "exit_status": status,
    }
    _write(args.out, out, manifest)
    for line in out.stdout:
        print(line)
    return status


def _config_seed(cfg):
    if "seed" in cfg:
        return cfg["seed"]
    ens = cfg.get("ensemble")
    if isinstance(ens, dict):
        return ens.get("seed", 0)
    return 0


def main():
    sys.exit(run_command())


if __name__ == "__main__":
    main()
