"""End-to-end acceptance checks, one test per criterion.

Each test appends a ``criterion N: PASS|FAIL - details`` line to ``RESULTS``;
the terminal summary prints them in order.
"""

import functools
import json
import time

import numpy as np
import pytest

from freesub.cli import run_command
from freesub.freeconv import contraction_probe, solve_rectangular, subordination_map
from freesub.ldp_rates import RateQuery, exp_equiv_diagnostic, rate_eval
from freesub.measures import Measure
from freesub.metrics import inequality_audit, trace_norm_audit
from freesub.rmt_sim import EnsembleSpec, TailLaw, hermitization_check, information_plus_noise, resolvent_suite
from freesub.verify import bound_scaling_experiment, concentration_audit, distinguishable
from oracles import mp_stieltjes_quadratic

RESULTS = []


def _report(number, ok, details):
    line = f"criterion {number}: {'PASS' if ok else 'FAIL'} - {details}"
    RESULTS.append(line)
    print(line)
    assert ok, line


@functools.lru_cache(maxsize=None)
def _scaling(mode):
    start = time.perf_counter()
    rep = bound_scaling_experiment(mode, ladder=(100, 200, 400, 800), trials=64, seed=0)
    return rep, time.perf_counter() - start


def test_criterion_01_noise_only_convolution():
    worst, slowest = 0.0, 0.0
    for c in (0.25, 0.5, 1.0, 2.0):
        start = time.perf_counter()
        res = solve_rectangular(Measure.dirac(0.0), c)
        slowest = max(slowest, time.perf_counter() - start)
        worst = max(worst, np.abs(res.values - mp_stieltjes_quadratic(c, res.z)).max())
    _report(1, worst <= 1e-8 and slowest < 1.0,
            f"max |G - G_MP| = {worst:.2e} over the default grid, slowest solve {slowest:.2f} s")


def test_criterion_02_subordination_residual_and_contraction():
    start = time.perf_counter()
    rng = np.random.default_rng(2)
    measures = [Measure.dirac(0.0)] + [
        Measure.atomic(rng.uniform(0, 9, k), rng.dirichlet(np.ones(k))) for k in rng.integers(1, 8, 5)]
    residual, probe = 0.0, 0.0
    for c in (0.5, 1.0, 2.0):
        for mu in measures:
            res = solve_rectangular(mu, c)
            h = res.values[res.converged]
            residual = max(residual, np.abs(h - subordination_map(mu, res.z[res.converged], h, c)).max())
            probe = max(probe, contraction_probe(mu, c, samples=10_000))
    elapsed = time.perf_counter() - start
    _report(2, residual <= 1e-12 and probe < 1 and elapsed < 10,
            f"max residual {residual:.1e}, max contraction ratio {probe:.3f}, {elapsed:.1f} s")


def test_criterion_03_gaussian_rate_slope():
    rep, elapsed = _scaling("gaussian")
    lo, hi = rep.slope_ci
    _report(3, rep.fitted_slope <= -0.7 and elapsed < 600,
            f"slope {rep.fitted_slope:.3f} (95% CI [{lo:.2f}, {hi:.2f}]), {elapsed:.1f} s")


def test_criterion_04_general_rate_slope_and_separation():
    rep, elapsed = _scaling("general_tail")
    gauss, _ = _scaling("gaussian")
    separated = distinguishable(rep, gauss, k=2)
    ok = rep.fitted_slope <= -0.4 and all(separated.values()) and elapsed < 900
    flags = ", ".join(f"n={n}: {'yes' if s else 'no'}" for n, s in separated.items())
    _report(4, ok, f"slope {rep.fitted_slope:.3f}, separated from gaussian at 2 se: {flags}, {elapsed:.1f} s")


def test_criterion_05_concentration_bounds():
    start = time.perf_counter()
    n = 50
    trace = concentration_audit(EnsembleSpec(n=n, p=n, trials=2000, seed=0), U=np.eye(n), z_set=[3j])
    V = np.zeros((n, n))
    V[0, 0] = 1.0
    bilinear = concentration_audit(EnsembleSpec(n=n, p=n, trials=2000, seed=1), V=V, z_set=[3j])
    elapsed = time.perf_counter() - start
    t, b = trace.records[0], bilinear.records[0]
    ok = trace.holds and bilinear.holds and abs(t["bound"] - 1.185e-4) < 1e-7 and elapsed < 120
    _report(5, ok, f"trace: CI high {t['ci_high']:.2e} < bound {t['bound']:.4e}; "
                   f"rank-1 bilinear: CI high {b['ci_high']:.2e} < bound {b['bound']:.2e}; {elapsed:.1f} s")


def test_criterion_06_resolvent_calculus():
    start = time.perf_counter()
    X = information_plus_noise(EnsembleSpec(n=6, p=9, seed=6))
    rep = resolvent_suite(X, 0.4 + 0.8j, n_tuples=20, seed=6)
    elapsed = time.perf_counter() - start
    errs = rep.derivative_errors.max(axis=0)
    _report(6, rep.ok and rep.identity_error <= 1e-10 and elapsed < 1,
            f"identity error {rep.identity_error:.1e}, derivative errors "
            + "/".join(f"{e:.1e}" for e in errs) + f", {elapsed:.2f} s")


def _scaled(rng, shape):
    return rng.standard_normal(shape) * 10 ** rng.uniform(-1, 1.5)


def _sym(rng, n):
    g = _scaled(rng, (n, n))
    return (g + g.T) / 2


def _perturbed(rng, A, symmetric):
    n, p = A.shape
    if rng.random() < 0.5:
        u = rng.standard_normal(n)
        v = u if symmetric else rng.standard_normal(p)
        return A + rng.standard_normal() * np.outer(u, v)
    return _sym(rng, n) if symmetric else _scaled(rng, (n, p))


def test_criterion_07_inequality_suite():
    start = time.perf_counter()
    rng = np.random.default_rng(7)
    trials = 1000
    names = ["rank_sym", "rank_cov", "hw_sym", "hw_cov", "hw_cov_w1", "schatten_0.5", "schatten_1",
             "schatten_2", "comparison"] + [f"trace_{k}" for k in range(11)]
    violations = dict.fromkeys(names, 0)
    for _ in range(trials):
        n, p = rng.integers(1, 8, 2)
        A = _sym(rng, n)
        B = _perturbed(rng, A, True)
        Ar = _scaled(rng, (n, p))
        Br = _perturbed(rng, Ar, False)
        recs = {"rank_sym": inequality_audit(A, B, "rank_sym"),
                "hw_sym": inequality_audit(A, B, "hw_sym"),
                "comparison": inequality_audit(A, B, "comparison"),
                "rank_cov": inequality_audit(Ar, Br, "rank_cov"),
                "hw_cov": inequality_audit(Ar, Br, "hw_cov"),
                "hw_cov_w1": inequality_audit(Ar, Br, "hw_cov_w1")}
        for q in (0.5, 1, 2):
            recs[f"schatten_{q}"] = inequality_audit(A, kind="schatten", p=q)
        for k, r in enumerate(trace_norm_audit(Ar, Br, _scaled(rng, (p, n)), _scaled(rng, (n, n)))):
            recs[f"trace_{k}"] = r
        for name, rec in recs.items():
            violations[name] += not rec.holds
    elapsed = time.perf_counter() - start
    bad = {k: v for k, v in violations.items() if v}
    ok = not bad and elapsed < 60
    detail = ", ".join(f"{k}: {v}/{trials}" for k, v in bad.items()) or "none"
    _report(7, ok, f"violations {detail}; hw_cov_w1 violations {violations['hw_cov_w1']}, {elapsed:.1f} s")


def test_criterion_08_hermitization_identity():
    start = time.perf_counter()
    rng = np.random.default_rng(8)
    failures, instances = 0, 0
    for wide in (True, False):
        for _ in range(100):
            a, b = sorted(rng.integers(1, 12, 2))
            n, p = (a, b) if wide else (b + 1, a)
            M = rng.standard_normal((n, p)) * 10 ** rng.uniform(-2, 2)
            if rng.random() < 0.3:
                M[:, rng.integers(p)] = 0.0
            chk = hermitization_check(M, tol=1e-10)
            failures += not chk.holds
            instances += 1
    elapsed = time.perf_counter() - start
    _report(8, failures == 0 and elapsed < 10,
            f"{failures}/{instances} instances failed (n <= p and n > p), {elapsed:.2f} s")


def _phi(x, w, c, alpha=1.0, a=1.0):
    return rate_eval(RateQuery(Measure.atomic(x, w), c, alpha, a), "phi_prime")


def test_criterion_09_rate_arithmetic():
    start = time.perf_counter()
    checks = {}
    checks["phi(+-1, c=1) = a"] = all(
        _phi([-1, 1], [0.5, 0.5], 1.0, alpha, a) == pytest.approx(a, rel=1e-14)
        for a in (0.5, 1.0, 3.0) for alpha in (0.5, 1.0, 1.7))
    checks["psi(delta_0) = 0"] = rate_eval(RateQuery(Measure.dirac(0.0), 2.0, 1.0), "psi_prime") == 0.0
    checks["phi non-symmetric = inf"] = _phi([-1, 2], [0.5, 0.5], 1.0) == np.inf
    checks["psi short of zero mass = inf"] = rate_eval(
        RateQuery(Measure.atomic([0, 1], [0.3, 0.7]), 2.0, 1.0), "psi_prime") == np.inf
    rng = np.random.default_rng(9)
    scaling_ok = True
    for _ in range(100):
        c, alpha, lam = rng.uniform(0.2, 5), rng.uniform(0.2, 1.9), rng.uniform(0.1, 10)
        k = int(rng.integers(1, 5))
        x = rng.uniform(0.1, 5, k)
        w = rng.dirichlet(np.ones(k)) / 2
        zero = abs(1 - c) / (1 + c)
        loc = np.concatenate(([0.0], x, -x))
        wts = np.concatenate(([zero], w * (1 - zero), w * (1 - zero)))
        base = _phi(loc, wts, c, alpha)
        scaled = _phi(lam * loc, wts, c, alpha)
        scaling_ok &= bool(np.isfinite(base)) and scaled == pytest.approx(lam ** alpha * base, rel=1e-12)
    checks["lambda scaling (100 measures)"] = scaling_ok
    elapsed = time.perf_counter() - start
    failed = [k for k, v in checks.items() if not v]
    _report(9, not failed and elapsed < 1,
            f"{len(checks) - len(failed)}/{len(checks)} checks hold"
            + (f" (failed: {', '.join(failed)})" if failed else "") + f", {elapsed:.2f} s")


def test_criterion_10_exponential_equivalence():
    start = time.perf_counter()
    spec = EnsembleSpec(n=100, p=100, entry_law=TailLaw(1.0, 1.0), trials=16, seed=0)
    rep = exp_equiv_diagnostic(spec, (100, 200, 400), c=1.0)
    elapsed = time.perf_counter() - start
    means = ", ".join(f"{m:.2e}" for m in rep.mean)
    _report(10, rep.nonincreasing(k=2) and elapsed < 300,
            f"mean distances {means} (nonincreasing within 2 se), {elapsed:.1f} s")


CRITERION_11_RUNS = {
    "verify-bound/gaussian": ("verify-bound", {"mode": "gaussian"}),
    "verify-bound/general_tail": ("verify-bound", {"mode": "general_tail"}),
    "verify-concentration": ("verify-concentration", {
        "ensemble": {"n": 50, "p": 50, "trials": 2000, "seed": 0}, "U": "identity", "z": [[0, 3]]}),
    "exp-equiv": ("exp-equiv", {
        "ensemble": {"n": 100, "p": 100, "entry_law": {"kind": "tail", "alpha": 1.0, "a": 1.0},
                     "trials": 16, "seed": 0},
        "ladder": [100, 200, 400], "c": 1.0}),
}


def _outputs(outdir):
    manifest = json.loads((outdir / "manifest.json").read_text())
    return {o["path"]: (outdir / o["path"]).read_bytes() for o in manifest["outputs"]}


def test_criterion_11_determinism(tmp_path):
    differing = []
    for label, (command, cfg) in CRITERION_11_RUNS.items():
        path = tmp_path / f"{command}.json"
        path.write_text(json.dumps({"version": 1, **cfg}))
        runs = []
        for rep in ("first", "second"):
            outdir = tmp_path / label.replace("/", "_") / rep
            run_command([command, str(path), "--seed", "11", "--out", str(outdir)])
            runs.append(_outputs(outdir))
        if not runs[0] or runs[0] != runs[1]:
            differing.append(label)
    _report(11, not differing,
            f"{len(CRITERION_11_RUNS) - len(differing)}/{len(CRITERION_11_RUNS)} commands produced "
            "byte-identical report files on rerun" + (f" (differ: {', '.join(differing)})" if differing else ""))
