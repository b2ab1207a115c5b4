"""Reproducible experiments behind the quantitative claims.

:func:`bound_scaling_experiment` measures how fast the averaged spectrum of
``X X^t`` approaches its free-probability prediction as ``n`` grows and fits
the log-log slope.  :func:`concentration_audit` compares Monte Carlo variances
of resolvent traces with their closed-form Poincare bounds.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from . import _rng
from .freeconv import ConvergenceError, SolverConfig, solve_rectangular
from .measures import EvaluationDomain, Measure, stieltjes_eval
from .rmt_sim import (EnsembleSpec, TailLaw, _map_trials, atoms_of, gram_eigenvalues,
                      information_plus_noise, mean_stieltjes_mc)

__all__ = [
    "ScalingReport",
    "ConcentrationBoundSpec",
    "ConcentrationAudit",
    "NoFitError",
    "bound_scaling_experiment",
    "deformation_family",
    "distinguishable",
    "concentration_audit",
    "tail_frequencies",
    "u_of_z",
    "v_of_z",
    "MODES",
]

MODES = ("gaussian", "general_tail")
DEFAULT_TARGET = {"gaussian": -0.7, "general_tail": -0.4}


class NoFitError(RuntimeError):
    """Fewer than three ladder points produced a distance."""


# -- scaling of the subordination bound -------------------------------------------

def deformation_family(name):
    """Named rules ``(n, p) -> M``.

    ``"zero"`` gives no deformation; ``"rank1_log"`` is ``sqrt(n) log n``
    times the outer product of the first basis vectors, so its Frobenius norm
    grows like ``sqrt(n) log n``.
    """
    if name in (None, "zero"):
        return None
    if name == "rank1_log":
        def rank1(n, p):
            M = np.zeros((n, p))
            M[0, 0] = np.sqrt(n) * np.log(n)
            return M
        return rank1
    raise ValueError(f"unknown deformation family {name!r}")


@dataclass
class ScalingReport:
    mode: str
    ladder: list
    mean: np.ndarray
    stderr: np.ndarray
    fitted_slope: float
    slope_ci: tuple
    target_slope: float
    verdict: str
    envelope: dict | None = None
    failed: list = field(default_factory=list)

    def rows(self):
        return [(int(n), float(m), float(s)) for n, m, s in zip(self.ladder, self.mean, self.stderr)]

    def to_json(self):
        return {
            "mode": self.mode,
            "rows": [{"n": n, "mean": m, "stderr": s} for n, m, s in self.rows()],
            "fitted_slope": self.fitted_slope,
            "slope_ci": list(self.slope_ci),
            "target_slope": self.target_slope,
            "verdict": self.verdict,
            "envelope": self.envelope,
            "failed": self.failed,
        }


def _slope_fit(ladder, values):
    x, y = np.log(ladder), np.log(values)
    fit = stats.linregress(x, y)
    q = stats.t.ppf(0.975, len(x) - 2) if len(x) > 2 else np.inf
    return float(fit.slope), (float(fit.slope - q * fit.stderr), float(fit.slope + q * fit.stderr))


def _prediction(M, c, grid, config):
    """Transform of the rectangular convolution of spec(M M^t) with the noise law."""
    if M is None or not np.any(M):
        return stieltjes_eval(Measure.marchenko_pastur(c), grid)
    res = solve_rectangular(atoms_of(gram_eigenvalues(M)), c, config, z=grid)
    if not res.ok:
        raise ConvergenceError(f"{len(res.failures)} grid points did not converge", res.failures)
    return res.values


def bound_scaling_experiment(mode="gaussian", M_family=None, c=1.0, ladder=(100, 200, 400, 800),
                             domain=None, trials=64, seed=0, tail_law=None, target_slope=None,
                             config: SolverConfig | None = None):
    """Fit the decay rate of ``d_st(mean ESD, prediction)`` along ``ladder``.

    ``mode="general_tail"`` draws entries from ``tail_law`` (default
    ``TailLaw(1.5, 1)``).  ``M_family`` maps ``(n, p)`` to a deformation or is
    a name understood by :func:`deformation_family`.  Without deformation the
    verdict compares the fitted slope with ``target_slope``; with one, the
    distances are divided by the theoretical envelope and the verdict asks
    the ratios not to grow by more than two standard errors.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    ladder = [int(n) for n in ladder]
    if len(ladder) < 3 or any(b <= a for a, b in zip(ladder, ladder[1:])):
        raise ValueError("ladder must be strictly increasing with at least 3 points")
    family = deformation_family(M_family) if M_family is None or isinstance(M_family, str) else M_family
    domain = domain or EvaluationDomain()
    law = "gaussian" if mode == "gaussian" else (tail_law or TailLaw(1.5, 1.0))
    target = DEFAULT_TARGET[mode] if target_slope is None else float(target_slope)
    grid = domain.grid

    kept, means, errs, frob, failed = [], [], [], [], []
    for n in ladder:
        p = int(round(n / c))
        if abs(n / p - c) > 1e-12:
            raise ValueError(f"n = {n} does not give an integral p = n / c for c = {c}")
        M = family(n, p) if family else None
        spec = EnsembleSpec(n=n, p=p, entry_law=law, deformation=M, seed=seed, trials=trials)
        try:
            mc = mean_stieltjes_mc(spec, z=grid)
            gap = np.abs(mc.mean - _prediction(M, c, grid, config))
        except (ConvergenceError, RuntimeError) as err:
            failed.append({"n": n, "error": str(err)})
            continue
        i = int(np.argmax(gap))
        kept.append(n)
        means.append(gap[i])
        errs.append(mc.stderr[i])
        frob.append(0.0 if M is None else float(np.linalg.norm(M)))
    if len(kept) < 3:
        raise NoFitError(f"only {len(kept)} ladder points succeeded")

    means, errs = np.array(means), np.array(errs)
    slope, ci = _slope_fit(kept, means)
    envelope = None
    if any(frob):
        nn = np.array(kept, dtype=float)
        fro = np.array(frob)
        env = 1 / nn + fro / nn ** 1.25 if mode == "gaussian" else 1 / np.sqrt(nn) + fro / nn
        ratio, rerr = means / env, errs / env
        ok = bool(np.all(ratio[1:] <= ratio[:-1] + 2 * np.hypot(rerr[1:], rerr[:-1])))
        envelope = {"constant": float(ratio.max()), "ratios": ratio.tolist(), "nonincreasing": ok}
        verdict = "pass" if ok else "fail"
    else:
        verdict = "pass" if slope <= target else "fail"
    return ScalingReport(mode, kept, means, errs, slope, ci, target, verdict, envelope, failed)


def distinguishable(first: ScalingReport, second: ScalingReport, k=2.0):
    """Per matched ``n``: do the two distances differ by more than ``k`` pooled stderr?"""
    out = {}
    for n, m1, s1 in first.rows():
        for n2, m2, s2 in second.rows():
            if n2 == n:
                out[n] = bool(abs(m1 - m2) > k * np.hypot(s1, s2))
    return out


# -- concentration ---------------------------------------------------------------------

def u_of_z(z):
    z = complex(z)
    y = abs(z.imag)
    return abs(z) / y ** 4 + 1 / y ** 3


def v_of_z(z):
    z = complex(z)
    y = abs(z.imag)
    return max(1 / y ** 2, abs(z) / y ** 3 + 1 / y ** 2, (abs(z) / y ** 2 + 1 / y) ** 2)


@dataclass(frozen=True)
class ConcentrationBoundSpec:
    """Right-hand side of one variance bound for ``X = Y/sqrt(p) + M``.

    ``target`` is ``"trace"`` for ``Var((1/n) Tr(S U))``, ``"bilinear"`` for
    the max-form bound on ``Var((1/n) Tr(X^t S V))`` and ``"bilinear_weak"``
    for its Frobenius-only relaxation.  ``sigma_sq`` is the Poincare constant
    of the entry law (1 for standard Gaussian).
    """

    target: str
    sigma_sq: float = 1.0

    def rhs(self, W, z, n, p):
        W = np.asarray(W, dtype=float)
        c_n = n / p
        op = float(np.linalg.norm(W, 2)) if W.size else 0.0
        fro2 = float(np.sum(W * W))
        if self.target == "trace":
            return 4 * self.sigma_sq * c_n / n ** 2.5 * u_of_z(z) * op * np.sqrt(fro2)
        if self.target == "bilinear":
            terms = (op * np.sqrt(fro2) / n ** 0.5,
                     op ** 1.5 * fro2 ** 0.25 / n ** 0.25,
                     op ** 1.25 * fro2 ** 0.375 / n ** 0.375)
            return 9 * self.sigma_sq * c_n / n ** 2 * v_of_z(z) * max(terms)
        if self.target == "bilinear_weak":
            return 9 * self.sigma_sq * c_n / n ** 2.25 * v_of_z(z) * fro2
        raise ValueError(f"unknown bound target {self.target!r}")


@dataclass
class ConcentrationAudit:
    records: list

    @property
    def holds(self):
        return all(r["holds"] for r in self.records)

    @property
    def hard_violation(self):
        return any(r["hard_violation"] for r in self.records)

    def rows(self):
        return [(r["target"], r["z_re"], r["z_im"], r["estimate"], r["ci_high"], r["bound"])
                for r in self.records]

    def to_json(self):
        return {"records": self.records, "holds": self.holds, "hard_violation": self.hard_violation}


def _variance_ci(values, seed, label, n_resamples):
    """Sample variance of complex values with a percentile bootstrap interval."""
    re, im = values.real, values.imag
    est = float(re.var(ddof=1) + im.var(ddof=1))
    if np.ptp(re) == 0 and np.ptp(im) == 0:
        return est, 0.0, 0.0, 0.0

    def stat(a, b, axis=-1):
        return a.var(ddof=1, axis=axis) + b.var(ddof=1, axis=axis)

    res = stats.bootstrap((re, im), stat, paired=True, vectorized=True, n_resamples=n_resamples,
                          method="percentile", confidence_level=0.95,
                          rng=_rng.stream(seed, label))
    ci = res.confidence_interval
    return est, float(ci.low), float(ci.high), float(res.standard_error)


def concentration_audit(spec: EnsembleSpec, U=None, V=None, z_set=(3j,), n_resamples=2000):
    """Monte Carlo check of the resolvent-trace variance bounds.

    For each ``z`` the per-trial statistics ``(1/n) Tr(S U)`` and
    ``(1/n) Tr(X^t S V)`` are collected over ``spec.trials`` trials.  A
    record holds when the upper end of the bootstrap 95% interval is below
    the bound; a hard violation is a point estimate more than five bootstrap
    standard errors above it.  The Frobenius-only relaxation of the bilinear
    bound is reported next to the max form.
    """
    if spec.entry_law != "gaussian":
        raise ValueError("the Poincare constant is only known for Gaussian entries")
    n, p = spec.n, spec.p
    z_set = [complex(z) for z in z_set]
    if any(z.imag == 0 for z in z_set):
        raise ValueError("z must be off the real axis")
    if U is not None:
        U = np.asarray(U, dtype=float)
        if U.shape != (n, n):
            raise ValueError(f"U must be {n} x {n}")
    if V is not None:
        V = np.asarray(V, dtype=float)
        if V.shape != (n, p):
            raise ValueError(f"V must be {n} x {p}")
    eye = np.eye(n)

    def one(i):
        X = information_plus_noise(spec, i)
        G = X @ X.T
        out = []
        for z in z_set:
            S = np.linalg.inv(z * eye - G)
            t1 = np.sum(S * U.T) / n if U is not None else 0.0
            t2 = np.sum((X.T @ S) * V.T) / n if V is not None else 0.0
            out.append((t1, t2))
        return out

    per_trial = np.array(_map_trials(one, range(spec.trials)))  # trials x z x 2
    records = []
    for iz, z in enumerate(z_set):
        checks = []
        if U is not None:
            checks.append(("trace", per_trial[:, iz, 0], U, None))
        if V is not None:
            weak = ConcentrationBoundSpec("bilinear_weak").rhs(V, z, n, p)
            checks.append(("bilinear", per_trial[:, iz, 1], V, weak))
        for target, vals, W, weak in checks:
            est, lo, hi, se = _variance_ci(vals, spec.seed, f"bootstrap/{target}/{iz}", n_resamples)
            bound = ConcentrationBoundSpec(target).rhs(W, z, n, p)
            rec = {"target": target, "z_re": z.real, "z_im": z.imag, "estimate": est,
                   "ci_low": lo, "ci_high": hi, "bound": float(bound),
                   "holds": bool(hi <= bound * (1 + 1e-12)),
                   "hard_violation": bool(est > bound + 5 * se)}
            if weak is not None:
                rec["weak_bound"] = float(weak)
            records.append(rec)
    return ConcentrationAudit(records)


def tail_frequencies(spec: EnsembleSpec, deltas, domain=None):
    """Fraction of trials whose spectrum is ``delta``-far from the trial average.

    The average over trials stands in for the expected spectral measure.
    Reported for a qualitative look at the decay in ``delta`` and ``n``; the
    constant in the exponential bound is unknown, so nothing is asserted.
    """
    domain = domain or EvaluationDomain()
    mc = mean_stieltjes_mc(spec, domain)
    d = np.abs(mc.per_trial - mc.mean).max(axis=1)
    deltas = np.asarray(deltas, dtype=float)
    freq = [(d >= delta).mean() for delta in deltas]
    kappa = 1.0 if spec.entry_law == "rademacher" else None
    return {"n": spec.n, "kappa": kappa, "deltas": deltas.tolist(), "frequencies": [float(f) for f in freq],
            "nonincreasing": bool(np.all(np.diff(freq) <= 0))}
