"""Subordination solvers for free convolutions with the semicircle and MP laws.

Two fixed-point problems are solved pointwise in ``z``:

* rectangular: ``h = phi(h, c)`` with
  ``phi(h, gamma) = (1 - gamma h) G_mu(eta)`` and
  ``eta = z (1 - gamma h)^2 - (1 - gamma)(1 - gamma h)``;
  the fixed point is the Stieltjes transform of
  ``(sqrt(mu) boxplus_c sqrt(MP_c))^2``.
* additive: ``h = G_mu(z - h)``, the transform of ``mu boxplus semicircle``.

On the truncated cone ``{Im z > s, |Re z / Im z| < t}`` both maps contract,
so plain iteration from ``h0 = 1/z`` converges.  Points outside the cone are
reached by continuation along a vertical path, with Newton steps.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from . import _rng
from .measures import EvaluationDomain, Measure, domain_contains, stieltjes_derivative, stieltjes_eval

__all__ = [
    "SolverConfig",
    "ConvolutionResult",
    "SingularEvaluationError",
    "ConvergenceError",
    "ContractionWarning",
    "subordination_map",
    "subordination_map_derivative",
    "solve_rectangular",
    "solve_additive_sc",
    "deterministic_equivalent",
    "deterministic_equivalent_matrix",
    "contraction_probe",
    "rectangular_transform",
    "additive_transform",
]

# |Im eta| below this is treated as a real (singular) evaluation point
SINGULAR_IM = 1e-14
# relative roundoff floor of the Newton residual
_NOISE = 64 * np.finfo(float).eps


class SingularEvaluationError(ArithmeticError):
    """The subordination map would evaluate G_mu on the real axis."""


class ConvergenceError(RuntimeError):
    """Some points failed to converge; ``failures`` lists them."""

    def __init__(self, message, failures):
        super().__init__(message)
        self.failures = failures


class ContractionWarning(RuntimeWarning):
    pass


@dataclass(frozen=True)
class SolverConfig:
    tolerance: float = 1e-12
    max_iterations: int = 500
    damping: float = 1.0
    domain: EvaluationDomain = field(default_factory=EvaluationDomain)

    def __post_init__(self):
        if not 0 < self.tolerance < 1e-6:
            raise ValueError("tolerance must lie in (0, 1e-6)")
        if int(self.max_iterations) < 50:
            raise ValueError("max_iterations must be at least 50")
        if not 0 < self.damping <= 1:
            raise ValueError("damping must lie in (0, 1]")


@dataclass
class ConvolutionResult:
    """Per-point output of a subordination solve, ordered like ``z``."""

    z: np.ndarray
    values: np.ndarray
    iterations: np.ndarray
    residuals: np.ndarray
    converged: np.ndarray
    contraction_estimate: float
    failures: list = field(default_factory=list)

    @property
    def ok(self):
        return bool(np.all(self.converged))

    def rows(self):
        """(re_z, im_z, re_G, im_G, iters, residual) per point."""
        return [(float(z.real), float(z.imag), float(g.real), float(g.imag), int(k), float(r))
                for z, g, k, r in zip(self.z, self.values, self.iterations, self.residuals)]

    def to_json(self):
        return {
            "points": [dict(zip(("re_z", "im_z", "re_G", "im_G", "iters", "residual"), row))
                       for row in self.rows()],
            "converged": bool(self.ok),
            "contraction_estimate": float(self.contraction_estimate),
            "failures": self.failures,
        }


# -- maps ---------------------------------------------------------------------

def _eta(z, h, gamma):
    w = 1.0 - gamma * h
    return w, z * w * w - (1.0 - gamma) * w


def subordination_map(mu, z, h, gamma, strict=True):
    """phi_{z,mu}(h, gamma) = (1 - gamma h) G_mu(eta), vectorised over z and h.

    With ``strict`` (the default) an argument ``eta`` that is numerically real
    raises :class:`SingularEvaluationError`.  The off-domain continuation
    turns this off: outside the support of the convolution ``eta`` may sit on
    the real axis legitimately, and ``G_mu`` is then taken as a boundary value.
    """
    z = np.asarray(z, dtype=complex)
    h = np.asarray(h, dtype=complex)
    if np.any(z.imag == 0):
        raise ValueError("z must be non-real")
    w, eta = _eta(z, h, gamma)
    if strict:
        bad = np.abs(eta.imag) < SINGULAR_IM
        if np.any(bad):
            i = np.flatnonzero(np.broadcast_to(bad, eta.shape))[0]
            zb = np.broadcast_to(z, eta.shape).flat[i]
            hb = np.broadcast_to(h, eta.shape).flat[i]
            raise SingularEvaluationError(
                f"Im eta = {eta.flat[i].imag:.3g} is numerically zero at z={zb}, h={hb}, gamma={gamma}")
    out = w * stieltjes_eval(mu, eta, allow_real=not strict)
    return out[()] if np.ndim(out) == 0 else out


def subordination_map_derivative(mu, z, h, gamma):
    """d phi / d h, used by the Newton continuation."""
    w, eta = _eta(z, h, gamma)
    deta = -2.0 * gamma * z * w + gamma * (1.0 - gamma)
    return (-gamma * stieltjes_eval(mu, eta, allow_real=True)
            + w * stieltjes_derivative(mu, eta, allow_real=True) * deta)


class _Rectangular:
    def __init__(self, mu, c):
        lo, _ = mu.support_bounds()
        if lo < -1e-12:
            raise ValueError("rectangular convolution needs a measure supported on [0, inf)")
        if not c > 0:
            raise ValueError("aspect ratio c must be positive")
        self.mu, self.c = mu, float(c)

    def fixed(self, z, h, strict=True):
        return subordination_map(self.mu, z, h, self.c, strict)

    def slope(self, z, h):
        return subordination_map_derivative(self.mu, z, h, self.c)


class _Additive:
    def __init__(self, mu):
        self.mu = mu

    def fixed(self, z, h, strict=True):
        arg = z - h
        if strict and np.any(np.abs(arg.imag) < SINGULAR_IM):
            raise SingularEvaluationError("semicircle subordination evaluates G_mu on the real axis")
        return stieltjes_eval(self.mu, arg, allow_real=not strict)

    def slope(self, z, h):
        return -stieltjes_derivative(self.mu, z - h, allow_real=True)


# -- solvers ------------------------------------------------------------------

def _reciprocal_newton(problem, z, h):
    """Residual 1/h - 1/phi(h), its derivative, and its roundoff scale.

    Near an atom of mu the map phi has a pole right next to the fixed point,
    which makes Newton on h - phi(h) fragile; in reciprocal form the pole
    becomes a simple zero and the basin of attraction stays wide.
    """
    phi = problem.fixed(z, h, strict=False)
    f = 1.0 / h - 1.0 / phi
    df = -1.0 / (h * h) + problem.slope(z, h) / (phi * phi)
    return f, df, np.abs(1.0 / h) + np.abs(1.0 / phi)


def _iterate(problem, z, h0, cfg):
    """Damped plain iteration; all points advance together until they settle."""
    h = h0.copy()
    iters = np.zeros(z.shape, dtype=int)
    active = np.ones(z.shape, dtype=bool)
    prev_step = np.full(z.shape, np.nan)
    ratio = np.zeros(z.shape)
    for _ in range(int(cfg.max_iterations)):
        if not active.any():
            break
        idx = np.flatnonzero(active)
        new = problem.fixed(z[idx], h[idx])
        new = (1.0 - cfg.damping) * h[idx] + cfg.damping * new
        step = np.abs(new - h[idx])
        # contraction ratio from successive steps while they are above roundoff
        usable = np.isfinite(prev_step[idx]) & (prev_step[idx] > 1e3 * cfg.tolerance)
        ratio[idx[usable]] = np.maximum(ratio[idx[usable]], step[usable] / prev_step[idx][usable])
        prev_step[idx] = step
        h[idx] = new
        iters[idx] += 1
        active[idx[step <= cfg.tolerance]] = False
    residual = np.abs(h - problem.fixed(z, h))
    return h, iters, residual, ~active, ratio


def _continue(problem, z, anchor_im, cfg, newton_max=12, min_log_step=1e-7, max_rounds=2000):
    """Track the fixed point from Im = anchor_im down to Im z along vertical paths.

    Each point moves with its own step in log(Im z).  A step is accepted when
    Newton, started from a secant predictor, converges with monotonically
    shrinking residuals and keeps the Herglotz sign Im h < 0; otherwise the
    step is halved.  Returns values, Newton step counts, residuals, converged.
    """
    start = z.real + 1j * anchor_im
    h, iters, _, ok, _ = _iterate(problem, start, 1.0 / start, cfg)
    target = np.log(z.imag)
    logy = np.full(z.shape, np.log(anchor_im))
    prev_h, prev_logy = h.copy(), logy.copy()
    step = np.full(z.shape, np.log(1.25))
    tol = max(cfg.tolerance, 1e-14)
    moving = ok & (logy > target)
    rounds = 0
    while moving.any():
        rounds += 1
        if rounds > max_rounds:
            ok[moving] = False
            break
        idx = np.flatnonzero(moving)
        ly = np.maximum(logy[idx] - step[idx], target[idx])
        zk = z.real[idx] + 1j * np.exp(ly)
        span = logy[idx] - prev_logy[idx]
        slope = np.where(span > 0, (h[idx] - prev_h[idx]) / np.where(span > 0, span, 1.0), 0.0)
        guess = h[idx] + slope * (logy[idx] - ly)
        guess = np.where(guess.imag < 0, guess, h[idx])
        f, df, scale = _reciprocal_newton(problem, zk, guess)
        good = np.ones(idx.shape, dtype=bool)
        # a residual at its roundoff floor counts as converged
        done = np.abs(f) <= _NOISE * scale
        for _ in range(newton_max):
            live = good & ~done
            if not live.any():
                break
            delta = np.where(live, f / np.where(live, df, 1.0), 0.0)
            trial = guess - delta
            tf, tdf, tscale = _reciprocal_newton(problem, zk, trial)
            floor = _NOISE * tscale
            shrink = (np.abs(tf) <= 0.5 * np.abs(f)) | (np.abs(tf) <= floor)
            good &= ~live | (shrink & (trial.imag < 0))
            upd = live & good
            guess = np.where(upd, trial, guess)
            f = np.where(upd, tf, f)
            df = np.where(upd, tdf, df)
            iters[idx] += live
            done |= upd & ((np.abs(delta) <= tol * (1.0 + np.abs(guess))) | (np.abs(tf) <= floor))
        accept = good & done
        acc, rej = idx[accept], idx[~accept]
        prev_h[acc], prev_logy[acc] = h[acc], logy[acc]
        h[acc], logy[acc] = guess[accept], ly[accept]
        step[acc] = np.minimum(step[acc] * 1.5, np.log(2.0))
        step[rej] /= 2
        stuck = rej[step[rej] < min_log_step]
        ok[stuck] = False
        moving = ok & (logy > target)
    zr = z.real + 1j * np.exp(logy)
    resid = np.abs(h - problem.fixed(zr, h, strict=False))
    return h, iters, resid, ok


def _solve(problem, z, config, h0=None):
    cfg = config or SolverConfig()
    if z is None:
        z = cfg.domain.grid
    z = np.atleast_1d(np.asarray(z, dtype=complex))
    if np.any(z.imag == 0):
        raise ValueError("solver points must be non-real")
    lower = z.imag < 0
    zu = np.where(lower, np.conj(z), z)

    inside = domain_contains(cfg.domain, zu)
    values = np.empty(zu.shape, dtype=complex)
    iters = np.zeros(zu.shape, dtype=int)
    resid = np.zeros(zu.shape)
    conv = np.zeros(zu.shape, dtype=bool)
    contraction = 0.0

    if inside.any():
        zi = zu[inside]
        start = 1.0 / zi if h0 is None else np.broadcast_to(np.asarray(h0, dtype=complex), z.shape)[inside]
        start = np.where(lower[inside], np.conj(start), start)
        h, k, r, ok, ratio = _iterate(problem, zi, start, cfg)
        values[inside], iters[inside], resid[inside], conv[inside] = h, k, r, ok
        contraction = float(ratio.max()) if ratio.size else 0.0
    if (~inside).any():
        zo = zu[~inside]
        dom = cfg.domain
        anchor = max(dom.s * 1.01, float(np.abs(zo.real).max()) / dom.t * 1.01)
        h, k, r, ok = _continue(problem, zo, anchor, cfg)
        values[~inside], iters[~inside], resid[~inside], conv[~inside] = h, k, r, ok

    values = np.where(lower, np.conj(values), values)
    failures = [{"index": int(i), "z": [float(z[i].real), float(z[i].imag)],
                 "residual": float(resid[i]), "iterations": int(iters[i]),
                 "in_domain": bool(inside[i])}
                for i in np.flatnonzero(~conv)]
    if contraction >= 1:
        warnings.warn(f"estimated contraction constant {contraction:.3g} >= 1; "
                      "use a larger s or a smaller t", ContractionWarning, stacklevel=3)
    return ConvolutionResult(z=z, values=values, iterations=iters, residuals=resid,
                             converged=conv, contraction_estimate=contraction, failures=failures)


def solve_rectangular(mu, c, config=None, z=None, h0=None):
    """G_nu on the points ``z`` (default: the domain grid) for
    ``nu = (sqrt(mu) boxplus_c sqrt(MP_c))^2``.

    ``mu`` must live on [0, inf).  Points inside the configured domain use
    plain iteration from ``h0`` (default ``1/z``); other points use Newton
    continuation and carry no contraction guarantee.
    """
    return _solve(_Rectangular(mu, c), z, config, h0)


def solve_additive_sc(mu, config=None, z=None, h0=None):
    """G_nu for ``nu = mu boxplus semicircle`` via ``h = G_mu(z - h)``."""
    return _solve(_Additive(mu), z, config, h0)


def _as_transform(problem, config):
    def transform(z):
        res = _solve(problem, z, config)
        if not res.ok:
            raise ConvergenceError(f"{len(res.failures)} points failed to converge", res.failures)
        return res.values
    return transform


def rectangular_transform(mu, c, config=None):
    """Callable z -> G_nu(z) for the rectangular convolution (raises on failure)."""
    return _as_transform(_Rectangular(mu, c), config)


def additive_transform(mu, config=None):
    return _as_transform(_Additive(mu), config)


# -- deterministic equivalent -------------------------------------------------

def deterministic_equivalent(mu_signal, c_n, g_bar, z):
    """phi_{z,mu}(g_bar, c_n), equal to (1/n) Tr R for the matrix R built from M."""
    return subordination_map(mu_signal, z, g_bar, c_n)


def deterministic_equivalent_matrix(M, c_n, g_bar, z):
    """The n x n matrix R = ((z(1 - c g) - 1 + c) I - M M^t / (1 - c g))^{-1}."""
    M = np.asarray(M, dtype=float)
    n = M.shape[0]
    w = 1.0 - c_n * g_bar
    A = (z * w - 1.0 + c_n) * np.eye(n) - (M @ M.T) / w
    return np.linalg.inv(A)


# -- contraction probe --------------------------------------------------------

def contraction_probe(mu, c, domain=None, samples=10_000, seed=0):
    """Largest observed |phi(h1) - phi(h2)| / |h1 - h2| over random triples.

    ``z`` is drawn from the cone (log-uniform height up to ``im_max``, uniform
    ratio) and ``h1, h2`` uniformly from the disc of radius ``1/s``.  Pairs
    with ``h1 == h2`` are skipped.  The value is a lower bound on the
    Lipschitz constant; a result >= 1 is reported, not raised.
    """
    if samples < 100:
        raise ValueError("samples must be at least 100")
    domain = domain or EvaluationDomain()
    rng = _rng.stream(seed, "contraction_probe")
    ims = domain.s * np.exp(rng.uniform(0, np.log(domain.im_max / domain.s), samples))
    ims = np.maximum(ims, np.nextafter(domain.s, np.inf))
    z = rng.uniform(-domain.t, domain.t, samples) * ims + 1j * ims

    def disc(size):
        r = np.sqrt(rng.uniform(0, 1, size)) / domain.s
        return r * np.exp(2j * np.pi * rng.uniform(0, 1, size))

    h1, h2 = disc(samples), disc(samples)
    keep = h1 != h2
    z, h1, h2 = z[keep], h1[keep], h2[keep]
    ratio = np.abs(subordination_map(mu, z, h1, c) - subordination_map(mu, z, h2, c)) / np.abs(h1 - h2)
    return float(ratio.max())
