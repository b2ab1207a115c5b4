"""Large-deviation quantities for heavy-tailed Gram spectra.

The entry matrix is split by modulus into four bands (the bulk ``A`` plus
three tail bands ``B``, ``C``, ``D``), the truncated entry law is
characterised by its conditioned moments, and the explicit rate functions
are evaluated on atomic or tabulated measures.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy import integrate

from .freeconv import ConvergenceError, rectangular_transform, SolverConfig
from .measures import (EvaluationDomain, Measure, eps_ladder, invert_stieltjes, merge_atoms,
                       moment)
from .metrics import dst_distance
from .rmt_sim import TailLaw, _map_trials, gram_eigenvalues, sample_matrix

__all__ = [
    "TruncationDecomposition",
    "ConditionedMoments",
    "RateQuery",
    "ExpEquivReport",
    "truncation_decompose",
    "band_thresholds",
    "conditioned_moments",
    "gap_envelope",
    "rate_eval",
    "symmetric_preimage",
    "exp_equiv_diagnostic",
    "band_c_surrogate",
    "RATE_KINDS",
]

# eigenvalues of C C^t below this count as the atom at zero
ZERO_ATOM = 1e-10
# slack in the hard atom-mass conditions of the rate functions
MASS_SLACK = 1e-12


# -- truncation -----------------------------------------------------------------

def band_thresholds(n, p, alpha):
    """``(t_A, t_B, t_C)`` = ((log n)^(2/alpha), sqrt(p)/log n, sqrt(p) log n)."""
    if n < 3:
        raise ValueError("the band split needs n >= 3 so that log n > 1")
    if not 0 < alpha < 2:
        raise ValueError("alpha must lie in (0, 2)")
    L = np.log(n)
    return float(L ** (2.0 / alpha)), float(np.sqrt(p) / L), float(np.sqrt(p) * L)


@dataclass(frozen=True)
class TruncationDecomposition:
    """``X / sqrt(p) = A + B + C + D`` split by entry modulus.

    ``index_set`` holds the ``(j, k)`` pairs outside the bulk band ``A``.
    When ``t_A`` exceeds ``t_B`` the band ``B`` is empty, which is flagged by
    ``band_b_empty`` rather than treated as an error.
    """

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray
    index_set: list
    thresholds: tuple
    band_b_empty: bool

    def labels(self):
        """Integer band label per entry: 0..3 for A..D."""
        out = np.zeros(self.A.shape, dtype=int)
        for k, part in enumerate((self.B, self.C, self.D), start=1):
            out[part != 0] = k
        return out

    def report(self):
        lab = self.labels()
        t_a, t_b, t_c = self.thresholds
        return {
            "shape": list(self.A.shape),
            "thresholds": {"t_A": t_a, "t_B": t_b, "t_C": t_c},
            "band_b_empty": self.band_b_empty,
            "counts": {name: int(np.sum(lab == k)) for k, name in enumerate("ABCD")},
            "index_set_size": len(self.index_set),
        }


def truncation_decompose(X, alpha):
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise ValueError("X must be a matrix")
    n, p = X.shape
    t_a, t_b, t_c = band_thresholds(n, p, alpha)
    m = np.abs(X)
    # bands can overlap at small n; earlier bands take precedence
    in_a = m < t_a
    in_b = ~in_a & (m <= t_b)
    in_c = ~in_a & ~in_b & (m > t_b) & (m <= t_c)
    in_d = ~in_a & ~in_b & ~in_c
    scaled = X / np.sqrt(p)
    parts = [np.where(mask, scaled, 0.0) for mask in (in_a, in_b, in_c, in_d)]
    index_set = [(int(j), int(k)) for j, k in zip(*np.nonzero(~in_a))]
    return TruncationDecomposition(*parts, index_set=index_set, thresholds=(t_a, t_b, t_c),
                                   band_b_empty=bool(t_a > t_b))


# -- conditioned moments ----------------------------------------------------------

class ConditionedMoments(NamedTuple):
    sigma_n_sq: float
    second: float
    fourth: float
    mean: float
    gap: float          # sigma_n_sq - Var(Z), computed from tail integrals
    threshold: float
    mass: float         # P(|Z| < threshold)


def _body(k, a, alpha, U):
    """E(|Z|^k ; a|Z|^alpha < U) written in u = a t^alpha."""
    if U <= 0:
        return 0.0
    val, _ = integrate.quad(lambda u: (u / a) ** (k / alpha) * np.exp(-u), 0.0, U,
                            limit=200, epsabs=0.0, epsrel=1e-13)
    return val


def _tail(k, a, alpha, U):
    """E(|Z|^k ; a|Z|^alpha >= U) as exp(-U) times an O(1) integral."""
    val, _ = integrate.quad(lambda v: ((U + v) / a) ** (k / alpha) * np.exp(-v), 0.0, np.inf,
                            limit=200, epsabs=0.0, epsrel=1e-13)
    return np.exp(-U) * val


def conditioned_moments(law: TailLaw, n, threshold=None):
    """Moments of the entry law conditioned on ``|Z| < (log n)^(2/alpha)``.

    ``sigma_n_sq`` subtracts the conditional mean.  The gap to the
    unconditioned variance is assembled from tail integrals, so it keeps full
    relative precision long after ``sigma_n_sq`` itself rounds to the variance.
    """
    if threshold is None:
        if n < 3:
            raise ValueError("n must be at least 3")
        threshold = np.log(n) ** (2.0 / law.alpha)
    T = float(threshold)
    if not T > 0:
        raise ValueError("threshold must be positive")
    a, alpha = law.effective_a, law.alpha
    U = a * T ** alpha
    skew = 2 * law.sign_prob - 1

    P = -np.expm1(-U)
    body = {k: _body(k, a, alpha, U) for k in (1, 2, 4)}
    tail = {k: _tail(k, a, alpha, U) for k in (1, 2)}

    second = body[2] / P
    fourth = body[4] / P
    mean_c = skew * body[1] / P
    sigma = second - mean_c ** 2

    m1 = skew * (body[1] + tail[1])
    m2 = body[2] + tail[2]
    q = np.exp(-U)
    d_second = (q * m2 - tail[2]) / P
    d_mean = (q * m1 - skew * tail[1]) / P
    gap = d_second - d_mean * (mean_c + m1)
    return ConditionedMoments(float(sigma), float(second), float(fourth), float(mean_c),
                              float(gap), T, float(P))


def gap_envelope(law: TailLaw, ladder):
    """Fit ``|sigma_n^2 - 1| <= C exp(-a (log n)^2 / 4)`` over a ladder.

    Returns ``(C, ratios)`` with ``C`` the largest ratio; ``a`` is the tail
    constant of the emitted variable.
    """
    ladder = np.asarray(ladder)
    a = law.effective_a
    ratios = np.array([abs(conditioned_moments(law, int(n)).gap) / np.exp(-a * np.log(n) ** 2 / 4)
                       for n in ladder])
    return float(ratios.max()), ratios


# -- rate functions -----------------------------------------------------------------

RATE_KINDS = ("phi_prime", "psi_prime", "j_prime_forward")


@dataclass(frozen=True)
class RateQuery:
    measure: Measure
    c: float
    alpha: float
    a: float = 1.0

    def __post_init__(self):
        if not self.c > 0 or not np.isfinite(self.c):
            raise ValueError("c must be a finite positive number")
        if not 0 < self.alpha < 2:
            raise ValueError("alpha must lie in (0, 2)")
        if not self.a > 0 or not np.isfinite(self.a):
            raise ValueError("a must be a finite positive number")

    def to_json(self):
        return {"measure": self.measure.to_json(), "c": self.c, "alpha": self.alpha, "a": self.a}

    @classmethod
    def from_json(cls, obj):
        extra = set(obj) - {"measure", "c", "alpha", "a"}
        if extra:
            raise ValueError(f"unknown rate query fields: {sorted(extra)}")
        return cls(Measure.from_json(obj["measure"]), float(obj["c"]), float(obj["alpha"]),
                   float(obj.get("a", 1.0)))


def _phi_prime(q):
    mu = q.measure
    if not mu.is_symmetric():
        return np.inf
    if mu.mass_at(0.0) < abs(1 - q.c) / (1 + q.c) - MASS_SLACK:
        return np.inf
    return q.a / 2 * (q.c + 1) / q.c ** (1 + q.alpha / 2) * _abs_moment(mu, q.alpha)


def _psi_prime(q):
    nu = q.measure
    if nu.support_bounds()[0] < 0:
        raise ValueError("psi_prime takes a measure on [0, inf)")
    if nu.mass_at(0.0) < max(0.0, 1 - 1 / q.c) - MASS_SLACK:
        return np.inf
    return q.a / q.c ** (q.alpha / 2) * _abs_moment(nu, q.alpha / 2)


def _abs_moment(mu, p):
    # the atom at zero contributes nothing; skip it so m_p(delta_0) is exactly 0
    return moment(mu, p) if mu.kind != "atoms" or np.any(mu.locations != 0) else 0.0


def _window(nu, c):
    top = max(nu.support_bounds()[1], 0.0)
    return 0.0, 1.05 * (np.sqrt(top) + 1 + np.sqrt(c)) ** 2


def _j_prime_forward(q, config=None, n_points=4096):
    nu = q.measure
    rate = _psi_prime(q)
    transform = rectangular_transform(nu, q.c, config)
    mu = invert_stieltjes(transform, _window(nu, q.c), eps_ladder(), n_points=n_points)
    return mu, rate


def rate_eval(query: RateQuery, which="phi_prime", config: SolverConfig | None = None):
    """Evaluate one rate function.

    ``phi_prime`` and ``psi_prime`` return a nonnegative float or ``inf`` when
    the measure violates the symmetry or atom-mass condition.
    ``j_prime_forward`` treats the query measure as the signal ``nu`` and
    returns ``(mu, J'(mu))`` where ``mu`` is the density grid recovered from
    the rectangular convolution with the noise law; solver failures raise
    :class:`~freesub.freeconv.ConvergenceError`.
    """
    if which == "phi_prime":
        return float(_phi_prime(query))
    if which == "psi_prime":
        return float(_psi_prime(query))
    if which == "j_prime_forward":
        return _j_prime_forward(query, config)
    raise ValueError(f"unknown rate function {which!r}; expected one of {RATE_KINDS}")


def symmetric_preimage(nu: Measure, c):
    """Symmetric ``mu`` whose mixed square law is ``nu``.

    Inverts ``mu -> (1 + 1/c)/2 mu^2 + (1 - 1/c)/2 delta_0`` on atomic
    measures; raises ``ValueError`` when no probability measure qualifies.
    """
    if nu.kind != "atoms":
        raise ValueError("symmetric_preimage is implemented for atomic measures only")
    if np.any(nu.locations < 0):
        raise ValueError("nu must live on [0, inf)")
    coef_sq = 0.5 * (1 + 1 / c)
    coef_0 = 0.5 * (1 - 1 / c)
    loc, w = merge_atoms(np.append(nu.locations, 0.0), np.append(nu.weights, -coef_0))
    w = w / coef_sq
    if np.any(w < -MASS_SLACK):
        raise ValueError(f"nu({{0}}) = {nu.mass_at(0.0):.6g} is below {coef_0:.6g}; no preimage")
    keep = w > MASS_SLACK
    sq = Measure.atomic(loc[keep], w[keep] / w[keep].sum())
    r = np.sqrt(sq.locations)
    return Measure.atomic(np.concatenate((r, -r)), np.concatenate((sq.weights, sq.weights)) / 2)


# -- exponential equivalence --------------------------------------------------------

@dataclass
class ExpEquivReport:
    ladder: list
    mean: np.ndarray
    stderr: np.ndarray
    trials_ok: list
    trials_failed: list
    c_nonempty: list        # trials per n whose band-C part is nonzero

    def rows(self):
        return [(int(n), float(m), float(s)) for n, m, s in zip(self.ladder, self.mean, self.stderr)]

    def nonincreasing(self, k=2.0):
        """True when each mean is at most the previous one plus ``k`` pooled stderr."""
        m, s = self.mean, self.stderr
        return bool(np.all(m[1:] <= m[:-1] + k * np.hypot(s[1:], s[:-1])))

    def to_json(self):
        return {
            "rows": [{"n": n, "mean_dist": m, "stderr": s} for n, m, s in self.rows()],
            "trials_ok": self.trials_ok,
            "trials_failed": self.trials_failed,
            "c_nonempty": self.c_nonempty,
            "nonincreasing_2se": self.nonincreasing(),
        }


def band_c_surrogate(C, c, config=None):
    """Transform of the rectangular convolution of spec(C C^t) with the noise law."""
    lam = gram_eigenvalues(C)
    lam = np.where(lam < ZERO_ATOM, 0.0, lam)
    loc, w = merge_atoms(lam, np.full(lam.shape, 1.0 / lam.size))
    return rectangular_transform(Measure.atomic(loc, w), c, config)


def exp_equiv_diagnostic(spec, n_ladder, domain=None, c=None, config=None):
    """Distance between the Gram spectrum and its band-C free surrogate.

    For each ``n`` and trial, the entry matrix ``X`` is split into bands,
    ``nu_n`` is the rectangular convolution of the spectrum of ``C C^t``
    with the noise law, and ``d_st(mu_{XX^t/p}, nu_n)`` is recorded.  When
    ``C`` vanishes ``nu_n`` is the Marchenko-Pastur law in closed form.  The
    convolution uses the realised ratio ``n / p``.
    """
    if not isinstance(spec.entry_law, TailLaw):
        raise ValueError("the diagnostic needs a heavy-tailed entry law")
    if spec.deformation is not None:
        raise ValueError("the diagnostic is defined for centred matrices (no deformation)")
    ladder = [int(n) for n in n_ladder]
    if any(b <= a for a, b in zip(ladder, ladder[1:])):
        raise ValueError("n_ladder must be strictly increasing")
    domain = domain or EvaluationDomain()
    c = spec.c_n if c is None else float(c)
    alpha = spec.entry_law.alpha

    means, errs, oks, fails, nonempty = [], [], [], [], []
    for n in ladder:
        p = max(int(round(n / c)), 1)
        sub = spec.replace(n=n, p=p)
        noise = Measure.marchenko_pastur(n / p)

        def one(i, sub=sub, n=n, p=p, noise=noise):
            X = sample_matrix(sub, i)
            try:
                esd = Measure.atomic(gram_eigenvalues(X / np.sqrt(p)))
                C = truncation_decompose(X, alpha).C
                if not np.any(C):
                    return dst_distance(esd, noise, domain), False
                surrogate = band_c_surrogate(C, n / p, config)
                return dst_distance(esd, surrogate, domain), True
            except (np.linalg.LinAlgError, ConvergenceError):
                return None

        out = _map_trials(one, range(spec.trials))
        good = [r for r in out if r is not None]
        d = np.array([r[0] for r in good])
        means.append(d.mean() if d.size else np.nan)
        errs.append(d.std(ddof=1) / np.sqrt(d.size) if d.size >= 2 else np.nan)
        oks.append(len(good))
        fails.append(len(out) - len(good))
        nonempty.append(sum(r[1] for r in good))
    return ExpEquivReport(ladder, np.array(means), np.array(errs), oks, fails, nonempty)
