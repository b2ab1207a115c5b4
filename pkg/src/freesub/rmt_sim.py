"""Random matrix ensembles, empirical spectra and resolvent checks.

The information-plus-noise model is ``X = Y / sqrt(p) + M`` with an ``n x p``
noise matrix ``Y`` of i.i.d. entries and a deterministic deformation ``M``.
Entries are standard Gaussian or follow a :class:`TailLaw`: an independent
random sign times a Weibull modulus with ``P(|Z| >= t) = exp(-a t^alpha)``.

Every random draw comes from a stream keyed by ``(seed, label, trial)``, so a
trial reproduces bit for bit no matter which thread computes it or in which
order.  Set ``FREESUB_THREADS`` to run trials on a thread pool.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from math import gamma as gamma_fn

import numpy as np

from . import _rng
from .measures import Measure, merge_atoms

__all__ = [
    "TailLaw",
    "EnsembleSpec",
    "Resolvent",
    "ResolventReport",
    "MonteCarloTransform",
    "sample_matrix",
    "information_plus_noise",
    "gram_eigenvalues",
    "spectral_sample",
    "singular_value_dist",
    "hermitize",
    "hermitization_check",
    "resolvent_suite",
    "resolvent_derivatives",
    "mean_stieltjes_mc",
    "wigner_mean_stieltjes_mc",
    "thread_count",
]

# Gram eigenvalues below CLAMP * max(1, largest) are roundoff and set to zero
CLAMP = 1e-10


def thread_count():
    """Worker threads for trial loops (env ``FREESUB_THREADS``, default 1)."""
    try:
        return max(int(os.environ.get("FREESUB_THREADS", "1")), 1)
    except ValueError:
        return 1


def _map_trials(fn, indices):
    indices = list(indices)
    workers = thread_count()
    if workers == 1 or len(indices) < 2:
        return [fn(i) for i in indices]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, indices))


# -- entry laws ---------------------------------------------------------------

@dataclass(frozen=True)
class TailLaw:
    """Sign times Weibull modulus: ``P(|R| >= t) = exp(-a t^alpha)`` exactly.

    ``sign_prob`` is the probability of a ``+1`` sign.  With
    ``normalize_variance`` the variable is divided by its standard deviation
    (no centering), so the emitted tail constant becomes :attr:`effective_a`.
    """

    alpha: float
    a: float = 1.0
    sign_prob: float = 0.5
    normalize_variance: bool = True

    def __post_init__(self):
        if not 0 < self.alpha < 2:
            raise ValueError("alpha must lie in (0, 2)")
        if not self.a > 0 or not np.isfinite(self.a):
            raise ValueError("a must be a finite positive number")
        if not 0 <= self.sign_prob <= 1:
            raise ValueError("sign_prob must lie in [0, 1]")

    def modulus_moment(self, k):
        """E|R|^k = a^(-k/alpha) Gamma(1 + k/alpha) for the unscaled modulus."""
        return self.a ** (-k / self.alpha) * gamma_fn(1 + k / self.alpha)

    @property
    def raw_mean(self):
        return (2 * self.sign_prob - 1) * self.modulus_moment(1)

    @property
    def raw_std(self):
        return float(np.sqrt(self.modulus_moment(2) - self.raw_mean ** 2))

    @property
    def scale(self):
        return 1.0 / self.raw_std if self.normalize_variance else 1.0

    @property
    def effective_a(self):
        """Tail constant of the emitted variable: a * (1/scale)^alpha."""
        return self.a * self.scale ** (-self.alpha)

    @property
    def variance(self):
        return (self.scale * self.raw_std) ** 2

    def sample(self, rng, size):
        r = rng.weibull(self.alpha, size) * self.a ** (-1 / self.alpha)
        sign = np.where(rng.random(size) < self.sign_prob, 1.0, -1.0)
        return sign * r * self.scale

    def sample_modulus(self, rng, size):
        """Unscaled modulus draws, for tail checks."""
        return rng.weibull(self.alpha, size) * self.a ** (-1 / self.alpha)

    def to_json(self):
        return {"kind": "tail", "alpha": self.alpha, "a": self.a,
                "sign_prob": self.sign_prob, "normalize_variance": self.normalize_variance}


ENTRY_KINDS = ("gaussian", "rademacher", "zero")


@dataclass(frozen=True, eq=False)
class EnsembleSpec:
    """Recipe for ``X = Y / sqrt(p) + M``.

    ``entry_law`` is ``"gaussian"``, ``"rademacher"`` (bounded +-1 entries),
    ``"zero"`` (a zero-variance stub, useful for deterministic checks) or a
    :class:`TailLaw`.  ``deformation`` defaults
    to the zero matrix.
    """

    n: int
    p: int
    entry_law: object = "gaussian"
    deformation: np.ndarray | None = None
    seed: int = 0
    trials: int = 1

    def __post_init__(self):
        if int(self.n) < 1 or int(self.p) < 1:
            raise ValueError("n and p must be positive")
        if int(self.trials) < 1:
            raise ValueError("trials must be positive")
        _rng.check_seed(self.seed)
        if not (isinstance(self.entry_law, TailLaw) or self.entry_law in ENTRY_KINDS):
            raise ValueError(f"entry_law must be a TailLaw or one of {ENTRY_KINDS}")
        if self.deformation is not None:
            M = np.array(self.deformation, dtype=float)
            if M.shape != (self.n, self.p):
                raise ValueError(f"deformation has shape {M.shape}, expected {(self.n, self.p)}")
            M.flags.writeable = False
            object.__setattr__(self, "deformation", M)

    @property
    def c_n(self):
        return self.n / self.p

    @property
    def M(self):
        return np.zeros((self.n, self.p)) if self.deformation is None else self.deformation

    def replace(self, **changes):
        kw = dict(n=self.n, p=self.p, entry_law=self.entry_law, deformation=self.deformation,
                  seed=self.seed, trials=self.trials)
        kw.update(changes)
        return EnsembleSpec(**kw)

    def to_json(self):
        law = self.entry_law.to_json() if isinstance(self.entry_law, TailLaw) else {"kind": self.entry_law}
        out = {"n": self.n, "p": self.p, "entry_law": law, "seed": self.seed, "trials": self.trials}
        if self.deformation is not None:
            out["deformation"] = self.deformation.tolist()
        return out

    @classmethod
    def from_json(cls, obj, base_dir="."):
        allowed = {"n", "p", "entry_law", "deformation", "seed", "trials"}
        extra = set(obj) - allowed
        if extra:
            raise ValueError(f"unknown ensemble fields: {sorted(extra)}")
        law = obj.get("entry_law", "gaussian")
        if isinstance(law, dict):
            law = dict(law)
            kind = law.pop("kind", None)
            if kind == "tail":
                law = TailLaw(**law)
            elif kind in ENTRY_KINDS and not law:
                law = kind
            else:
                raise ValueError(f"bad entry_law {obj['entry_law']!r}")
        M = obj.get("deformation")
        if isinstance(M, dict):
            if set(M) != {"csv"}:
                raise ValueError("deformation object must be {\"csv\": path}")
            M = np.loadtxt(os.path.join(base_dir, M["csv"]), delimiter=",", ndmin=2)
        return cls(n=int(obj["n"]), p=int(obj["p"]), entry_law=law, deformation=M,
                   seed=int(obj.get("seed", 0)), trials=int(obj.get("trials", 1)))


# -- sampling -----------------------------------------------------------------

def sample_matrix(spec, trial_index=0):
    """The noise matrix Y (n x p) of one trial."""
    if not 0 <= trial_index < spec.trials:
        raise IndexError(f"trial_index {trial_index} outside [0, {spec.trials})")
    shape = (spec.n, spec.p)
    if spec.entry_law == "zero":
        return np.zeros(shape)
    rng = _rng.stream(spec.seed, "entries", trial_index)
    if spec.entry_law == "gaussian":
        return rng.standard_normal(shape)
    if spec.entry_law == "rademacher":
        return np.where(rng.random(shape) < 0.5, 1.0, -1.0)
    return spec.entry_law.sample(rng, shape)


def information_plus_noise(spec, trial_index=0):
    return sample_matrix(spec, trial_index) / np.sqrt(spec.p) + spec.M


def gram_eigenvalues(X, check=False):
    """Ascending eigenvalues of X X^t; |lam| below 1e-10 (relative) set to zero.

    With ``check`` each eigenpair must satisfy
    ``|X X^t v - lam v| <= 1e-8 ||X X^t||``.
    """
    X = np.asarray(X, dtype=float)
    G = X @ X.T
    if check:
        lam, vec = np.linalg.eigh(G)
        norm = max(abs(lam[0]), abs(lam[-1]), 1e-300)
        res = np.linalg.norm(G @ vec - vec * lam, axis=0)
        if np.any(res > 1e-8 * norm):
            raise np.linalg.LinAlgError(f"eigenpair residual {res.max():.3g} exceeds 1e-8 * ||XX^t||")
    else:
        lam = np.linalg.eigvalsh(G)
    floor = CLAMP * max(1.0, lam[-1])
    if lam[0] < -floor:
        raise np.linalg.LinAlgError(f"Gram matrix has eigenvalue {lam[0]:.3g} < 0")
    # roundoff-sized eigenvalues become exact zeros, so atoms at 0 merge
    return np.where(lam < floor, 0.0, lam)


def spectral_sample(spec, trial_index=0, check=True):
    """Empirical spectral measure of X X^t for one trial."""
    lam = gram_eigenvalues(information_plus_noise(spec, trial_index), check=check)
    return Measure.atomic(lam)


def singular_value_dist(A):
    """Uniform measure on the min(n, p) singular values of A."""
    s = np.linalg.svd(np.atleast_2d(np.asarray(A, dtype=float)), compute_uv=False)
    return Measure.atomic(s)


def hermitize(M):
    """(M', mu_{M'}) with M' = [[0, M], [M^t, 0]]."""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    n, p = M.shape
    H = np.zeros((n + p, n + p))
    H[:n, n:] = M
    H[n:, :n] = M.T
    return H, Measure.atomic(np.linalg.eigvalsh(H))


@dataclass
class HermitizationCheck:
    max_gap: float
    zero_mass: float
    zero_mass_bound: float
    holds: bool


def hermitization_check(M, tol=1e-10):
    """Compare squared eigenvalues of M' with twice the spectrum of M M^t.

    For n <= p the squared spectrum of M' is every eigenvalue of M M^t twice
    plus p - n zeros.  For n > p the same holds after adding n - p zeros to
    the squared spectrum of M'.  Also checks mu_{M'}({0}) >= |1-c|/(1+c).
    """
    M = np.atleast_2d(np.asarray(M, dtype=float))
    n, p = M.shape
    H, mu = hermitize(M)
    eig = np.linalg.eigvalsh(H)
    sq = np.sort(eig ** 2)
    gram = np.linalg.eigvalsh(M @ M.T)
    twice = np.repeat(gram, 2)
    if n <= p:
        lhs, rhs = sq, np.sort(np.concatenate((twice, np.zeros(p - n))))
    else:
        lhs, rhs = np.sort(np.concatenate((sq, np.zeros(n - p)))), np.sort(twice)
    scale = max(1.0, float(np.abs(rhs).max(initial=0.0)))
    gap = float(np.abs(lhs - rhs).max(initial=0.0))
    c = n / p
    bound = abs(1 - c) / (1 + c)
    zero_mass = float(np.mean(np.abs(eig) <= 1e-8 * np.sqrt(scale)))
    # the bound |1-c|/(1+c) counts exact zeros forced by the block structure
    holds = gap <= tol * scale and zero_mass >= bound - 1e-12
    return HermitizationCheck(max_gap=gap, zero_mass=zero_mass, zero_mass_bound=bound, holds=bool(holds))


# -- resolvents ---------------------------------------------------------------

@dataclass
class Resolvent:
    """S = (z I - X X^t)^{-1} together with the matrix it came from."""

    z: complex
    matrix: np.ndarray
    source: np.ndarray

    @classmethod
    def of(cls, X, z):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if complex(z).imag == 0:
            raise ValueError("resolvent needs a non-real z")
        n = X.shape[0]
        S = np.linalg.inv(z * np.eye(n) - X @ X.T)
        return cls(z=complex(z), matrix=S, source=X)

    def stieltjes(self):
        return complex(np.trace(self.matrix)) / self.matrix.shape[0]


def resolvent_derivatives(S, A, a, b, j, k):
    """First, second and third derivatives of S_{jk} in the real entry A_{ab}."""
    SA = S @ A
    AS = A.T @ S
    ASA = A.T @ SA
    d1 = SA[j, b] * S[a, k] + S[j, a] * AS[b, k]
    d2 = 2 * (S[j, a] * S[a, k] + SA[j, b] * SA[a, b] * S[a, k] + S[j, a] * ASA[b, b] * S[a, k]
              + S[j, a] * AS[b, a] * AS[b, k] + SA[j, b] * S[a, a] * AS[b, k])
    d3 = 6 * (SA[j, b] * S[a, a] * S[a, k] + S[j, a] * AS[b, a] * S[a, k]
              + S[j, a] * SA[a, b] * S[a, k] + S[j, a] * S[a, a] * AS[b, k]
              + SA[j, b] * SA[a, b] ** 2 * S[a, k] + S[j, a] * AS[b, a] ** 2 * AS[b, k]
              + SA[j, b] * SA[a, b] * S[a, a] * AS[b, k] + SA[j, b] * S[a, a] * AS[b, a] * AS[b, k]
              + S[j, a] * ASA[b, b] * SA[a, b] * S[a, k] + SA[j, b] * S[a, a] * ASA[b, b] * S[a, k]
              + S[j, a] * AS[b, a] * ASA[b, b] * S[a, k] + S[j, a] * ASA[b, b] * S[a, a] * AS[b, k])
    return d1, d2, d3


def _finite_differences(A, z, a, b, j, k, steps):
    def entry(shift):
        B = A.copy()
        B[a, b] += shift
        return Resolvent.of(B, z).matrix[j, k]

    h1, h2, h3 = steps
    f1 = (entry(h1) - entry(-h1)) / (2 * h1)
    f2 = (entry(h2) - 2 * entry(0.0) + entry(-h2)) / h2 ** 2
    f3 = (entry(2 * h3) - 2 * entry(h3) + 2 * entry(-h3) - entry(-2 * h3)) / (2 * h3 ** 3)
    return f1, f2, f3


@dataclass
class ResolventReport:
    resolvent: Resolvent
    identity_error: float
    norms: dict
    derivative_errors: np.ndarray | None = None
    tuples: list = field(default_factory=list)
    failures: list = field(default_factory=list)

    @property
    def ok(self):
        return not self.failures


def resolvent_suite(X, z, check_derivatives=True, n_tuples=20, seed=0,
                    steps=(1e-5, 1e-4, 5e-3), tolerances=(1e-6, 1e-4, 1e-3), identity_tol=1e-10):
    """Build S for X at z and audit its identities, norm bounds and derivatives.

    Relative derivative errors are measured against the analytic value, with
    the largest analytic magnitude over the sampled tuples as a floor for the
    denominator (so near-zero derivatives do not blow up the ratio).
    """
    R = Resolvent.of(X, z)
    S, A = R.matrix, R.source
    n, p = A.shape
    z = R.z
    failures = []

    G = A @ A.T
    target = z * S - np.eye(n)
    identity_error = float(max(np.abs(S @ G - target).max(), np.abs(G @ S - target).max()))
    if identity_error > identity_tol * max(1.0, np.linalg.norm(G, 2) * np.linalg.norm(S, 2)):
        failures.append({"check": "S XX^t = XX^t S = zS - I", "error": identity_error})

    im_y = np.sqrt((abs(z) - z.real) / 2)
    norms = {
        "S": (float(np.linalg.norm(S, 2)), 1 / abs(z.imag)),
        "SA": (float(np.linalg.norm(S @ A, 2)), 1 / im_y),
        "A^tSA": (float(np.linalg.norm(A.T @ S @ A, 2)), 1 + abs(z / z.imag)),
        "S_max_entry": (float(np.abs(S).max()), float(np.linalg.norm(S, 2))),
        "diag_S": (float(np.abs(np.diag(S)).max()), float(np.abs(S).max())),
    }
    for name, (value, bound) in norms.items():
        if value > bound * (1 + 1e-12):
            failures.append({"check": f"norm {name}", "value": value, "bound": bound})

    errors = None
    tuples = []
    if check_derivatives:
        rng = _rng.stream(seed, "resolvent_tuples")
        tuples = [(int(rng.integers(n)), int(rng.integers(p)), int(rng.integers(n)), int(rng.integers(n)))
                  for _ in range(n_tuples)]
        an = np.array([resolvent_derivatives(S, A, *t) for t in tuples])
        fd = np.array([_finite_differences(A, z, *t, steps) for t in tuples])
        floor = np.abs(an).max(axis=0)
        errors = np.abs(an - fd) / np.maximum(np.abs(an), 1e-3 * floor)
        for order in range(3):
            bad = np.flatnonzero(errors[:, order] > tolerances[order])
            for i in bad:
                failures.append({"check": f"derivative order {order + 1}", "tuple": tuples[i],
                                 "analytic": complex(an[i, order]), "finite_difference": complex(fd[i, order]),
                                 "relative_error": float(errors[i, order])})
    return ResolventReport(resolvent=R, identity_error=identity_error, norms=norms,
                           derivative_errors=errors, tuples=tuples, failures=failures)


# -- Monte Carlo transforms ---------------------------------------------------

@dataclass
class MonteCarloTransform:
    """Mean and standard error of (1/n) Tr S over trials, per point z.

    ``stderr`` is NaN when fewer than two trials succeeded.
    """

    z: np.ndarray
    mean: np.ndarray
    stderr: np.ndarray
    trials_ok: int
    trials_failed: int
    per_trial: np.ndarray = field(repr=False, default=None)

    def to_json(self):
        return {
            "points": [{"re_z": float(z.real), "im_z": float(z.imag), "re_mean": float(m.real),
                        "im_mean": float(m.imag), "stderr": None if np.isnan(s) else float(s)}
                       for z, m, s in zip(self.z, self.mean, self.stderr)],
            "trials_ok": self.trials_ok,
            "trials_failed": self.trials_failed,
        }


def _transform_of_spectrum(lam, z):
    return (1.0 / (z[:, None] - lam[None, :])).mean(axis=1)


def _reduce(z, rows, failed):
    if not rows:
        raise RuntimeError("every trial failed")
    g = np.array(rows)
    mean = g.mean(axis=0)
    if len(rows) >= 2:
        var = g.real.var(axis=0, ddof=1) + g.imag.var(axis=0, ddof=1)
        stderr = np.sqrt(var / len(rows))
    else:
        stderr = np.full(z.shape, np.nan)
    return MonteCarloTransform(z=z, mean=mean, stderr=stderr, trials_ok=len(rows),
                               trials_failed=failed, per_trial=g)


def mean_stieltjes_mc(spec, domain=None, z=None):
    """Average of G_{mu_{XX^t}}(z) over ``spec.trials`` independent trials."""
    if z is None:
        z = domain.grid
    z = np.atleast_1d(np.asarray(z, dtype=complex))

    def one(i):
        try:
            lam = gram_eigenvalues(information_plus_noise(spec, i))
        except np.linalg.LinAlgError:
            return None
        return _transform_of_spectrum(lam, z)

    out = _map_trials(one, range(spec.trials))
    rows = [r for r in out if r is not None]
    return _reduce(z, rows, len(out) - len(rows))


def wigner_mean_stieltjes_mc(diagonal, trials, seed=0, z=None, domain=None):
    """Average transform of W / sqrt(n) + diag(diagonal) for a GOE-type W.

    W has N(0, 1) entries off the diagonal and N(0, 2) on it, so the
    spectrum of W / sqrt(n) tends to the semicircle on [-2, 2].
    """
    if z is None:
        z = domain.grid
    z = np.atleast_1d(np.asarray(z, dtype=complex))
    D = np.diag(np.asarray(diagonal, dtype=float))
    n = D.shape[0]

    def one(i):
        rng = _rng.stream(seed, "wigner", i)
        g = rng.standard_normal((n, n))
        W = (g + g.T) / np.sqrt(2)
        try:
            lam = np.linalg.eigvalsh(W / np.sqrt(n) + D)
        except np.linalg.LinAlgError:
            return None
        return _transform_of_spectrum(lam, z)

    out = _map_trials(one, range(int(trials)))
    rows = [r for r in out if r is not None]
    return _reduce(z, rows, len(out) - len(rows))


def trial_records(spec):
    """One JSON-ready record per trial: eigenvalues of X X^t."""
    for i in range(spec.trials):
        try:
            lam = gram_eigenvalues(information_plus_noise(spec, i))
            yield {"trial": i, "eigenvalues": lam.tolist()}
        except np.linalg.LinAlgError as err:
            yield {"trial": i, "error": str(err)}


def atoms_of(values, tol=0.0):
    """Uniform atomic measure on ``values`` (merged within ``tol``)."""
    v = np.asarray(values, dtype=float)
    loc, w = merge_atoms(v, np.full(v.shape, 1.0 / v.size), tol)
    return Measure.atomic(loc, w)
