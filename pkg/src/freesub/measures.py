"""Probability measures on the real line and their Stieltjes transforms.

A :class:`Measure` is one of four kinds:

``atoms``       finite sum of weighted point masses
``semicircle``  density ``sqrt(4 - x^2) / (2 pi)`` on ``[-2, 2]``
``mp``          Marchenko-Pastur law with aspect ratio ``c``
``grid``        tabulated density (trapezoid rule), optionally plus atoms

All measures are immutable.  The Stieltjes transform uses the convention
``G(z) = int dmu(x) / (z - x)`` so that ``Im G(z) < 0`` when ``Im z > 0``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Sequence

import numpy as np
from scipy import integrate

__all__ = [
    "Measure",
    "EvaluationDomain",
    "stieltjes_eval",
    "stieltjes_derivative",
    "density_eval",
    "moment",
    "transform_measure",
    "invert_stieltjes",
    "eps_ladder",
    "domain_contains",
    "merge_atoms",
    "atoms_close",
]

KINDS = ("atoms", "semicircle", "mp", "grid")

# chunk size (number of z values) for the vectorised Cauchy sums
_CHUNK = 2048


def _readonly(a, dtype=float):
    a = np.array(a, dtype=dtype, copy=True)
    a.flags.writeable = False
    return a


def _trapezoid_weights(x):
    """Quadrature weights of the composite trapezoid rule on nodes ``x``."""
    x = np.asarray(x, dtype=float)
    w = np.zeros_like(x)
    if x.size < 2:
        return w
    dx = np.diff(x)
    w[:-1] += dx / 2
    w[1:] += dx / 2
    return w


def merge_atoms(locations, weights, tol=0.0):
    """Sort atoms and merge those whose locations differ by at most ``tol``.

    Merged atoms are placed at the weighted mean of the cluster.
    """
    x = np.asarray(locations, dtype=float).ravel()
    w = np.asarray(weights, dtype=float).ravel()
    if x.size == 0:
        return x, w
    order = np.argsort(x, kind="stable")
    x, w = x[order], w[order]
    # a new cluster starts wherever the gap exceeds tol
    starts = np.concatenate(([True], np.diff(x) > tol))
    labels = np.cumsum(starts) - 1
    first = x[starts]
    wm = np.bincount(labels, weights=w)
    # offsets from the cluster's first point keep identical locations exact
    shift = np.bincount(labels, weights=w * (x - first[labels]))
    with np.errstate(invalid="ignore", divide="ignore"):
        loc = first + np.where(wm > 0, shift / np.where(wm > 0, wm, 1.0), 0.0)
    return loc, wm


def _cauchy_sum(z, locations, weights):
    """sum_k weights[k] / (z - locations[k]), vectorised over ``z``."""
    z = np.asarray(z, dtype=complex)
    flat = z.ravel()
    out = np.empty(flat.shape, dtype=complex)
    for lo in range(0, flat.size, _CHUNK):
        zz = flat[lo:lo + _CHUNK, None]
        out[lo:lo + _CHUNK] = (weights / (zz - locations)).sum(axis=1)
    return out.reshape(z.shape)


def _cauchy_sum_sq(z, locations, weights):
    """sum_k weights[k] / (z - locations[k])^2."""
    z = np.asarray(z, dtype=complex)
    flat = z.ravel()
    out = np.empty(flat.shape, dtype=complex)
    for lo in range(0, flat.size, _CHUNK):
        zz = flat[lo:lo + _CHUNK, None]
        out[lo:lo + _CHUNK] = (weights / (zz - locations) ** 2).sum(axis=1)
    return out.reshape(z.shape)


@dataclass(frozen=True, eq=False)
class Measure:
    """Immutable probability measure on the real line.

    Use the named constructors (:meth:`atomic`, :meth:`dirac`,
    :meth:`semicircle`, :meth:`marchenko_pastur`, :meth:`density_grid`)
    rather than the raw dataclass initialiser.
    """

    kind: str
    locations: np.ndarray = field(default_factory=lambda: _readonly([]))
    weights: np.ndarray = field(default_factory=lambda: _readonly([]))
    c: float | None = None
    x: np.ndarray = field(default_factory=lambda: _readonly([]))
    f: np.ndarray = field(default_factory=lambda: _readonly([]))

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown measure kind {self.kind!r}; expected one of {KINDS}")
        if self.kind == "atoms":
            if self.locations.size == 0:
                raise ValueError("atomic measure needs at least one atom")
            if np.any(self.weights <= 0) or np.any(self.weights > 1 + 1e-12):
                raise ValueError("atom weights must lie in (0, 1]")
            total = self.weights.sum()
            if abs(total - 1.0) > 1e-12:
                raise ValueError(f"atom weights sum to {total!r}, not 1")
        elif self.kind == "mp":
            if self.c is None or not self.c > 0:
                raise ValueError("Marchenko-Pastur ratio c must be positive")
        elif self.kind == "grid":
            if self.x.size < 2 or np.any(np.diff(self.x) <= 0):
                raise ValueError("grid nodes must be strictly increasing (>= 2 nodes)")
            if np.any(self.f < 0):
                raise ValueError("grid density must be nonnegative")
            if self.weights.size and np.any(self.weights < 0):
                raise ValueError("atom weights must be nonnegative")
            total = float(_trapezoid_weights(self.x) @ self.f) + self.weights.sum()
            if abs(total - 1.0) > 1e-8:
                raise ValueError(f"grid measure has total mass {total!r}, not 1")

    # -- constructors -----------------------------------------------------

    @classmethod
    def atomic(cls, locations, weights=None, merge_tol=0.0):
        x = np.atleast_1d(np.asarray(locations, dtype=float))
        if weights is None:
            w = np.full(x.shape, 1.0 / x.size)
        else:
            w = np.atleast_1d(np.asarray(weights, dtype=float))
            if w.shape != x.shape:
                raise ValueError("locations and weights must have the same length")
        keep = w > 0
        if np.any(w < 0):
            raise ValueError("atom weights must be nonnegative")
        x, w = merge_atoms(x[keep], w[keep], merge_tol)
        return cls("atoms", locations=_readonly(x), weights=_readonly(w))

    @classmethod
    def dirac(cls, x0=0.0):
        return cls.atomic([x0])

    @classmethod
    def semicircle(cls):
        return cls("semicircle")

    @classmethod
    def marchenko_pastur(cls, c):
        return cls("mp", c=float(c))

    @classmethod
    def density_grid(cls, x, f, atoms=None, normalize=False):
        """Tabulated density on nodes ``x`` plus optional ``(location, weight)`` atoms.

        With ``normalize=True`` the density is rescaled so that the total mass
        (trapezoid integral plus atoms) is exactly one.
        """
        x = np.asarray(x, dtype=float)
        f = np.asarray(f, dtype=float)
        if x.shape != f.shape:
            raise ValueError("grid nodes and density values must have the same length")
        if atoms is None or len(atoms) == 0:
            loc, wt = np.array([]), np.array([])
        else:
            atoms = np.asarray(atoms, dtype=float).reshape(-1, 2)
            loc, wt = merge_atoms(atoms[:, 0], atoms[:, 1])
        if normalize:
            cont = float(_trapezoid_weights(x) @ f)
            if cont <= 0:
                raise ValueError("grid density has no mass to normalise")
            f = f * (1.0 - wt.sum()) / cont
        return cls("grid", locations=_readonly(loc), weights=_readonly(wt),
                   x=_readonly(x), f=_readonly(f))

    # -- structure --------------------------------------------------------

    @property
    def edges(self):
        """(a_c, b_c) for Marchenko-Pastur."""
        if self.kind != "mp":
            raise AttributeError("edges are defined for Marchenko-Pastur only")
        r = np.sqrt(self.c)
        return (1 - r) ** 2, (1 + r) ** 2

    def atom_part(self):
        """Locations and weights of the discrete part."""
        if self.kind == "mp":
            w0 = max(1.0 - 1.0 / self.c, 0.0)
            if w0 > 0:
                return np.array([0.0]), np.array([w0])
            return np.array([]), np.array([])
        if self.kind == "semicircle":
            return np.array([]), np.array([])
        return np.asarray(self.locations), np.asarray(self.weights)

    def mass_at(self, x0=0.0, tol=0.0):
        loc, w = self.atom_part()
        return float(w[np.abs(loc - x0) <= tol].sum())

    def support_bounds(self):
        if self.kind == "semicircle":
            return -2.0, 2.0
        if self.kind == "mp":
            a, b = self.edges
            return (0.0 if self.c > 1 else a), b
        loc, _ = self.atom_part()
        pts = [loc] if loc.size else []
        if self.kind == "grid":
            nz = self.x[self.f > 0]
            if nz.size:
                pts.append(nz)
        allpts = np.concatenate(pts)
        return float(allpts.min()), float(allpts.max())

    def is_symmetric(self, tol=1e-12):
        """Atom-exact mirror test for atoms; sup-norm mirror test for grids."""
        if self.kind == "semicircle":
            return True
        if self.kind == "mp":
            return False
        loc, w = self.atom_part()
        if loc.size:
            mloc, mw = merge_atoms(-loc, w)
            if mloc.size != loc.size:
                return False
            if np.max(np.abs(mloc - loc)) > tol or np.max(np.abs(mw - w)) > tol:
                return False
        if self.kind == "grid":
            mirrored = np.interp(-self.x, self.x, self.f, left=0.0, right=0.0)
            return bool(np.max(np.abs(mirrored - self.f)) <= max(tol, 1e-8))
        return True

    # convenience wrappers
    def stieltjes(self, z):
        return stieltjes_eval(self, z)

    def density(self, x):
        return density_eval(self, x)

    def moment(self, p):
        return moment(self, p)

    def to_json(self):
        if self.kind == "atoms":
            return {"kind": "atoms", "atoms": [[float(a), float(b)] for a, b in zip(self.locations, self.weights)]}
        if self.kind == "semicircle":
            return {"kind": "semicircle"}
        if self.kind == "mp":
            return {"kind": "mp", "c": self.c}
        out = {"kind": "grid", "grid": [[float(a), float(b)] for a, b in zip(self.x, self.f)]}
        if self.locations.size:
            out["atoms"] = [[float(a), float(b)] for a, b in zip(self.locations, self.weights)]
        return out

    @classmethod
    def from_json(cls, obj):
        allowed = {"kind", "atoms", "c", "grid", "normalize"}
        extra = set(obj) - allowed
        if extra:
            raise ValueError(f"unknown measure fields: {sorted(extra)}")
        kind = obj.get("kind")
        if kind == "atoms":
            atoms = np.asarray(obj["atoms"], dtype=float).reshape(-1, 2)
            return cls.atomic(atoms[:, 0], atoms[:, 1])
        if kind == "semicircle":
            return cls.semicircle()
        if kind == "mp":
            return cls.marchenko_pastur(obj["c"])
        if kind == "grid":
            grid = np.asarray(obj["grid"], dtype=float).reshape(-1, 2)
            return cls.density_grid(grid[:, 0], grid[:, 1], atoms=obj.get("atoms"),
                                    normalize=bool(obj.get("normalize", False)))
        raise ValueError(f"unknown measure kind {kind!r}")

    def __repr__(self):
        if self.kind == "atoms":
            return f"Measure(atoms, n={self.locations.size})"
        if self.kind == "mp":
            return f"Measure(mp, c={self.c})"
        if self.kind == "grid":
            return f"Measure(grid, nodes={self.x.size}, atoms={self.locations.size})"
        return "Measure(semicircle)"


# -- Stieltjes transform ------------------------------------------------------

def _as_nonreal(z):
    z = np.asarray(z, dtype=complex)
    if np.any(z.imag == 0):
        raise ValueError("Stieltjes transform is only defined off the real axis")
    return z


def _sqrt_product(z, lo, hi):
    # analytic on C \ [lo, hi], ~ z at infinity
    return np.sqrt(z - lo) * np.sqrt(z - hi)


def _closed_form(measure, zu):
    """G and the square root term on the upper half plane."""
    if measure.kind == "semicircle":
        r = _sqrt_product(zu, -2.0, 2.0)
        return 2.0 / (zu + r), r
    a, b = measure.edges
    r = _sqrt_product(zu, a, b)
    return 2.0 / (zu + measure.c - 1.0 + r), r


def _prepare(z, allow_real):
    if allow_real:
        z = np.asarray(z, dtype=complex)
        # real points take the boundary value from the upper half plane
        lower = np.signbit(z.imag) & (z.imag != 0)
        return z, lower
    z = _as_nonreal(z)
    return z, z.imag < 0


def stieltjes_eval(measure, z, allow_real=False):
    """G_mu(z) = int dmu(x) / (z - x) for non-real ``z`` (scalar or array).

    With ``allow_real=True`` real points are accepted and give the boundary
    value G(x + i0); atomic parts blow up at their own locations.
    """
    z, lower = _prepare(z, allow_real)
    if measure.kind in ("semicircle", "mp"):
        zu = np.where(lower, np.conj(z), z)
        g, _ = _closed_form(measure, zu)
        if np.any(g.imag[zu.imag > 0] >= 0):
            raise ArithmeticError("closed-form branch violates Im G * Im z < 0")
        g = np.where(lower, np.conj(g), g)
    elif measure.kind == "atoms":
        g = _cauchy_sum(z, measure.locations, measure.weights)
    else:
        w = _trapezoid_weights(measure.x) * measure.f
        g = _cauchy_sum(z, measure.x, w)
        if measure.locations.size:
            g = g + _cauchy_sum(z, measure.locations, measure.weights)
    return g[()] if g.ndim == 0 else g


def stieltjes_derivative(measure, z, allow_real=False):
    """G'_mu(z) = -int dmu(x) / (z - x)^2."""
    z, lower = _prepare(z, allow_real)
    if measure.kind in ("semicircle", "mp"):
        zu = np.where(lower, np.conj(z), z)
        g, r = _closed_form(measure, zu)
        if measure.kind == "semicircle":
            d = -g / r
        else:
            d = (measure.c * g * g - g) / r
        d = np.where(lower, np.conj(d), d)
    elif measure.kind == "atoms":
        d = -_cauchy_sum_sq(z, measure.locations, measure.weights)
    else:
        w = _trapezoid_weights(measure.x) * measure.f
        d = -_cauchy_sum_sq(z, measure.x, w)
        if measure.locations.size:
            d = d - _cauchy_sum_sq(z, measure.locations, measure.weights)
    return d[()] if d.ndim == 0 else d


# -- densities and moments ------------------------------------------------------

def density_eval(measure, x):
    """Lebesgue density at ``x`` (atoms excluded); zero off the support."""
    xa = np.asarray(x, dtype=float)
    if measure.kind == "atoms":
        raise ValueError("an atomic measure has no Lebesgue density")
    if measure.kind == "semicircle":
        out = np.where(np.abs(xa) <= 2, np.sqrt(np.clip(4 - xa * xa, 0, None)) / (2 * np.pi), 0.0)
    elif measure.kind == "mp":
        a, b = measure.edges
        inside = (xa >= a) & (xa <= b)
        with np.errstate(divide="ignore", invalid="ignore"):
            val = np.sqrt(np.clip((b - xa) * (xa - a), 0, None)) / (2 * np.pi * measure.c * xa)
        val = np.where(inside & (xa == 0), np.inf, val)
        out = np.where(inside, val, 0.0)
    else:
        out = np.interp(xa, measure.x, measure.f, left=0.0, right=0.0)
    return out[()] if np.ndim(out) == 0 else out


def _semicircle_integral(g):
    # x = 2 cos(theta) removes the square-root endpoints
    val, _ = integrate.quad(lambda th: g(2 * np.cos(th)) * np.sin(th) ** 2,
                            0.0, np.pi, limit=400, epsabs=1e-14, epsrel=1e-12)
    return 2.0 / np.pi * val


def _mp_integral(g, c):
    """Integral of ``g`` against the absolutely continuous part of MP(c)."""
    a, b = Measure.marchenko_pastur(c).edges
    half = (b - a) / 2

    def integrand(th):
        x = a + half * (1 - np.cos(th))
        if x <= 0:
            return 0.0
        return g(x) * half * half * np.sin(th) ** 2 / (2 * np.pi * c * x)

    val, _ = integrate.quad(integrand, 0.0, np.pi, limit=400, epsabs=1e-14, epsrel=1e-12)
    return val


def moment(measure, p):
    """Absolute moment m_p(mu) = int |x|^p dmu(x), p > 0."""
    if not p > 0:
        raise ValueError("moment order p must be positive")
    loc, w = measure.atom_part()
    discrete = float(w @ np.abs(loc) ** p) if loc.size else 0.0
    if measure.kind == "atoms":
        return discrete
    if measure.kind == "semicircle":
        return _semicircle_integral(lambda x: abs(x) ** p)
    if measure.kind == "mp":
        return discrete + _mp_integral(lambda x: abs(x) ** p, measure.c)
    return discrete + float(_trapezoid_weights(measure.x) @ (np.abs(measure.x) ** p * measure.f))


# -- push-forwards ------------------------------------------------------------

def transform_measure(measure, op, c=None):
    """Push ``measure`` forward by ``op``.

    ``op`` is ``"square"`` (x -> x^2), ``"symmetrized_sqrt"`` (law of +-sqrt(X)
    with equal signs) or ``"atom_mix"``, the map
    ``mu -> (1 + 1/c)/2 * mu^2 + (1 - 1/c)/2 * delta_0`` for symmetric ``mu``.

    ``square`` and ``atom_mix`` need an atomic measure; ``symmetrized_sqrt``
    also accepts a density grid on [0, inf).
    """
    if isinstance(op, (tuple, list)):
        op, c = op
    if op == "square":
        if measure.kind != "atoms":
            raise ValueError("square is implemented for atomic measures only")
        return Measure.atomic(measure.locations ** 2, measure.weights)
    if op == "symmetrized_sqrt":
        return _symmetrized_sqrt(measure)
    if op == "atom_mix":
        if c is None or not c > 0:
            raise ValueError("atom_mix needs a positive ratio c")
        if measure.kind != "atoms":
            raise ValueError("atom_mix is implemented for atomic measures only")
        if not measure.is_symmetric():
            raise ValueError("atom_mix requires a symmetric input measure")
        sq = transform_measure(measure, "square")
        coef_sq = 0.5 * (1 + 1 / c)
        coef_0 = 0.5 * (1 - 1 / c)
        mass0 = coef_0 + coef_sq * sq.mass_at(0.0)
        if mass0 < -1e-12:
            need = (1 - c) / (1 + c)
            raise ValueError(
                f"atom_mix(c={c}) gives mass {mass0:.3g} at 0; the input needs "
                f"mu({{0}}) >= {need:.6g} but has {measure.mass_at(0.0):.6g}")
        loc = np.concatenate((sq.locations, [0.0]))
        w = np.concatenate((coef_sq * sq.weights, [coef_0]))
        # fold the (possibly negative) delta_0 coefficient into existing mass at 0
        loc, w = merge_atoms(loc, w)
        w = np.where(np.abs(w) < 1e-15, 0.0, w)
        return Measure.atomic(loc, w / w.sum())
    raise ValueError(f"unknown transform {op!r}")


def _symmetrized_sqrt(measure):
    loc, w = measure.atom_part()
    if loc.size and np.any((loc < 0) & (w > 0)):
        raise ValueError("symmetrized_sqrt requires a measure supported on [0, inf)")
    if measure.kind == "atoms":
        r = np.sqrt(loc)
        return Measure.atomic(np.concatenate((r, -r)), np.concatenate((w, w)) / 2)
    if measure.kind == "grid":
        if np.any((measure.x < 0) & (measure.f > 0)):
            raise ValueError("symmetrized_sqrt requires a measure supported on [0, inf)")
        half =np.sqrt(np.clip(measure.x, 0, None))
        half = half[np.concatenate(([True], np.diff(half) > 0))]
        s = np.concatenate((-half[::-1], half))
        s = np.unique(s)
        # density of the symmetrised square root: |s| f(s^2)
        g = np.abs(s) * np.interp(s * s, measure.x, measure.f, left=0.0, right=0.0)
        r = np.sqrt(loc)
        atoms = np.column_stack((np.concatenate((r, -r)), np.concatenate((w, w)) / 2)) if loc.size else None
        return Measure.density_grid(s, g, atoms=atoms, normalize=True)
    raise ValueError("symmetrized_sqrt needs an atomic or grid measure")


def atoms_close(mu, nu, tol=1e-10):
    """Atom-for-atom comparison of two atomic measures after merging within ``tol``."""
    a_loc, a_w = merge_atoms(mu.locations, mu.weights, tol)
    b_loc, b_w = merge_atoms(nu.locations, nu.weights, tol)
    if a_loc.size != b_loc.size:
        return False
    return bool(np.all(np.abs(a_loc - b_loc) <= tol) and np.all(np.abs(a_w - b_w) <= tol))


# -- Stieltjes inversion --------------------------------------------------------

def _neville_at_zero(t, values):
    """Polynomial extrapolation to t = 0 of samples values[k] taken at t[k]."""
    p = [np.asarray(v, dtype=float).copy() for v in values]
    m = len(t)
    for level in range(1, m):
        for i in range(m - level):
            j = i + level
            p[i] = (t[j] * p[i] - t[i] * p[i + 1]) / (t[j] - t[i])
    return p[0]


def invert_stieltjes(transform: Callable, support_window: Sequence[float],
                     eps_ladder: Sequence[float], n_points: int = 4096,
                     atom_threshold: float = 1e-6):
    """Recover a density grid from a Stieltjes transform (Stieltjes-Perron).

    The smoothed densities ``-Im transform(x + i eps) / pi`` are computed for
    each ``eps`` in the ladder and extrapolated to ``eps = 0``.  A point mass at
    the origin is estimated from ``-eps * Im transform(i eps)`` at three heights
    far below the ladder (extrapolated in ``sqrt(eps)``) and kept when it exceeds ``atom_threshold``.  The result is
    corrected so that density plus atom has total mass one (see
    :func:`_restore_mass`).  :func:`eps_ladder` builds a suitable ladder.
    """
    eps = np.asarray(eps_ladder, dtype=float)
    if eps.ndim != 1 or eps.size == 0 or np.any(eps <= 0) or np.any(np.diff(eps) >= 0):
        raise ValueError("eps_ladder must be a strictly decreasing list of positive numbers")
    lo, hi = map(float, support_window)
    if not hi > lo:
        raise ValueError("support_window must be an interval (lo, hi) with lo < hi")

    big = 1e6j
    tail = complex(np.asarray(transform(np.array([big])))[0])
    if not np.isfinite(tail) or abs(big * tail - 1.0) > 1e-3:
        raise ValueError("transform does not decay like 1/z at infinity; not a probability Stieltjes transform")

    x = np.linspace(lo, hi, n_points)

    atom = 0.0
    if lo <= 0.0 <= hi:
        # probe far below the ladder: -e Im T(ie) = atom + O(sqrt(e)) even at a 1/sqrt(x) pole
        probe = eps[-1] * np.array([1e-1, 1e-2, 1e-3])
        m0 = -probe * np.asarray(transform(1j * probe)).imag
        atom = float(_neville_at_zero(np.sqrt(probe), list(m0)))
        if atom < atom_threshold:
            atom = 0.0
        atom = min(atom, 1.0)

    layers = []
    for e in eps:
        vals = -np.asarray(transform(x + 1j * e)).imag / np.pi
        if atom:
            vals = vals - atom * e / (np.pi * (x * x + e * e))
        layers.append(vals)
    f = np.clip(_neville_at_zero(eps, layers), 0.0, None)
    if atom >= 1.0 - 1e-12:
        return Measure.atomic([0.0])
    f = _restore_mass(x, f, 1.0 - atom)
    atoms = [[0.0, atom]] if atom else None
    return Measure.density_grid(x, f, atoms=atoms)


def _restore_mass(x, f, target, local_share=0.05):
    """Make the trapezoid mass of ``f`` equal ``target``.

    A small deficit comes from an integrable singularity the grid cannot
    resolve (for instance 1/sqrt(x) at a hard edge), so it is booked on the
    node where the estimate peaks.  A large mismatch means the window misses
    part of the support; then the whole density is rescaled.
    """
    w = _trapezoid_weights(x)
    mass = float(w @ f)
    if mass <= 0:
        raise ValueError("recovered density has no mass inside the support window")
    deficit = target - mass
    k = int(np.argmax(f))
    if abs(deficit) <= local_share * target and f[k] + deficit / w[k] >= 0:
        f = f.copy()
        f[k] += deficit / w[k]
        return f
    warnings.warn(f"support window holds mass {mass:.4g} of {target:.4g}; rescaling the density",
                  RuntimeWarning, stacklevel=3)
    return f * (target / mass)


def eps_ladder(eps_min=1e-3, rungs=5, ratio=1.25):
    """Decreasing geometric ladder ending at ``eps_min``.

    Rungs close together keep the polynomial extrapolation well conditioned
    near square-root edges, where the smoothed density is not analytic in eps.
    """
    return eps_min * ratio ** np.arange(rungs - 1, -1, -1)


# -- evaluation domain -----------------------------------------------------------

@dataclass(frozen=True)
class EvaluationDomain:
    """Finite grid on the truncated cone {Im z > s, |Re z / Im z| < t}.

    Imaginary parts follow a geometric ladder from ``1.01 s`` to ``im_max``;
    at each level ``per_level`` ratios ``Re z / Im z`` are spread uniformly over
    the open interval (-t, t).  ``im_max`` defaults to ``max(4 / margin, 2 s)``:
    beyond it any two transforms differ by at most ``2 / im_max``.
    """

    s: float = 10.0
    t: float = 0.5
    im_max: float | None = None
    levels: int = 24
    per_level: int = 17
    margin: float = 1e-2

    def __post_init__(self):
        if not (self.s > 0 and self.t > 0):
            raise ValueError("domain parameters s and t must be positive")
        if self.im_max is None:
            object.__setattr__(self, "im_max", max(4.0 / self.margin, 2.0 * self.s))
        if not self.im_max > self.s * 1.01:
            raise ValueError("im_max must exceed 1.01 * s")
        if self.levels < 2 or self.per_level < 1:
            raise ValueError("need at least 2 levels and 1 point per level")

    @cached_property
    def grid(self):
        ims = np.geomspace(self.s * 1.01, self.im_max, self.levels)
        k = np.arange(1, self.per_level + 1)
        ratios = -self.t + 2 * self.t * k / (self.per_level + 1)
        z = (ratios[None, :] * ims[:, None] + 1j * ims[:, None]).ravel()
        z.flags.writeable = False
        return z

    @property
    def tail_bound(self):
        """Bound on |G_mu - G_nu| over the part of the cone above ``im_max``."""
        return 2.0 / self.im_max

    def contains(self, z):
        return domain_contains(self, z)

    def to_json(self):
        return {"s": self.s, "t": self.t, "im_max": self.im_max,
                "levels": self.levels, "per_level": self.per_level}

    @classmethod
    def from_json(cls, obj):
        allowed = {"s", "t", "im_max", "levels", "per_level", "margin"}
        extra = set(obj) - allowed
        if extra:
            raise ValueError(f"unknown domain fields: {sorted(extra)}")
        return cls(**obj)


def domain_contains(domain, z):
    """True where Im z > s and |Re z / Im z| < t."""
    z = np.asarray(z, dtype=complex)
    im = z.imag
    with np.errstate(divide="ignore", invalid="ignore"):
        ok = (im > domain.s) & (np.abs(z.real / np.where(im > 0, im, 1.0)) < domain.t)
    return bool(ok) if ok.ndim == 0 else ok
