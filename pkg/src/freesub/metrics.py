"""Distances between probability measures and matrix inequality audits.

``d_{s,t}`` is the largest gap between two Stieltjes transforms over the
evaluation grid of an :class:`EvaluationDomain`; the part of the cone above
``im_max`` is covered by the analytic bound ``2 / im_max``.  Kolmogorov-Smirnov
and Wasserstein distances are exact for atomic measures.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .measures import EvaluationDomain, Measure, moment, stieltjes_eval

__all__ = [
    "DstResult",
    "DistanceReport",
    "AuditRecord",
    "dst_distance",
    "transform_on_grid",
    "ks_distance",
    "w1_distance",
    "w2_distance",
    "classical_distances",
    "distance_report",
    "inequality_audit",
    "trace_norm_audit",
    "INEQUALITY_KINDS",
]


@dataclass(frozen=True)
class DstResult:
    value: float
    argmax_z: complex
    argmax_index: int
    tail_bound: float


def transform_on_grid(obj, grid):
    """Stieltjes transform values of ``obj`` on ``grid``.

    ``obj`` may be a :class:`Measure`, anything with ``z`` and ``values``
    (a solver result) or ``z`` and ``mean`` (a Monte Carlo estimate) defined on
    the same grid, a callable, or an array of values.
    """
    if isinstance(obj, Measure):
        return stieltjes_eval(obj, grid)
    for attr in ("values", "mean"):
        if hasattr(obj, "z") and hasattr(obj, attr):
            if obj.z.shape != grid.shape or not np.allclose(obj.z, grid, rtol=0, atol=1e-12):
                raise ValueError("transform was computed on a different grid")
            return np.asarray(getattr(obj, attr))
    if callable(obj):
        return np.asarray(obj(grid))
    vals = np.asarray(obj, dtype=complex)
    if vals.shape != grid.shape:
        raise ValueError(f"expected {grid.shape} transform values, got {vals.shape}")
    return vals


def dst_distance(mu, nu, domain=None, details=False):
    """max over the grid of |G_mu(z) - G_nu(z)|.

    Ties go to the lowest grid index.  With ``details`` a :class:`DstResult`
    carrying the maximiser and the tail bound is returned.
    """
    domain = domain or EvaluationDomain()
    grid = domain.grid
    gap = np.abs(transform_on_grid(mu, grid) - transform_on_grid(nu, grid))
    i = int(np.argmax(gap))
    value = float(gap[i])
    if details:
        return DstResult(value=value, argmax_z=complex(grid[i]), argmax_index=i, tail_bound=domain.tail_bound)
    return value


# -- classical distances ------------------------------------------------------

def _atomic(m):
    if not isinstance(m, Measure) or m.kind != "atoms":
        raise ValueError("classical distances need atomic measures")
    return np.asarray(m.locations), np.asarray(m.weights)


def _snap(x1, x2, atol):
    """Replace locations closer than ``atol`` by a common representative."""
    if atol <= 0:
        return x1, x2
    allx = np.concatenate((x1, x2))
    order = np.argsort(allx, kind="stable")
    s = allx[order]
    starts = np.concatenate(([True], np.diff(s) > atol))
    rep = s[starts][np.cumsum(starts) - 1]
    out = np.empty_like(allx)
    out[order] = rep
    return out[:x1.size], out[x1.size:]


def _cdfs(mu, nu, atol=0.0):
    x1, w1 = _atomic(mu)
    x2, w2 = _atomic(nu)
    x1, x2 = _snap(x1, x2, atol)
    pts = np.union1d(x1, x2)
    return pts, _cum(x1, w1, pts), _cum(x2, w2, pts)


def _cum(x, w, pts):
    order = np.argsort(x)
    cw = np.concatenate(([0.0], np.cumsum(w[order])))
    return cw[np.searchsorted(x[order], pts, side="right")]


def ks_distance(mu, nu, atol=0.0):
    """sup |F_mu - F_nu| with right-continuous CDFs.

    Both CDFs are step functions that jump only at atoms, so the gap at and
    just below each atom covers the supremum.  ``atol`` merges locations of
    the two measures that agree up to roundoff.
    """
    pts, F, G = _cdfs(mu, nu, atol)
    below = np.abs(np.concatenate(([0.0], F[:-1] - G[:-1])))
    return float(max(np.abs(F - G).max(), below.max()))


def w1_distance(mu, nu):
    """Integral of |F_mu - F_nu|."""
    pts, F, G = _cdfs(mu, nu)
    return float(np.sum(np.abs(F - G)[:-1] * np.diff(pts)))


_CUT_TOL = 1e-12


def _quantile_pieces(x, w, u_mid):
    order = np.argsort(x)
    xs, cw = x[order], np.cumsum(w[order])
    idx = np.minimum(np.searchsorted(cw, u_mid, side="left"), xs.size - 1)
    return xs[idx]


def w2_distance(mu, nu):
    """L2 Wasserstein distance from the monotone (quantile) coupling.

    The unit interval is cut at every cumulative weight of either measure;
    on each piece both quantile functions are constant.
    """
    x1, w1 = _atomic(mu)
    x2, w2 = _atomic(nu)
    cuts = np.union1d(np.cumsum(w1[np.argsort(x1)]), np.cumsum(w2[np.argsort(x2)]))
    cuts = np.unique(np.clip(np.concatenate(([0.0], cuts, [1.0])), 0.0, 1.0))
    # cumulative sums of the two measures disagree in the last bits; such
    # slivers would couple far-apart atoms
    keep = np.concatenate(([True], np.diff(cuts) > _CUT_TOL))
    cuts = cuts[keep]
    cuts[-1] = 1.0
    du = np.diff(cuts)
    mid = (cuts[:-1] + cuts[1:]) / 2
    q1 = _quantile_pieces(x1, w1, mid)
    q2 = _quantile_pieces(x2, w2, mid)
    return float(np.sqrt(np.sum(du * (q1 - q2) ** 2)))


def classical_distances(mu, nu):
    """(KS, W1, W2) between two atomic measures."""
    return ks_distance(mu, nu), w1_distance(mu, nu), w2_distance(mu, nu)


@dataclass(frozen=True)
class DistanceReport:
    dst: float
    ks: float
    w1: float
    w2: float
    grid_used: EvaluationDomain
    argmax_z: complex
    tail_bound: float

    def to_json(self):
        return {"dst": self.dst, "ks": self.ks, "w1": self.w1, "w2": self.w2,
                "domain": self.grid_used.to_json(), "tail_bound": self.tail_bound,
                "argmax_z": [self.argmax_z.real, self.argmax_z.imag]}


def distance_report(mu, nu, domain=None):
    """All four distances; the classical ones are NaN unless both are atomic."""
    domain = domain or EvaluationDomain()
    d = dst_distance(mu, nu, domain, details=True)
    if mu.kind == "atoms" and nu.kind == "atoms":
        ks, w1, w2 = classical_distances(mu, nu)
    else:
        ks = w1 = w2 = float("nan")
    return DistanceReport(dst=d.value, ks=ks, w1=w1, w2=w2, grid_used=domain,
                          argmax_z=d.argmax_z, tail_bound=d.tail_bound)


# -- inequality audits ----------------------------------------------------------

INEQUALITY_KINDS = ("rank_sym", "rank_cov", "hw_sym", "hw_cov", "hw_cov_w1", "schatten", "comparison")


@dataclass(frozen=True)
class AuditRecord:
    kind: str
    lhs: float
    rhs: float
    holds: bool
    slack: float


def _record(kind, lhs, rhs, rtol=1e-9):
    lhs, rhs = float(lhs), float(rhs)
    holds = lhs <= rhs + rtol * max(1.0, abs(rhs))
    return AuditRecord(kind=kind, lhs=lhs, rhs=rhs, holds=bool(holds), slack=rhs - lhs)


def _symmetric(A, name):
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1] or not np.allclose(A, A.T, rtol=0, atol=1e-12 * max(1.0, np.abs(A).max())):
        raise ValueError(f"{name} must be a symmetric square matrix")
    return (A + A.T) / 2


def _spectrum(A):
    return Measure.atomic(np.linalg.eigvalsh(A))


def _rank(D):
    return np.linalg.matrix_rank(D) if D.size else 0


def inequality_audit(A, B=None, kind="hw_sym", p=None, domain=None):
    """Evaluate both sides of one spectral inequality.

    ``rank_sym``   d_KS(mu_A, mu_B) <= rank(A - B) / n          (A, B symmetric)
    ``rank_cov``   d_KS(mu_AA^t, mu_BB^t) <= rank(A - B) / n     (A, B n x p)
    ``hw_sym``     W2^2(mu_A, mu_B) <= Tr((A - B)^2) / n
    ``hw_cov``     W2^4(mu_AA^t, mu_BB^t) <= 2 Tr(AA^t + BB^t) Tr((A-B)(A-B)^t) / n^2
    ``hw_cov_w1``  same right-hand side with W1^2 on the left
    ``schatten``   m_p(mu_A) <= (1/n) sum_k (sum_j A_kj^2)^(p/2),  p in (0, 2]
    ``comparison`` d_st(mu_A, mu_B) <= min(d_KS, W1) for symmetric A, B
    """
    if kind == "schatten":
        if p is None or not 0 < p <= 2:
            raise ValueError("schatten needs p in (0, 2]")
        A = _symmetric(A, "A")
        lhs = moment(_spectrum(A), p)
        rhs = np.mean(np.sum(A * A, axis=1) ** (p / 2))
        return _record(f"schatten({p})", lhs, rhs)

    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    if A.shape != B.shape:
        raise ValueError(f"shape mismatch: {A.shape} vs {B.shape}")
    n = A.shape[0]
    if kind in ("rank_sym", "hw_sym", "comparison"):
        A, B = _symmetric(A, "A"), _symmetric(B, "B")
        mu, nu = _spectrum(A), _spectrum(B)
    elif kind in ("rank_cov", "hw_cov", "hw_cov_w1"):
        mu, nu = _spectrum(A @ A.T), _spectrum(B @ B.T)
    else:
        raise ValueError(f"unknown inequality kind {kind!r}")
    D = A - B
    scale = max(1.0, float(np.abs(mu.locations).max()), float(np.abs(nu.locations).max()))

    if kind in ("rank_sym", "rank_cov"):
        lhs = ks_distance(mu, nu, atol=1e-9 * scale)
        return _record(kind, lhs, _rank(D) / n)
    if kind == "hw_sym":
        return _record(kind, w2_distance(mu, nu) ** 2, np.trace(D @ D) / n)
    if kind in ("hw_cov", "hw_cov_w1"):
        rhs = 2.0 / n ** 2 * np.trace(A @ A.T + B @ B.T) * np.trace(D @ D.T)
        lhs = w2_distance(mu, nu) ** 4 if kind == "hw_cov" else w1_distance(mu, nu) ** 2
        return _record(kind, lhs, rhs)
    lhs = dst_distance(mu, nu, domain)
    return _record(kind, lhs, min(ks_distance(mu, nu), w1_distance(mu, nu)))


def trace_norm_audit(A, B, C, D):
    """Check the nine trace and norm inequalities for one matrix tuple.

    Shapes: A, B are n x p, C is p x n, D is n x n.  ``||.||`` is the operator
    norm and ``||.||_inf`` the largest entry modulus.
    """
    A, B, C, D = (np.asarray(m) for m in (A, B, C, D))
    n, p = A.shape
    if B.shape != (n, p) or C.shape != (p, n) or D.shape != (n, n):
        raise ValueError("expected A, B: n x p, C: p x n, D: n x n")

    def op(M):
        return float(np.linalg.norm(M, 2))

    def inf(M):
        return float(np.abs(M).max())

    def fro(M):
        return float(np.sqrt(np.real(np.trace(M @ M.conj().T))))

    tr = abs(np.trace(A @ C))
    H = A * B
    dg = np.diag(np.diag(D))
    return [
        _record("(i)", tr, fro(A) * fro(C)),
        _record("(ii)", tr, n * op(A) * op(C)),
        _record("(iii)", tr, np.sqrt(n) * op(A) * fro(C)),
        _record("(iv) left", op(A), fro(A)),
        _record("(iv) right", fro(A), np.sqrt(n) * op(A)),
        _record("(v)", fro(A), np.sqrt(n * p) * inf(A)),
        _record("(vi) equality", abs(op(dg) - inf(dg)), 0.0),
        _record("(vi)", inf(dg), inf(D)),
        _record("(vii)", inf(H), inf(A) * inf(B)),
        _record("(viii)", op(H), op(A) * op(B)),
        _record("(ix)", fro(H) ** 2, fro(A) ** 2 * inf(B) ** 2),
    ]
