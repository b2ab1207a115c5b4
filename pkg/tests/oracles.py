"""Reference values computed without the package's own formulas."""

import numpy as np
from scipy import integrate


def mp_stieltjes_quadratic(c, z):
    """Root of c z G^2 - (z - 1 + c) G + 1 = 0 with Im G < 0 (Im z > 0)."""
    z = np.atleast_1d(np.asarray(z, dtype=complex))
    out = np.empty_like(z)
    for i, zz in enumerate(z):
        roots = np.roots([c * zz, -(zz - 1 + c), 1.0])
        out[i] = roots[np.argmin(roots.imag)]
    return out


def mp_density(c, x):
    a, b = (1 - np.sqrt(c)) ** 2, (1 + np.sqrt(c)) ** 2
    x = np.asarray(x, dtype=float)
    inside = (x > a) & (x < b)
    with np.errstate(invalid="ignore", divide="ignore"):
        f = np.sqrt(np.clip((b - x) * (x - a), 0, None)) / (2 * np.pi * c * x)
    return np.where(inside, f, 0.0)


def stieltjes_by_quadrature(density, lo, hi, z, atoms=()):
    z = complex(z)
    re = integrate.quad(lambda x: (density(x) * (z - x).conjugate()).real / abs(z - x) ** 2,
                        lo, hi, limit=400, epsabs=1e-13)[0]
    im = integrate.quad(lambda x: (density(x) * (z - x).conjugate()).imag / abs(z - x) ** 2,
                        lo, hi, limit=400, epsabs=1e-13)[0]
    return re + 1j * im + sum(w / (z - x0) for x0, w in atoms)


def semicircle_density(x):
    return np.sqrt(np.clip(4 - x * x, 0, None)) / (2 * np.pi)


def empirical_cdf_sup(x, y):
    """KS distance between two equal-weight samples by brute force."""
    pts = np.union1d(x, y)
    fx = np.array([np.mean(x <= t) for t in pts])
    fy = np.array([np.mean(y <= t) for t in pts])
    return float(np.max(np.abs(fx - fy)))


def sorted_matching(x, y, q):
    """W_q between equal-size uniform samples via the sorted coupling."""
    return float(np.mean(np.abs(np.sort(x) - np.sort(y)) ** q) ** (1 / q))
