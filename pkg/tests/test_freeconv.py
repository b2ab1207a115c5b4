import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from freesub.freeconv import (ContractionWarning, ConvergenceError, SolverConfig, additive_transform,
                              contraction_probe, deterministic_equivalent, deterministic_equivalent_matrix,
                              rectangular_transform, solve_additive_sc, solve_rectangular, subordination_map,
                              subordination_map_derivative)
from freesub.measures import EvaluationDomain, Measure
from freesub.rmt_sim import EnsembleSpec, atoms_of, gram_eigenvalues, mean_stieltjes_mc, wigner_mean_stieltjes_mc
from oracles import mp_stieltjes_quadratic, semicircle_density, stieltjes_by_quadrature

atomic_signal = st.lists(
    st.tuples(st.floats(0, 9), st.floats(0.05, 1)), min_size=1, max_size=6
).map(lambda pairs: Measure.atomic([p[0] for p in pairs], np.array([p[1] for p in pairs]) / sum(p[1] for p in pairs)))


@pytest.mark.parametrize("c", [0.25, 0.5, 1.0, 2.0])
def test_noise_only_is_marchenko_pastur(c):
    res = solve_rectangular(Measure.dirac(0.0), c)
    assert res.ok
    np.testing.assert_allclose(res.values, mp_stieltjes_quadratic(c, res.z), rtol=0, atol=1e-10)


@pytest.mark.parametrize("c", [0.5, 1.0, 2.0])
def test_noise_only_off_domain_by_continuation(c):
    z = np.array([0.5 + 0.05j, 3.0 + 0.01j, -1 + 0.2j, 0.02 + 0.02j, 7 + 1e-3j])
    res = solve_rectangular(Measure.dirac(0.0), c, z=z)
    assert res.ok
    np.testing.assert_allclose(res.values, mp_stieltjes_quadratic(c, z), rtol=1e-8, atol=1e-10)


def test_lower_half_plane_by_symmetry():
    z = np.array([1 + 0.5j, 1 - 0.5j])
    res = solve_rectangular(Measure.atomic([0, 4]), 0.5, z=z)
    assert res.values[1] == pytest.approx(np.conj(res.values[0]))


def test_additive_with_dirac_is_semicircle():
    z = np.array([0.3 + 0.4j, 15 + 30j, -1.5 + 0.05j])
    res = solve_additive_sc(Measure.dirac(0.0), z=z)
    ref = [stieltjes_by_quadrature(semicircle_density, -2, 2, zz) for zz in z]
    np.testing.assert_allclose(res.values, ref, atol=1e-9)


def test_additive_matches_wigner_simulation():
    # semicircle plus a +-1 diagonal, checked against its random-matrix model
    n = 400
    diag = np.where(np.arange(n) % 2 == 0, 1.0, -1.0)
    z = np.array([0.5 + 1j, 2 + 0.5j, 11j])
    mc = wigner_mean_stieltjes_mc(diag, trials=24, seed=3, z=z)
    theory = additive_transform(Measure.atomic([-1, 1]))(z)
    assert np.all(np.abs(mc.mean - theory) < 5 * mc.stderr + 5.0 / n)


def test_rectangular_matches_information_plus_noise_simulation():
    n, p = 300, 600
    M = np.zeros((n, p))
    M[np.arange(n), np.arange(n)] = np.where(np.arange(n) < n // 3, 2.0, 0.0)
    spec = EnsembleSpec(n=n, p=p, deformation=M, seed=11, trials=16)
    z = np.array([1 + 1j, 4 + 0.5j, 12j])
    mc = mean_stieltjes_mc(spec, z=z)
    theory = solve_rectangular(atoms_of(gram_eigenvalues(M)), n / p, z=z).values
    assert np.all(np.abs(mc.mean - theory) < 5 * mc.stderr + 5.0 / n)


@settings(max_examples=25)
@given(atomic_signal, st.sampled_from([0.3, 0.5, 1.0, 2.0, 3.0]))
def test_fixed_points_have_tiny_residual_and_are_herglotz(mu, c):
    res = solve_rectangular(mu, c)
    assert res.ok
    assert res.residuals.max() <= 1e-12
    assert np.all(res.values.imag < 0)
    assert np.all(np.abs(res.values) <= 1 / res.z.imag + 1e-12)
    h = res.values
    assert np.abs(h - subordination_map(mu, res.z, h, c)).max() <= 1e-12


def test_map_derivative_matches_finite_difference():
    mu = Measure.atomic([0.5, 3.0], [0.3, 0.7])
    z, h, c = 2 + 11j, 0.02 - 0.05j, 0.7
    step = 1e-7
    fd = (subordination_map(mu, z, h + step, c) - subordination_map(mu, z, h - step, c)) / (2 * step)
    assert abs(subordination_map_derivative(mu, z, h, c) - fd) < 1e-8


@pytest.mark.parametrize("c", [0.5, 1.0, 2.0])
def test_contraction_probe_below_one(c):
    for mu in (Measure.dirac(0.0), Measure.atomic([0, 1, 5], [0.2, 0.5, 0.3])):
        assert contraction_probe(mu, c) < 1


def test_contraction_probe_reports_expansion_for_a_bad_domain():
    dom = EvaluationDomain(s=0.2, t=5.0)
    assert contraction_probe(Measure.dirac(0.0), 4.0, dom) >= 1


def test_contraction_warning_on_poor_domain():
    dom = EvaluationDomain(s=0.05, t=20.0, im_max=0.2, levels=3, per_level=5)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        solve_rectangular(Measure.dirac(0.0), 4.0, SolverConfig(domain=dom, max_iterations=60))
    assert any(issubclass(w.category, ContractionWarning) for w in caught)


def test_transform_callable_raises_on_failure():
    cfg = SolverConfig(max_iterations=50, domain=EvaluationDomain(s=0.01, t=50.0, im_max=0.05, levels=2, per_level=3))
    f = rectangular_transform(Measure.atomic([0, 50]), 4.0, cfg)
    with pytest.raises(ConvergenceError):
        f(np.array([1 + 0.011j, 25 + 0.02j, 49 + 0.03j]))


def test_deterministic_equivalent_trace_matches_matrix():
    rng = np.random.default_rng(0)
    M = rng.standard_normal((5, 8)) / 3
    c_n, z, g = 5 / 8, 1 + 12j, 0.01 - 0.08j
    R = deterministic_equivalent_matrix(M, c_n, g, z)
    mu = atoms_of(np.linalg.eigvalsh(M @ M.T))
    assert np.trace(R) / 5 == pytest.approx(deterministic_equivalent(mu, c_n, g, z), abs=1e-13)


def test_solver_config_validation():
    with pytest.raises(ValueError):
        SolverConfig(tolerance=1e-3)
    with pytest.raises(ValueError):
        SolverConfig(damping=0)
    with pytest.raises(ValueError):
        SolverConfig(max_iterations=10)


def test_rectangular_rejects_negative_support():
    with pytest.raises(ValueError):
        solve_rectangular(Measure.atomic([-1, 1]), 1.0)
