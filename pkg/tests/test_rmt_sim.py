import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from freesub.rmt_sim import (EnsembleSpec, TailLaw, gram_eigenvalues, hermitization_check, hermitize,
                             information_plus_noise, mean_stieltjes_mc, resolvent_derivatives, resolvent_suite,
                             sample_matrix, singular_value_dist, spectral_sample)


def test_tail_law_modulus_is_weibull():
    law = TailLaw(alpha=0.8, a=2.0, normalize_variance=False)
    r = law.sample_modulus(np.random.default_rng(1), 20000)
    ks = stats.kstest(r, lambda t: 1 - np.exp(-2.0 * t ** 0.8))
    assert ks.pvalue > 1e-3


@pytest.mark.parametrize("alpha", [0.5, 1.0, 1.5])
def test_normalised_tail_law_has_unit_variance(alpha):
    law = TailLaw(alpha=alpha, a=1.0, sign_prob=0.7)
    assert law.variance == pytest.approx(1.0, abs=1e-12)
    x = law.sample(np.random.default_rng(2), 400000)
    assert x.var() == pytest.approx(1.0, rel=0.03 if alpha > 0.6 else 0.1)


def test_effective_tail_constant():
    # symmetric alpha = 1: E R^2 = 2, so the unit-variance version has a = sqrt(2)
    assert TailLaw(1.0, 1.0).effective_a == pytest.approx(np.sqrt(2))
    x = TailLaw(1.0, 1.0).sample(np.random.default_rng(3), 10 ** 6)
    t = 4.0
    assert np.mean(np.abs(x) >= t) == pytest.approx(np.exp(-np.sqrt(2) * t), rel=0.05)


def test_tail_law_validation():
    for bad in (dict(alpha=2.0), dict(alpha=1.0, a=0.0), dict(alpha=1.0, sign_prob=1.5)):
        with pytest.raises(ValueError):
            TailLaw(**bad)


def test_streams_are_reproducible_and_order_free():
    spec = EnsembleSpec(n=6, p=9, seed=42, trials=5)
    later = sample_matrix(spec, 4)
    first = [sample_matrix(spec, i) for i in range(5)]
    np.testing.assert_array_equal(first[4], later)
    assert not np.array_equal(first[0], first[1])
    other = EnsembleSpec(n=6, p=9, seed=43, trials=5)
    assert not np.array_equal(sample_matrix(other, 0), first[0])


def test_threads_do_not_change_results(monkeypatch):
    spec = EnsembleSpec(n=20, p=30, entry_law=TailLaw(1.2), seed=7, trials=6)
    z = np.array([1 + 1j, 12j])
    monkeypatch.setenv("FREESUB_THREADS", "1")
    serial = mean_stieltjes_mc(spec, z=z)
    monkeypatch.setenv("FREESUB_THREADS", "3")
    threaded = mean_stieltjes_mc(spec, z=z)
    assert serial.mean.tobytes() == threaded.mean.tobytes()


def test_single_trial_has_nan_stderr():
    mc = mean_stieltjes_mc(EnsembleSpec(n=5, p=5), z=np.array([1j]))
    assert np.isnan(mc.stderr).all()
    assert mc.trials_ok == 1


def test_zero_entries_give_deformation_spectrum():
    M = np.diag([1.0, 2.0, 3.0])
    spec = EnsembleSpec(n=3, p=3, entry_law="zero", deformation=M)
    np.testing.assert_allclose(spectral_sample(spec).locations, [1, 4, 9])
    np.testing.assert_allclose(singular_value_dist(M).locations, [1, 2, 3])


def test_gram_eigenvalues_clamps_roundoff_zeros():
    rng = np.random.default_rng(5)
    X = rng.standard_normal((8, 3))
    lam = gram_eigenvalues(X, check=True)
    assert np.count_nonzero(lam == 0) == 5
    np.testing.assert_allclose(lam[-3:], np.sort(np.linalg.svd(X, compute_uv=False) ** 2))


def test_information_plus_noise_scaling():
    spec = EnsembleSpec(n=4, p=16, seed=1)
    np.testing.assert_allclose(information_plus_noise(spec), sample_matrix(spec) / 4)


def test_spec_json_roundtrip_and_rejects_unknown(tmp_path):
    M = np.arange(6.0).reshape(2, 3)
    np.savetxt(tmp_path / "m.csv", M, delimiter=",")
    spec = EnsembleSpec.from_json({"n": 2, "p": 3, "entry_law": {"kind": "tail", "alpha": 1.5},
                                   "deformation": {"csv": "m.csv"}, "seed": 9}, base_dir=tmp_path)
    np.testing.assert_allclose(spec.M, M)
    back = EnsembleSpec.from_json(json.loads(json.dumps(spec.to_json())))
    assert back.entry_law == spec.entry_law
    with pytest.raises(ValueError):
        EnsembleSpec.from_json({"n": 2, "p": 3, "sead": 1})
    with pytest.raises(ValueError):
        EnsembleSpec(n=2, p=3, deformation=np.zeros((3, 2)))


@settings(max_examples=40)
@given(st.integers(1, 7), st.integers(1, 7), st.integers(0, 10 ** 6))
def test_hermitization_identity(n, p, seed):
    rng = np.random.default_rng(seed)
    M = rng.standard_normal((n, p))
    if rng.random() < 0.3:
        M[:, 0] = 0.0
    chk = hermitization_check(M)
    assert chk.holds, chk


def test_hermitized_spectrum_is_signed_singular_values():
    M = np.array([[3.0, 0.0], [0.0, 1.0], [0.0, 0.0]])
    _, mu = hermitize(M)
    np.testing.assert_allclose(mu.locations, [-3, -1, 0, 1, 3], atol=1e-12)
    assert mu.mass_at(0.0, 1e-12) == pytest.approx(0.2)


def test_resolvent_suite_on_small_instance():
    X = information_plus_noise(EnsembleSpec(n=6, p=9, seed=3))
    rep = resolvent_suite(X, 0.7 + 1.3j)
    assert rep.ok, rep.failures
    assert rep.identity_error < 1e-12
    for value, bound in rep.norms.values():
        assert value <= bound * (1 + 1e-12)


def test_resolvent_first_derivative_by_direct_perturbation():
    # independent check: perturb one entry of X and difference the resolvent
    rng = np.random.default_rng(4)
    X = rng.standard_normal((4, 5)) / 2
    z = 0.3 + 0.9j
    S = np.linalg.inv(z * np.eye(4) - X @ X.T)
    a, b, j, k = 1, 3, 2, 0
    h = 1e-6
    Xp, Xm = X.copy(), X.copy()
    Xp[a, b] += h
    Xm[a, b] -= h
    Sp = np.linalg.inv(z * np.eye(4) - Xp @ Xp.T)
    Sm = np.linalg.inv(z * np.eye(4) - Xm @ Xm.T)
    fd = (Sp[j, k] - Sm[j, k]) / (2 * h)
    d1 = resolvent_derivatives(S, X, a, b, j, k)[0]
    assert abs(d1 - fd) < 1e-8
