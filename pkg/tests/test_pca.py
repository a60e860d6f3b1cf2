import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from harmiss.pca import PcaError, PcaModel, components_for_variance, fit_pca, inverse_transform, transform


def test_collinear_rows_put_all_variance_in_one_component():
    X = np.array([[1.0, 2.0], [2.0, 4.0], [3.0, 6.0]])
    m = fit_pca(X, 1)
    assert m.explained_variance_ratio[0] == pytest.approx(1.0)
    np.testing.assert_allclose(np.abs(m.components[0]), np.array([1.0, 2.0]) / np.sqrt(5))


def test_full_rank_ratios_sum_to_one():
    X = np.random.default_rng(0).normal(size=(50, 6))
    m = fit_pca(X, 6)
    assert m.explained_variance_ratio.sum() == pytest.approx(1.0, abs=1e-12)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(8, 40), d=st.integers(2, 12))
def test_components_orthonormal_and_variance_preserved(seed, n, d):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, d)) @ rng.normal(size=(d, d))
    r = min(n - 1, d)
    m = fit_pca(X, r)
    np.testing.assert_allclose(m.components @ m.components.T, np.eye(r), atol=1e-8)
    assert np.all(np.diff(m.eigenvalues) <= 1e-12)
    total = np.var(X, axis=0, ddof=1).sum()
    assert m.total_variance == pytest.approx(total, rel=1e-9)
    assert m.spectrum.sum() == pytest.approx(total, rel=1e-9)
    # projected data has the eigenvalues as per-component variance
    Z = transform(m, X)
    np.testing.assert_allclose(np.var(Z, axis=0, ddof=1), m.eigenvalues, rtol=1e-6, atol=1e-9)


def test_projector_matches_svd():
    rng = np.random.default_rng(4)
    X = rng.normal(size=(80, 10)) * np.arange(1, 11)
    r = 4
    m = fit_pca(X, r)
    Xc = X - X.mean(axis=0)
    _, s, vt = np.linalg.svd(Xc, full_matrices=False)
    P_ref = vt[:r].T @ vt[:r]
    P = m.components.T @ m.components
    np.testing.assert_allclose(P, P_ref, atol=1e-6)
    np.testing.assert_allclose(m.eigenvalues, s[:r] ** 2 / (len(X) - 1), rtol=1e-9)


def test_sign_convention():
    X = np.random.default_rng(1).normal(size=(30, 5))
    m = fit_pca(X, 5)
    for v in m.components:
        assert v[np.argmax(np.abs(v))] > 0


def test_transform_and_reconstruction():
    rng = np.random.default_rng(2)
    X = rng.normal(size=(40, 5))
    m = fit_pca(X, 5)
    np.testing.assert_allclose(transform(m, m.mean[None, :]), 0.0, atol=1e-12)
    np.testing.assert_allclose(inverse_transform(m, transform(m, X)), X, atol=1e-10)
    m2 = fit_pca(X, 2)
    err = ((inverse_transform(m2, transform(m2, X)) - X) ** 2).sum() / (len(X) - 1)
    assert err == pytest.approx(m2.spectrum[2:].sum(), rel=1e-9)


@pytest.mark.parametrize(
    "eigs, target, expected",
    [
        ([5.0, 3.0, 2.0], 0.5, 1),
        ([5.0, 3.0, 2.0], 0.8, 2),
        ([5.0, 3.0, 2.0], 0.81, 3),
        ([1.0, 0.0], 0.99, 1),
        ([1.0, 1.0, 1.0], 1.0, 3),
    ],
)
def test_components_for_variance(eigs, target, expected):
    assert components_for_variance(eigs, target) == expected


@pytest.mark.parametrize("r", [0, 6, 2.5])
def test_component_count_out_of_range(r):
    with pytest.raises(PcaError):
        fit_pca(np.random.default_rng(0).normal(size=(6, 5)), r)


def test_non_finite_input_rejected():
    X = np.ones((4, 3))
    X[1, 1] = np.nan
    with pytest.raises(PcaError, match="non-finite"):
        fit_pca(X, 1)


def test_save_load_round_trip(tmp_path):
    m = fit_pca(np.random.default_rng(0).normal(size=(20, 4)), 2)
    m.save(tmp_path / "p.npz")
    back = PcaModel.load(tmp_path / "p.npz")
    for name in ("mean", "components", "eigenvalues", "explained_variance_ratio", "spectrum"):
        np.testing.assert_array_equal(getattr(back, name), getattr(m, name))
    assert back.total_variance == m.total_variance
