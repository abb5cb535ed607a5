import math

import numpy as np
import pytest

from trait_probe.errors import InvalidK, ShapeMismatch
from trait_probe.pca import (
    PcaModel,
    fit_pca,
    jacobi_eigh,
    load_pca,
    pca_sweep_dims,
    project,
    save_pca,
)


def oracle_jacobi(matrix, max_sweeps=100, tol=1e-14):
    """Brute-force sequential cyclic Jacobi with explicit scalar rotations."""
    a = np.array(matrix, dtype=np.float64)
    n = a.shape[0]
    v = np.eye(n)
    for _ in range(max_sweeps):
        off = math.sqrt(sum(a[i, j] ** 2 for i in range(n) for j in range(n) if i != j))
        if off < tol:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                if abs(a[p, q]) < 1e-300:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * a[p, q])
                if theta == 0.0:
                    t = 1.0
                else:
                    t = math.copysign(1.0, theta) / (
                        abs(theta) + math.sqrt(theta * theta + 1.0)
                    )
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                for j in range(n):
                    ap, aq = a[p, j], a[q, j]
                    a[p, j] = c * ap - s * aq
                    a[q, j] = s * ap + c * aq
                for j in range(n):
                    ap, aq = a[j, p], a[j, q]
                    a[j, p] = c * ap - s * aq
                    a[j, q] = s * ap + c * aq
                for j in range(n):
                    vp, vq = v[j, p], v[j, q]
                    v[j, p] = c * vp - s * vq
                    v[j, q] = s * vp + c * vq
    eigenvalues = np.array([a[i, i] for i in range(n)])
    order = np.argsort(eigenvalues)[::-1]
    return eigenvalues[order], v[:, order]


def oracle_fit(frames, k):
    """Covariance + oracle Jacobi + the production sign convention."""
    x = np.asarray(frames, dtype=np.float64)
    mean = x.mean(axis=0)
    centered = x - mean
    cov = centered.T @ centered / (x.shape[0] - 1)
    eigenvalues, vectors = oracle_jacobi(cov)
    basis = vectors[:, :k].T.copy()
    for row in basis:
        j = int(np.argmax(np.abs(row)))
        if row[j] < 0:
            row *= -1.0
    return mean, np.maximum(eigenvalues[:k], 0.0), basis


@pytest.mark.parametrize("shape,k", [((10, 5), 3), ((50, 8), 8), ((30, 6), 4)])
def test_fit_matches_jacobi_oracle(shape, k, rng):
    x = rng.normal(size=shape) * rng.uniform(0.5, 2.0, size=shape[1]) + rng.normal(
        size=shape[1]
    )
    model = fit_pca(x, k)
    mean, eigenvalues, basis = oracle_fit(x, k)
    assert np.abs(model.mean - mean).max() < 1e-9
    assert np.abs(model.eigenvalues - eigenvalues).max() < 1e-6
    assert np.abs(model.basis - basis).max() < 1e-6


def test_single_direction_variance(rng):
    x = np.tile(np.array([0.0, 1.5, -2.0, 3.0]), (20, 1))
    x[:, 0] = rng.normal(size=20) * 3.0
    model = fit_pca(x, 1)
    e0 = np.zeros(4)
    e0[0] = 1.0
    assert np.abs(model.basis[0] - e0).max() < 1e-9  # sign fixed positive
    assert abs(model.eigenvalues[0] - np.var(x[:, 0], ddof=1)) < 1e-9


def test_full_rank_projection_is_isometry(rng):
    x = rng.normal(size=(40, 6))
    model = fit_pca(x, 6)
    y = project(model, x)
    d_x = np.linalg.norm(x[:, None, :] - x[None, :, :], axis=2)
    d_y = np.linalg.norm(y[:, None, :] - y[None, :, :], axis=2)
    assert np.abs(d_x - d_y).max() < 1e-5


def test_project_mean_is_zero(rng):
    x = rng.normal(size=(25, 7)) + 3.0
    model = fit_pca(x, 4)
    y = project(model, model.mean[None, :])
    assert np.abs(y).max() < 1e-9


def test_reconstruction_at_full_rank(rng):
    x = rng.normal(size=(30, 5))
    model = fit_pca(x, 5)
    y = project(model, x)
    back = y @ model.basis + model.mean
    assert np.abs(back - x).max() < 1e-5


def test_projected_variance_matches_eigenvalues(rng):
    x = rng.normal(size=(200, 9)) * np.linspace(3, 0.5, 9)
    model = fit_pca(x, 5)
    y = project(model, x)
    total = y.var(axis=0, ddof=1).sum()
    assert abs(total - model.eigenvalues.sum()) / model.eigenvalues.sum() < 1e-5
    cov_y = np.cov(y, rowvar=False)
    assert np.abs(cov_y - np.diag(model.eigenvalues)).max() < 1e-5


def test_total_variance_identity_at_full_rank(rng):
    x = rng.normal(size=(60, 6))
    model = fit_pca(x, 6)
    total_var = x.var(axis=0, ddof=1).sum()
    assert abs(model.eigenvalues.sum() - total_var) / total_var < 1e-6
    assert (model.eigenvalues >= 0).all()
    assert (np.diff(model.eigenvalues) <= 1e-12).all()  # descending


def test_row_permutation_invariance(rng):
    x = rng.normal(size=(40, 5))
    m1 = fit_pca(x, 3)
    m2 = fit_pca(x[rng.permutation(40)], 3)
    assert np.abs(m1.basis - m2.basis).max() < 1e-9
    assert np.abs(m1.eigenvalues - m2.eigenvalues).max() < 1e-9


def test_orthonormal_rows(rng):
    x = rng.normal(size=(50, 8))
    model = fit_pca(x, 6)
    gram = model.basis @ model.basis.T
    assert np.abs(gram - np.eye(6)).max() < 1e-6


def test_rank_deficient_is_not_an_error(rng):
    base = rng.normal(size=(20, 2))
    x = np.concatenate([base, base @ rng.normal(size=(2, 3))], axis=1)  # rank 2
    model = fit_pca(x, 4)
    tiny = 1e-12 * model.eigenvalues[0]
    assert model.eigenvalues[2] < tiny
    assert model.eigenvalues[3] < tiny


def test_invalid_k(rng):
    x = rng.normal(size=(10, 5))
    with pytest.raises(InvalidK):
        fit_pca(x, 0)
    with pytest.raises(InvalidK):
        fit_pca(x, 6)  # k > D
    with pytest.raises(InvalidK):
        fit_pca(rng.normal(size=(4, 8)), 4)  # k > N-1
    with pytest.raises(ShapeMismatch):
        project(fit_pca(x, 2), rng.normal(size=(3, 4)))


def test_sweep_dims():
    expected = [512, 448, 384, 320, 256, 192, 128, 64, 32]
    assert pca_sweep_dims(768) == expected
    assert pca_sweep_dims(1024) == expected
    with pytest.warns(UserWarning):
        assert pca_sweep_dims(26) == []
    with pytest.warns(UserWarning):
        assert pca_sweep_dims(100) == [64, 32]


def test_jacobi_against_numpy_eigh(rng):
    for d in (3, 7, 16):
        x = rng.normal(size=(5 * d, d))
        cov = np.cov(x, rowvar=False)
        ev, vec = jacobi_eigh(cov)
        ref = np.linalg.eigh(cov)[0][::-1]
        assert np.abs(ev - ref).max() < 1e-9
        assert np.abs(vec @ np.diag(ev) @ vec.T - cov).max() < 1e-9


def test_save_load_round_trip(tmp_path, rng):
    x = rng.normal(size=(30, 6))
    model = fit_pca(x, 4, fitted_on=("none", 0, "demo", 30))
    path = save_pca(model, tmp_path / "p.tppc")
    back = load_pca(path)
    assert np.array_equal(back.mean, model.mean)
    assert np.array_equal(back.basis, model.basis)
    assert np.array_equal(back.eigenvalues, model.eigenvalues)
