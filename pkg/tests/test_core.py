import numpy as np
import pytest
from scipy.linalg import eigh_tridiagonal

from plmx.core import (
    ModelParams,
    NoiseSpec,
    RngStream,
    gaussian_increments,
    hs_norm_sq,
    mode_multi_indices,
    poincare_sq,
    signed_power,
    sine_mode,
)


def test_signed_power_examples():
    assert signed_power(0.0, 0.5) == 0.0
    assert signed_power(-2.0, 3.0) == pytest.approx(-8.0, abs=0)
    assert signed_power(4.0, 0.5) == pytest.approx(2.0, abs=0)


def test_signed_power_rejects_bad_alpha():
    with pytest.raises(ValueError):
        signed_power(1.0, 0.0)
    with pytest.raises(ValueError):
        signed_power(1.0, -2.0)


def test_signed_power_odd_and_increasing():
    gen = np.random.default_rng(1)
    z = gen.uniform(-10, 10, size=500)
    for alpha in (0.5, 1.0, 1.7, 3.0):
        assert np.allclose(signed_power(-z, alpha), -signed_power(z, alpha), atol=0)
        zs = np.sort(z)
        assert np.all(np.diff(signed_power(zs, alpha)) >= 0)


def test_signed_power_inverse_roundtrip():
    gen = np.random.default_rng(2)
    z = gen.uniform(-10, 10, size=400)
    z = z[np.abs(z) > 1e-3]
    for alpha in (0.5, 2.0, 3.5):
        back = signed_power(signed_power(z, alpha), 1.0 / alpha)
        assert np.max(np.abs(back - z) / np.abs(z)) < 1e-12


def test_hs_norm_sq():
    assert hs_norm_sq(NoiseSpec(())) == 0.0
    assert hs_norm_sq(NoiseSpec((3.0, 4.0))) == pytest.approx(25.0, abs=0)
    assert hs_norm_sq(NoiseSpec((1.0, 1.0, 1.0))) == pytest.approx(3.0, abs=0)


def test_noise_spec_zero_flag():
    assert NoiseSpec(()).is_zero
    assert NoiseSpec((0.0, 0.0)).is_zero
    assert not NoiseSpec((0.0, 0.1)).is_zero


def test_poincare_exact_small_grid():
    # closed-form smallest eigenvalue 4 sin^2(pi h / 2L) / h^2 with h = 1/3
    pm = ModelParams(p=2.0, dim=1, length=1.0, n_grid=2, dt=1e-3)
    assert poincare_sq(pm) == pytest.approx(9.0, rel=1e-12)


@pytest.mark.parametrize("n_grid", [16, 33, 64])
def test_poincare_matches_dense_eigensolve_1d(n_grid):
    pm = ModelParams(p=2.0, dim=1, n_grid=n_grid, dt=1e-3)
    h = pm.h
    diag = np.full(n_grid, 2.0 / h**2)
    off = np.full(n_grid - 1, -1.0 / h**2)
    lam_min = eigh_tridiagonal(diag, off, select="i", select_range=(0, 0))[0][0]
    assert poincare_sq(pm) == pytest.approx(lam_min, rel=1e-12)


def test_poincare_matches_dense_eigensolve_2d():
    n = 12
    pm = ModelParams(p=2.0, dim=2, n_grid=n, dt=1e-3)
    h = pm.h
    lap1 = np.diag(np.full(n, 2.0)) + np.diag(np.full(n - 1, -1.0), 1) + np.diag(
        np.full(n - 1, -1.0), -1
    )
    eye = np.eye(n)
    lap2 = (np.kron(lap1, eye) + np.kron(eye, lap1)) / h**2
    lam_min = np.linalg.eigvalsh(lap2)[0]
    assert poincare_sq(pm) == pytest.approx(lam_min, rel=1e-10)


def test_poincare_refinement_richardson():
    # error shrinks monotonically under doubling; Richardson-extrapolated
    # values land on dim * (pi/length)^2
    for length, target in ((1.0, np.pi**2), (2.0, np.pi**2 / 4)):
        grids = (64, 128, 256)
        vals = [
            poincare_sq(ModelParams(p=2.0, dim=1, length=length, n_grid=n, dt=1e-3))
            for n in grids
        ]
        errs = [abs(v - target) for v in vals]
        assert errs[0] > errs[1] > errs[2]
        # second-order extrapolation with the exact spacing ratio
        h1, h2 = length / (grids[1] + 1), length / (grids[2] + 1)
        rich = (vals[2] * h1**2 - vals[1] * h2**2) / (h1**2 - h2**2)
        assert rich == pytest.approx(target, rel=1e-7)


def test_sine_modes_orthonormal_under_quadrature():
    pm = ModelParams(p=2.0, dim=1, n_grid=37, dt=1e-3)
    modes = [sine_mode(pm, (k,)) for k in (1, 2, 5)]
    for i, ei in enumerate(modes):
        for j, ej in enumerate(modes):
            ip = pm.quad_weight * np.dot(ei, ej)
            assert ip == pytest.approx(1.0 if i == j else 0.0, abs=1e-12)
    pm2 = ModelParams(p=2.0, dim=2, n_grid=9, dt=1e-3)
    idx = mode_multi_indices(2, 4)
    modes2 = [sine_mode(pm2, mi) for mi in idx]
    for i, ei in enumerate(modes2):
        for j, ej in enumerate(modes2):
            ip = pm2.quad_weight * np.dot(ei, ej)
            assert ip == pytest.approx(1.0 if i == j else 0.0, abs=1e-12)


def test_mode_ordering_2d_by_frequency():
    idx = mode_multi_indices(2, 6)
    freqs = [k * k + l * l for k, l in idx]
    assert freqs == sorted(freqs)
    assert idx[0] == (1, 1)


def test_model_params_validation():
    with pytest.raises(ValueError):
        ModelParams(p=1.0, dt=1e-3)
    with pytest.raises(ValueError):
        ModelParams(p=2.0, dim=3, dt=1e-3)
    with pytest.raises(ValueError):
        ModelParams(p=2.0, n_grid=1, dt=1e-3)
    with pytest.raises(ValueError):
        ModelParams(p=2.0, dt=0.0)
    with pytest.raises(ValueError):
        ModelParams(p=2.0, dt=1e-3, eps_reg=-1.0)
    with pytest.raises(ValueError):
        ModelParams(p=2.0, dt=1e-3, r_order=0.5)


def test_stream_reproducible_and_zero_count():
    s = RngStream(123, 7)
    assert gaussian_increments(s, 0).shape == (0,)
    a = gaussian_increments(s, 50)
    b = gaussian_increments(RngStream(123, 7), 50)
    assert np.array_equal(a, b)
    c = gaussian_increments(RngStream(123, 8), 50)
    assert not np.array_equal(a, c)


def test_stream_fixed_consumption_and_skip():
    s = RngStream(9, 4)
    bulk = s.normals(40)
    for skip in (0, 1, 3, 4, 7, 13):
        tail = s.normals(40 - skip, skip=skip)
        assert np.array_equal(bulk[skip:], tail)


def test_stream_moments():
    z = RngStream(2024, 0).normals(1_000_000)
    assert abs(z.mean()) < 4.0 / 1000.0
    assert abs(z.var() - 1.0) < 0.01


def test_streams_pairwise_uncorrelated():
    count = 200_000
    bound = 4.0 / np.sqrt(count)
    base = RngStream(5, 0).normals(count)
    for sid in (1, 2, 3):
        other = RngStream(5, sid).normals(count)
        rho = np.corrcoef(base, other)[0, 1]
        assert abs(rho) < bound


def test_default_dt_policy():
    pm = ModelParams(p=2.0, n_grid=63, dt=1.0)
    assert pm.default_dt(np.zeros(63)) == pytest.approx(0.25 * pm.h**2)
    pm4 = ModelParams(p=4.0, n_grid=63, dt=1.0, eps_reg=1e-8)
    u = np.sin(np.pi * pm4.interior_coords())
    pad = np.concatenate([[0.0], u, [0.0]])
    gmax = np.max(np.abs(np.diff(pad))) / pm4.h
    expected = 0.25 * pm4.h**4 / (gmax + 1e-8) ** 2
    assert pm4.default_dt(u) == pytest.approx(expected, rel=1e-12)
