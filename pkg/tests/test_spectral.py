import numpy as np
import pytest

from solvers.spectral import chebdiff, cutoff, radial_grid


def test_chebdiff_is_exact_on_polynomials():
    x, D = chebdiff(6)
    assert x[0] == pytest.approx(1.0)
    assert x[-1] == pytest.approx(-1.0)
    assert np.allclose(D @ x**3, 3 * x**2)
    assert np.allclose(D @ np.ones_like(x), 0.0)


def test_cutoff():
    rho = np.array([0.0, 0.2, 0.25, 0.375, 0.5, 0.75, 1.0])
    chi, dchi = cutoff(rho)
    assert chi == pytest.approx([0.0, 0.0, 0.0, 0.5, 1.0, 1.0, 1.0])
    assert dchi[[2, 4]] == pytest.approx([0.0, 0.0])
    fine = np.linspace(0.25, 0.5, 101)
    assert np.all(np.diff(cutoff(fine)[0]) >= 0.0)


def test_grid_layout():
    grid = radial_grid(6, 8, 10)
    assert grid.size == 6 + 9 + 11
    assert grid.boundary == grid.size - 1
    assert grid.rho[grid.inner][-1] == pytest.approx(0.25)
    assert grid.rho[grid.mid][[0, -1]] == pytest.approx([0.25, 0.5])
    assert grid.rho[grid.outer][[0, -1]] == pytest.approx([0.5, 1.0])
    assert np.all(np.diff(grid.rho[grid.inner]) > 0)
    assert grid.rho[0] > 0.0


def test_parity_folded_derivatives():
    grid = radial_grid(6, 8, 10)
    r = grid.rho[grid.inner]
    assert np.allclose(grid.D_inner(False) @ r**2, 2 * r)
    assert np.allclose(grid.D_inner(True) @ r**3, 3 * r**2)
    assert np.allclose(grid.D2_inner(False) @ r**4, 12 * r**2)
    assert np.allclose(grid.D2_inner(True) @ r, 0.0, atol=1e-10)


def test_segment_derivatives():
    grid = radial_grid(6, 8, 10)
    for seg, D in ((grid.mid, grid.D_mid), (grid.outer, grid.D_outer)):
        r = grid.rho[seg]
        assert np.allclose(D @ r**5, 5 * r**4)


def test_interpolate():
    grid = radial_grid(6, 8, 10)
    values = np.stack([grid.rho**2, grid.rho**3], axis=1)
    rho = np.array([0.05, 0.1, 0.3, 0.45, 0.7, 0.99])
    out = grid.interpolate(values, np.array([1.0, -1.0]), rho)
    assert np.allclose(out[:, 0], rho**2)
    assert np.allclose(out[:, 1], rho**3)
