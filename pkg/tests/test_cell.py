import numpy as np
import pytest
from scipy import integrate

from homogenize.cell import (SolverError, bound_constant_M, check_cell_bounds, effective_matrix,
                             load_cell_solution, save_cell_solution, solve_cell_problem)
from homogenize.lattice import (CellGrid, Lattice, SymbolOperator, checkerboard_coefficient,
                                constant_coefficient, product_sinusoid_coefficient)

# 1-D oracle for g = 2 + sin(2 pi x1): chi(x) = int_0^x (sqrt3/g - 1) minus its mean,
# evaluated once with scipy.integrate.quad (see the decisions ledger).
LAMBDA_L2_LAYERED = 0.06086644647010332


def chi_oracle(x):
    gh = 1 / integrate.quad(lambda t: 1 / (2 + np.sin(2 * np.pi * t)), 0, 1, epsabs=1e-14)[0]

    def raw(s):
        return integrate.quad(lambda t: gh / (2 + np.sin(2 * np.pi * t)) - 1, 0, s, epsabs=1e-14)[0]

    mean = integrate.quad(raw, 0, 1, epsabs=1e-13)[0]
    return np.array([raw(s) - mean for s in np.atleast_1d(x)])


def test_constant_coefficient_exact(grad2):
    C = np.diag([2.0, 3.0])
    sol = solve_cell_problem(constant_coefficient(C), grad2, CellGrid(32))
    assert np.abs(sol.lam).max() == 0
    assert sol.residual <= 1e-12
    assert np.array_equal(sol.g_eff, C)


def test_layered_effective_matrix(layered_cell):
    assert np.allclose(layered_cell.g_eff, np.diag([np.sqrt(3), 2.0]), atol=1e-6)


def test_layered_profile_matches_quadrature(layered_cell):
    grid = layered_cell.grid
    idx = [0, 37, 128, 200, 255]
    x = grid.axis[idx]
    chi = chi_oracle(x)
    v1 = layered_cell.lam[idx, 0, 0, 0]
    # Lambda = i chi in the D = -i grad convention
    assert np.abs(v1.real).max() < 1e-12
    assert np.allclose(v1.imag, chi, atol=1e-6)
    # column 1 depends only on x1
    assert np.abs(layered_cell.lam[:, :, 0, 0] - layered_cell.lam[:, :1, 0, 0]).max() < 1e-10
    # column 2 vanishes
    assert np.abs(layered_cell.lam[..., 0, 1]).max() < 1e-10


def test_chi_boundary_value_oracle():
    # chi(0) = 1/12 and chi(1/2) = -1/12 for this coefficient (frozen from the quadrature oracle)
    assert chi_oracle([0.0, 0.5]) == pytest.approx([1 / 12, -1 / 12], abs=1e-12)


def test_layered_lambda_norm(layered_cell):
    assert layered_cell.lambda_l2 == pytest.approx(LAMBDA_L2_LAYERED, abs=1e-9)


def test_zero_mean(layered_cell):
    assert np.abs(layered_cell.column_means()).max() <= 1e-10 * layered_cell.lambda_l2


def test_bounds_layered(layered_cell, layered, grad2):
    rep = check_cell_bounds(layered_cell, Lattice.cubic(2), grad2, layered)
    # m^{1/2} (2 r0)^{-1} alpha0^{-1/2} ||g||^{1/2} ||g^-1||^{1/2} = sqrt(2) * 1 * 1 * sqrt(3)
    assert rep.M == pytest.approx(np.sqrt(6.0), rel=1e-12)
    assert rep.bound == pytest.approx(np.sqrt(6.0), rel=1e-12)
    assert rep.ok


def test_M_formula(layered):
    b = SymbolOperator.gradient(2, [1.0, 2.0])
    expected = np.sqrt(2) / (2 * 0.5) / np.sqrt(b.alpha0) * np.sqrt(3.0 * 1.0)
    assert bound_constant_M(Lattice.cubic(2), b, layered) == pytest.approx(expected, rel=1e-12)


def test_checkerboard_geometric_mean(grad2):
    sol = solve_cell_problem(checkerboard_coefficient(2), grad2, CellGrid(512), estimate_error=False)
    assert sol.method == "fe"
    assert np.allclose(sol.g_eff, 2.0 * np.eye(2), atol=2e-2)


def test_checkerboard_convergence(grad2):
    cb = checkerboard_coefficient(2)
    errs = [abs(solve_cell_problem(cb, grad2, CellGrid(n), estimate_error=False).g_eff[0, 0] - 2.0)
            for n in (32, 64, 128)]
    assert errs[0] > errs[1] > errs[2]


def test_product_sinusoid_diagonal_and_upper_bound(grad2, rng):
    g = product_sinusoid_coefficient(2)
    grid = CellGrid(64)
    sol = solve_cell_problem(g, grad2, grid)
    assert abs(sol.g_eff[0, 1]) < 1e-10
    gbar = g.mean(grid)
    xi = rng.standard_normal((100, 2))
    assert np.all(np.einsum("ki,ij,kj->k", xi, sol.g_eff, xi)
                  <= np.einsum("ki,ij,kj->k", xi, gbar, xi) + 1e-12)


def test_refinement_within_error_estimate(layered, grad2):
    coarse = solve_cell_problem(layered, grad2, CellGrid(32))
    fine = solve_cell_problem(layered, grad2, CellGrid(64), estimate_error=False)
    assert np.abs(fine.g_eff - coarse.g_eff).max() <= max(coarse.error_estimate, 1e-13)


def test_odd_resolution_rejected(layered, grad2):
    with pytest.raises(ValueError, match="even"):
        solve_cell_problem(layered, grad2, CellGrid(15))


def test_iteration_cap(layered, grad2):
    with pytest.raises(SolverError):
        solve_cell_problem(layered, grad2, CellGrid(64), maxiter=1, rtol=1e-14)


def test_effective_matrix_rejects_non_hermitian(layered_cell, layered, grad2):
    from dataclasses import replace
    bad = replace(layered_cell, g_eff=np.array([[1.7, 0.3], [0.0, 2.0]]))
    with pytest.raises(SolverError, match="Hermitian"):
        effective_matrix(layered, bad, grad2)


def test_complex_hermitian_coefficient():
    # Hermitian complex constant: Lambda = 0, g0 = g
    C = np.array([[2.0, 0.5j], [-0.5j, 2.0]])
    sol = solve_cell_problem(constant_coefficient(C), SymbolOperator.gradient(2), CellGrid(16))
    assert np.allclose(sol.g_eff, C)


def test_save_load_roundtrip(tmp_path, layered, grad2):
    sol = solve_cell_problem(layered, grad2, CellGrid(16))
    path = tmp_path / "cell.txt"
    save_cell_solution(sol, path)
    head = path.read_text().splitlines()[1]
    assert head == "2 2 1 16"
    back = load_cell_solution(path)
    assert np.array_equal(back.lam, sol.lam)
    assert np.array_equal(back.g_eff, sol.g_eff)
