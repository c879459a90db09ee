import numpy as np
import pytest

from homogenize.dirichlet import (BoundedDomain, GridField, MeshResolutionError, VariableForm,
                                  dual_norm, norms, solve_dirichlet, solve_discrepancy,
                                  solve_homogenized)
from homogenize.harness import manufactured_source
from homogenize.lattice import Lattice, constant_coefficient
from homogenize.smoothing import corrector_field, extend, extension_margin


def sinsin(x):
    return np.sin(np.pi * x[..., 0]) * np.sin(np.pi * x[..., 1])


def test_domain_thresholds():
    dom = BoundedDomain.unit_square(8)
    assert dom.eps0 < dom.eps2 <= dom.eps1 <= 1
    assert dom.eps2 == pytest.approx(0.5 / (1 + np.sqrt(2) / 2))
    assert np.all(dom.boundary_distance[dom.boundary] == 0)
    assert np.all(dom.boundary_distance[~dom.boundary] > 0)


def test_disk_mesh_geometry():
    dom = BoundedDomain.unit_disk(0.05)
    r = np.hypot(*dom.nodes[dom.boundary].T)
    assert np.allclose(r, 1.0)
    assert dom.mesh_h <= 0.05 * (1 + 1e-12)
    assert dom.mass.sum() == pytest.approx(np.pi, rel=2e-3)


def test_zero_source(grad2, layered):
    dom = BoundedDomain.unit_square(32)
    u = solve_dirichlet(dom, VariableForm.oscillatory(layered, grad2, 0.5), np.zeros(dom.num_nodes))
    assert np.all(u.values == 0)


def test_manufactured_laplace_second_order(grad2):
    errs = []
    for n in (16, 32, 64):
        dom = BoundedDomain.unit_square(n)
        F = GridField.from_function(dom, lambda x: 2 * np.pi ** 2 * sinsin(x))
        u = solve_dirichlet(dom, VariableForm.constant(np.eye(2), grad2), F)
        assert np.all(u.values[dom.boundary] == 0)
        errs.append(norms(u - GridField.from_function(dom, sinsin), False).l2)
    rates = np.log2(np.array(errs[:-1]) / errs[1:])
    assert np.all(rates > 1.8)


def test_manufactured_disk_second_order(grad2, layered_cell):
    F, u0 = manufactured_source("unit-disk", layered_cell.g_eff, grad2)
    errs = []
    for h in (0.1, 0.05, 0.025):
        dom = BoundedDomain.unit_disk(h)
        u = solve_homogenized(dom, layered_cell.g_eff, grad2, F)
        errs.append(norms(u - GridField.from_function(dom, u0), False).l2)
    assert errs[0] / errs[1] > 3 and errs[1] / errs[2] > 3


def test_homogenized_h2_ratio_bounded(grad2):
    g0 = np.diag([np.sqrt(3), 2.0])
    F, _ = manufactured_source("unit-square", g0, grad2)
    ratios = []
    for n in (64, 128, 256):
        dom = BoundedDomain.unit_square(n)
        ratios.append(solve_homogenized(dom, g0, grad2, F).info["h2_ratio"])
    assert max(ratios) / min(ratios) < 1.05


def test_under_resolution_names_values(grad2, layered):
    dom = BoundedDomain.unit_square(32)
    with pytest.raises(MeshResolutionError, match=r"mesh_h = 0\.03125.*eps/16 = 0\.0078125"):
        solve_dirichlet(dom, VariableForm.oscillatory(layered, grad2, 0.125), np.ones(dom.num_nodes))


def test_norms_examples():
    dom = BoundedDomain.unit_square(128)
    z = norms(GridField(np.zeros(dom.num_nodes), dom))
    assert (z.l2, z.h1, z.h2) == (0.0, 0.0, 0.0)
    s = norms(GridField.from_function(dom, sinsin))
    assert s.l2 == pytest.approx(0.5, abs=1e-4)
    assert s.h1 == pytest.approx(np.sqrt(0.25 + np.pi ** 2 / 2), abs=1e-3)
    p = norms(GridField.from_function(dom, lambda x: x[..., 0] * (1 - x[..., 0])), False)
    # ||u||^2 = 1/30, ||u'||^2 = 1/3
    assert p.h1 == pytest.approx(np.sqrt(1 / 3 + 1 / 30), abs=1e-4)


def test_h1_decomposition(rng):
    dom = BoundedDomain.unit_square(16)
    u = GridField(rng.standard_normal(dom.num_nodes), dom)
    n = norms(u, False)
    du = np.sqrt(u.values[:, 0] @ (dom.laplace @ u.values[:, 0]))
    assert n.h1 ** 2 == pytest.approx(n.l2 ** 2 + du ** 2, rel=1e-12)


def test_coercivity_sandwich(grad2, layered, rng):
    dom = BoundedDomain.unit_square(64)
    form = VariableForm.oscillatory(layered, grad2, 0.25)
    I = dom.interior
    for _ in range(50):
        u = np.zeros((dom.num_nodes, 1))
        u[I, 0] = rng.standard_normal(len(I))
        a = form.energy(dom, u).real
        du = u[:, 0] @ (dom.laplace @ u[:, 0])
        assert form.c0 * du <= a * (1 + 1e-12)
        assert a <= form.c1 * du * (1 + 1e-12)


def test_hermitian_form(grad2, layered, rng):
    dom = BoundedDomain.unit_square(32)
    form = VariableForm.oscillatory(layered, grad2, 0.5)
    u, v = rng.standard_normal((2, dom.num_nodes, 1))
    scale = norms(GridField(u, dom), False).h1 * norms(GridField(v, dom), False).h1
    assert abs(form.energy(dom, u, v) - np.conj(form.energy(dom, v, u))) <= 1e-12 * scale


def test_galerkin_orthogonality(grad2, layered, rng):
    dom = BoundedDomain.unit_square(64)
    form = VariableForm.oscillatory(layered, grad2, 0.25)
    F = rng.standard_normal(dom.num_nodes)
    u = solve_dirichlet(dom, form, F, rtol=1e-12)
    r = (form.stiffness(dom) @ u.values[:, 0] - dom.mass @ F)[dom.interior]
    assert np.linalg.norm(r) <= 1e-10 * np.linalg.norm((dom.mass @ F)[dom.interior])


@pytest.mark.parametrize("precond", ["jacobi", "direct"])
def test_preconditioners_agree(grad2, layered, precond):
    dom = BoundedDomain.unit_square(64)
    form = VariableForm.oscillatory(layered, grad2, 0.25)
    F = GridField.from_function(dom, sinsin)
    a = solve_dirichlet(dom, form, F, "amg")
    b = solve_dirichlet(dom, form, F, precond)
    assert np.abs(a.values - b.values).max() < 1e-8


def test_layer_measure_linear_in_eps():
    dom = BoundedDomain.unit_square(128)
    for eps in (1 / 16, 1 / 32, 1 / 64):
        ratio = dom.layer_measure(eps) / (eps * dom.boundary_length)
        assert 0.8 <= ratio <= 1.2


def test_discrepancy_trivial_cases(grad2, layered):
    dom = BoundedDomain.unit_square(32)
    form = VariableForm.oscillatory(layered, grad2, 0.5)
    w = solve_discrepancy(dom, form, np.zeros(dom.num_nodes))
    assert np.all(w.values == 0)
    cform = VariableForm.oscillatory(constant_coefficient(np.eye(2)), grad2, 0.5)
    w = solve_discrepancy(dom, cform, np.full(dom.num_nodes, 0.7))
    assert np.allclose(w.values, 0.7, atol=1e-10)


def test_discrepancy_sqrt_eps_bound(grad2, layered, layered_cell):
    F, _ = manufactured_source("unit-square", layered_cell.g_eff, grad2)
    margin = extension_margin(1 / 8, Lattice.cubic(2))
    vals = {}
    for eps in (1 / 8, 1 / 16, 1 / 32):
        dom = BoundedDomain.unit_square(int(16 / eps))
        u0 = solve_homogenized(dom, layered_cell.g_eff, grad2, F)
        corr = corrector_field(eps, layered_cell, extend(u0, margin), grad2, dom)
        w = solve_discrepancy(dom, VariableForm.oscillatory(layered, grad2, eps), corr)
        fn = norms(GridField.from_function(dom, F), False).l2
        vals[eps] = norms(w, False).h1 / fn
    C = vals[1 / 8] / np.sqrt(1 / 8)
    for eps in (1 / 16, 1 / 32):
        assert vals[eps] <= C * np.sqrt(eps)


def test_energy_inequality(grad2, layered, rng):
    dom = BoundedDomain.unit_square(64)
    form = VariableForm.oscillatory(layered, grad2, 0.25)
    C = (1 + dom.diameter ** 2) / grad2.alpha0 * layered.norm_ginv
    for _ in range(5):
        F = GridField(rng.standard_normal(dom.num_nodes), dom)
        u = solve_dirichlet(dom, form, F)
        assert dual_norm(F) <= norms(F, False).l2
        assert norms(u, False).h1 <= C * dual_norm(F)


def test_export(tmp_path):
    dom = BoundedDomain.unit_square(4)
    path = tmp_path / "f.txt"
    dom.export(path, u=GridField.from_function(dom, sinsin))
    data = np.loadtxt(path)
    assert data.shape == (25, 3)
