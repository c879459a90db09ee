import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from homogenize.cell import solve_cell_problem
from homogenize.dirichlet import BoundedDomain, GridField, norms, solve_homogenized
from homogenize.harness import manufactured_source
from homogenize.lattice import CellGrid, Lattice, constant_coefficient
from homogenize.smoothing import (BoxField, corrector_field, extend, extension_margin, make_cutoff,
                                  steklov_smooth, steklov_weights)

LAT = Lattice.cubic(2)


def sinsin(x):
    return np.sin(np.pi * x[..., 0]) * np.sin(np.pi * x[..., 1])


def box(values, h, origin=(0.0, 0.0)):
    return BoxField(np.asarray(values, dtype=float), origin, h)


@pytest.mark.parametrize("width,h", [(0.1, 0.01), (0.1, 0.03), (0.25, 0.1), (0.05, 0.05)])
def test_weights_sum_to_one(width, h):
    assert steklov_weights(width, h).sum() == pytest.approx(1.0, abs=1e-14)


def test_constant_exact():
    out = steklov_smooth(box(np.full((40, 40), 3.25), 0.025), 0.1)
    assert np.all(out.values == 3.25)


def test_affine_shift():
    # literal window [x - eps, x]: S_eps of an affine function is its value at x - eps/2
    h, eps = 0.01, 0.073
    X = box(np.zeros((80, 80)), h).coordinates()
    u = box(2 * X[..., 0] - 3 * X[..., 1] + 1, h)
    out = steklov_smooth(u, eps)
    Y = out.coordinates()
    assert np.allclose(out.values[..., 0], 2 * (Y[..., 0] - eps / 2) - 3 * (Y[..., 1] - eps / 2) + 1,
                       atol=1e-12)


def test_sine_oracle():
    # (1/eps) int_0^eps sin(2 pi k (x - t)) dt at x = 0.3, k = 3, eps = 0.1, by quadrature
    expected = -0.8583936913341397
    h, eps, k = 1 / 4000, 0.1, 3
    X = box(np.zeros((1300, 402)), h).coordinates()
    u = box(np.sin(2 * np.pi * k * X[..., 0]), h)
    out = steklov_smooth(u, eps)
    i = int(round((0.3 - out.origin[0]) / h))
    assert out.origin[0] + i * h == pytest.approx(0.3)
    assert out.values[i, 0, 0] == pytest.approx(expected, abs=1e-5)
    amp = abs((1 - np.exp(-2j * np.pi * k * eps)) / (2j * np.pi * k * eps))
    assert np.abs(out.values[..., 0, 0]).max() == pytest.approx(amp, abs=1e-5)


def test_padding_insufficient():
    with pytest.raises(ValueError, match="padding"):
        steklov_smooth(box(np.ones((10, 10)), 0.1), 1.0)
    with pytest.raises(ValueError, match="padding"):
        steklov_smooth(box(np.ones((20, 20)), 0.1), 0.5, cover=((0, 0), (1.9, 1.9)))


fields = st.integers(0, 2 ** 31 - 1)


@settings(max_examples=20, deadline=None)
@given(fields, st.floats(0.02, 0.2))
def test_linear_positive_contraction(seed, eps):
    rng = np.random.default_rng(seed)
    h = 0.01
    u = rng.standard_normal((60, 60))
    v = rng.standard_normal((60, 60))
    Su = steklov_smooth(box(u, h), eps, periodic=True).values
    Sv = steklov_smooth(box(v, h), eps, periodic=True).values
    Suv = steklov_smooth(box(2 * u - v, h), eps, periodic=True).values
    assert np.allclose(Suv, 2 * Su - Sv, atol=1e-12)
    assert np.linalg.norm(Su) <= np.linalg.norm(u) * (1 + 1e-12)
    assert steklov_smooth(box(np.abs(u), h), eps).values.min() >= 0


@settings(max_examples=20, deadline=None)
@given(fields, st.integers(-7, 7), st.integers(-7, 7))
def test_translation_commutes(seed, sx, sy):
    rng = np.random.default_rng(seed)
    u = rng.standard_normal((48, 48))
    S = steklov_smooth(box(u, 1 / 48), 0.11, periodic=True).values
    T = steklov_smooth(box(np.roll(u, (sx, sy), axis=(0, 1)), 1 / 48), 0.11, periodic=True).values
    assert np.allclose(T, np.roll(S, (sx, sy), axis=(0, 1)), atol=1e-12)


def test_extension_zero_and_identity():
    dom = BoundedDomain.unit_square(64)
    zero = extend(GridField(np.zeros(dom.num_nodes), dom), 0.2)
    assert np.all(zero.values == 0)
    u = GridField.from_function(dom, sinsin)
    ext = extend(u, 0.2)
    P = int(round(-ext.origin[0] / ext.h))
    assert np.array_equal(ext.values[P:P + 65, P:P + 65].reshape(-1, 1), u.values)


def test_extension_ghost_layer_odd_reflection():
    n = 128
    h = 1 / n
    dom = BoundedDomain.unit_square(n)
    ext = extend(GridField.from_function(dom, sinsin), 0.25)
    P = int(round(-ext.origin[0] / ext.h))
    y = np.arange(n + 1) * h
    ghost = ext.values[P - 1, P:P + n + 1, 0]
    assert np.abs(ghost - (-np.sin(np.pi * h) * np.sin(np.pi * y))).max() < 5 * h ** 3 * np.pi ** 3


def test_extension_c1_across_face():
    n = 128
    dom = BoundedDomain.unit_square(n)
    ext = extend(GridField.from_function(dom, sinsin), 0.25)
    P = int(round(-ext.origin[0] / ext.h))
    h = ext.h
    V = ext.values[..., 0]
    # second-order one-sided normal derivatives at x1 = 0 from each side
    inside = (-3 * V[P] + 4 * V[P + 1] - V[P + 2]) / (2 * h)
    outside = (3 * V[P] - 4 * V[P - 1] + V[P - 2]) / (2 * h)
    assert np.abs(inside - outside).max() < 10 * np.pi ** 3 * h ** 2


def test_extension_disk_matches_inside():
    dom = BoundedDomain.unit_disk(0.05)
    u = GridField.from_function(dom, lambda x: 1 - (x ** 2).sum(-1))
    ext = extend(u, 0.3)
    pts = np.array([[0.1, 0.2], [0.5, -0.3], [-0.7, 0.1]])
    assert np.allclose(ext.sample(pts)[:, 0], 1 - (pts ** 2).sum(-1), atol=5e-3)
    # 3 u(R - s) - 2 u(R - 2s) = -2 s + 5 s^2 for u = 1 - r^2
    outside = ext.sample(np.array([[1.05, 0.0]]))[0, 0]
    assert outside == pytest.approx(-2 * 0.05 + 5 * 0.05 ** 2, abs=5e-3)


def test_corrector_constant_is_zero(grad2):
    g = constant_coefficient(np.eye(2))
    sol = solve_cell_problem(g, grad2, CellGrid(16))
    dom = BoundedDomain.unit_square(128)
    F, _ = manufactured_source("unit-square", sol.g_eff, grad2)
    u0 = solve_homogenized(dom, sol.g_eff, grad2, F)
    corr = corrector_field(1 / 8, sol, extend(u0, extension_margin(1 / 8, LAT)), grad2, dom)
    assert np.all(corr.values == 0)


def test_corrector_eps_range(grad2, layered_cell):
    dom = BoundedDomain.unit_square(64)
    u0 = GridField.from_function(dom, sinsin)
    with pytest.raises(ValueError, match="0 < eps <= eps2"):
        corrector_field(0.3, layered_cell, extend(u0, 0.2), grad2, dom)


@pytest.fixture(scope="module")
def pipeline(grad2, layered_cell):
    F, _ = manufactured_source("unit-square", layered_cell.g_eff, grad2)
    margin = extension_margin(1 / 8, LAT)
    out = {}
    for eps in (1 / 8, 1 / 16, 1 / 32):
        dom = BoundedDomain.unit_square(int(16 / eps))
        u0 = solve_homogenized(dom, layered_cell.g_eff, grad2, F)
        ext = extend(u0, margin)
        corr = corrector_field(eps, layered_cell, ext, grad2, dom)
        out[eps] = dict(dom=dom, u0=u0, ext=ext, corr=corr,
                        f=norms(GridField.from_function(dom, F), False).l2)
    return out


def test_corrector_l2_smallness(pipeline, grad2, layered, layered_cell):
    from homogenize.cell import bound_constant_M
    M = bound_constant_M(LAT, grad2, layered)
    for eps, d in pipeline.items():
        C_O = d["ext"].norm_ratio
        c_hat = d["u0"].info["h2_ratio"]
        bound = eps * M * np.sqrt(grad2.alpha1) * C_O * c_hat * d["f"]
        assert norms(d["corr"], False).l2 <= bound


def test_phi_h1_sqrt_eps_ratio(pipeline):
    h1 = {}
    for eps, d in pipeline.items():
        theta = make_cutoff(eps, "theta", d["dom"])
        phi = GridField(theta.values[:, None] * d["corr"].values, d["dom"])
        h1[eps] = norms(phi, False).h1
        # support in the boundary layer
        assert np.all(phi.values[d["dom"].boundary_distance >= eps] == 0)
        # cutoff complement vanishes on the layer
        tt = make_cutoff(eps / 2, "theta_tilde", d["dom"]) if eps <= 0.125 else None
        if tt is not None:
            rest = (1 - tt.values)[:, None] * d["corr"].values
            assert np.all(rest[d["dom"].boundary_distance <= eps / 2] == 0)
    for big, small in ((1 / 8, 1 / 16), (1 / 16, 1 / 32)):
        assert 1.2 <= h1[big] / h1[small] <= 1.7


def test_cutoff_examples():
    dom = BoundedDomain.unit_square(128)
    for eps in (1 / 4, 1 / 8, 1 / 16):
        th = make_cutoff(eps, "theta", dom)
        assert np.all(th.values[dom.boundary_distance >= eps] == 0)
        assert np.all(th.values[dom.boundary] == 1)
        assert th.values.min() >= 0 and th.values.max() <= 1
        assert th.profile_kappa == pytest.approx(1.5, abs=1e-6)
        tt = make_cutoff(eps / 2, "theta_tilde", dom)
        assert np.all(tt.values[dom.boundary_distance <= eps / 2] == 1)
        assert np.all(tt.values[dom.boundary_distance >= eps] == 0)
    kappas = [make_cutoff(e, "theta", dom).kappa for e in (1 / 4, 1 / 8, 1 / 16)]
    assert max(kappas) - min(kappas) < 0.1


def test_cutoff_range_errors():
    dom = BoundedDomain.unit_square(16)
    with pytest.raises(ValueError):
        make_cutoff(0.6, "theta", dom)
    with pytest.raises(ValueError):
        make_cutoff(0.3, "theta_tilde", dom)
    with pytest.raises(ValueError):
        make_cutoff(0.1, "bump", dom)
