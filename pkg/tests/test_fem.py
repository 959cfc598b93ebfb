import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dsa.errors import ConfigurationError, DimensionError, DivergenceError, DomainError
from dsa.fem import (
    DiffusivityParams,
    EnergyOperator,
    ScalarField2D,
    StructuredMesh,
    apply_dirichlet,
    assemble_energy,
    diffusivity_field,
    energy_gradient,
    exact_solution,
    exact_solution_and_forcing,
    gauss_quadrature,
    l2_error,
    lagrange_basis_1d,
    manufactured_forcing,
    pad_zero_neumann,
    solve_poisson,
)


def random_interior(mesh, rng):
    return apply_dirichlet(rng.normal(size=mesh.node_shape), 0.0)


def fd_energy_gradient(op, U, step=1e-6):
    g = np.zeros_like(U)
    for idx in zip(*np.nonzero(op.interior)):
        up = U.copy()
        um = U.copy()
        up[idx] += step
        um[idx] -= step
        g[idx] = (op.energy(up) - op.energy(um)) / (2 * step)
    return g


# -- basis and quadrature ------------------------------------------------------


def test_lagrange_examples():
    v, dv = lagrange_basis_1d(1, 0.0)
    np.testing.assert_allclose(v, [0.5, 0.5])
    np.testing.assert_allclose(dv, [-0.5, 0.5])
    v, _ = lagrange_basis_1d(2, 0.0)
    np.testing.assert_allclose(v, [0, 1, 0], atol=1e-15)
    with pytest.raises(DomainError):
        lagrange_basis_1d(2, 1.5)


@pytest.mark.parametrize("d", [1, 2, 3])
def test_lagrange_kronecker_and_unity(d):
    nodes = np.linspace(-1, 1, d + 1)
    v, _ = lagrange_basis_1d(d, nodes)
    np.testing.assert_allclose(v, np.eye(d + 1), atol=1e-14)
    xs = np.linspace(-1, 1, 37)
    v, dv = lagrange_basis_1d(d, xs)
    np.testing.assert_allclose(v.sum(axis=1), 1.0, atol=1e-13)
    np.testing.assert_allclose(dv.sum(axis=1), 0.0, atol=1e-12)
    h = 1e-6
    inner = xs[1:-1]
    fd = (lagrange_basis_1d(d, inner + h)[0] - lagrange_basis_1d(d, inner - h)[0]) / (2 * h)
    np.testing.assert_allclose(dv[1:-1], fd, atol=1e-8)


def test_gauss_examples():
    p, w = gauss_quadrature(1)
    assert p.tolist() == [0.0] and w.tolist() == [2.0]
    p, w = gauss_quadrature(2)
    np.testing.assert_allclose(p, [-1 / math.sqrt(3), 1 / math.sqrt(3)], rtol=1e-15)
    np.testing.assert_allclose(w, [1, 1], rtol=1e-15)
    p, w = gauss_quadrature(3)
    assert np.dot(w, p**4) == pytest.approx(0.4, abs=1e-15)
    for bad in (0, 6, 2.5):
        with pytest.raises(ConfigurationError):
            gauss_quadrature(bad)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 5), st.data())
def test_gauss_exactness(npts, data):
    deg = data.draw(st.integers(0, 2 * npts - 1))
    p, w = gauss_quadrature(npts)
    exact = 0.0 if deg % 2 else 2.0 / (deg + 1)
    assert abs(np.dot(w, p**deg) - exact) <= 1e-14


# -- energy and gradient ---------------------------------------------------------


def test_energy_examples():
    mesh = StructuredMesh(3, 4, 2)
    assert assemble_energy(mesh, np.zeros(mesh.node_shape), 1.0, manufactured_forcing) == 0.0
    bump = np.zeros(mesh.node_shape)
    bump[3, 4] = 1.0
    assert assemble_energy(mesh, bump, 1.0, 0.0) > 0
    with pytest.raises(DimensionError):
        assemble_energy(mesh, np.zeros((3, 3)))


def test_energy_of_interpolant_matches_closed_form():
    # For u = sin(pi x) sin(pi y): 1/2 int |grad u|^2 = pi^2 / 4, int f u = pi^2 / 2.
    mesh = StructuredMesh(16, 16, 3)
    U = ScalarField2D.interpolate(mesh, exact_solution)
    J = assemble_energy(mesh, U, 1.0, manufactured_forcing)
    assert J == pytest.approx(-math.pi**2 / 4, rel=1e-6)


@pytest.mark.parametrize("d", [1, 2, 3])
@pytest.mark.parametrize("n", [1, 3, 8])
def test_energy_gradient_fd(d, n, rng):
    mesh = StructuredMesh(n, max(2, n - 1), d)
    nu = DiffusivityParams.sample(rng)
    op = EnergyOperator(mesh, nu, manufactured_forcing)
    U = random_interior(mesh, rng)
    g = op.gradient(U)
    fd = fd_energy_gradient(op, U)
    assert np.max(np.abs(g - fd)) / max(np.max(np.abs(fd)), 1e-300) <= 1e-6
    assert not np.any(g[~op.interior])


def test_gradient_examples():
    mesh = StructuredMesh(4, 4, 1)
    assert not np.any(energy_gradient(mesh, np.zeros(mesh.node_shape), 1.0, 0.0))
    op = EnergyOperator(mesh, 1.0, manufactured_forcing)
    g = op.gradient(np.zeros(mesh.node_shape))
    load = op.load()
    np.testing.assert_allclose(g[1:-1, 1:-1], -load[1:-1, 1:-1], rtol=1e-15)
    assert g[2, 2] < 0 and g[2, 2] == g[op.interior].min()


@pytest.mark.parametrize("d", [1, 2, 3])
def test_energy_is_quadratic_along_lines(d, rng):
    mesh = StructuredMesh(4, 3, d)
    op = EnergyOperator(mesh, DiffusivityParams.sample(rng), manufactured_forcing)
    U, V = random_interior(mesh, rng), random_interior(mesh, rng)
    ts = np.array([-1.0, 0.0, 1.0])
    coef = np.polyfit(ts, [op.energy(U + t * V) for t in ts], 2)
    for t in (-2.5, 0.3, 1.7, 4.0):
        assert abs(np.polyval(coef, t) - op.energy(U + t * V)) <= 1e-10 * max(1.0, abs(op.energy(U + t * V)))


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_nonfinite_coefficient_rejected():
    from dsa.errors import NumericError

    mesh = StructuredMesh(2, 2, 1)
    with pytest.raises(NumericError):
        assemble_energy(mesh, np.zeros(mesh.node_shape), lambda x, y: np.log(x - 0.5), 0.0)


# -- boundary handling ---------------------------------------------------------------


def test_apply_dirichlet(rng):
    U = rng.normal(size=(5, 6))
    for g in (0.0, 2.5):
        out = apply_dirichlet(U, g)
        ring = np.concatenate([out[0], out[-1], out[:, 0], out[:, -1]])
        assert np.all(ring == g)
        np.testing.assert_array_equal(out[1:-1, 1:-1], U[1:-1, 1:-1])
        np.testing.assert_array_equal(apply_dirichlet(out, g), out)


def test_pad_zero_neumann():
    inner = np.arange(6.0).reshape(2, 3)
    out = pad_zero_neumann(inner)
    assert out.shape == (4, 5)
    np.testing.assert_array_equal(out[1:-1, 1:-1], inner)
    np.testing.assert_array_equal(out[0, 1:-1], inner[0])
    np.testing.assert_array_equal(out[1:-1, -1], inner[:, -1])


# -- solver ------------------------------------------------------------------------


@pytest.mark.parametrize("method", ["gd", "adam", "cg"])
def test_zero_forcing_gives_zero(method):
    res = solve_poisson(StructuredMesh(4, 4, 2), 1.0, 0.0, method, 1e-10)
    assert res.iterations == 0
    assert not np.any(res.field.values)


def test_manufactured_solution_and_rates():
    errs = {}
    for d, n in [(1, 16), (1, 32), (1, 64), (2, 8), (2, 16), (2, 32)]:
        res = solve_poisson(StructuredMesh(n, n, d), 1.0, manufactured_forcing, "cg", 1e-11)
        assert res.grad_norm <= 1e-11
        errs[d, n] = l2_error(res.field, exact_solution)
    assert errs[1, 32] <= 5e-3
    for d, lo, hi in [(1, 3.0, 4.5), (2, 6.0, np.inf)]:
        coarse = [n for dd, n in errs if dd == d][:-1]
        for n in coarse:
            assert lo <= errs[d, n] / errs[d, 2 * n] <= hi
    assert errs[2, 16] < errs[1, 32]


def test_solver_agreement():
    tol = 1e-7
    mesh = StructuredMesh(6, 5, 1)
    nu = DiffusivityParams((1.0, -2.0, 0.5, 3.0))
    sols = {m: solve_poisson(mesh, nu, manufactured_forcing, m, tol) for m in ("gd", "adam", "cg")}
    for m, res in sols.items():
        assert res.grad_norm <= tol, m
    for m in ("gd", "adam"):
        assert np.max(np.abs(sols[m].field.values - sols["cg"].field.values)) <= 10 * tol


def test_boundary_untouched_every_iteration():
    mesh = StructuredMesh(5, 5, 2)
    op = EnergyOperator(mesh, DiffusivityParams((2, 0, -1, 0)), manufactured_forcing)
    res = solve_poisson(mesh, op.nu_w / op.wdet, op.f_w / op.wdet, "gd", 1e-12, max_iters=50, log_every=1)
    assert len(res.history) == 51
    assert not np.any(res.field.values[~op.interior])
    Js = [J for _, J, _ in res.history]
    assert all(b <= a + 1e-12 for a, b in zip(Js, Js[1:]))


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_detected():
    with pytest.raises(DivergenceError):
        solve_poisson(StructuredMesh(4, 4, 1), 1.0, manufactured_forcing, "gd", 1e-9, 5000, lr=10.0)


def test_solver_config_errors():
    mesh = StructuredMesh(2, 2, 1)
    with pytest.raises(ConfigurationError):
        solve_poisson(mesh, method="newton")
    with pytest.raises(ConfigurationError):
        solve_poisson(mesh, tol=0)
    with pytest.raises(ConfigurationError):
        StructuredMesh(2, 2, 4)


# -- manufactured solution, error norm, diffusivity ------------------------------------


def test_exact_solution_examples():
    u, f = exact_solution_and_forcing(0.5, 0.5)
    assert u == pytest.approx(1.0) and f == pytest.approx(2 * math.pi**2)
    t = np.linspace(0, 1, 9)
    for x, y in [(t, 0 * t), (t, 0 * t + 1), (0 * t, t), (0 * t + 1, t)]:
        assert np.max(np.abs(exact_solution(x, y))) <= 1e-15


def test_exact_solution_satisfies_pde(rng):
    h = 1e-4
    for x, y in rng.uniform(0.05, 0.95, size=(20, 2)):
        lap = (
            exact_solution(x + h, y) + exact_solution(x - h, y) + exact_solution(x, y + h)
            + exact_solution(x, y - h) - 4 * exact_solution(x, y)
        ) / h**2
        f = exact_solution_and_forcing(x, y)[1]
        assert abs(-lap - f) / abs(f) <= 1e-6


def test_l2_error_examples():
    mesh = StructuredMesh(5, 3, 1)
    bil = lambda x, y: 1 + 2 * x - y + 3 * x * y
    assert l2_error(ScalarField2D.interpolate(mesh, bil), bil) <= 1e-14
    assert l2_error(ScalarField2D.zeros(mesh), 0.7) == pytest.approx(0.7, rel=1e-14)


def test_interpolant_error_decreases():
    errs = [l2_error(ScalarField2D.interpolate(StructuredMesh(n, n, 1), exact_solution), exact_solution) for n in (8, 16, 32, 64)]
    for a, b in zip(errs, errs[1:]):
        assert a / b >= 3


def test_diffusivity_examples():
    assert diffusivity_field(DiffusivityParams(), 0.3, 0.8) == 1.0
    lam = 1 / (1 + 0.25 * 1.72**2)
    assert lam == pytest.approx(0.5749, abs=1e-4)
    nu = diffusivity_field(DiffusivityParams((1, 0, 0, 0)), 0.0, 0.0)
    assert nu == pytest.approx(math.exp(0.86**2 * lam), rel=1e-14)
    assert nu == pytest.approx(1.530, abs=1e-3)
    with pytest.raises(DomainError):
        DiffusivityParams((4, 0, 0, 0))
    with pytest.raises(DimensionError):
        DiffusivityParams((0, 0, 0))


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-3, 3), min_size=4, max_size=4))
def test_diffusivity_positive(omega):
    xs = np.linspace(0, 1, 21)
    X, Y = np.meshgrid(xs, xs)
    nu = DiffusivityParams(tuple(omega))(X, Y)
    assert nu.shape == X.shape and np.all(nu > 0) and np.all(np.isfinite(nu))


def test_sampler_is_seeded():
    a, b = DiffusivityParams.sample(7), DiffusivityParams.sample(7)
    assert a == b and all(-3 <= w <= 3 for w in a.omega)
