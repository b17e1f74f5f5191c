import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from aclab.errors import EllipticityError, NonConvergenceError, ParameterError, StaleSolutionError
from aclab.fields import gamma_preset
from aclab.mesh import BoxDomain, NodalField, build_mesh, interpolate
from aclab.pde import (DtNMap, FluxLaw, QuasilinearProblem, SolverOptions, anisotropy_matrix, check_exponent,
                       dtn_p_laplace, dtn_pair, jacobian_eigen_error, laplace_extension, sample_separated_pairs,
                       solve_linear_anisotropic, solve_p_laplace, solve_quasilinear, taylor_remainder)

vectors = arrays(float, 3, elements=st.floats(-5, 5)).filter(lambda v: np.linalg.norm(v) > 1e-2)
exponents = st.sampled_from([1.2, 1.5, 1.8, 2.5, 3.0, 4.0, 6.0])


@pytest.mark.parametrize("p", [2.0, 1.0, 0.5, float("inf"), float("nan")])
def test_exponent_range(p):
    with pytest.raises(ParameterError, match=r"p must lie in \(1,2\)∪\(2,∞\)"):
        check_exponent(p)


@given(exponents, vectors)
def test_jacobian_symmetric_with_closed_form_eigs(p, g):
    law = FluxLaw(p)
    J = law.jacobian(g)
    assert np.allclose(J, J.T, atol=0, rtol=1e-15)
    assert jacobian_eigen_error(law, g[None]) <= 1e-12
    # eigenvector of the (p-1) eigenvalue is g itself
    assert np.allclose(J @ g, (p - 1) * np.linalg.norm(g) ** (p - 2) * g, rtol=1e-12)


@given(exponents, vectors, vectors)
def test_jacobian_matches_finite_difference(p, g, d):
    law = FluxLaw(p)
    h = 1e-6
    fd = (law.flux(g + h * d) - law.flux(g - h * d)) / (2 * h)
    assert np.allclose(fd, law.jacobian(g) @ d, rtol=1e-5, atol=1e-6 * np.linalg.norm(d))


@pytest.mark.parametrize("p", [1.5, 3.0, 4.0])
def test_taylor_identity(p):
    rng = np.random.default_rng(7)
    a, b = sample_separated_pairs(rng, 1000)
    law = FluxLaw(p)
    r = taylor_remainder(law, a, b)
    scale = np.linalg.norm(law.flux(a), axis=1) + np.linalg.norm(law.flux(b), axis=1)
    assert np.max(np.linalg.norm(r, axis=1) / scale) <= 1e-10


def test_anisotropy_for_linear_v():
    z = np.array([0.6, 0.0, 0.8])
    A = anisotropy_matrix(3.0, z[None])[0]
    assert np.allclose(A, np.eye(3) + np.outer(z, z), atol=1e-15)


@pytest.mark.parametrize("preset", ["constant-iso", "constant-aniso"])
@pytest.mark.parametrize("p", [1.5, 3.0])
def test_linear_data_exact(mesh9, preset, p):
    g = gamma_preset(preset, mesh=mesh9)
    z = np.array([0.3, -0.5, 0.8])
    u = solve_quasilinear(g, p, mesh9.nodes @ z, mesh=mesh9)
    assert u.info.converged and u.info.iterations <= 3
    assert np.max(np.abs(u.values - mesh9.nodes @ z)) <= 1e-9


def test_zero_data(mesh5):
    u = solve_quasilinear(gamma_preset("constant-iso"), 3.0, 0.0, mesh=mesh5)
    assert np.max(np.abs(u.values)) == 0


def test_p_laplace_coordinate_and_constant(mesh9):
    x1 = mesh9.nodes[:, 0]
    v = solve_p_laplace(3.0, x1, mesh=mesh9, initial=np.zeros_like(x1))
    assert np.max(np.abs(v.values - x1)) <= 1e-9
    c = solve_p_laplace(1.5, 0.7, mesh=mesh9)
    assert np.max(np.abs(c.values - 0.7)) <= 1e-12


@pytest.mark.parametrize("p", [1.5, 3.0])
def test_p_laplace_homogeneity(mesh5, p):
    f = lambda x: x[:, 0] + 0.3 * np.sin(3 * x[:, 1]) + x[:, 2] ** 2
    opts = SolverOptions(tol=1e-12)
    v1 = solve_p_laplace(p, f, opts, mesh=mesh5)
    v2 = solve_p_laplace(p, lambda x: 2 * f(x), opts, mesh=mesh5)
    assert np.max(np.abs(v2.values - 2 * v1.values)) <= 1e-8


def test_energy_monotone_and_telemetry(mesh9):
    g = gamma_preset("bump-iso", mesh=mesh9)
    f = lambda x: x[:, 0] + 0.5 * np.cos(2 * x[:, 1])
    u = solve_quasilinear(g, 3.0, f, mesh=mesh9, initial=np.zeros(mesh9.n_nodes), run_id="t")
    e = np.array(u.info.energies)
    assert np.all(np.diff(e) <= 1e-14 * np.abs(e[:-1]))
    rows = u.info.rows()
    assert rows[0][:2] == ("t", 0) and len(rows) == len(e)


def test_weak_residual_small(mesh9):
    g = gamma_preset("bump-iso", mesh=mesh9)
    u = solve_quasilinear(g, 1.5, lambda x: x[:, 0], mesh=mesh9)
    r = QuasilinearProblem(mesh9, g, 1.5, u.info.delta).residual(u.values)
    assert np.linalg.norm(r[mesh9.interior_nodes]) <= 1e-10 * np.linalg.norm(r)


def test_bump_refinement_self_convergence():
    g = gamma_preset("bump-iso")
    sols = {}
    for n in (5, 9, 17):
        m = build_mesh(BoxDomain.centered_unit(3), n)
        sols[n] = (m, solve_quasilinear(g, 3.0, lambda x: x[:, 0], mesh=m).values)

    def coarse(n, step):
        m, u = sols[n]
        idx = np.arange(0, n, step)
        I, J, K = np.meshgrid(idx, idx, idx, indexing="ij")
        return u[(I + n * (J + n * K)).ravel(order="F")]
    d1 = np.max(np.abs(coarse(5, 1) - coarse(9, 2)))
    d2 = np.max(np.abs(coarse(9, 2) - coarse(17, 4)))
    assert d1 / d2 >= 3


def test_nonconvergence_reports_history(mesh5):
    opts = SolverOptions(max_iter=1, tol=1e-14)
    with pytest.raises(NonConvergenceError) as exc:
        solve_quasilinear(gamma_preset("bump-iso"), 4.0, lambda x: 5 * np.sin(4 * x[:, 0]), opts, mesh=mesh5,
                          initial=np.zeros(mesh5.n_nodes))
    assert len(exc.value.history) >= 1


def test_linear_anisotropic_examples(mesh9):
    p, z = 3.0, np.array([0.0, 1.0, 0.0])
    A = np.eye(3) + (p - 2) * np.outer(z, z)
    R = solve_linear_anisotropic(A, 2.0 * z, 0.0, mesh=mesh9)
    assert np.max(np.abs(R.values)) <= 1e-12
    V = solve_linear_anisotropic(A, None, mesh9.nodes @ z, mesh=mesh9)
    assert np.max(np.abs(V.values - mesh9.nodes @ z)) <= 1e-10


def test_linear_anisotropic_exponential_converges():
    from aclab.reconstruct import make_family1
    p = 3.0
    f = make_family1((np.pi, 0, 0), (0, 0, 1), (0, 1, 0), 1.0, p)
    errs = []
    for n in (5, 9, 17):
        m = build_mesh(BoxDomain.centered_unit(3), n)
        exact = np.exp(m.nodes @ f.zeta_plus)
        V = solve_linear_anisotropic(f.A, None, exact, mesh=m)
        errs.append(np.max(np.abs(V.as_complex() - exact)))
    assert errs[0] / errs[1] > 3 and errs[1] / errs[2] > 3


def test_linear_anisotropic_linearity(mesh5, rng):
    A = np.diag([1.0, 2.0, 3.0])
    f1, f2 = rng.normal(size=mesh5.n_nodes), rng.normal(size=mesh5.n_nodes)
    F = np.array([0.2, 0.0, -1.0])
    s = lambda f, F: solve_linear_anisotropic(A, F, f, mesh=mesh5).values
    assert np.allclose(s(f1 + 2 * f2, 3 * F), s(f1, F) + 2 * s(f2, F), atol=1e-10)


def test_linear_indefinite_rejected(mesh5):
    with pytest.raises(EllipticityError):
        solve_linear_anisotropic(np.diag([1.0, -1.0, 1.0]), None, 0.0, mesh=mesh5)


def test_dtn_pair_linear_examples(mesh9):
    z = np.array([1.0, 0, 0])
    g = gamma_preset("constant-iso", mesh=mesh9)
    u = solve_quasilinear(g, 3.0, mesh9.nodes @ z, mesh=mesh9)
    assert dtn_pair(g, 3.0, u, w=mesh9.nodes @ z) == pytest.approx(2.0, abs=1e-10)
    v = solve_p_laplace(3.0, mesh9.nodes @ z, mesh=mesh9)
    assert dtn_p_laplace(3.0, v, w=mesh9.nodes @ z) == pytest.approx(1.0, abs=1e-10)


def test_dtn_pair_extension_independent(mesh9, rng):
    g = gamma_preset("bump-iso", mesh=mesh9)
    u = solve_quasilinear(g, 3.0, lambda x: x[:, 0] + 0.2 * x[:, 1] ** 2, mesh=mesh9)
    w = np.cos(mesh9.nodes[:, 2])
    W1 = laplace_extension(mesh9, w)
    W2 = W1.copy()
    W2[mesh9.interior_nodes] += rng.normal(size=len(mesh9.interior_nodes))
    assert abs(dtn_pair(g, 3.0, u, W=W1) - dtn_pair(g, 3.0, u, W=W2)) <= 1e-8


def test_dtn_p_laplace_scaling(mesh9):
    v = solve_p_laplace(3.0, lambda x: x[:, 0] + 0.3 * x[:, 1] ** 2, mesh=mesh9)
    w = mesh9.nodes[:, 1]
    base = dtn_p_laplace(3.0, v, w=w)
    for c in (0.5, 2.0):
        assert dtn_p_laplace(3.0, v, w=w, scale=c) == pytest.approx(c ** 2 * base, rel=1e-12)


def test_dtn_refinement():
    g = gamma_preset("bump-iso")
    vals = []
    for n in (9, 17):
        m = build_mesh(BoxDomain.centered_unit(3), n)
        u = solve_quasilinear(g, 3.0, lambda x: x[:, 0], mesh=m)
        vals.append(dtn_pair(g, 3.0, u, w=m.nodes[:, 0]))
    assert abs(vals[0] - vals[1]) <= 0.5 * (1 / 8) * abs(vals[1])


def test_stale_solution(mesh5):
    u = solve_p_laplace(3.0, lambda x: x[:, 0], mesh=mesh5)
    u.info.converged = False
    with pytest.raises(StaleSolutionError):
        dtn_pair(None, 3.0, u, w=1.0)


def test_dtn_map_pair_counts_solves(mesh5):
    d = DtNMap(gamma_preset("constant-iso"), 3.0, mesh5)
    val = d.pair(mesh5.nodes[:, 0], mesh5.nodes[:, 0])
    assert val == pytest.approx(2.0, abs=1e-10) and d.solves == 1
