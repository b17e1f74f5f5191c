"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Criterion 8 carries the ``slow`` marker (about two minutes); deselect it with
``-m 'not slow'``.
"""
import time
import warnings

import numpy as np
import pytest

from aclab import io
from aclab.asymptotics import frechet_check, run_epsilon_experiment
from aclab.cli import main
from aclab.errors import IllConditionedFitWarning
from aclab.fields import gamma_hat_direct, gamma_preset
from aclab.mesh import BoxDomain, build_mesh, interpolate
from aclab.pde import (DtNMap, FluxLaw, SolverOptions, jacobian_eigen_error, sample_separated_pairs,
                       solve_quasilinear, taylor_remainder)
from aclab.reconstruct import (DEFAULT_T, END_TO_END_T, EndToEndIdentity, OracleIdentity, assemble_gamma_hat,
                               frame_residuals, make_family1, matrix_elements_family1, random_family1,
                               random_family2)


@pytest.fixture
def verdict(capsys):
    def emit(name, ok, detail):
        with capsys.disabled():
            print(f"\n{'PASS' if ok else 'FAIL'} {name}: {detail}")
        assert ok, f"{name}: {detail}"
    return emit


def test_c1_algebraic_identities(verdict):
    t0 = time.perf_counter()
    worst = {"nullity": 0.0, "bracket": 0.0, "angle": 0.0, "cos2": 0.0}
    for p in (1.5, 3.0, 4.0):
        rng = np.random.default_rng(20240601 + int(10 * p))
        for make in (random_family1, random_family2):
            for _ in range(1000):
                for k, v in frame_residuals(make(rng, p)).items():
                    if k in worst:
                        worst[k] = max(worst[k], v)
    dt = time.perf_counter() - t0
    ok = (worst["nullity"] <= 1e-10 and worst["bracket"] <= 1e-12 and worst["angle"] <= 1e-12
          and worst["cos2"] <= 1e-14 and dt < 5)
    verdict("C1 algebraic identities", ok,
            " ".join(f"{k}={v:.2e}" for k, v in worst.items()) + f" time={dt:.2f}s")


def test_c2_linear_data_exact(verdict, mesh17):
    t0 = time.perf_counter()
    worst_err, worst_it = 0.0, 0
    presets = (("constant-iso", {"c": 2.0}), ("constant-aniso", {"diag": (2.0, 1.0, 1.0)}))
    for name, params in presets:
        g = gamma_preset(name, params, mesh=mesh17)
        for p in (1.5, 3.0):
            for z in ((1, 0, 0), (0.3, -0.5, 0.8), (0, 0, 0)):
                f = lambda x: x @ np.asarray(z, float) + 0.25
                u = solve_quasilinear(g, p, interpolate(mesh17, f).values, mesh=mesh17)
                worst_err = max(worst_err, np.max(np.abs(u.values - f(mesh17.nodes))))
                worst_it = max(worst_it, u.info.iterations)
    dt = time.perf_counter() - t0
    verdict("C2 linear data exact", worst_err <= 1e-9 and worst_it <= 3 and dt < 10,
            f"max_err={worst_err:.2e} max_newton={worst_it} time={dt:.2f}s")


def test_c3_taylor_and_jacobian(verdict):
    worst_t, worst_e = 0.0, 0.0
    for p in (1.5, 3.0, 4.0):
        rng = np.random.default_rng(11 + int(10 * p))
        law = FluxLaw(p)
        a, b = sample_separated_pairs(rng, 1000)
        r = taylor_remainder(law, a, b)
        scale = np.linalg.norm(law.flux(a), axis=1) + np.linalg.norm(law.flux(b), axis=1)
        worst_t = max(worst_t, np.max(np.linalg.norm(r, axis=1) / scale))
        worst_e = max(worst_e, jacobian_eigen_error(law, rng.normal(size=(1000, 3))))
    verdict("C3 Taylor and Jacobian", worst_t <= 1e-10 and worst_e <= 1e-12,
            f"taylor={worst_t:.2e} eigen={worst_e:.2e}")


def test_c4_frechet(verdict, mesh17):
    opts = SolverOptions(tol=1e-12)
    phi0 = mesh17.nodes[:, 1]
    tau = (4e-2, 2e-2, 1e-2)
    self_err, orders, decreasing = 0.0, [], True
    for p in (1.5, 3.0, 4.0):
        res = frechet_check(p, phi0, phi0, tau, mesh=mesh17, opts=opts)
        self_err = max(self_err, max(res.errors))
    # the exponential sweep runs on the p > 2 pipeline exponents
    for p in (3.0, 4.0):
        f = make_family1((np.pi, 0, 0), (0, 0, 1), (0, 1, 0), 1.0, p)
        res = frechet_check(p, phi0, np.exp(mesh17.nodes @ f.zeta_plus), tau, mesh=mesh17, opts=opts)
        decreasing &= bool(np.all(np.diff(res.errors) < 0))
        orders.extend(res.orders[1:])
    ok = self_err <= 1e-8 and decreasing and min(orders) >= 1.5
    verdict("C4 Frechet derivative", ok,
            f"self_err={self_err:.2e} orders={[round(o, 3) for o in orders]} decreasing={decreasing}")


@pytest.mark.parametrize("p", [1.5, 3.0])
def test_c5_asymptotics(verdict, mesh17, p):
    g = gamma_preset("bump-iso", {"amplitude": 0.1}, mesh=mesh17)
    v = interpolate(mesh17, lambda x: x[:, 0])
    exp = run_epsilon_experiment(g, p, v, tuple(2.0 ** -k for k in range(3, 7)),
                                 opts=SolverOptions(tol=1e-12))
    scaled = exp.column("norm_scaled_R")
    rel = exp.column("rel_R_minus_R")
    ok = bool(np.all(np.diff(scaled) < 0)) and rel[-1] <= 0.05
    verdict(f"C5 asymptotics p={p}", ok,
            f"scaled_norms={np.array2string(scaled, precision=4)} rel_err={np.array2string(rel, precision=4)}")


def test_c6_oracle_reconstruction(verdict, mesh17):
    errs = {}
    for name, params in (("constant-iso", {"c": 2.0}), ("constant-aniso", {"diag": (2.0, 1.0, 1.0)})):
        g = gamma_preset(name, params, mesh=mesh17)
        src = OracleIdentity(g, mesh17, 3.0)
        for xi in ((0.7, -0.2, 0.4), (1.0, 0.5, -0.3)):
            slc = assemble_gamma_hat(src, np.array(xi), 3.0)
            ref = gamma_hat_direct(g, 2 * np.array(xi), mesh17)
            errs[(name, xi)] = np.max(np.abs(slc.matrix - ref)) / np.max(np.abs(ref))
    const_worst = max(errs.values())
    g = gamma_preset("bump-iso", {"amplitude": 0.1}, mesh=mesh17)
    src = OracleIdentity(g, mesh17, 3.0)
    bump_worst = 0.0
    for xi in ((np.pi, 0, 0), (0, np.pi, 0), (np.pi / np.sqrt(2), np.pi / np.sqrt(2), 0)):
        slc = assemble_gamma_hat(src, np.array(xi), 3.0)
        ref = gamma_hat_direct(g, 2 * np.array(xi), mesh17)
        bump_worst = max(bump_worst, np.max(np.abs(slc.matrix - ref)) / np.max(np.abs(ref)))
    verdict("C6 oracle reconstruction", const_worst <= 1e-8 and bump_worst <= 1e-3,
            f"constant={const_worst:.2e} bump={bump_worst:.2e}")


def test_c7_expansion_vs_exact(verdict):
    mesh = build_mesh(BoxDomain.centered_unit(3), 9)
    g = gamma_preset("bump-aniso", mesh=mesh)
    src = OracleIdentity(g, mesh, 3.0)
    xi = np.array([np.pi, 0, 0])
    b = matrix_elements_family1(src, xi, (0, 0, 1), (0, 1, 0), 3.0, DEFAULT_T, "exact")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", IllConditionedFitWarning)
        a = matrix_elements_family1(src, xi, (0, 0, 1), (0, 1, 0), 3.0, DEFAULT_T, "expansion")
    keys = ("eta.z", "eta.eta", "z.z", "xi.xi")
    scale = max(abs(b[k]) for k in keys)
    errs = {k: abs(a[k] - b[k]) / scale for k in keys}
    verdict("C7 expansion vs exact", max(errs.values()) <= 1e-6,
            " ".join(f"{k}={v:.2e}" for k, v in errs.items()))


@pytest.mark.slow
@pytest.mark.parametrize("n", [13, 17])
def test_c8_end_to_end(verdict, n):
    mesh = build_mesh(BoxDomain.centered_unit(3), n)
    opts = SolverOptions(tol=1e-13)
    g = gamma_preset("bump-aniso", {"amplitude": 0.05}, mesh=mesh)
    xi, eta, z = np.array([np.pi, 0, 0]), (0, -1, 0), (0, 0, 1)
    t0 = time.perf_counter()
    ref = matrix_elements_family1(OracleIdentity(g, mesh, 3.0, opts=opts), xi, eta, z, 3.0, END_TO_END_T)["eta.z"]
    e2e = EndToEndIdentity(DtNMap(g, 3.0, mesh, opts), 3.0)
    got = matrix_elements_family1(e2e, xi, eta, z, 3.0, END_TO_END_T)["eta.z"]
    dt = time.perf_counter() - t0
    rel = abs(got - ref) / abs(ref)
    verdict(f"C8 end-to-end {n}^3", rel <= 0.2 and dt <= 45 * 60,
            f"oracle={ref:.6g} end_to_end={got:.6g} rel={rel:.3e} time={dt:.1f}s")


def test_c9_determinism(verdict, tmp_path):
    cfg = tmp_path / "run.ini"
    cfg.write_text("[problem]\np = 3\n[gamma]\npreset = bump-aniso\n[domain]\nn_per_axis = 7\n"
                   "[reconstruct]\nxi_list = pi,0,0 ; 0,pi,0\n[asymptotics]\neps_list = 0.25, 0.125\n[run]\nseed = 5\n",
                   encoding="utf-8")
    digests = []
    for k in range(2):
        out = tmp_path / f"run{k}"
        assert main(["verify-algebra", "--config", str(cfg), "--seed", "5", "--trials", "200"]) == 0
        for cmd in (["solve"], ["asymptotics"], ["reconstruct", "--mode", "oracle"]):
            assert main([cmd[0], "--config", str(cfg), "--out", str(out / cmd[0])] + cmd[1:]) == 0
        algebra = tmp_path / "verify-algebra-out" / "verify_algebra.csv"
        (out / "verify_algebra.csv").write_bytes(algebra.read_bytes())
        digests.append({p.relative_to(out).as_posix(): io.sha256(p) for p in sorted(out.rglob("*.csv"))})
    same = digests[0] == digests[1] and len(digests[0]) >= 5
    verdict("C9 determinism", same, f"{len(digests[0])} CSVs compared, identical={same}")
