"""P1 finite element solvers for the quasilinear equation

    div(gamma grad u + |grad u|^(p-2) grad u) = 0,   u = f on the boundary,

its p-Laplace special case, linear anisotropic equations, and weak
Dirichlet-to-Neumann pairings.

Gradients of P1 functions are cellwise constant, so the flux law is
evaluated once per cell and gamma enters through its cell averages.
Dirichlet conditions are imposed by eliminating boundary rows.
"""
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import (
    EllipticityError,
    NonConvergenceError,
    ParameterError,
    StaleSolutionError,
)
from .fields import ConductivityField
from .mesh import NodalField, SimplicialMesh


def check_exponent(p):
    p = float(p)
    if not (p > 1.0 and p != 2.0) or not np.isfinite(p):
        raise ParameterError("p must lie in (1,2)∪(2,∞)")
    return p


class FluxLaw:
    """J(g) = |g|^(p-2) g and its Jacobian, optionally regularised by |g|^2 -> |g|^2 + delta^2."""

    def __init__(self, p, delta=0.0):
        self.p = check_exponent(p)
        self.delta = float(delta)

    def _mod2(self, g):
        return np.sum(g * g, axis=-1) + self.delta ** 2

    def flux(self, g):
        g = np.asarray(g, dtype=float)
        m2 = self._mod2(g)
        return (m2 ** ((self.p - 2) / 2))[..., None] * g

    def jacobian(self, g):
        g = np.asarray(g, dtype=float)
        m2 = self._mod2(g)
        n = g.shape[-1]
        outer = g[..., :, None] * g[..., None, :]
        with np.errstate(invalid="ignore", divide="ignore"):
            ratio = np.where(m2[..., None, None] > 0, outer / m2[..., None, None], 0.0)
        return (m2 ** ((self.p - 2) / 2))[..., None, None] * (np.eye(n) + (self.p - 2) * ratio)

    def energy_density(self, g):
        return self._mod2(np.asarray(g, dtype=float)) ** (self.p / 2) / self.p


def anisotropy_matrix(p, grad_v):
    """A(v) from cellwise gradients of v: |grad v|^(p-2) (I + (p-2) grad v (x) grad v / |grad v|^2)."""
    return FluxLaw(p).jacobian(grad_v)


@dataclass
class SolverOptions:
    tol: float = 1e-10
    max_iter: int = 60
    delta: float = 1e-8
    backtrack: float = 0.5
    linear_tol: float = 1e-12
    linear_solver: str = "cg"
    armijo: float = 1e-4
    max_backtracks: int = 50

    def __post_init__(self):
        for name in ("tol", "max_iter", "delta", "backtrack", "linear_tol", "max_backtracks"):
            if not getattr(self, name) > 0:
                raise ParameterError(f"solver option {name} must be positive")
        if not self.backtrack < 1:
            raise ParameterError("backtracking factor must be < 1")
        if self.linear_solver not in ("cg", "direct"):
            raise ParameterError("linear_solver must be 'cg' or 'direct'")


@dataclass
class SolverInfo:
    run_id: str = ""
    converged: bool = False
    iterations: int = 0
    residuals: list = field(default_factory=list)
    energies: list = field(default_factory=list)
    delta: float = 0.0

    def rows(self):
        return [(self.run_id, i, r, e) for i, (r, e) in enumerate(zip(self.residuals, self.energies))]


# -- assembly ----------------------------------------------------------------

@lru_cache(maxsize=8)
def _sparsity(mesh: SimplicialMesh):
    k = mesh.n + 1
    rows = np.repeat(mesh.cells, k, axis=1).ravel()
    cols = np.tile(mesh.cells, (1, k)).ravel()
    return rows, cols


def assemble_matrix(mesh, coef):
    """Stiffness matrix of  integral (coef grad u) . grad phi  for cellwise coef (ncells, n, n)."""
    coef = np.asarray(coef, dtype=float)
    if coef.ndim == 2:
        coef = np.broadcast_to(coef, (mesh.n_cells,) + coef.shape)
    local = np.einsum("c,cda,cde,ceb->cab", mesh.cell_volumes, mesh.grads, coef, mesh.grads, optimize=True)
    rows, cols = _sparsity(mesh)
    K = sp.coo_matrix((local.ravel(), (rows, cols)), shape=(mesh.n_nodes,) * 2)
    return K.tocsr()


def assemble_vector(mesh, vec):
    """Load vector of  integral F . grad phi  for cellwise F (ncells, n)."""
    vec = np.asarray(vec)
    if vec.ndim == 1:
        vec = np.broadcast_to(vec, (mesh.n_cells, mesh.n))
    local = np.einsum("c,cda,cd->ca", mesh.cell_volumes, mesh.grads, vec)
    out = np.zeros(mesh.n_nodes, dtype=local.dtype)
    np.add.at(out, mesh.cells, local)
    return out


def _spd_solve(A, b, opts):
    if opts.linear_solver == "direct" or A.shape[0] < 64:
        return spla.spsolve(A.tocsc(), b)
    d = A.diagonal()
    M = spla.LinearOperator(A.shape, matvec=lambda x: x / d)
    x, info = spla.cg(A, b, rtol=opts.linear_tol, atol=0.0, maxiter=20 * A.shape[0], M=M)
    if info != 0:
        x = spla.spsolve(A.tocsc(), b)
    return x


def _cell_coefficient(mesh, coef, level=2):
    """Normalise a coefficient given as constant, cellwise array, field or callable to (ncells, n, n)."""
    if coef is None:
        return None
    if isinstance(coef, ConductivityField):
        return coef.cell_average(mesh, level)
    if callable(coef):
        pts, w, _ = mesh.quadrature(level)
        vals = np.asarray(coef(pts))
        return np.einsum("cq,cqij->cij", w, vals) / mesh.cell_volumes[:, None, None]
    coef = np.asarray(coef, dtype=float)
    if coef.ndim == 0:
        coef = coef * np.eye(mesh.n)
    if coef.ndim == 2:
        coef = np.broadcast_to(coef, (mesh.n_cells, mesh.n, mesh.n))
    return coef


def _cell_vector(mesh, vec, level=2):
    if vec is None:
        return None
    if callable(vec):
        pts, w, _ = mesh.quadrature(level)
        vals = np.asarray(vec(pts))
        return np.einsum("cq,cqi->ci", w, vals) / mesh.cell_volumes[:, None]
    vec = np.asarray(vec)
    if vec.ndim == 0:
        if vec == 0:
            return None
        raise ParameterError("vector right-hand side must be a vector field")
    if vec.ndim == 1:
        vec = np.broadcast_to(vec, (mesh.n_cells, mesh.n))
    return vec


def nodal_data(mesh, f):
    """Full nodal vector (real or complex) from a NodalField, callable, array or scalar."""
    if isinstance(f, NodalField):
        return f.as_complex() if f.is_complex else f.values.copy()
    if callable(f):
        vals = np.asarray(f(mesh.nodes))
    else:
        vals = np.asarray(f)
    if vals.ndim == 0:
        vals = np.full(mesh.n_nodes, vals)
    if vals.shape != (mesh.n_nodes,):
        raise ParameterError(f"nodal data must have length {mesh.n_nodes}")
    return vals.astype(complex) if np.iscomplexobj(vals) else vals.astype(float)


def _mesh_of(*objs):
    for o in objs:
        if isinstance(o, NodalField):
            return o.mesh
        if isinstance(o, SimplicialMesh):
            return o
    raise ParameterError("a mesh is required (pass mesh= or a NodalField)")


# -- quasilinear solver ------------------------------------------------------

class QuasilinearProblem:
    """Discrete residual, Jacobian and energy for fixed (gamma, p, mesh)."""

    def __init__(self, mesh, gamma, p, delta=0.0):
        self.mesh = mesh
        self.law = FluxLaw(p, delta)
        self.gamma_cells = _cell_coefficient(mesh, gamma)
        self.K_gamma = assemble_matrix(mesh, self.gamma_cells) if self.gamma_cells is not None else None

    def residual(self, u):
        """Full nodal residual, boundary rows included."""
        g = self.mesh.gradient(u)
        r = assemble_vector(self.mesh, self.law.flux(g))
        if self.K_gamma is not None:
            r = r + self.K_gamma @ u
        return r

    def jacobian(self, u):
        J = assemble_matrix(self.mesh, self.law.jacobian(self.mesh.gradient(u)))
        if self.K_gamma is not None:
            J = J + self.K_gamma
        return J

    def energy(self, u):
        g = self.mesh.gradient(u)
        e = float(np.dot(self.mesh.cell_volumes, self.law.energy_density(g)))
        if self.gamma_cells is not None:
            # cellwise form of u.K u/2, exact zero for constant u
            gg = np.einsum("ci,cij,cj->c", g, self.gamma_cells, g)
            e += 0.5 * float(np.dot(self.mesh.cell_volumes, gg))
        return e


def solve_quasilinear(gamma, p, f, opts=None, mesh=None, initial=None, run_id=""):
    """Newton's method with energy backtracking for the quasilinear Dirichlet problem.

    ``gamma=None`` drops the linear term (p-Laplace). Boundary values are
    read from ``f`` at the boundary nodes; ``initial`` optionally supplies
    interior values of the starting guess (default: Laplace extension).
    Returns a NodalField whose ``info`` holds the Newton history.
    """
    p = check_exponent(p)
    opts = opts or SolverOptions()
    mesh = mesh if mesh is not None else _mesh_of(f, initial)
    data = nodal_data(mesh, f)
    if np.iscomplexobj(data):
        raise ParameterError("nonlinear solves take real boundary data only")
    prob = QuasilinearProblem(mesh, gamma, p, opts.delta)
    bd, it = mesh.boundary_nodes, mesh.interior_nodes

    if initial is not None:
        u = nodal_data(mesh, initial).astype(float)
        u[bd] = data[bd]
    else:
        u = laplace_extension(mesh, data, opts)

    info = SolverInfo(run_id=run_id, delta=opts.delta)
    for k in range(opts.max_iter + 1):
        r = prob.residual(u)
        res = float(np.linalg.norm(r[it]))
        scale = float(np.linalg.norm(r))
        energy = prob.energy(u)
        info.residuals.append(res / scale if scale > 0 else 0.0)
        info.energies.append(energy)
        Jrows = prob.jacobian(u)[it]
        # residual entries cannot be resolved below roundoff in sum_j J_ij u_j
        floor = 64 * np.finfo(float).eps * float(np.linalg.norm(abs(Jrows) @ np.abs(u)))
        if res <= opts.tol * scale or res <= floor:
            info.converged = True
            info.iterations = k
            break
        if k == opts.max_iter:
            break
        J = Jrows[:, it]
        d = -_spd_solve(J, r[it], opts)
        slope = float(r[it] @ d)
        alpha = 1.0
        trial = u.copy()
        for _ in range(opts.max_backtracks):
            trial[it] = u[it] + alpha * d
            e_new = prob.energy(trial)
            slack = 1e-13 * max(abs(energy), 1e-300)
            if e_new <= energy + opts.armijo * alpha * slope + slack:
                break
            alpha *= opts.backtrack
        u = trial
    if not info.converged:
        info.iterations = opts.max_iter
        raise NonConvergenceError(
            f"Newton did not converge in {opts.max_iter} iterations "
            f"(relative residual {info.residuals[-1]:.3e})",
            history=info.residuals,
        )
    return NodalField(mesh, u, info=info)


def solve_p_laplace(p, f, opts=None, mesh=None, initial=None, run_id=""):
    """Solve div(|grad v|^(p-2) grad v) = 0 with v = f on the boundary."""
    return solve_quasilinear(None, p, f, opts, mesh=mesh, initial=initial, run_id=run_id)


def laplace_extension(mesh, data, opts=None):
    """Discrete harmonic extension of the boundary entries of ``data``."""
    return _dirichlet_solve(mesh, assemble_matrix(mesh, np.eye(mesh.n)), None, data, opts or SolverOptions())


def _dirichlet_solve(mesh, K, load, data, opts):
    bd, it = mesh.boundary_nodes, mesh.interior_nodes
    data = np.asarray(data)
    if np.iscomplexobj(data) or (load is not None and np.iscomplexobj(load)):
        load = np.zeros(mesh.n_nodes, complex) if load is None else load
        re = _dirichlet_solve(mesh, K, load.real, data.real, opts)
        im = _dirichlet_solve(mesh, K, load.imag, np.imag(data), opts)
        return re + 1j * im
    u = np.zeros(mesh.n_nodes)
    u[bd] = data[bd]
    rhs = -(K[it][:, bd] @ u[bd])
    if load is not None:
        rhs = rhs - load[it]
    if np.any(rhs):
        u[it] = _spd_solve(K[it][:, it], rhs, opts)
    return u


def solve_linear_anisotropic(A, F, f, opts=None, mesh=None):
    """Weak solution of  integral A grad V . grad phi = -integral F . grad phi,  V = f on the boundary.

    ``A`` may be a constant matrix, cellwise (ncells, n, n) array or callable;
    ``F`` a constant vector, cellwise (ncells, n) array, callable, or None/0.
    Complex data is solved as two real problems.
    """
    opts = opts or SolverOptions()
    mesh = mesh if mesh is not None else _mesh_of(f)
    Ac = _cell_coefficient(mesh, A)
    sym = 0.5 * (Ac + np.swapaxes(Ac, 1, 2))
    eig = np.linalg.eigvalsh(sym)[:, 0]
    if np.any(eig <= 0):
        c = int(np.argmin(eig))
        raise EllipticityError(f"coefficient matrix not positive definite on cell {c} (eigenvalue {eig[c]:.3e})")
    K = assemble_matrix(mesh, Ac)
    Fc = _cell_vector(mesh, F)
    load = assemble_vector(mesh, Fc) if Fc is not None else None
    u = _dirichlet_solve(mesh, K, load, nodal_data(mesh, f), opts)
    if np.iscomplexobj(u):
        return NodalField.from_complex(mesh, u)
    return NodalField(mesh, u)


# -- Dirichlet-to-Neumann pairings ------------------------------------------

def _check_fresh(u):
    if not isinstance(u, NodalField):
        raise ParameterError("expected a NodalField solution")
    if u.info is not None and not getattr(u.info, "converged", True):
        raise StaleSolutionError("solution did not converge; refusing to pair it")


def _extension(mesh, w, W, opts):
    if W is not None:
        return nodal_data(mesh, W)
    return laplace_extension(mesh, nodal_data(mesh, w), opts)


def dtn_pair(gamma, p, u, w=None, W=None, opts=None):
    """Weak pairing <Lambda_gamma(u|boundary), w> = integral (gamma grad u + J(grad u)) . grad W.

    ``W`` is any extension of the boundary data ``w`` (default: Laplace
    extension). Complex ``w`` gives a complex value.
    """
    _check_fresh(u)
    opts = opts or SolverOptions()
    prob = QuasilinearProblem(u.mesh, gamma, p, 0.0 if u.info is None else u.info.delta)
    r = prob.residual(u.values)
    return _pair(r, _extension(u.mesh, w, W, opts))


def dtn_p_laplace(p, v, w=None, W=None, opts=None, scale=1.0):
    """Weak pairing <Lambda_0(scale * v), w> = scale^(p-1) integral J(grad v) . grad W."""
    _check_fresh(v)
    opts = opts or SolverOptions()
    prob = QuasilinearProblem(v.mesh, None, p, 0.0 if v.info is None else v.info.delta)
    r = prob.residual(v.values)
    return scale ** (prob.law.p - 1) * _pair(r, _extension(v.mesh, w, W, opts))


def flux_vector(gamma, p, u, delta=0.0):
    """Full nodal residual vector of the quasilinear operator at u."""
    return QuasilinearProblem(u.mesh, gamma, p, delta).residual(u.values)


def _pair(r, W):
    val = r @ W
    return complex(val) if np.iscomplexobj(val) else float(val)


class DtNMap:
    """Dirichlet-to-Neumann data of a (synthetic) medium, accessed only through pairings.

    ``pair(f, W)`` solves the forward problem with boundary data f and returns
    <Lambda(f), W>. ``gamma=None`` gives the p-Laplace map Lambda_0.
    """

    def __init__(self, gamma, p, mesh, opts=None):
        self.p = check_exponent(p)
        self.mesh = mesh
        self.opts = opts or SolverOptions()
        self._problem = QuasilinearProblem(mesh, gamma, self.p, self.opts.delta)
        self._gamma = gamma
        self.solves = 0

    def solve(self, f, initial=None, run_id=""):
        self.solves += 1
        return solve_quasilinear(self._gamma, self.p, f, self.opts, mesh=self.mesh,
                                 initial=initial, run_id=run_id)

    def flux(self, u):
        return self._problem.residual(u.values if isinstance(u, NodalField) else u)

    def pair(self, f, W, initial=None):
        u = self.solve(f, initial)
        return _pair(self.flux(u), nodal_data(self.mesh, W))


# -- flux-law identities -----------------------------------------------------

def taylor_remainder(law, xi, zeta, nodes=32):
    """J(zeta) - J(xi) - (integral_0^1 dJ(xi + s(zeta - xi)) ds)(zeta - xi), by Gauss-Legendre in s."""
    xi, zeta = np.asarray(xi, float), np.asarray(zeta, float)
    s, w = np.polynomial.legendre.leggauss(nodes)
    s, w = 0.5 * (s + 1), 0.5 * w
    path = xi[..., None, :] + s[:, None] * (zeta - xi)[..., None, :]
    mean_dJ = np.einsum("q,...qij->...ij", w, law.jacobian(path))
    return law.flux(zeta) - law.flux(xi) - np.einsum("...ij,...j->...i", mean_dJ, zeta - xi)


def jacobian_eigen_error(law, g):
    """Relative deviation of eig dJ(g) from {|g|^(p-2) (n-1 times), (p-1)|g|^(p-2)}."""
    g = np.asarray(g, float)
    n = g.shape[-1]
    m = np.linalg.norm(g, axis=-1) ** (law.p - 2)
    expect = np.concatenate([np.repeat(m[..., None], n - 1, -1), ((law.p - 1) * m)[..., None]], -1)
    expect = np.sort(expect, axis=-1)
    eig = np.linalg.eigvalsh(law.jacobian(g))
    return np.max(np.abs(eig - expect) / np.abs(expect).max(axis=-1, keepdims=True))


def sample_separated_pairs(rng, count, n=3, separation=0.5):
    """Random pairs (xi, zeta) whose segment stays at least ``separation * max(|xi|, |zeta|)`` from 0."""
    out_a, out_b, have = [], [], 0
    while have < count:
        a = rng.normal(size=(2 * count, n))
        b = rng.normal(size=(2 * count, n))
        d = b - a
        s = np.clip(-np.sum(a * d, 1) / np.sum(d * d, 1), 0.0, 1.0)
        dist = np.linalg.norm(a + s[:, None] * d, axis=1)
        ok = dist > separation * np.maximum(np.linalg.norm(a, axis=1), np.linalg.norm(b, axis=1))
        out_a.append(a[ok])
        out_b.append(b[ok])
        have += int(ok.sum())
    return np.concatenate(out_a)[:count], np.concatenate(out_b)[:count]
