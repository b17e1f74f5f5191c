"""Small/large-data asymptotics of the quasilinear problem and the tau-linearisation
of the p-Laplace equation.

Small branch (1 < p < 2), data eps*v:      u_eps = eps v + eps^(3-p) R_eps
Large branch (p > 2),     data v/eps:      u_eps = v/eps + eps^(p-3) R_eps

In both cases R_eps -> R, the solution of div(A(v) grad R) = -div(gamma grad v)
with zero boundary values, and the rescaled DtN difference converges to the
conormal flux of gamma grad v + A(v) grad R.
"""
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.optimize import brentq

from .errors import (
    DegenerateGradientError,
    ExtrapolationWarning,
    NonConvergenceError,
    ParameterError,
)
from .mesh import NodalField, c1_proxy_norm
from .pde import (
    QuasilinearProblem,
    SolverOptions,
    _cell_coefficient,
    anisotropy_matrix,
    check_exponent,
    laplace_extension,
    nodal_data,
    solve_linear_anisotropic,
    solve_p_laplace,
    solve_quasilinear,
)

DEFAULT_EPS = (2.0 ** -3, 2.0 ** -4, 2.0 ** -5, 2.0 ** -6)


def branch_for(p):
    p = check_exponent(p)
    return "small" if p < 2 else "large"


def base_anisotropy(p, v):
    """Cellwise A(v); raises if grad v vanishes on some cell."""
    g = v.gradient().real if v.is_complex else v.gradient()
    norm = np.linalg.norm(g, axis=1)
    if np.any(norm <= 1e-12 * max(norm.max(), 1e-300)):
        c = int(np.argmin(norm))
        raise DegenerateGradientError(f"grad v vanishes on cell {c}; A(v) is degenerate")
    return anisotropy_matrix(p, g)


def solve_R(gamma, p, v, opts=None):
    """Remainder limit: div(A(v) grad R) = -div(gamma grad v), R = 0 on the boundary."""
    A = base_anisotropy(p, v)
    gcell = _cell_coefficient(v.mesh, gamma)
    F = np.einsum("cij,cj->ci", gcell, v.mesh.gradient(v.values))
    return solve_linear_anisotropic(A, F, 0.0, opts, mesh=v.mesh)


def _scaled_data(branch, eps, v):
    return eps * v if branch == "small" else v / eps


def remainder_from_ansatz(branch, p, eps, u, v):
    """R_eps recovered from u_eps through the Ansatz for the given branch."""
    if branch == "small":
        return (u - eps * v) / eps ** (3 - p)
    return (u - v / eps) / eps ** (p - 3)


@dataclass
class EpsilonRecord:
    eps: float
    u: np.ndarray
    R_eps: np.ndarray
    norm_scaled_R: float
    norm_R_minus_R: float
    rel_R_minus_R: float
    dtn_quotient: Optional[complex] = None
    newton_iterations: int = 0


@dataclass
class EpsilonExperiment:
    branch: str
    p: float
    eps: tuple
    v: NodalField
    R: NodalField
    records: list = field(default_factory=list)

    def rows(self):
        out = []
        for r in self.records:
            q = r.dtn_quotient
            out.append((self.branch, self.p, r.eps, r.norm_scaled_R, r.norm_R_minus_R,
                        "" if q is None else float(np.real(q))))
        return out

    def column(self, name):
        return np.array([getattr(r, name) for r in self.records])


def _validate_eps(eps_list):
    eps = tuple(float(e) for e in eps_list)
    if not eps:
        raise ParameterError("eps list must not be empty")
    if any(not (0 < e < 1) for e in eps):
        raise ParameterError("eps values must lie in (0, 1)")
    if any(b >= a for a, b in zip(eps, eps[1:])):
        raise ParameterError("eps values must be strictly decreasing")
    return eps


def _solve_scaled(gamma, p, branch, eps, v, opts):
    data = _scaled_data(branch, eps, v.values)
    try:
        return solve_quasilinear(gamma, p, data, opts, mesh=v.mesh, initial=data,
                                 run_id=f"{branch}-eps={eps:.6g}")
    except NonConvergenceError as exc:
        raise NonConvergenceError(f"[eps={eps:.6g}] {exc}", history=exc.history) from exc


def run_epsilon_experiment(gamma, p, v, eps_list=DEFAULT_EPS, opts=None, w=None):
    """Solve the quasilinear problem along an eps schedule and measure remainders.

    ``v`` must be a critical-point-free p-harmonic NodalField. When ``w``
    (a boundary test function or extension) is given, the rescaled DtN
    difference quotient is recorded too.
    """
    p = check_exponent(p)
    branch = branch_for(p)
    eps = _validate_eps(eps_list)
    opts = opts or SolverOptions()
    R = solve_R(gamma, p, v, opts)
    nR = c1_proxy_norm(v.mesh, R.values)
    W = None if w is None else _nodal_extension(v.mesh, w, opts)
    exp = EpsilonExperiment(branch, p, eps, v, R)
    for e in eps:
        u = _solve_scaled(gamma, p, branch, e, v, opts)
        Re = remainder_from_ansatz(branch, p, e, u.values, v.values)
        scale = e ** (2 - p) if branch == "small" else e ** (p - 2)
        diff = c1_proxy_norm(v.mesh, Re - R.values)
        q = None if W is None else _quotient(gamma, p, branch, e, u, v, W, opts.delta)
        exp.records.append(EpsilonRecord(
            eps=e, u=u.values, R_eps=Re,
            norm_scaled_R=c1_proxy_norm(v.mesh, scale * Re),
            norm_R_minus_R=diff,
            rel_R_minus_R=diff / nR if nR > 0 else diff,
            dtn_quotient=q,
            newton_iterations=u.info.iterations,
        ))
    return exp


def _nodal_extension(mesh, w, opts):
    if isinstance(w, NodalField) or callable(w) or np.ndim(w) > 0:
        return nodal_data(mesh, w)
    return laplace_extension(mesh, nodal_data(mesh, w), opts)


def _quotient(gamma, p, branch, eps, u, v, W, delta):
    """eps^-1 (Lambda_gamma(eps v) - Lambda_0(eps v)) paired with W (small branch), or
    eps (Lambda_gamma(v/eps) - Lambda_0(v/eps)) paired with W (large branch)."""
    full = QuasilinearProblem(u.mesh, gamma, p, delta).residual(u.values)
    base = QuasilinearProblem(v.mesh, None, p, delta).residual(v.values)
    if branch == "small":
        val = (full @ W - eps ** (p - 1) * (base @ W)) / eps
    else:
        val = eps * (full @ W) - eps ** (2 - p) * (base @ W)
    return complex(val) if np.iscomplexobj(val) else float(val)


# -- extrapolation -----------------------------------------------------------

@dataclass
class Extrapolation:
    raw: complex
    value: complex
    order: float
    reliable: bool
    eps: tuple
    values: tuple


def extrapolate_limit(eps, values, warn=True):
    """Fit value(eps) = c0 + c1 eps^q through the three smallest eps and return c0.

    Complex sequences are extrapolated with the exponent estimated from the
    component of largest variation and applied to both parts.
    """
    eps = np.asarray(eps, dtype=float)
    vals = np.asarray(values)
    order = np.argsort(eps)[::-1]
    eps, vals = eps[order], vals[order]
    raw = vals[-1]
    if len(eps) < 3:
        return Extrapolation(raw, raw, float("nan"), False, tuple(eps), tuple(vals))
    e1, e2, e3 = eps[-3:]
    v1, v2, v3 = vals[-3:]
    d1, d2 = v1 - v2, v2 - v3
    comp = (lambda z: z.real) if abs(np.real(d1)) >= abs(np.imag(d1)) else (lambda z: z.imag)
    a, b = comp(np.asarray(d1)), comp(np.asarray(d2))
    noise = 64 * np.finfo(float).eps * max(np.max(np.abs(vals)), 1e-300)
    if abs(a) <= noise and abs(b) <= noise:
        return Extrapolation(raw, raw, float("inf"), True, tuple(eps), tuple(vals))
    reliable = a * b > 0 and abs(b) < abs(a)
    q = float("nan")
    value = raw
    if reliable:
        ratio = a / b

        def g(qq):
            return (e1 ** qq - e2 ** qq) / (e2 ** qq - e3 ** qq) - ratio
        try:
            q = brentq(g, 1e-3, 12.0)
            c1 = d2 / (e2 ** q - e3 ** q)
            value = v3 - c1 * e3 ** q
        except ValueError:
            reliable = False
    if not reliable and warn:
        warnings.warn("difference-quotient sequence is not monotone; reporting raw value",
                      ExtrapolationWarning, stacklevel=2)
    return Extrapolation(raw, value, q, reliable, tuple(eps), tuple(vals))


@dataclass
class DtnCorrection:
    value: complex
    raw: complex
    oracle: complex
    quotients: tuple
    eps: tuple
    order: float
    reliable: bool


def correction_oracle(gamma, p, v, W, R=None, opts=None):
    """Volume form of the limit:  integral (gamma grad v + A(v) grad R) . grad W."""
    R = R if R is not None else solve_R(gamma, p, v, opts)
    mesh = v.mesh
    gcell = _cell_coefficient(mesh, gamma)
    gv = mesh.gradient(v.values)
    flux = np.einsum("cij,cj->ci", gcell, gv) + np.einsum("cij,cj->ci", base_anisotropy(p, v), mesh.gradient(R.values))
    gW = mesh.gradient(np.real(W))
    if np.iscomplexobj(W):
        gW = gW + 1j * mesh.gradient(np.imag(W))
    val = np.einsum("c,ci,ci->", mesh.cell_volumes, flux, gW)
    return complex(val) if np.iscomplexobj(val) else float(val)


def dtn_correction(gamma, p, v, w, eps_list=DEFAULT_EPS, opts=None, R=None, solutions=None):
    """Extrapolated limit of the rescaled DtN difference paired with w, plus its volume-form oracle.

    ``solutions`` may carry precomputed u_eps fields (one per eps) to avoid re-solving.
    """
    p = check_exponent(p)
    branch = branch_for(p)
    eps = _validate_eps(eps_list)
    opts = opts or SolverOptions()
    W = _nodal_extension(v.mesh, w, opts)
    qs = []
    for k, e in enumerate(eps):
        u = solutions[k] if solutions is not None else _solve_scaled(gamma, p, branch, e, v, opts)
        qs.append(_quotient(gamma, p, branch, e, u, v, W, opts.delta))
    ex = extrapolate_limit(eps, qs)
    oracle = correction_oracle(gamma, p, v, W, R, opts)
    return DtnCorrection(ex.value, ex.raw, oracle, tuple(qs), eps, ex.order, ex.reliable)


# -- tau-linearisation -------------------------------------------------------

@dataclass
class FrechetResult:
    tau: tuple
    errors: tuple
    orders: tuple
    V: NodalField
    quotients: list

    def rows(self):
        return [(t, e, o) for t, e, o in zip(self.tau, self.errors, self.orders)]


def frechet_check(p, phi0, phi1, tau_list, mesh=None, opts=None):
    """Symmetric tau-difference quotients of the p-Laplace solution map against the linearised solution V.

    ``phi0`` must be the trace of a critical-point-free p-harmonic v0 (e.g. z.x);
    ``phi1`` is real or complex boundary data (complex is handled by linearity).
    """
    p = check_exponent(p)
    opts = opts or SolverOptions()
    if mesh is None:
        mesh = phi0.mesh if isinstance(phi0, NodalField) else phi1.mesh
    taus = tuple(float(t) for t in tau_list)
    if any(not (0 < abs(t) < 1) for t in taus):
        raise ParameterError("tau values must lie in (-1, 1) without 0")
    d0 = nodal_data(mesh, phi0)
    d1 = nodal_data(mesh, phi1)
    v0 = solve_p_laplace(p, d0, opts, mesh=mesh)
    V = solve_linear_anisotropic(base_anisotropy(p, v0), None, d1, opts, mesh=mesh)
    Vv = V.as_complex() if V.is_complex else V.values

    def solve_at(tau, part):
        data = d0 + tau * part
        return solve_p_laplace(p, data, opts, mesh=mesh, initial=v0.values + tau * _lift(mesh, part, V, d1)).values

    errors, quots = [], []
    parts = [np.real(d1)] + ([np.imag(d1)] if np.iscomplexobj(d1) else [])
    for tau in taus:
        qs = [(solve_at(tau, part) - solve_at(-tau, part)) / (2 * tau) for part in parts]
        q = qs[0] + 1j * qs[1] if len(qs) == 2 else qs[0]
        quots.append(q)
        errors.append(c1_proxy_norm(mesh, q - Vv))
    orders = [float("nan")]
    for k in range(1, len(taus)):
        e0, e1 = errors[k - 1], errors[k]
        orders.append(float(np.log(e0 / e1) / np.log(taus[k - 1] / taus[k])) if e0 > 0 and e1 > 0 else float("nan"))
    return FrechetResult(taus, tuple(errors), tuple(orders), V, quots)


def _lift(mesh, part, V, d1):
    """Linearised interior guess matching the real/imag part being perturbed."""
    vals = V.as_complex() if V.is_complex else V.values
    if np.iscomplexobj(d1) and np.array_equal(part, np.imag(d1)):
        return np.imag(vals)
    return np.real(vals)
