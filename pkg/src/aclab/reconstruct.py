"""Recovery of gamma_hat(2 xi) from the integral identity with exponential solutions.

With v0 = z.x (|z| = 1) the linearised p-Laplace operator is div(A grad V),
A = I + (p-2) z z^T. For a null vector zeta (zeta.A zeta = 0) the exponential
exp(zeta.x) solves it. Two families of null pairs zeta_+/zeta_- with
zeta_+ + zeta_- = 2i xi are used:

* family 1: zeta_pm = +-s z + i(xi +- t eta), z, eta, xi mutually orthogonal;
* family 2: zeta_pm = +-s mu + i(xi +- t eta), mu tilted towards xi.

For V = exp(zeta_+.x), W = exp(zeta_-.x) the tau-derivative of the boundary
functional I(v_tau, W) equals

    D(t) = zeta_+ . gamma_hat(2xi) zeta_- - 2i (xi . Adot zeta_-) R_hat(2xi),

whose dependence on t isolates the individual matrix elements.
"""
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .asymptotics import (
    DEFAULT_EPS,
    correction_oracle,
    dtn_correction,
    extrapolate_limit,
    solve_R,
)
from .errors import (
    AclabError,
    ExtractionError,
    IllConditionedFitWarning,
    InvalidFrameError,
    ModeError,
    ParameterError,
    PartialSliceError,
    UnreliableDerivativeWarning,
)
from .fields import GammaHatSlice, gamma_hat_direct
from .mesh import NodalField, integrate_volume, interpolate
from .pde import (
    DtNMap,
    QuasilinearProblem,
    SolverOptions,
    _cell_coefficient,
    check_exponent,
    nodal_data,
    solve_linear_anisotropic,
    solve_p_laplace,
)

DEFAULT_T = (8.0, 12.0, 16.0, 24.0, 32.0)
DEFAULT_TAU = (1e-2, 5e-3)
#: t values resolvable by P1 elements on the default mesh, used by end-to-end runs
END_TO_END_T = (1.0, 1.5, 2.0, 2.5)
DEFAULT_ROUTE = "exact"
FRAME_TOL = 1e-12


def _unit(v):
    v = np.asarray(v, dtype=float)
    return v / np.linalg.norm(v)


def nullity(zeta, A):
    """|zeta.A zeta| relative to |zeta|^2 |A|."""
    q = zeta @ A @ zeta
    return abs(q) / (np.vdot(zeta, zeta).real * np.linalg.norm(A, 2))


# -- frames ------------------------------------------------------------------

@dataclass(frozen=True)
class Family1Frame:
    xi: np.ndarray
    eta: np.ndarray
    z: np.ndarray
    t: float
    p: float
    s: float
    zeta_plus: np.ndarray
    zeta_minus: np.ndarray
    family: int = 1

    @property
    def A(self):
        return np.eye(len(self.z)) + (self.p - 2) * np.outer(self.z, self.z)

    @property
    def beta(self):
        """The constant under the square root of s t: s t = t sqrt(t^2 + beta) / sqrt(p-1)."""
        return float(self.xi @ self.xi)

    @property
    def kappa(self):
        return self.p - 1.0

    @property
    def oscillation(self):
        """Unit vector multiplying s in zeta_+."""
        return self.z


@dataclass(frozen=True)
class Family2Frame:
    xi: np.ndarray
    eta: np.ndarray
    omega: np.ndarray
    theta: float
    z: np.ndarray
    mu: np.ndarray
    t: float
    p: float
    s: float
    a: float
    b: float
    zeta_plus: np.ndarray
    zeta_minus: np.ndarray
    family: int = 2

    @property
    def A(self):
        return np.eye(len(self.z)) + (self.p - 2) * np.outer(self.z, self.z)

    @property
    def beta(self):
        xz = float(self.xi @ self.z)
        return float(self.xi @ self.xi) + (self.p - 2) * xz ** 2

    @property
    def kappa(self):
        return 1.0 + (self.p - 2) * float(self.mu @ self.z) ** 2

    @property
    def oscillation(self):
        return self.mu


def _require(cond, what):
    if not cond:
        raise InvalidFrameError(f"invalid frame: {what}")


def make_family1(xi, eta, z, t, p, allow_zero_xi=False):
    """First family: z, eta unit, z, eta, xi mutually orthogonal; s = sqrt((|xi|^2 + t^2)/(p-1))."""
    p = check_exponent(p)
    xi, eta, z = (np.asarray(v, dtype=float) for v in (xi, eta, z))
    t = float(t)
    nx = np.linalg.norm(xi)
    _require(t > 0, "t must be positive")
    _require(allow_zero_xi or nx > 0, "xi must be nonzero")
    _require(abs(np.linalg.norm(z) - 1) <= FRAME_TOL, "|z| = 1")
    _require(abs(np.linalg.norm(eta) - 1) <= FRAME_TOL, "|eta| = 1")
    scale = max(nx, 1.0)
    _require(abs(z @ xi) <= FRAME_TOL * scale, "z orthogonal to xi")
    _require(abs(z @ eta) <= FRAME_TOL, "z orthogonal to eta")
    _require(abs(xi @ eta) <= FRAME_TOL * scale, "xi orthogonal to eta")
    s = np.sqrt((nx ** 2 + t ** 2) / (p - 1))
    zp = s * z + 1j * (xi + t * eta)
    zm = -s * z + 1j * (xi - t * eta)
    frame = Family1Frame(xi, eta, z, t, p, float(s), zp, zm)
    for zeta in (zp, zm):
        _require(nullity(zeta, frame.A) <= FRAME_TOL, "zeta.A zeta = 0")
    return frame


def make_family2(xi, eta, omega, t, p):
    """Second family: z bisects xi and mu, cos(2 theta) = 2/p - 1, mu = a xi + b omega."""
    p = check_exponent(p)
    xi, eta, omega = (np.asarray(v, dtype=float) for v in (xi, eta, omega))
    t = float(t)
    nx = np.linalg.norm(xi)
    _require(t > 0, "t must be positive")
    _require(nx > 0, "xi must be nonzero")
    _require(abs(np.linalg.norm(eta) - 1) <= FRAME_TOL, "|eta| = 1")
    _require(abs(np.linalg.norm(omega) - 1) <= FRAME_TOL, "|omega| = 1")
    _require(abs(eta @ xi) <= FRAME_TOL * max(nx, 1.0), "eta orthogonal to xi")
    _require(abs(omega @ xi) <= FRAME_TOL * max(nx, 1.0), "omega orthogonal to xi")
    _require(abs(omega @ eta) <= FRAME_TOL, "omega orthogonal to eta")
    c2 = 2.0 / p - 1.0
    theta = 0.5 * np.arccos(c2)
    xh = xi / nx
    z = np.cos(theta) * xh + np.sin(theta) * omega
    mu = c2 * xh + np.sin(2 * theta) * omega
    a, b = c2 / nx, float(np.sin(2 * theta))
    if a == 0.0:
        raise ParameterError("p = 2 makes mu orthogonal to xi")
    kappa = 1.0 + (p - 2) * (mu @ z) ** 2
    s = np.sqrt((t ** 2 + nx ** 2 + (p - 2) * (xi @ z) ** 2) / kappa)
    zp = s * mu + 1j * (xi + t * eta)
    zm = -s * mu + 1j * (xi - t * eta)
    frame = Family2Frame(xi, eta, omega, float(theta), z, mu, t, p, float(s), a, b, zp, zm)
    _require(abs(mu @ xi + (p - 2) * (mu @ z) * (xi @ z)) <= FRAME_TOL * nx, "angle condition")
    for zeta in (zp, zm):
        _require(nullity(zeta, frame.A) <= FRAME_TOL, "zeta.A zeta = 0")
    return frame


def perpendicular_frame(xi):
    """Deterministic orthonormal (xi/|xi|, e1, e2).

    e1 normalises xi_hat x a for the basis vector a least aligned with xi
    (lowest index on ties); e2 = xi_hat x e1.
    """
    xh = _unit(xi)
    k = int(np.argmin(np.abs(xh)))
    a = np.zeros(3)
    a[k] = 1.0
    e1 = _unit(np.cross(xh, a))
    e2 = np.cross(xh, e1)
    return xh, e1, e2


# -- integrands --------------------------------------------------------------

def adot_matrix(z, grad_V, p):
    """(p-2)[(z.gV) I + (p-4)(z.gV) z z^T + z gV^T + gV z^T] for gradients gV of shape (..., n)."""
    z = np.asarray(z, dtype=float)
    gV = np.asarray(grad_V)
    n = z.shape[0]
    zg = gV @ z
    out = zg[..., None, None] * (np.eye(n) + (p - 4) * np.outer(z, z))
    out = out + z[:, None] * gV[..., None, :] + gV[..., :, None] * z[None, :]
    return (p - 2) * out


def r_term_factor(frame):
    """Coefficient c with  integral R div(Adot(v0, V) grad W) = c * R_hat(2 xi)."""
    M = adot_matrix(frame.z, frame.zeta_plus, frame.p)
    return 2j * (frame.xi @ (M @ frame.zeta_minus))


def r_term_bracket(frame):
    """The bracket xi.M zeta_- without the 2i(p-2) prefactor; vanishes for family 1."""
    return r_term_factor(frame) / (2j * (frame.p - 2))


def exp_phase(zeta, x):
    """exp(zeta.x - m) with m the largest real phase over the points; returns (values, m)."""
    phase = np.asarray(x) @ zeta
    m = float(np.max(phase.real))
    return np.exp(phase - m), m


# -- the boundary functional I(v, W) -----------------------------------------

def eval_I(v, W, gamma=None, p=None, mode="oracle", dtn=None, eps_list=DEFAULT_EPS,
           R=None, opts=None):
    """I(v, W) = integral over the boundary of nu.(gamma grad v + A(v) grad R) W.

    ``mode='oracle'`` evaluates the volume form with the known gamma;
    ``mode='boundary'`` extrapolates rescaled DtN differences obtained from
    ``dtn`` (a DtNMap; built from gamma when omitted).
    """
    p = check_exponent(p)
    opts = opts or SolverOptions()
    mesh = v.mesh
    Wn = nodal_data(mesh, W)
    if mode == "oracle":
        if gamma is None:
            raise ModeError("oracle mode needs the conductivity")
        return complex(correction_oracle(gamma, p, v, Wn, R, opts))
    if mode != "boundary":
        raise ModeError(f"unknown mode {mode!r}; expected 'oracle' or 'boundary'")
    if dtn is None:
        if gamma is None:
            raise ModeError("boundary mode needs DtN data (dtn=) or a conductivity to synthesise it")
        dtn = DtNMap(gamma, p, mesh, opts)
    return complex(_boundary_I(dtn, p, v, Wn, eps_list).value)


def _boundary_I(dtn, p, v, Wn, eps_list):
    large = p > 2
    base = QuasilinearProblem(v.mesh, None, p, dtn.opts.delta).residual(v.values) @ Wn
    qs = []
    for e in eps_list:
        f = v.values / e if large else e * v.values
        u = dtn.solve(f, initial=f)
        val = dtn.flux(u) @ Wn
        qs.append(e * val - e ** (2 - p) * base if large else (val - e ** (p - 1) * base) / e)
    return extrapolate_limit(eps_list, qs, warn=False)


# -- the tau-derivative D ----------------------------------------------------

class OracleIdentity:
    """Evaluates D(frame) with the known gamma: quadrature of the gamma term plus the FEM R term."""

    mode = "oracle"

    def __init__(self, gamma, mesh, p, level=2, opts=None):
        self.gamma = gamma
        self.mesh = mesh
        self.p = check_exponent(p)
        self.level = level
        self.opts = opts or SolverOptions()
        self._R = {}
        self._Rhat = {}

    def R(self, z):
        key = tuple(np.round(z, 15))
        if key not in self._R:
            v0 = interpolate(self.mesh, lambda x: x @ z)
            self._R[key] = solve_R(self.gamma, self.p, v0, self.opts)
        return self._R[key]

    def R_hat(self, z, k):
        key = (tuple(np.round(z, 15)), tuple(np.round(k, 15)))
        if key not in self._Rhat:
            R = self.R(z)
            pts, w, bary = self.mesh.quadrature(self.level)
            Rq = R.at_quadrature(self.level)
            self._Rhat[key] = complex(np.sum(w * Rq * np.exp(1j * (pts @ k))))
        return self._Rhat[key]

    def gamma_term(self, frame):
        """integral grad V . gamma grad W with V, W the analytic exponentials."""
        zp, zm = frame.zeta_plus, frame.zeta_minus
        # the real phases of V and W cancel exactly in the product
        ksum = (zp + zm).imag

        def integrand(x):
            g = self.gamma(x)
            return np.einsum("i,...ij,j->...", zp, g, zm) * np.exp(1j * (x @ ksum))
        return complex(integrate_volume(self.mesh, integrand, self.level))

    def r_term(self, frame):
        return r_term_factor(frame) * self.R_hat(frame.z, 2 * frame.xi)

    def __call__(self, frame):
        return self.gamma_term(frame) - self.r_term(frame)


class EndToEndIdentity:
    """Evaluates D(frame) from DtN data only: nested eps and tau limits of boundary pairings.

    ``dtn`` is the measured map. ``reference`` names a known background
    conductivity (default the identity; None disables it). Its DtN map is
    simulated on the same mesh and its identity values are replaced by the
    exact ones, which cancels the discretisation error common to both media.
    Small exponents (p < 2) need ``allow_small_p=True``: that branch relies on
    the delta-regularised flux and its bias enters the dominant term.
    """

    mode = "end-to-end"

    def __init__(self, dtn, p, tau_list=DEFAULT_TAU, eps_list=DEFAULT_EPS, reference="identity",
                 allow_small_p=False, level=2):
        self.dtn = dtn
        self.mesh = dtn.mesh
        self.p = check_exponent(p)
        if self.p < 2 and not allow_small_p:
            raise ModeError("end-to-end mode is restricted to p > 2; pass allow_small_p=True to override")
        self.tau = tuple(float(t) for t in tau_list)
        if not self.tau or any(not (0 < t < 1) for t in self.tau):
            raise ParameterError("tau values must lie in (0, 1)")
        self.eps = tuple(float(e) for e in eps_list)
        if isinstance(reference, str):
            if reference != "identity":
                raise ParameterError(f"unknown reference {reference!r}")
            from .fields import gamma_preset
            reference = gamma_preset("constant-iso", {"n": self.mesh.n}, mesh=self.mesh)
        self.reference_gamma = reference
        if reference is not None:
            self.reference = DtNMap(reference, self.p, self.mesh, dtn.opts)
            self.reference_oracle = OracleIdentity(reference, self.mesh, self.p, level, dtn.opts)
        else:
            self.reference = self.reference_oracle = None
        self.diagnostics = {}

    def _derivative(self, dtn, frame):
        mesh, p = self.mesh, self.p
        opts = dtn.opts
        x = mesh.nodes
        V, mV = exp_phase(frame.zeta_plus, x)
        W, mW = exp_phase(frame.zeta_minus, x)
        phi0 = x @ frame.z
        v0 = solve_p_laplace(p, phi0, opts, mesh=mesh, initial=phi0)
        lin = solve_linear_anisotropic(frame.A, None, V, opts, mesh=mesh).as_complex()
        rows = []
        for tau in self.tau:
            parts = []
            for part, guess in ((V.real, lin.real), (V.imag, lin.imag)):
                vals = []
                for sign in (1.0, -1.0):
                    data = v0.values + sign * tau * part
                    vt = solve_p_laplace(p, data, opts, mesh=mesh, initial=v0.values + sign * tau * guess)
                    vals.append(_boundary_I(dtn, p, vt, W, self.eps).value)
                parts.append((vals[0] - vals[1]) / (2 * tau))
            rows.append(parts[0] + 1j * parts[1])
        rows = np.array(rows) * np.exp(mV + mW)
        if len(rows) < 2:
            return rows[-1], rows
        # central differences: error ~ tau^2
        r = (self.tau[-2] / self.tau[-1]) ** 2
        value = rows[-1] + (rows[-1] - rows[-2]) / (r - 1)
        if abs(rows[-1] - rows[-2]) > 0.05 * max(abs(rows[-1]), 1e-300):
            warnings.warn("tau-difference quotients are not Cauchy within 5%",
                          UnreliableDerivativeWarning, stacklevel=3)
        return value, rows

    def __call__(self, frame):
        value, rows = self._derivative(self.dtn, frame)
        rec = {"raw": value, "tau_rows": rows}
        if self.reference is not None:
            ref_value, _ = self._derivative(self.reference, frame)
            ref_exact = self.reference_oracle(frame)
            rec.update(reference=ref_value, reference_exact=ref_exact)
            value = value - ref_value + ref_exact
        rec["value"] = value
        self.diagnostics[(frame.family, frame.t, tuple(frame.eta), tuple(frame.oscillation))] = rec
        return value


def eval_D(frame, source):
    """D for one exponential pair; ``source`` is an OracleIdentity or EndToEndIdentity."""
    return source(frame)


# -- order extraction --------------------------------------------------------

@dataclass
class OrderFit:
    t: np.ndarray
    values: np.ndarray
    powers: tuple
    coefficients: dict
    residual: float

    def __getitem__(self, power):
        return self.coefficients[power]


def extract_orders(t_list, values, n_inverse=2, warn_residual=1e-6):
    """Least-squares fit of values(t) = c2 t^2 + c0 + c_-2 t^-2 (+ c_-4 t^-4 ...).

    ``n_inverse`` is the number of inverse even powers kept (default 2, i.e.
    up to t^-4). The relative residual is reported and a warning is issued
    above ``warn_residual``.
    """
    t = np.asarray(t_list, dtype=float)
    y = np.asarray(values, dtype=complex)
    powers = (2, 0) + tuple(-2 * k for k in range(1, n_inverse + 1))
    if len(np.unique(t)) < len(powers):
        raise ExtractionError(f"need at least {len(powers)} distinct t values, got {len(np.unique(t))}")
    # rows weighted by t^-2 so every sample counts with its relative accuracy
    w = t ** -2.0
    B = np.stack([t ** q for q in powers], axis=1)
    coef, _ = _lstsq(B * w[:, None], y * w)
    ny = np.linalg.norm(y)
    resid = float(np.linalg.norm(B @ coef - y) / ny) if ny > 0 else 0.0
    if resid > warn_residual:
        warnings.warn(f"order fit residual {resid:.2e} exceeds {warn_residual:.0e}",
                      IllConditionedFitWarning, stacklevel=2)
    return OrderFit(t, y, powers, dict(zip(powers, coef)), resid)


def _lstsq(B, y):
    norms = np.linalg.norm(B, axis=0)
    c = np.linalg.lstsq(B / norms, y, rcond=None)[0] / norms
    ny = np.linalg.norm(y)
    resid = float(np.linalg.norm(B @ c - y) / ny) if ny > 0 else 0.0
    return c, resid


def fit_exact(t_list, values, beta):
    """Fit values(t) = c2 t^2 + c0 + k t sqrt(t^2 + beta), the exact t-dependence of D.

    Returns (c2, c0, k, residual).
    """
    t = np.asarray(t_list, dtype=float)
    if len(np.unique(t)) < 3:
        raise ExtractionError("exact-zeta route needs at least 3 distinct t values")
    B = np.stack([t ** 2, np.ones_like(t), t * np.sqrt(t ** 2 + beta)], axis=1)
    c, resid = _lstsq(B, np.asarray(values, dtype=complex))
    return c[0], c[1], c[2], resid


@dataclass
class FamilyData:
    """Frame-level quantities common to both extraction routes.

    ``cross`` is eta.gamma_hat(2xi) o (o = z for family 1, mu for family 2);
    ``c2`` and ``c0`` are the t^2 and t^0 coefficients with the cross-term
    contribution removed.
    """

    cross: complex
    c2: complex
    c0: complex
    residual: float
    route: str


def family_data(t_list, values, beta, kappa, route=DEFAULT_ROUTE, n_inverse=2):
    """Reduce D(t) samples to (cross, c2, c0) by the t-expansion or the exact-zeta fit."""
    rk = np.sqrt(kappa)
    if route == "expansion":
        fit = extract_orders(t_list, values, n_inverse=n_inverse)
        cross = fit[-2] * 4 * rk / (1j * beta ** 2)
        c2 = fit[2] + 2j * cross / rk
        c0 = fit[0] + 1j * beta * cross / rk
        return FamilyData(cross, c2, c0, fit.residual, route)
    if route == "exact":
        c2, c0, k, resid = fit_exact(t_list, values, beta)
        return FamilyData(k * rk / (-2j), c2, c0, resid, route)
    raise ParameterError(f"unknown route {route!r}; expected 'expansion' or 'exact'")


def evaluate_frames(source, frames, workers=1):
    """source(frame) for each frame, in order; ``workers > 1`` uses a thread pool."""
    if workers is None or workers <= 1 or len(frames) < 2:
        return np.array([source(f) for f in frames])
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return np.array(list(pool.map(source, frames)))


def _family1_values(source, xi, eta, z, p, t_list, workers=1):
    frames = [make_family1(xi, eta, z, t, p) for t in t_list]
    return frames, evaluate_frames(source, frames, workers)


def solve_role_swap(A, B, p):
    """Solve X/(p-1) - Y = A, Y/(p-1) - X = B for (X, Y)."""
    r = 1.0 / (p - 1.0)
    det = r * r - 1.0
    if det == 0:
        raise ParameterError("role-swap system is singular (p = 2)")
    Y = (A + r * B) / det
    X = (B + r * A) / det
    return X, Y


def matrix_elements_family1(source, xi, eta, z, p, t_list=DEFAULT_T, route=DEFAULT_ROUTE, n_inverse=2,
                            workers=1):
    """eta.G z, eta.G eta, z.G z and xi.G xi (G = gamma_hat(2 xi)) from two family-1 sweeps."""
    p = check_exponent(p)
    xi = np.asarray(xi, dtype=float)
    beta = float(xi @ xi)
    _, va = _family1_values(source, xi, eta, z, p, t_list, workers)
    _, vb = _family1_values(source, xi, z, eta, p, t_list, workers)
    da = family_data(t_list, va, beta, p - 1, route, n_inverse)
    db = family_data(t_list, vb, beta, p - 1, route, n_inverse)
    # c2 of frame (z, eta) is eta.G.eta - z.G.z/(p-1); swapping roles gives the second equation
    zz, ee = solve_role_swap(-da.c2, -db.c2, p)
    xixi = -da.c0 - beta * zz / (p - 1)
    return {
        "eta.z": da.cross, "eta.eta": ee, "z.z": zz, "xi.xi": xixi,
        "z.eta(swap)": db.cross, "residuals": (da.residual, db.residual),
    }


def matrix_element_family2(source, xi, eta, omega, p, known_eta_omega, t_list=DEFAULT_T,
                           route=DEFAULT_ROUTE, n_inverse=2, workers=1):
    """eta.G xi from a family-2 sweep and the already known eta.G omega."""
    p = check_exponent(p)
    frames = [make_family2(xi, eta, omega, t, p) for t in t_list]
    vals = evaluate_frames(source, frames, workers)
    f0 = frames[0]
    d = family_data(t_list, vals, f0.beta, f0.kappa, route, n_inverse)
    eta_mu = d.cross
    return {"eta.mu": eta_mu, "eta.xi": (eta_mu - f0.b * known_eta_omega) / f0.a,
            "a": f0.a, "b": f0.b, "residual": d.residual}


_EXTRACTION_FAILURES = (AclabError, ValueError, np.linalg.LinAlgError, FloatingPointError)

ENTRY_LABELS = {(0, 0): "xi.xi", (0, 1): "xi.e1", (0, 2): "xi.e2",
                (1, 1): "e1.e1", (1, 2): "e1.e2", (2, 2): "e2.e2"}


def assemble_gamma_hat(source, xi, p, t_list=DEFAULT_T, route=DEFAULT_ROUTE, n_inverse=2, workers=1):
    """All six independent entries of gamma_hat(2 xi), built in the frame (xi/|xi|, e1, e2).

    ``route="exact"`` fits the closed-form t-dependence; ``route="expansion"``
    fits the large-t orders (its truncation floor is a few 1e-3 relative at
    the default t list). Entries that cannot be extracted raise
    PartialSliceError listing them.
    """
    p = check_exponent(p)
    xi = np.asarray(xi, dtype=float)
    if xi.shape != (3,):
        raise ParameterError("gamma_hat assembly is implemented for n = 3")
    if np.linalg.norm(xi) == 0:
        return _zero_frequency_slice(source, p, t_list, workers)
    xh, e1, e2 = perpendicular_frame(xi)
    nx = np.linalg.norm(xi)
    F = np.full((3, 3), np.nan, dtype=complex)
    prov, missing = {}, []

    def put(i, j, val, tag):
        if val is None or not np.isfinite(val):
            missing.append(ENTRY_LABELS[(i, j)])
            return
        F[i, j] = F[j, i] = val
        prov[(i, j)] = tag

    try:
        f1 = matrix_elements_family1(source, xi, e2, e1, p, t_list, route, n_inverse, workers)
    except _EXTRACTION_FAILURES as exc:
        raise PartialSliceError(f"family-1 extraction failed: {exc}",
                                missing=list(ENTRY_LABELS.values())) from exc
    put(1, 2, f1["eta.z"], "family-1-order-2")
    put(1, 1, f1["z.z"], "family-1-order-0")
    put(2, 2, f1["eta.eta"], "family-1-order-0")
    put(0, 0, f1["xi.xi"] / nx ** 2, "family-1-order-1")
    for j, eta, omega in ((1, e1, e2), (2, e2, e1)):
        try:
            f2 = matrix_element_family2(source, xi, eta, omega, p, f1["eta.z"], t_list, route, n_inverse,
                                        workers)
            put(0, j, f2["eta.xi"] / nx, "family-2")
        except _EXTRACTION_FAILURES:
            missing.append(ENTRY_LABELS[(0, j)])
    if missing:
        raise PartialSliceError(f"missing entries: {missing}", missing=missing)
    Q = np.stack([xh, e1, e2])
    G = Q.T @ F @ Q
    G = 0.5 * (G + G.T)
    return GammaHatSlice(xi, G, Q, F, prov, getattr(source, "mode", "oracle"))


def _zero_frequency_slice(source, p, t_list, workers=1):
    """gamma_hat(0) is real for real gamma, so the t^2 coefficient of each
    axis-pair frame yields both e_i.G.e_i/(p-1) - e_j.G.e_j and e_i.G.e_j."""
    E = np.eye(3)
    t = np.asarray(t_list, dtype=float)
    rows, rhs, off = [], [], {}
    for i in range(3):
        for j in range(3):
            if i == j:
                continue
            frames = [make_family1(np.zeros(3), E[j], E[i], tt, p, allow_zero_xi=True) for tt in t]
            vals = evaluate_frames(source, frames, workers)
            c2 = complex(np.linalg.lstsq(t[:, None] ** 2, vals, rcond=None)[0][0])
            # c2 = e_j.G.e_j - e_i.G.e_i/(p-1) - 2i e_j.G.e_i/sqrt(p-1)
            row = np.zeros(3)
            row[j], row[i] = 1.0, -1.0 / (p - 1)
            rows.append(row)
            rhs.append(c2.real)
            off.setdefault((min(i, j), max(i, j)), []).append(-c2.imag * np.sqrt(p - 1) / 2)
    diag = np.linalg.lstsq(np.array(rows), np.array(rhs), rcond=None)[0]
    G = np.diag(diag).astype(complex)
    for (i, j), v in off.items():
        G[i, j] = G[j, i] = np.mean(v)
    prov = {(i, j): "family-1-order-0" for i in range(3) for j in range(i, 3)}
    return GammaHatSlice(np.zeros(3), G, E, G.copy(), prov, getattr(source, "mode", "oracle"))


def slice_error(slc, oracle):
    """Entrywise |G - G_oracle| relative to the largest oracle entry."""
    oracle = np.asarray(oracle)
    scale = np.max(np.abs(oracle))
    err = np.abs(slc.matrix - oracle)
    return err / scale if scale > 0 else err


def oracle_frame_matrix(slc, oracle):
    Q = slc.frame
    return Q @ oracle @ Q.T


# -- volume synthesis --------------------------------------------------------

def frequency_grid(domain, m_max):
    """xi grid pi*m/L for integer m in [-m_max, m_max]^3, i.e. Fourier-series frequencies 2 xi."""
    L = np.subtract(domain.hi, domain.lo)
    rng = np.arange(-m_max, m_max + 1)
    mm = np.stack(np.meshgrid(rng, rng, rng, indexing="ij"), -1).reshape(-1, 3)
    return mm * (np.pi / L)


def reconstruct_volume(slices, mesh, xi_grid=None):
    """Band-limited synthesis gamma(x) ~ (1/|box|) sum over slices of gamma_hat(2 xi) exp(-2i xi.x).

    ``slices`` maps xi tuples to GammaHatSlice (or is a list of slices); when
    ``xi_grid`` is given every grid point must be present.
    """
    if isinstance(slices, dict):
        by_xi = {tuple(np.round(k, 12)): s for k, s in slices.items()}
    else:
        by_xi = {tuple(np.round(s.xi, 12)): s for s in slices}
    if xi_grid is not None:
        grid = [tuple(np.round(x, 12)) for x in np.asarray(xi_grid, dtype=float)]
        missing = [g for g in grid if g not in by_xi]
        if missing:
            raise PartialSliceError(f"{len(missing)} frequency slices missing, e.g. {missing[0]}",
                                    missing=missing)
        use = [by_xi[g] for g in grid]
    else:
        use = list(by_xi.values())
    vol = mesh.domain.volume
    out = np.zeros((mesh.n_nodes, mesh.n, mesh.n), dtype=complex)
    for s in use:
        out += s.matrix[None] * np.exp(-2j * (mesh.nodes @ s.xi))[:, None, None]
    return NodalField(mesh, (out / vol).real, kind_hint="matrix")


# -- random admissible frames -----------------------------------------------

def _random_orthonormal(rng, n=3):
    q, r = np.linalg.qr(rng.normal(size=(n, n)))
    return q * np.sign(np.diag(r))


def random_family1(rng, p, t_range=(0.1, 40.0), xi_range=(0.1, 10.0)):
    Q = _random_orthonormal(rng)
    xi = rng.uniform(*xi_range) * Q[:, 0]
    return make_family1(xi, Q[:, 1], Q[:, 2], rng.uniform(*t_range), p)


def random_family2(rng, p, t_range=(0.1, 40.0), xi_range=(0.1, 10.0)):
    Q = _random_orthonormal(rng)
    xi = rng.uniform(*xi_range) * Q[:, 0]
    return make_family2(xi, Q[:, 1], Q[:, 2], rng.uniform(*t_range), p)


def frame_residuals(frame):
    """Identity residuals of one frame: nullity of zeta_pm and, per family, bracket or angle condition."""
    A = frame.A
    scale = np.vdot(frame.zeta_plus, frame.zeta_plus).real * (1 + frame.s ** 2)
    out = {"nullity": max(abs(z @ A @ z) / scale for z in (frame.zeta_plus, frame.zeta_minus)),
           "sum": float(np.max(np.abs(frame.zeta_plus + frame.zeta_minus - 2j * frame.xi)))}
    if frame.family == 1:
        out["bracket"] = abs(r_term_bracket(frame)) / (np.linalg.norm(frame.xi) ** 2 * frame.s)
    else:
        nx = np.linalg.norm(frame.xi)
        out["angle"] = abs(frame.mu @ frame.xi + (frame.p - 2) * (frame.mu @ frame.z) * (frame.xi @ frame.z)) / nx
        out["cos2"] = abs(np.cos(frame.theta) ** 2 - 1 / frame.p)
    return out
