"""Synthetic conductivity fields and the direct Fourier quadrature of them.

Fourier convention used throughout the package::

    gamma_hat(k) = integral over the box of gamma(x) * exp(i k.x) dx

with no normalisation factor. Pairing two exponential solutions with
exponents zeta_+ and zeta_- (zeta_+ + zeta_- = 2i xi) therefore lands on
``gamma_hat(2 xi)``.
"""
from collections import namedtuple
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import NonEllipticPresetError, ParameterError, ValidationError
from .mesh import BoxDomain, build_mesh, integrate_volume

PRESETS = ("constant-iso", "constant-aniso", "bump-iso", "bump-aniso")

#: Default anisotropy direction of the bump-aniso preset (eigenvalues 2, -1, -1).
DEFAULT_BUMP_SHAPE = ((0.0, 1.0, 1.0), (1.0, 0.0, 1.0), (1.0, 1.0, 0.0))

Ellipticity = namedtuple("Ellipticity", "lam eig_min eig_max")


def bump(x, center, width):
    """Smooth compactly supported profile exp(1 - 1/(1 - r^2)), r = |x - center| / width."""
    r2 = np.sum((np.asarray(x) - np.asarray(center)) ** 2, axis=-1) / width ** 2
    out = np.zeros(r2.shape)
    inside = r2 < 1.0
    out[inside] = np.exp(1.0 - 1.0 / (1.0 - r2[inside]))
    return out


@dataclass(eq=False)
class ConductivityField:
    """A symmetric matrix field x -> gamma(x)."""

    rule: Callable
    n: int = 3
    name: str = "custom"
    params: dict = field(default_factory=dict)
    lam: Optional[float] = None

    def __call__(self, x):
        """Evaluate at points of shape (..., n); returns (..., n, n)."""
        return np.asarray(self.rule(np.asarray(x, dtype=float)))

    @property
    def is_constant(self):
        return self.name.startswith("constant")

    def cell_average(self, mesh, level=2):
        """Cellwise mean of gamma, shape (ncells, n, n)."""
        pts, w, _ = mesh.quadrature(level)
        vals = self(pts)
        return np.einsum("cq,cqij->cij", w, vals) / mesh.cell_volumes[:, None, None]

    def __add__(self, other):
        if not isinstance(other, ConductivityField):
            return NotImplemented
        return ConductivityField(lambda x: self(x) + other(x), self.n, "sum", {})

    def scaled(self, c):
        return ConductivityField(lambda x: c * self(x), self.n, "scaled", {})


def _constant_rule(mat):
    mat = np.array(mat, dtype=float)

    def rule(x):
        return np.broadcast_to(mat, x.shape[:-1] + mat.shape).copy()
    return rule


def gamma_preset(name, params=None, mesh=None):
    """Build a named conductivity preset and validate it on ``mesh`` nodes.

    Presets and their parameters:

    * ``constant-iso``: ``c`` (default 1) gives gamma = c I.
    * ``constant-aniso``: ``matrix`` (n x n) or ``diag`` (default (2, 1, 1)).
    * ``bump-iso``: gamma = (c + amplitude * bump(x)) I.
    * ``bump-aniso``: gamma = c I + amplitude * bump(x) * shape, where ``shape``
      is a symmetric matrix (default has eigenvalues 2, -1, -1).

    Bumps take ``center`` (default origin), ``width`` (default 0.4) and
    ``amplitude`` (default 0.1). Without a mesh the check uses 9 nodes per
    axis on the centered unit box.
    """
    params = dict(params or {})
    n = int(params.pop("n", mesh.n if mesh is not None else 3))
    eye = np.eye(n)
    record = {}
    if name == "constant-iso":
        c = float(params.pop("c", 1.0))
        record = {"c": c}
        rule = _constant_rule(c * eye)
    elif name == "constant-aniso":
        if "matrix" in params:
            mat = np.array(params.pop("matrix"), dtype=float).reshape(n, n)
        else:
            mat = np.diag(np.array(params.pop("diag", (2.0, 1.0, 1.0)[:n]), dtype=float))
        record = {"matrix": mat.tolist()}
        rule = _constant_rule(mat)
    elif name in ("bump-iso", "bump-aniso"):
        c = float(params.pop("c", 1.0))
        amp = float(params.pop("amplitude", 0.1))
        center = np.array(params.pop("center", (0.0,) * n), dtype=float)
        width = float(params.pop("width", 0.4))
        if width <= 0:
            raise ParameterError("bump width must be positive")
        if name == "bump-iso":
            shape = eye
        else:
            shape = np.array(params.pop("shape", np.array(DEFAULT_BUMP_SHAPE)[:n, :n]), dtype=float)
            shape = shape.reshape(n, n)
        record = {"c": c, "amplitude": amp, "center": center.tolist(), "width": width}
        if name == "bump-aniso":
            record["shape"] = shape.tolist()

        def rule(x, c=c, amp=amp, center=center, width=width, shape=shape):
            b = bump(x, center, width)
            return c * eye + amp * b[..., None, None] * shape
    else:
        raise ParameterError(f"unknown preset {name!r}; expected one of {PRESETS}")
    if params:
        raise ParameterError(f"unknown parameters for preset {name!r}: {sorted(params)}")

    gamma = ConductivityField(rule, n, name, record)
    if mesh is None:
        mesh = build_mesh(BoxDomain.centered_unit(n), 9)
    try:
        gamma.lam = check_symmetric_ellipticity(gamma, mesh).lam
    except ValidationError as exc:
        raise NonEllipticPresetError(f"preset {name!r} {record}: {exc}") from exc
    return gamma


def check_symmetric_ellipticity(gamma, mesh, sym_tol=1e-12):
    """Scan gamma on the mesh nodes.

    Returns ``(lam, eig_min, eig_max)`` with lam the largest constant for which
    lam |v|^2 <= v.gamma v <= |v|^2 / lam holds at every node.
    """
    g = gamma(mesh.nodes)
    asym = np.max(np.abs(g - np.swapaxes(g, -1, -2)), axis=(1, 2))
    if np.any(asym > sym_tol):
        bad = int(np.argmax(asym))
        raise ValidationError(
            f"gamma not symmetric at node {bad} x={mesh.nodes[bad].tolist()} (|g - g^T| = {asym[bad]:.3e})"
        )
    eig = np.linalg.eigvalsh(g)
    lo, hi = eig[:, 0], eig[:, -1]
    if np.any(lo <= 0):
        bad = int(np.argmin(lo))
        raise ValidationError(
            f"gamma indefinite at node {bad} x={mesh.nodes[bad].tolist()} (smallest eigenvalue {lo[bad]:.6g})"
        )
    eig_min, eig_max = float(lo.min()), float(hi.max())
    lam = min(eig_min, 1.0 / eig_max, 1.0)
    return Ellipticity(lam, eig_min, eig_max)


def gamma_hat_direct(gamma, k, mesh, level=2):
    """Entrywise quadrature of gamma(x) exp(i k.x) over the mesh, shape (n, n)."""
    k = np.asarray(k, dtype=float)

    def integrand(x):
        return gamma(x) * np.exp(1j * (x @ k))[..., None, None]
    out = integrate_volume(mesh, integrand, level)
    return 0.5 * (out + out.T)


def volume_hat(mesh, k, level=2):
    """Quadrature of exp(i k.x) over the mesh."""
    k = np.asarray(k, dtype=float)
    return complex(integrate_volume(mesh, lambda x: np.exp(1j * (x @ k)), level))


PROVENANCE_TAGS = (
    "family-1-order-0", "family-1-order-1", "family-1-order-2", "family-2", "oracle",
)


@dataclass
class GammaHatSlice:
    """gamma_hat at one frequency k = 2 xi.

    ``frame`` holds the orthonormal rows (xi/|xi|, e1, e2); ``frame_matrix`` is
    gamma_hat expressed in that frame and ``provenance`` tags each of its
    independent entries with the step that produced it.
    """

    xi: np.ndarray
    matrix: np.ndarray
    frame: np.ndarray
    frame_matrix: np.ndarray
    provenance: dict
    mode: str = "oracle"

    def __post_init__(self):
        self.xi = np.asarray(self.xi, dtype=float)
        self.matrix = np.asarray(self.matrix, dtype=complex)
        if not np.allclose(self.matrix, self.matrix.T, rtol=0, atol=1e-14 * max(1.0, np.abs(self.matrix).max())):
            raise ValidationError("gamma_hat slice must be symmetric")
        n = self.matrix.shape[0]
        need = {(i, j) for i in range(n) for j in range(i, n)}
        if set(self.provenance) != need:
            raise ValidationError(f"provenance must cover entries {sorted(need)}")

    @property
    def k(self):
        return 2.0 * self.xi
