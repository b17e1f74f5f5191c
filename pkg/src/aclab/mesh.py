"""Structured simplicial meshes of a box, P1 fields and simplex quadrature.

Nodes are numbered with the x-index fastest, ``node = i + nx*(j + ny*k)``,
which is also the on-disk ordering of the field file format.
"""
from dataclasses import dataclass, field
from functools import cached_property, lru_cache
from itertools import permutations
from math import factorial
from typing import Callable, Optional

import numpy as np

from .errors import InvalidResolutionError, ParameterError


@dataclass(frozen=True)
class BoxDomain:
    lo: tuple
    hi: tuple

    def __post_init__(self):
        lo = tuple(float(v) for v in self.lo)
        hi = tuple(float(v) for v in self.hi)
        if len(lo) != len(hi) or len(lo) not in (2, 3):
            raise ParameterError("box must have matching lo/hi of dimension 2 or 3")
        if any(a >= b for a, b in zip(lo, hi)):
            raise ParameterError(f"box requires lo < hi componentwise, got {lo}, {hi}")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def n(self):
        return len(self.lo)

    @property
    def volume(self):
        return float(np.prod(np.subtract(self.hi, self.lo)))

    @classmethod
    def centered_unit(cls, n=3):
        """The default domain [-1/2, 1/2]^n."""
        return cls((-0.5,) * n, (0.5,) * n)

    @classmethod
    def unit(cls, n=3):
        return cls((0.0,) * n, (1.0,) * n)


# -- quadrature --------------------------------------------------------------

def _compositions(total, parts):
    if parts == 1:
        yield (total,)
        return
    for first in range(total, -1, -1):
        for rest in _compositions(total - first, parts - 1):
            yield (first,) + rest


def _grundmann_moeller(n, s):
    """Grundmann-Moeller rule of degree 2s+1 on the n-simplex.

    Returns barycentric points (q, n+1) and weights summing to 1.
    """
    d = 2 * s + 1
    pts, wts = [], []
    for i in range(s + 1):
        w = (-1) ** i * 2.0 ** (-2 * s) * (d + n - 2 * i) ** d
        w /= factorial(i) * factorial(d + n - i)
        for beta in _compositions(s - i, n + 1):
            pts.append([(2 * b + 1) / (d + n - 2 * i) for b in beta])
            wts.append(w)
    wts = np.array(wts)
    return np.array(pts), wts / wts.sum()


@lru_cache(maxsize=None)
def simplex_rule(n, level=2):
    """Quadrature on the reference n-simplex exact for polynomials of degree ``level``.

    Weights are fractions of the cell volume. Level 1 is the centroid,
    level 2 the classical positive-weight rule, higher levels use
    Grundmann-Moeller rules (which carry some negative weights).
    """
    if level < 1 or level > 9:
        raise ParameterError(f"quadrature level must be in 1..9, got {level}")
    if level == 1:
        return np.full((1, n + 1), 1.0 / (n + 1)), np.ones(1)
    if level == 2:
        if n == 2:
            a, b = 2.0 / 3.0, 1.0 / 6.0
        else:
            a, b = 0.5854101966249685, 0.1381966011250105
        pts = np.full((n + 1, n + 1), b)
        np.fill_diagonal(pts, a)
        return pts, np.full(n + 1, 1.0 / (n + 1))
    return _grundmann_moeller(n, level // 2)


# -- mesh --------------------------------------------------------------------

def _kuhn_simplices(n):
    """Vertex offsets of the Kuhn subdivision of the unit n-cube."""
    out = []
    for perm in permutations(range(n)):
        corner = np.zeros(n, dtype=int)
        verts = [corner.copy()]
        for axis in perm:
            corner[axis] = 1
            verts.append(corner.copy())
        out.append(np.array(verts))
    return out


@dataclass(eq=False)
class SimplicialMesh:
    domain: BoxDomain
    dims: tuple
    nodes: np.ndarray
    cells: np.ndarray
    boundary_nodes: np.ndarray
    cell_volumes: np.ndarray
    grads: np.ndarray  # (ncells, n, n+1): gradient of each local P1 basis function

    @property
    def n(self):
        return self.domain.n

    @property
    def n_nodes(self):
        return self.nodes.shape[0]

    @property
    def n_cells(self):
        return self.cells.shape[0]

    @property
    def h(self):
        return max((b - a) / (d - 1) for a, b, d in zip(self.domain.lo, self.domain.hi, self.dims))

    @cached_property
    def interior_nodes(self):
        mask = np.ones(self.n_nodes, dtype=bool)
        mask[self.boundary_nodes] = False
        return np.flatnonzero(mask)

    @cached_property
    def boundary_mask(self):
        mask = np.zeros(self.n_nodes, dtype=bool)
        mask[self.boundary_nodes] = True
        return mask

    def quadrature(self, level=2):
        """Physical points (ncells, q, n), weights (ncells, q) and barycentrics (q, n+1)."""
        bary, w = simplex_rule(self.n, level)
        verts = self.nodes[self.cells]  # (ncells, n+1, n)
        pts = np.einsum("qa,cad->cqd", bary, verts)
        return pts, self.cell_volumes[:, None] * w[None, :], bary

    def gradient(self, values):
        """Cellwise constant gradient of a nodal P1 field, shape (ncells, n)."""
        values = np.asarray(values)
        return np.einsum("cda,ca->cd", self.grads, values[self.cells])


def build_mesh(domain, n_per_axis):
    """Tensor grid with ``n_per_axis`` nodes per axis, cubes split by Kuhn subdivision."""
    if int(n_per_axis) != n_per_axis or n_per_axis < 2:
        raise InvalidResolutionError(f"n_per_axis must be an integer >= 2, got {n_per_axis}")
    n_per_axis = int(n_per_axis)
    n = domain.n
    dims = (n_per_axis,) * n
    axes = [np.linspace(a, b, n_per_axis) for a, b in zip(domain.lo, domain.hi)]
    # x fastest
    grid = np.meshgrid(*axes, indexing="ij")
    nodes = np.stack([g.ravel(order="F") for g in grid], axis=1)

    strides = np.array([n_per_axis ** d for d in range(n)])
    base = np.stack(np.meshgrid(*([np.arange(n_per_axis - 1)] * n), indexing="ij"), -1).reshape(-1, n)
    base_idx = base @ strides
    cells = []
    for offs in _kuhn_simplices(n):
        cells.append(base_idx[:, None] + (offs @ strides)[None, :])
    cells = np.concatenate(cells, axis=0)

    verts = nodes[cells]
    edges = verts[:, 1:, :] - verts[:, :1, :]  # (ncells, n, n)
    det = np.linalg.det(edges)
    flip = det < 0
    if np.any(flip):
        cells[flip, 0], cells[flip, 1] = cells[flip, 1].copy(), cells[flip, 0].copy()
        verts = nodes[cells]
        edges = verts[:, 1:, :] - verts[:, :1, :]
        det = np.linalg.det(edges)
    vol = det / factorial(n)

    # columns of inv(edges) are gradients of barycentrics 1..n
    grads = np.empty((cells.shape[0], n, n + 1))
    grads[:, :, 1:] = np.linalg.inv(edges)
    grads[:, :, 0] = -grads[:, :, 1:].sum(axis=2)

    idx = np.stack(np.unravel_index(np.arange(nodes.shape[0]), dims, order="F"), 1)
    on_bdry = np.any((idx == 0) | (idx == n_per_axis - 1), axis=1)
    return SimplicialMesh(
        domain=domain,
        dims=dims,
        nodes=nodes,
        cells=cells,
        boundary_nodes=np.flatnonzero(on_bdry),
        cell_volumes=vol,
        grads=grads,
    )


# -- fields ------------------------------------------------------------------

@dataclass(eq=False)
class NodalField:
    """P1 coefficients on a mesh; complex fields keep real and imaginary parts apart."""

    mesh: SimplicialMesh
    values: np.ndarray
    imag: Optional[np.ndarray] = None
    info: Optional[object] = None
    kind_hint: Optional[str] = field(default=None, repr=False)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape[0] != self.mesh.n_nodes:
            raise ParameterError(
                f"field has {self.values.shape[0]} values, mesh has {self.mesh.n_nodes} nodes"
            )
        if self.imag is not None:
            self.imag = np.asarray(self.imag, dtype=float)
            if self.imag.shape != self.values.shape:
                raise ParameterError("real and imaginary parts must have the same shape")

    @classmethod
    def from_complex(cls, mesh, z, **kw):
        z = np.asarray(z)
        return cls(mesh, z.real.copy(), z.imag.copy(), **kw)

    @property
    def kind(self):
        if self.kind_hint:
            return self.kind_hint
        if self.values.ndim == 3:
            return "matrix"
        return "complex" if self.imag is not None else "scalar"

    @property
    def is_complex(self):
        return self.imag is not None

    def as_complex(self):
        if self.imag is None:
            return self.values.astype(complex)
        return self.values + 1j * self.imag

    def gradient(self):
        g = self.mesh.gradient(self.values)
        if self.imag is not None:
            g = g + 1j * self.mesh.gradient(self.imag)
        return g

    def at_quadrature(self, level=2):
        """Values at the quadrature points of every cell, shape (ncells, q)."""
        bary, _ = simplex_rule(self.mesh.n, level)
        return np.einsum("qa,ca->cq", bary, self.as_complex()[self.mesh.cells] if self.is_complex
                         else self.values[self.mesh.cells])

    def boundary_values(self):
        return self.as_complex()[self.mesh.boundary_nodes] if self.is_complex \
            else self.values[self.mesh.boundary_nodes]

    def __add__(self, other):
        return _combine(self, other, 1.0)

    def __sub__(self, other):
        return _combine(self, other, -1.0)

    def __mul__(self, c):
        c = complex(c)
        z = self.as_complex() * c
        if self.imag is None and c.imag == 0.0:
            return NodalField(self.mesh, z.real)
        return NodalField.from_complex(self.mesh, z)

    __rmul__ = __mul__


def _combine(a, b, sign):
    if isinstance(b, NodalField):
        if b.mesh is not a.mesh:
            raise ParameterError("fields live on different meshes")
        if a.imag is None and b.imag is None:
            return NodalField(a.mesh, a.values + sign * b.values)
        return NodalField.from_complex(a.mesh, a.as_complex() + sign * b.as_complex())
    return NotImplemented


def interpolate(mesh, f: Callable):
    """Nodal interpolant of ``f``; ``f`` maps an (m, n) array of points to m values.

    Complex-valued ``f`` yields a complex field stored as a real pair;
    matrix-valued ``f`` (m, n, n) yields a matrix field.
    """
    vals = np.asarray(f(mesh.nodes))
    if vals.ndim == 0:
        vals = np.full(mesh.n_nodes, vals)
    if np.iscomplexobj(vals):
        return NodalField.from_complex(mesh, vals)
    return NodalField(mesh, vals.astype(float))


def integrate_volume(mesh, integrand, level=2):
    """Sum over cells and quadrature points of ``w * integrand``.

    ``integrand`` is either a callable receiving physical quadrature points of
    shape (ncells, q, n) or a NodalField (integrated through its P1 interpolant).
    Trailing dimensions of the integrand (e.g. matrix entries) are kept.
    """
    pts, w, _ = mesh.quadrature(level)
    if isinstance(integrand, NodalField):
        vals = integrand.at_quadrature(level)
    else:
        vals = np.asarray(integrand(pts))
    if vals.ndim == 0:
        vals = np.full(w.shape, vals)
    extra = vals.ndim - 2
    out = np.tensordot(w, vals, axes=([0, 1], [0, 1])) if extra else np.sum(w * vals)
    if np.iscomplexobj(out):
        return out
    return out if extra else float(out)


def c1_proxy_norm(mesh, values):
    """Max nodal |value| plus max cellwise |gradient| of a (possibly complex) P1 field."""
    values = np.asarray(values)
    g = mesh.gradient(values.real)
    if np.iscomplexobj(values):
        g = g + 1j * mesh.gradient(values.imag)
    return float(np.max(np.abs(values)) + np.max(np.linalg.norm(g, axis=1)))
