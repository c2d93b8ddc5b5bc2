"""Surface finite element spaces on triangulated polyhedra.

Two discrete spaces: lowest-order Raviart-Thomas (RT0, the RWG basis) with
one flux degree of freedom per edge, and continuous piecewise linears (P1)
with one nodal value per vertex.  The RWG basis is normalized to unit total
edge flux; the orientation sign of edge e on triangle T is +1 when T's
winding traverses e from the lower to the higher vertex index.

Both quasi-interpolation operators average over neighborhoods instead of
using point values: the scalar one weights by the nodal hat over the vertex
star, the RT one takes the mean of the field over one fixed reference
triangle per edge and measures its flux.  They are stable in L2 but do not
commute with the divergence, which `noncommuting_witness` exhibits.
"""

from __future__ import annotations

import inspect
from dataclasses import dataclass, field

import numpy as np

from .mesh import SurfaceMesh
from .quadrature import gauss_segment, gauss_triangle


@dataclass
class RTSpace:
    """Lowest-order Raviart-Thomas space with unit-flux RWG basis.

    The basis function of edge e restricted to an incident triangle T is
    sign * (x - p) / (2 |T|) with p the vertex of T opposite e; its
    divergence is sign / |T| and its normal flux through e is one.

    Attributes
    ----------
    mesh : SurfaceMesh
    sign : (F, 3) float array
        Orientation sign of local edge i on each triangle.
    ndof : int
        Number of edges.
    """

    mesh: SurfaceMesh
    sign: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.sign = np.where(self.mesh.tri_edge_forward, 1.0, -1.0)

    @property
    def ndof(self):
        return len(self.mesh.edges)

    def basis_values(self, tri, bary):
        """Values of the three local RWG functions on one triangle.

        Parameters
        ----------
        tri : int
            Triangle index.
        bary : (n, 3) array
            Barycentric coordinates of evaluation points.

        Returns
        -------
        (3, n, 3) array
            values[i, q] is the basis function of local edge i at point q.
        """
        bary = np.asarray(bary, dtype=float)
        v = self.mesh.vertices[self.mesh.triangles[tri]]
        x = bary @ v
        scale = self.sign[tri] / (2.0 * self.mesh.area[tri])
        return np.stack(
            [scale[i] * (x - v[(i + 2) % 3]) for i in range(3)]
        )

    def panel_linear(self, coefficients):
        """Per-triangle affine form of a coefficient vector.

        The field restricted to triangle T is const[T] + slope[T] * x.

        Returns
        -------
        const : (F, 3) complex array
        slope : (F,) complex array
        """
        coefficients = np.asarray(coefficients)
        c = coefficients[self.mesh.tri_edges] * self.sign
        c /= 2.0 * self.mesh.area[:, None]
        slope = c.sum(axis=1)
        opposite = self.mesh.vertices[self.mesh.triangles[:, [2, 0, 1]]]
        const = -np.einsum("ti,tij->tj", c, opposite)
        return const, slope


@dataclass
class P1Space:
    """Continuous piecewise linears with nodal hat basis.

    Attributes
    ----------
    mesh : SurfaceMesh
    star_area : (V,) float array
        Area of each vertex star (union of incident triangles).
    ndof : int
        Number of vertices.
    """

    mesh: SurfaceMesh
    star_area: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.star_area = np.zeros(len(self.mesh.vertices))
        np.add.at(
            self.star_area,
            self.mesh.triangles.ravel(),
            np.repeat(self.mesh.area, 3),
        )

    @property
    def ndof(self):
        return len(self.mesh.vertices)


@dataclass
class DiscreteFunction:
    """Coefficient vector in one of the discrete spaces."""

    space: object
    coefficients: np.ndarray

    def __post_init__(self):
        self.coefficients = np.asarray(self.coefficients, dtype=complex)
        if self.coefficients.shape != (self.space.ndof,):
            raise ValueError(
                f"coefficient vector has length {self.coefficients.shape}, "
                f"space has {self.space.ndof} degrees of freedom"
            )


def _check_bary(bary):
    bary = np.atleast_2d(np.asarray(bary, dtype=float))
    if np.any(bary < -1e-12) or np.any(np.abs(bary.sum(axis=1) - 1.0) > 1e-12):
        raise ValueError("point outside the triangle (invalid barycentric)")
    return bary


def eval_rt(u: DiscreteFunction, tri: int, bary):
    """Evaluate an RT0 function on one triangle.

    Parameters
    ----------
    u : DiscreteFunction
        Function in an RTSpace.
    tri : int
        Triangle index.
    bary : (3,) or (n, 3) array
        Barycentric coordinates inside the triangle.

    Returns
    -------
    (n, 3) complex array
    """
    bary = _check_bary(bary)
    space = u.space
    values = space.basis_values(tri, bary)
    c = u.coefficients[space.mesh.tri_edges[tri]]
    return np.einsum("i,iqj->qj", c, values)


def div_rt(u: DiscreteFunction, tri: int):
    """Surface divergence of an RT0 function on one triangle (constant)."""
    space = u.space
    c = u.coefficients[space.mesh.tri_edges[tri]]
    return np.sum(c * space.sign[tri]) / space.mesh.area[tri]


def eval_p1(u: DiscreteFunction, tri: int, bary):
    """Evaluate a P1 function on one triangle at barycentric points."""
    bary = _check_bary(bary)
    return bary @ u.coefficients[u.space.mesh.triangles[tri]]


def grad_p1(u: DiscreteFunction, tri: int):
    """In-plane gradient of a P1 function on one triangle (constant 3-vector)."""
    mesh = u.space.mesh
    v = mesh.vertices[mesh.triangles[tri]]
    c = u.coefficients[mesh.triangles[tri]]
    n = mesh.normal[tri]
    # grad of hat i is n x (v_{i+2} - v_{i+1}) / (2 area)
    g = np.cross(n, v[[2, 0, 1]] - v[[1, 2, 0]]) / (2.0 * mesh.area[tri])
    return c @ g


def curl_p1(alpha: DiscreteFunction) -> DiscreteFunction:
    """Surface curl of a P1 function as an exact RT0 function.

    The curl (gradient rotated into the tangent plane, grad x n) is
    piecewise constant with continuous edge fluxes, hence lies in RT0.
    Its flux through an edge is the tangential derivative integrated
    along it, which telescopes to the difference of nodal values.
    """
    mesh = alpha.space.mesh
    a = alpha.coefficients
    coeffs = a[mesh.edges[:, 1]] - a[mesh.edges[:, 0]]
    return DiscreteFunction(RTSpace(mesh), coeffs)


def _sample(v, x, tri):
    if _takes_triangle(v):
        return np.asarray(v(x, tri))
    return np.asarray(v(x))


def _takes_triangle(v):
    try:
        params = [
            p
            for p in inspect.signature(v).parameters.values()
            if p.default is inspect.Parameter.empty
            and p.kind
            in (p.POSITIONAL_ONLY, p.POSITIONAL_OR_KEYWORD, p.VAR_POSITIONAL)
        ]
    except (TypeError, ValueError):
        return False
    return len(params) >= 2


def clement_p1(v, space: P1Space, order: int = 4) -> DiscreteFunction:
    """Quasi-interpolate a scalar function into P1 by weighted star averages.

    The nodal value at vertex nu is (3 / |star|) * integral of v times the
    hat of nu over the star; a constant function is reproduced exactly
    because each hat integrates to one third of its star's area.

    Parameters
    ----------
    v : callable
        v(points) or v(points, triangle) -> (n,) values at surface points.
    space : P1Space
    order : int
        Quadrature order for the DOF integrals.
    """
    mesh = space.mesh
    bary, w = _full_bary(order)
    dofs = np.zeros(space.ndof, dtype=complex)
    for t in range(len(mesh.triangles)):
        x = bary @ mesh.vertices[mesh.triangles[t]]
        vals = _sample(v, x, t)
        contrib = 2.0 * mesh.area[t] * (w * vals) @ bary
        dofs[mesh.triangles[t]] += contrib
    dofs *= 3.0 / space.star_area
    return DiscreteFunction(space, dofs)


def clement_rt(v, space: RTSpace, order: int = 4) -> DiscreteFunction:
    """Quasi-interpolate a tangential field into RT0 by reference-element means.

    The degree of freedom of edge e is the flux through e of the mean of v
    over the fixed reference triangle of e (the lower-index incident one).
    Element-wise constant fields with continuous fluxes, such as c x n for
    constant c, are reproduced exactly.

    Parameters
    ----------
    v : callable
        v(points) or v(points, triangle) -> (n, 3) values at surface points.
    space : RTSpace
    order : int
        Quadrature order for the element means.
    """
    mesh = space.mesh
    bary, w = _full_bary(order)
    ref = mesh.edge_tris[:, 0]
    nu = mesh.edge_normals()
    dofs = np.zeros(space.ndof, dtype=complex)
    for e in range(space.ndof):
        t = int(ref[e])
        x = bary @ mesh.vertices[mesh.triangles[t]]
        mean = 2.0 * (w[:, None] * _sample(v, x, t)).sum(axis=0)
        local = int(np.nonzero(mesh.tri_edges[t] == e)[0][0])
        flux = mesh.edge_length(e) * (mean @ nu[t, local])
        dofs[e] = space.sign[t, local] * flux
    return DiscreteFunction(space, dofs)


def _full_bary(order):
    pts, w = gauss_triangle(order)
    bary = np.column_stack([1.0 - pts[:, 0] - pts[:, 1], pts[:, 0], pts[:, 1]])
    return bary, w


def tangential_linear_field(matrix, mesh: SurfaceMesh):
    """Tangential projection of x -> matrix @ x, evaluated per element.

    The returned callable v(points, tri) carries its matrix as v.matrix;
    the element-wise surface divergence of the field is
    trace(matrix) - n . matrix n with n the element normal.
    """
    matrix = np.asarray(matrix, dtype=float)

    def v(x, tri, _m=matrix, _mesh=mesh):
        n = _mesh.normal[tri]
        w = x @ _m.T
        return w - np.outer(w @ n, n)

    v.matrix = matrix
    return v


def noncommuting_witness(space: RTSpace = None):
    """A field and element where RT interpolation does not commute with div.

    Returns (v, tri) such that the divergence of the interpolant of v on
    triangle tri differs from the element mean of div v.  The field is the
    tangential projection of a fixed linear map; the reference-element
    averaging behind the DOFs sees neighboring elements, which shifts the
    fluxes away from those of the element itself.
    """
    if space is None:
        from .mesh import build_canonical

        space = RTSpace(build_canonical("cube", 1.0))
    mesh = space.mesh
    v = tangential_linear_field(np.diag([1.0, -0.5, 0.0]), mesh)
    interp = clement_rt(v, space)
    m = v.matrix
    mean_div = np.trace(m) - np.einsum("tj,jk,tk->t", mesh.normal, m, mesh.normal)
    gaps = np.array(
        [abs(div_rt(interp, t) - mean_div[t]) for t in range(len(mesh.triangles))]
    )
    return v, int(np.argmax(gaps))
