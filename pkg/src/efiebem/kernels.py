"""Helmholtz kernel, analytic static panel integrals, and on-surface
evaluation of the single-layer potentials.

The static (k=0) integrals over a planar triangle have classical closed
forms built from per-edge logarithms and arctangents (Wilton et al. 1984,
Graglia 1993).  They are used two ways: as the singular part in
singularity-subtracted on-surface evaluation of the Helmholtz layer
potentials, and inside the semi-analytic reference route for validating
the panel-pair quadrature.

Conventions: a triangle is a (3, 3) float array of vertices; its unit
normal is n = (v1-v0)x(v2-v0) normalized, edges run v0->v1->v2->v0, and
the in-plane outward edge normal is m_i = t_i x n.  Evaluation points are
(N, 3) arrays.  All "raw" quantities omit the 1/(4 pi) factor.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "green",
    "grad_green_x",
    "static_panel_potential",
    "static_panel_potential_grad",
    "static_panel_first_moment",
    "static_panel_solid_angle",
    "static_edge_potential",
    "SurfaceDensity",
    "eval_Vk",
    "eval_Ak",
    "eval_grad_Vk_div",
    "eval_curl_Ak",
]

_FOUR_PI = 4.0 * np.pi


def green(k: float, x: np.ndarray, y: np.ndarray):
    """Helmholtz fundamental solution exp(ik r)/(4 pi r), r = |x - y|."""
    r = np.linalg.norm(np.asarray(x) - np.asarray(y), axis=-1)
    if np.any(r == 0.0):
        raise ValueError("green: coincident points")
    return np.exp(1j * k * r) / (_FOUR_PI * r)


def grad_green_x(k: float, x: np.ndarray, y: np.ndarray):
    """Gradient of the fundamental solution in its first argument.

    grad_x G_k = (ik - 1/r) G_k (x - y)/r.
    """
    diff = np.asarray(x, dtype=float) - np.asarray(y, dtype=float)
    r = np.linalg.norm(diff, axis=-1)
    if np.any(r == 0.0):
        raise ValueError("grad_green_x: coincident points")
    g = np.exp(1j * k * r) / (_FOUR_PI * r)
    fac = (1j * k - 1.0 / r) * g / r
    return fac[..., None] * diff


class _PanelGeometry:
    """Per-edge quantities entering the closed-form static integrals.

    Accepts one triangle (3, 3) or a stack (..., 3, 3); all derived arrays
    carry the stack axes in front.
    """

    def __init__(self, tri: np.ndarray):
        tri = np.asarray(tri, dtype=float)
        self.v = tri
        e0 = tri[..., 1, :] - tri[..., 0, :]
        e1 = tri[..., 2, :] - tri[..., 0, :]
        nn = np.cross(e0, e1)
        self.area = 0.5 * np.linalg.norm(nn, axis=-1)
        if np.any(self.area <= 0.0):
            raise ValueError("degenerate panel")
        self.n = nn / (2.0 * self.area[..., None])
        self.a = tri  # edge start points
        self.b = tri[..., [1, 2, 0], :]  # edge end points
        ev = self.b - self.a
        self.L = np.linalg.norm(ev, axis=-1)
        self.t = ev / self.L[..., None]
        self.m = np.cross(self.t, self.n[..., None, :])  # outward edge normals


def _edge_terms(geo: _PanelGeometry, X: np.ndarray):
    """Per-edge distances and the robust log term for points X (N, 3).

    Returns z (..., N), d (..., N, 3), lm, lp, Rm, Rp, I0 all (..., N, 3),
    with ... the panel stack axes of the geometry.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    z = np.einsum("nc,...c->...n", X, geo.n) - np.einsum(
        "...c,...c->...", geo.v[..., 0, :], geo.n
    )[..., None]
    # Points within rounding error of the panel plane are treated as exactly
    # in-plane, so the jump terms take their principal-value average instead
    # of a sign decided by the last bit of z.
    z = np.where(np.abs(z) <= 1e-13 * geo.L.max(axis=-1)[..., None], 0.0, z)
    rel_a = geo.a[..., None, :, :] - X[:, None, :]  # (..., N, 3edges, 3)
    rel_b = geo.b[..., None, :, :] - X[:, None, :]
    lm = np.einsum("...nec,...ec->...ne", rel_a, geo.t)
    lp = np.einsum("...nec,...ec->...ne", rel_b, geo.t)
    Rm = np.linalg.norm(rel_a, axis=-1)
    Rp = np.linalg.norm(rel_b, axis=-1)
    d = np.einsum("...nec,...ec->...ne", rel_a, geo.m)
    # The closed forms diverge on the edge segments; detect that by the
    # perpendicular distance to the edge line rather than trusting the log
    # argument to round to zero.  d and z are direct dot products, so
    # d^2 + z^2 resolves the distance without cancellation.
    tol = 1e-12 * geo.L[..., None, :]
    perp_sq = d * d + (z * z)[..., None]
    on_seg = (lm <= tol) & (lp >= -tol)
    if np.any((perp_sq <= tol * tol) & on_seg):
        raise ValueError("static panel integral evaluated on an edge line")
    # ln((R+ + l+)/(R- + l-)) with the algebraically equivalent branch
    # ln((R- - l-)/(R+ - l+)) where the first would lose digits.
    use_alt = lp + lm < 0.0
    num = np.where(use_alt, Rm - lm, Rp + lp)
    den = np.where(use_alt, Rp - lp, Rm + lm)
    if np.any((num <= 0.0) | (den <= 0.0)):
        raise ValueError("static panel integral evaluated on an edge line")
    I0 = np.log(num / den)
    return X, z, d, lm, lp, Rm, Rp, I0


def _beta(z, d, lm, lp, Rm, Rp):
    R0sq = d * d + z[..., None] ** 2
    az = np.abs(z)[..., None]
    return np.arctan2(d * lp, R0sq + az * Rp) - np.arctan2(d * lm, R0sq + az * Rm)


def static_panel_potential(tri: np.ndarray, X: np.ndarray):
    """Closed-form single-layer potential of a unit density.

    Returns int_T 1/(4 pi |x - y|) dsigma(y) for each row x of X; valid for
    any x off the edge lines, including points inside the panel.  A stack
    of panels (P, 3, 3) yields a (P, N) array.
    """
    geo = _PanelGeometry(tri)
    X, z, d, lm, lp, Rm, Rp, I0 = _edge_terms(geo, X)
    beta = _beta(z, d, lm, lp, Rm, Rp).sum(axis=-1)
    raw = np.sum(d * I0, axis=-1) - np.abs(z) * beta
    return raw / _FOUR_PI


def static_panel_solid_angle(tri: np.ndarray, X: np.ndarray):
    """Signed integral int_T (x - y).n / |x - y|^3 dsigma(y).

    Equals the solid angle under which the panel is seen, with the sign of
    the side of the panel plane the point lies on; 0 in the plane.
    """
    geo = _PanelGeometry(tri)
    X, z, d, lm, lp, Rm, Rp, _ = _edge_terms(geo, X)
    beta = _beta(z, d, lm, lp, Rm, Rp).sum(axis=-1)
    return np.sign(z) * beta


def static_panel_potential_grad(tri: np.ndarray, X: np.ndarray):
    """Gradient in x of ``static_panel_potential``.

    For x in the panel plane the normal component is returned as 0, the
    principal-value average of its two one-sided limits; the tangential
    part is the finite pointwise value (continuous across the panel away
    from the edges).
    """
    geo = _PanelGeometry(tri)
    X, z, d, lm, lp, Rm, Rp, I0 = _edge_terms(geo, X)
    beta = _beta(z, d, lm, lp, Rm, Rp).sum(axis=-1)
    raw = -np.einsum("...ne,...ec->...nc", I0, geo.m) - np.sign(z)[
        ..., None
    ] * beta[..., None] * geo.n[..., None, :]
    return raw / _FOUR_PI


def static_panel_first_moment(tri: np.ndarray, X: np.ndarray):
    """Closed-form first moment int_T y/(4 pi |x - y|) dsigma(y), (N, 3)."""
    geo = _PanelGeometry(tri)
    X, z, d, lm, lp, Rm, Rp, I0 = _edge_terms(geo, X)
    beta = _beta(z, d, lm, lp, Rm, Rp).sum(axis=-1)
    s0_raw = np.sum(d * I0, axis=-1) - np.abs(z) * beta
    R0sq = d * d + z[..., None] ** 2
    edge_fac = R0sq * I0 + lp * Rp - lm * Rm
    mom_rel = 0.5 * np.einsum("...ne,...ec->...nc", edge_fac, geo.m)
    rho = X - z[..., None] * geo.n[..., None, :]
    return (mom_rel + rho * s0_raw[..., None]) / _FOUR_PI


def _static_panel_r_potential(tri: np.ndarray, X: np.ndarray):
    """Closed-form int_T |x - y|/(4 pi) dsigma(y) for each row x of X.

    Divergence identity: div_y [(y - rho) R] = 3R - z^2/R with rho the
    in-plane projection of x, so the panel integral reduces to edge line
    integrals of R plus the already known 1/R potential.
    """
    geo = _PanelGeometry(tri)
    X, z, d, lm, lp, Rm, Rp, I0 = _edge_terms(geo, X)
    beta = _beta(z, d, lm, lp, Rm, Rp).sum(axis=-1)
    s0_raw = np.sum(d * I0, axis=-1) - np.abs(z) * beta
    R0sq = d * d + z[..., None] ** 2
    edge_r = 0.5 * (lp * Rp - lm * Rm + R0sq * I0)
    raw = (np.sum(d * edge_r, axis=-1) + z**2 * s0_raw) / 3.0
    return raw / _FOUR_PI


def static_edge_potential(a: np.ndarray, b: np.ndarray, X: np.ndarray):
    """Line integrals of 1/(4 pi |x - y|) and of the arclength moment.

    Returns (I0, I1) with I0 = int_e dl/(4 pi r) and
    I1 = int_e s dl/(4 pi r), where s is the arclength parameter measured
    from a toward b.  Used by the surface-curl evaluation after reducing
    panel integrals to the boundary.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    X = np.atleast_2d(np.asarray(X, dtype=float))
    L = np.linalg.norm(b - a)
    t = (b - a) / L
    rel_a = a[None, :] - X
    rel_b = b[None, :] - X
    lm = rel_a @ t
    lp = rel_b @ t
    Rm = np.linalg.norm(rel_a, axis=1)
    Rp = np.linalg.norm(rel_b, axis=1)
    use_alt = lp + lm < 0.0
    num = np.where(use_alt, Rm - lm, Rp + lp)
    den = np.where(use_alt, Rp - lp, Rm + lm)
    bad = (num <= 0.0) | (den <= 0.0)
    if np.any(bad):
        raise ValueError("edge potential evaluated on the edge line")
    I0 = np.log(num / den)
    s0 = -lm  # arclength of the foot of x on the edge line
    I1 = (Rp - Rm) + s0 * I0
    return I0 / _FOUR_PI, I1 / _FOUR_PI


# -- surface densities and layer-potential evaluation --------------------------


NEAR_FACTOR = 1.2
"""Panels whose centroid lies within this many diameters of the target are
integrated by singularity subtraction instead of plain Gauss quadrature."""


class SurfaceDensity:
    """Piecewise-polynomial density on a surface mesh.

    Parameters
    ----------
    kind : {"scalar_p0", "tangential_rt0"}
        Element-wise constant scalars (one coefficient per triangle) or a
        lowest-order Raviart-Thomas tangential field (one flux coefficient
        per edge).
    coefficients : complex array
        Length F for scalar_p0, length E for tangential_rt0.
    mesh : SurfaceMesh
    """

    def __init__(self, kind, coefficients, mesh):
        self.kind = kind
        self.coefficients = np.asarray(coefficients, dtype=complex)
        self.mesh = mesh
        want = {
            "scalar_p0": len(mesh.triangles),
            "tangential_rt0": len(mesh.edges),
        }
        if kind not in want:
            raise ValueError(f"unknown density kind: {kind!r}")
        if self.coefficients.shape != (want[kind],):
            raise ValueError(
                f"{kind} density needs {want[kind]} coefficients, "
                f"got {self.coefficients.shape}"
            )
        self._affine = None

    def panel_affine(self):
        """Per-triangle affine form (const, slope): u|_T(y) = const + slope*y.

        Only tangential_rt0 densities have one; the slope is the scalar
        multiplying the position vector in the RWG expansion.
        """
        if self.kind != "tangential_rt0":
            raise ValueError("panel_affine needs a tangential_rt0 density")
        if self._affine is None:
            from .spaces import RTSpace

            self._affine = RTSpace(self.mesh).panel_linear(self.coefficients)
        return self._affine

    def panel_charge(self):
        """Element-wise surface divergence (constant per triangle)."""
        if self.kind == "scalar_p0":
            return self.coefficients
        _, slope = self.panel_affine()
        return 2.0 * slope


def _targets(x):
    X = np.atleast_2d(np.asarray(x, dtype=float))
    return X, np.asarray(x).ndim == 1


def _panel_nodes(mesh, order):
    from .quadrature import gauss_triangle

    pts, w = gauss_triangle(order)
    bary = np.column_stack([1.0 - pts[:, 0] - pts[:, 1], pts[:, 0], pts[:, 1]])
    nodes = np.einsum("qi,fij->fqj", bary, mesh.vertices[mesh.triangles])
    return nodes, w


def _near_mask(mesh, X, mode):
    if mode == "subtract":
        return np.ones((len(X), len(mesh.triangles)), dtype=bool)
    if mode == "plain":
        return np.zeros((len(X), len(mesh.triangles)), dtype=bool)
    if mode != "auto":
        raise ValueError(f"unknown evaluation mode: {mode!r}")
    centroid = mesh.vertices[mesh.triangles].mean(axis=1)
    dist = np.linalg.norm(X[:, None, :] - centroid[None, :, :], axis=2)
    return dist <= NEAR_FACTOR * mesh.h[None, :]


def _far_sum(k, mesh, X, near, weigh, order_far):
    """Plain-quadrature contribution of all panels not flagged near.

    ``weigh(ker, diff, r, wjac, nodes)`` turns the kernel values of one
    chunk into that chunk's contribution; ker and diff are (m, F, q) and
    (m, F, q, 3), zeroed on near panels.
    """
    nodes, w = _panel_nodes(mesh, order_far)
    wjac = 2.0 * mesh.area[:, None] * w[None, :]
    f, q = nodes.shape[:2]
    chunk = max(1, 4_000_000 // (f * q))
    parts = []
    for lo in range(0, len(X), chunk):
        sel = slice(lo, lo + chunk)
        diff = X[sel, None, None, :] - nodes[None, :, :, :]
        r = np.linalg.norm(diff, axis=3)
        r = np.where(near[sel, :, None], 1.0, r)  # keep 1/r finite off-support
        ker = np.exp(1j * k * r) / (_FOUR_PI * r)
        ker[near[sel]] = 0.0
        parts.append(weigh(ker, diff, r, wjac, nodes))
    return np.concatenate(parts, axis=0)


def _polar_rule(tri, x, order):
    """Quadrature for a panel integrand with a radial cone at interior x.

    Splits the panel into three sub-triangles at x, integrates radially with
    the Jacobian absorbed into the weights, and maps the angular variable by
    u = asinh(tan psi) so that 1/|y - x| type kernels have a constant
    angular integrand even when x sits close to a panel edge.  Returns nodes
    (3 q^2, 3), weights (including the area Jacobian), and radii |y - x|.
    """
    from .quadrature import gauss_segment

    s, ws = gauss_segment(order)
    nodes, weights, radii = [], [], []
    for i in range(3):
        a, b = tri[i], tri[(i + 1) % 3]
        ehat = (b - a) / np.linalg.norm(b - a)
        foot = a + ((x - a) @ ehat) * ehat
        d = np.linalg.norm(x - foot)
        ua = np.arcsinh(((a - foot) @ ehat) / d)
        ub = np.arcsinh(((b - foot) @ ehat) / d)
        u = ua + (ub - ua) * s
        on_edge = foot[None, :] + d * np.sinh(u)[:, None] * ehat[None, :]
        span = d * np.cosh(u)
        y = x[None, None, :] + s[:, None, None] * (on_edge - x)[None, :, :]
        nodes.append(y.reshape(-1, 3))
        weights.append(((ub - ua) * d * np.outer(ws * s, ws * span)).ravel())
        radii.append(np.outer(s, span).ravel())
    return np.concatenate(nodes), np.concatenate(weights), np.concatenate(radii)


def _near_quad(mesh, panels, order):
    """Gauss nodes (P, q, 3) and area-weighted weights (P, q) per panel."""
    from .quadrature import gauss_triangle

    pts, w = gauss_triangle(order)
    bary = np.column_stack([1.0 - pts[:, 0] - pts[:, 1], pts[:, 0], pts[:, 1]])
    nodes = np.einsum("qi,pij->pqj", bary, mesh.vertices[mesh.triangles[panels]])
    return nodes, 2.0 * mesh.area[panels][:, None] * w[None, :]


def _rem_green(k, r, scale):
    """Smooth remainder (G_k - G_0)(r); its r -> 0 limit ik/(4 pi) is
    substituted where a quadrature node collides with a target."""
    small = r < 1e-12 * scale
    rs = np.where(small, 1.0, r)
    rem = np.expm1(1j * k * rs) / (_FOUR_PI * rs)
    return np.where(small, 1j * k / _FOUR_PI, rem)


def _rem_grad_factor(k, r, scale):
    """Scalar factor of grad_x (G_k - G_0) = fac(r) (x - y).

    fac = [e^{ikr}(ikr - 1) + 1] / (4 pi r^3); fac (x - y) is bounded as
    r -> 0, so colliding nodes are zeroed out.
    """
    small = r < 1e-12 * scale
    rs = np.where(small, 1.0, r)
    kr = k * rs
    num = np.exp(1j * kr) * (1j * kr - 1.0) + 1.0
    return np.where(small, 0.0, num / (_FOUR_PI * rs**3))


def eval_Vk(k, density, x, on_element=None, mode="auto", order=10, order_far=8):
    """Single-layer potential of a piecewise-constant charge at points x.

    Returns int_Gamma G_k(x, y) rho(y) dsigma(y).  Panels near a target
    (always including its host element) contribute their closed-form static
    potential plus quadrature of the smooth remainder (G_k - G_0); far
    panels are integrated by plain Gauss quadrature.  The host element's
    remainder uses a polar rule centered at each target.

    Parameters
    ----------
    k : float
        Wavenumber, >= 0.
    density : SurfaceDensity
        Kind scalar_p0 (an RT0 density contributes its divergence).
    x : (3,) or (m, 3) array
        Targets; on-surface targets must share one host element.
    on_element : int, optional
        Host element of on-surface targets (kept in the near set).
    mode : {"auto", "subtract", "plain"}
        Force singularity subtraction or plain quadrature on all panels.
    order, order_far : int
        Quadrature orders for the near remainder and the far panels.
    """
    rho = density.panel_charge()
    mesh = density.mesh
    X, single = _targets(x)
    near = _near_mask(mesh, X, mode)
    if on_element is not None:
        near[:, on_element] = mode != "plain"

    def weigh(ker, diff, r, wjac, nodes):
        return np.einsum("mfq,fq,f->m", ker, wjac, rho)

    out = _far_sum(k, mesh, X, near, weigh, order_far)
    panels = np.flatnonzero(near.any(axis=0))
    if panels.size:
        tris = mesh.vertices[mesh.triangles[panels]]
        val = static_panel_potential(tris, X).astype(complex)
        if k != 0.0:
            nodes, w = _near_quad(mesh, panels, order)
            r = np.linalg.norm(X[None, :, None, :] - nodes[:, None, :, :], axis=-1)
            rem = _rem_green(k, r, mesh.h[panels][:, None, None])
            val += np.einsum("pnq,pq->pn", rem, w)
            if on_element is not None:
                hp = int(np.flatnonzero(panels == on_element)[0])
                val[hp] = static_panel_potential(tris[hp], X).astype(complex)
                for n, xs in enumerate(X):
                    pn, pw, pr = _polar_rule(tris[hp], xs, order)
                    val[hp, n] += pw @ (np.expm1(1j * k * pr) / (_FOUR_PI * pr))
        out += np.einsum("pn,p,np->n", val, rho[panels], near[:, panels].astype(float))
    return out[0] if single else out


def eval_Ak(k, density, x, on_element=None, mode="auto", order=10, order_far=8):
    """Vector single-layer potential of an RT0 density at points x.

    Returns int_Gamma G_k(x, y) u(y) dsigma(y) as a full 3-vector; callers
    take the tangential part.  Near panels use the closed-form static
    potential and first moment of the affine panel restriction plus
    quadrature of (G_k - G_0) u; far panels plain Gauss quadrature.
    Parameters as in eval_Vk.
    """
    const, slope = density.panel_affine()
    mesh = density.mesh
    X, single = _targets(x)
    near = _near_mask(mesh, X, mode)
    if on_element is not None:
        near[:, on_element] = mode != "plain"

    def weigh(ker, diff, r, wjac, nodes):
        u = const[:, None, :] + slope[:, None, None] * nodes
        return np.einsum("mfq,fq,fqj->mj", ker, wjac, u)

    out = _far_sum(k, mesh, X, near, weigh, order_far)
    panels = np.flatnonzero(near.any(axis=0))
    if panels.size:
        tris = mesh.vertices[mesh.triangles[panels]]
        cp, sp = const[panels], slope[panels]
        s0 = static_panel_potential(tris, X)
        fm = static_panel_first_moment(tris, X)
        stat = cp[:, None, :] * s0[..., None] + sp[:, None, None] * fm
        val = stat.astype(complex)
        if k != 0.0:
            nodes, w = _near_quad(mesh, panels, order)
            r = np.linalg.norm(X[None, :, None, :] - nodes[:, None, :, :], axis=-1)
            rem = _rem_green(k, r, mesh.h[panels][:, None, None])
            uq = cp[:, None, :] + sp[:, None, None] * nodes
            val += np.einsum("pnq,pq,pqj->pnj", rem, w, uq)
            if on_element is not None:
                hp = int(np.flatnonzero(panels == on_element)[0])
                val[hp] = stat[hp]
                for n, xs in enumerate(X):
                    pn, pw, pr = _polar_rule(tris[hp], xs, order)
                    prem = np.expm1(1j * k * pr) / (_FOUR_PI * pr)
                    val[hp, n] += (pw * prem) @ (cp[hp][None, :] + sp[hp] * pn)
        out += np.einsum("pnj,np->nj", val, near[:, panels].astype(float))
    return out[0] if single else out


def eval_grad_Vk_div(k, density, x, on_element, mode="auto", order=10, order_far=8):
    """Tangential gradient of the single-layer potential of div u.

    Returns the projection onto the host element's tangent plane of
    grad_x int_Gamma G_k(x, y) div u(y) dsigma(y), with the host panel's
    static gradient taken in the principal-value sense.

    Parameters as in eval_Vk; on_element is required (x lies on it).
    """
    rho = density.panel_charge()
    mesh = density.mesh
    X, single = _targets(x)
    near = _near_mask(mesh, X, mode)
    near[:, on_element] = mode != "plain"

    def weigh(ker, diff, r, wjac, nodes):
        fac = (1j * k - 1.0 / r) * ker / r
        return np.einsum("mfq,fq,f,mfqj->mj", fac, wjac, rho, diff)

    out = _far_sum(k, mesh, X, near, weigh, order_far)
    panels = np.flatnonzero(near.any(axis=0))
    if panels.size:
        tris = mesh.vertices[mesh.triangles[panels]]
        stat = static_panel_potential_grad(tris, X)
        val = stat.astype(complex)
        if k != 0.0:
            nodes, w = _near_quad(mesh, panels, order)
            diff = X[None, :, None, :] - nodes[:, None, :, :]
            r = np.linalg.norm(diff, axis=-1)
            fac = _rem_grad_factor(k, r, mesh.h[panels][:, None, None])
            val += np.einsum("pnq,pq,pnqj->pnj", fac, w, diff)
            hp = int(np.flatnonzero(panels == on_element)[0])
            val[hp] = stat[hp]
            for n, xs in enumerate(X):
                pn, pw, pr = _polar_rule(tris[hp], xs, order)
                kr = k * pr
                pfac = (np.exp(1j * kr) * (1j * kr - 1.0) + 1.0) / (_FOUR_PI * pr**3)
                val[hp, n] += (pw * pfac) @ (xs[None, :] - pn)
        out += np.einsum(
            "pnj,p,np->nj", val, rho[panels], near[:, panels].astype(float)
        )
    n = mesh.normal[on_element]
    out = out - np.outer(out @ n, n)
    return out[0] if single else out


def eval_curl_Ak(k, density, x, on_element, mode="auto", order=10, order_far=8):
    """Surface curl of the vector single-layer potential of an RT0 density.

    Returns n(x) . curl_x int_Gamma G_k(x, y) u(y) dsigma(y) with n the
    host element normal.  Writing w = u x n, the static part of each near
    panel reduces by the divergence theorem to closed-form edge potentials
    plus solid-angle terms (the in-plane divergence of w vanishes for
    affine RT0 restrictions); the remainder grad(G_k - G_0) x u is bounded
    and integrated by quadrature.

    Parameters as in eval_Vk; on_element is required (x lies on it).
    """
    const, slope = density.panel_affine()
    mesh = density.mesh
    X, single = _targets(x)
    nx = mesh.normal[on_element]
    near = _near_mask(mesh, X, mode)
    near[:, on_element] = mode != "plain"

    def weigh(ker, diff, r, wjac, nodes):
        u = const[:, None, :] + slope[:, None, None] * nodes
        w_field = np.cross(u, nx[None, None, :])
        fac = (1j * k - 1.0 / r) * ker / r
        return np.einsum("mfq,fq,mfqj,fqj->m", fac, wjac, diff, w_field)

    out = _far_sum(k, mesh, X, near, weigh, order_far)
    panels = np.flatnonzero(near.any(axis=0))
    if panels.size:
        tris = mesh.vertices[mesh.triangles[panels]]
        cp, sp = const[panels], slope[panels]
        stat = _static_curl_panel(tris, X, cp, sp, nx)
        val = stat.astype(complex)
        if k != 0.0:
            nodes, w = _near_quad(mesh, panels, order)
            diff = X[None, :, None, :] - nodes[:, None, :, :]
            r = np.linalg.norm(diff, axis=-1)
            fac = _rem_grad_factor(k, r, mesh.h[panels][:, None, None])
            wq = np.cross(cp[:, None, :] + sp[:, None, None] * nodes, nx)
            val += np.einsum("pnq,pq,pnqj,pqj->pn", fac, w, diff, wq)
            hp = int(np.flatnonzero(panels == on_element)[0])
            val[hp] = stat[hp]
            for n, xs in enumerate(X):
                pn, pw, pr = _polar_rule(tris[hp], xs, order)
                kr = k * pr
                pfac = (np.exp(1j * kr) * (1j * kr - 1.0) + 1.0) / (_FOUR_PI * pr**3)
                pwf = np.cross(cp[hp][None, :] + sp[hp] * pn, nx)
                val[hp, n] += (pw * pfac) @ np.einsum(
                    "qj,qj->q", xs[None, :] - pn, pwf
                )
        out += np.einsum("pn,np->n", val, near[:, panels].astype(float))
    return out[0] if single else out


def _static_curl_panel(tri, Xs, const, slope, nx):
    """n_x . int_T grad_x G_0 x (const + slope y) dsigma(y), closed form.

    Equals -int_T grad_y G_0 . w with w = (const + slope y) x n_x.  The
    in-plane part integrates by parts to edge potentials of the linear
    boundary values of w . m_i (its in-plane divergence vanishes); the
    normal part reduces to the solid angle and edge potentials.  Accepts a
    panel stack (P, 3, 3) with const (P, 3) and slope (P,).
    """
    const = np.asarray(const)
    slope = np.asarray(slope)
    geo = _PanelGeometry(tri)
    X, z, d, lm, lp, Rm, Rp, I0 = _edge_terms(geo, Xs)
    beta = _beta(z, d, lm, lp, Rm, Rp).sum(axis=-1)
    solid = np.sign(z) * beta
    I1 = (Rp - Rm) - lm * I0
    cxn = np.cross(const, nx)
    axn = np.cross(geo.a, nx)
    txn = np.cross(geo.t, nx)
    lin0 = np.einsum(
        "...ec,...ec->...e", cxn[..., None, :] + slope[..., None, None] * axn, geo.m
    )
    lin1 = slope[..., None] * np.einsum("...ec,...ec->...e", txn, geo.m)
    edge = np.einsum("...ne,...e->...n", I0, lin0) + np.einsum(
        "...ne,...e->...n", I1, lin1
    )
    i0m = np.einsum("...ne,...ec->...nc", I0, geo.m)
    alpha = np.einsum("...c,...c->...", cxn, geo.n)
    g = slope[..., None] * np.cross(np.broadcast_to(nx, geo.n.shape), geo.n)
    xi = X - z[..., None] * geo.n[..., None, :]
    normal_part = (
        alpha[..., None] + np.einsum("...nc,...c->...n", xi, g)
    ) * solid - z * np.einsum("...nc,...c->...n", i0m, g)
    return -(edge + normal_part) / _FOUR_PI
