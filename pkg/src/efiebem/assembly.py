"""Galerkin assembly and dense solve for the EFIE current equation.

The sesquilinear form on the RT0 current space is

    a(u, v) = <V_k div u, div v> - k^2 <A_k u, v>,

with bilinear (non-conjugated) pairings, so the assembled matrix is
complex symmetric rather than Hermitian.  Every entry is a four-dimensional
panel-pair integral of the Helmholtz kernel against affine densities; a
pair contributes eight kernel moments (value, the two first moments, and
the x.y moment), which the local three-by-three blocks combine with the
affine coefficients of the RWG functions.

Pairs sharing a simplex use the transformed singular rules from the
quadrature module.  Separated pairs use tensor Gauss rules whose degree is
graded by the centroid separation ratio, each tier offset from the base
order so that raising the base order raises every tier.  Assembly is
deterministic for any thread count: the pair list is chunked by rule size
in a fixed order, workers only compute pure per-chunk blocks, and the
accumulation happens on the main thread in chunk order.
"""

from __future__ import annotations

import json
import warnings
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.linalg import LinAlgWarning, lapack, lu_factor, lu_solve

from .mesh import SurfaceMesh
from .quadrature import gauss_triangle, panel_pair_rule
from .spaces import DiscreteFunction, RTSpace

__all__ = [
    "IncidentWave",
    "ComplexDenseSystem",
    "assemble_matrix",
    "assemble_blocks",
    "assemble_rhs",
    "assemble_p0_gram",
    "build_system",
    "trace_curl_f",
    "solve",
    "energy_surrogate",
    "dump_system",
    "load_system",
]

_FOUR_PI = 4.0 * np.pi

# Tensor-rule degree offsets for separated pairs, keyed by the centroid
# separation ratio dist / max(h_T, h_S).  Close pairs need more points than
# the singular rules' neighbors because nothing flattens the near
# singularity; far pairs get away with less.
_SEPARATED_TIERS = ((1.5, 6), (2.5, 4), (4.0, 2), (8.0, 0), (np.inf, -2))

# Target number of (pair, node) entries per work chunk; keeps worker arrays
# around tens of megabytes independent of mesh size and thread count.
_CHUNK_BUDGET = 1_500_000


@dataclass(frozen=True)
class IncidentWave:
    """Plane wave E(x) = p exp(i k d.x) with transverse polarization.

    Attributes
    ----------
    polarization : (3,) complex array
        Amplitude vector p; must satisfy p.d = 0.
    direction : (3,) float array
        Unit propagation direction d.
    k : float
        Wavenumber.
    """

    polarization: np.ndarray
    direction: np.ndarray
    k: float

    def __post_init__(self):
        p = np.asarray(self.polarization, dtype=complex)
        d = np.asarray(self.direction, dtype=float)
        object.__setattr__(self, "polarization", p)
        object.__setattr__(self, "direction", d)
        if p.shape != (3,) or d.shape != (3,):
            raise ValueError("polarization and direction must be 3-vectors")
        if abs(np.linalg.norm(d) - 1.0) > 1e-12:
            raise ValueError("direction must be a unit vector")
        if self.k < 0.0:
            raise ValueError("wavenumber must be nonnegative")
        if abs(p @ d) > 1e-12 * max(np.linalg.norm(p), 1.0):
            raise ValueError("polarization not transverse")

    def field(self, x):
        """Incident field at points x, returned as an (n, 3) complex array."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        phase = np.exp(1j * self.k * (x @ self.direction))
        return phase[:, None] * self.polarization[None, :]

    def tangential_trace(self, x, normal):
        """Data density f = -(E - (E.n) n) at points on a face with normal n."""
        e = self.field(x)
        return -(e - np.outer(e @ np.asarray(normal, dtype=float), normal))


def trace_curl_f(wave: IncidentWave, normal):
    """Closed-form surface curl of the data density on one flat face.

    On a face with unit normal n the surface curl of the tangential trace
    f = -(E - (E.n)n) of an analytic field equals -(curl E).n, which for
    the plane wave is -i k (d x p).n exp(i k d.x).  Returns a callable
    mapping (n, 3) points to complex values.
    """
    normal = np.asarray(normal, dtype=float)
    amp = -1j * wave.k * (np.cross(wave.direction, wave.polarization) @ normal)

    def curl_f(x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return amp * np.exp(1j * wave.k * (x @ wave.direction))

    return curl_f


# -- pair bookkeeping ---------------------------------------------------------


def _basis_affine(rt: RTSpace):
    """Affine form of the local RWG functions: psi_i = c[t, i] + g[t, i] x.

    The divergence of local function i on triangle t is 2 g[t, i].
    """
    mesh = rt.mesh
    g = rt.sign / (2.0 * mesh.area[:, None])
    opposite = mesh.vertices[mesh.triangles[:, [2, 0, 1]]]
    c = -g[:, :, None] * opposite
    return c, g


def _adjacent_pairs(mesh: SurfaceMesh):
    """Ordered pairs (t, s) with t < s sharing an edge or a vertex."""
    star = [[] for _ in range(len(mesh.vertices))]
    for t, tri in enumerate(mesh.triangles):
        for v in tri:
            star[v].append(t)
    shared = {}
    for tris in star:
        for i, t in enumerate(tris):
            for s in tris[i + 1 :]:
                key = (t, s) if t < s else (s, t)
                shared[key] = shared.get(key, 0) + 1
    edge_pairs, vertex_pairs = [], []
    for key in sorted(shared):
        (edge_pairs if shared[key] == 2 else vertex_pairs).append(key)
    return edge_pairs, vertex_pairs


def _locate(tri, v):
    return int(np.nonzero(tri == v)[0][0])


def _edge_case_perms(mesh, pairs):
    """Permutations putting the shared edge at locals (0, 1), traversed in
    the same direction in both triangles."""
    px = np.empty((len(pairs), 3), dtype=np.int64)
    py = np.empty_like(px)
    for i, (t, s) in enumerate(pairs):
        vt, vs = mesh.triangles[t], mesh.triangles[s]
        a, b = sorted(set(vt) & set(vs))
        la, lb = _locate(vt, a), _locate(vt, b)
        px[i] = (la, lb, 3 - la - lb)
        la, lb = _locate(vs, a), _locate(vs, b)
        py[i] = (la, lb, 3 - la - lb)
    return px, py


def _vertex_case_perms(mesh, pairs):
    """Cyclic permutations putting the shared vertex at local 0."""
    px = np.empty((len(pairs), 3), dtype=np.int64)
    py = np.empty_like(px)
    for i, (t, s) in enumerate(pairs):
        vt, vs = mesh.triangles[t], mesh.triangles[s]
        v = (set(vt) & set(vs)).pop()
        lt, ls = _locate(vt, v), _locate(vs, v)
        px[i] = (lt, (lt + 1) % 3, (lt + 2) % 3)
        py[i] = (ls, (ls + 1) % 3, (ls + 2) % 3)
    return px, py


def _chunks(n, size):
    return [slice(lo, min(lo + size, n)) for lo in range(0, n, size)]


def _separated_degree(order: int, ratio: np.ndarray):
    thresholds = np.array([tier[0] for tier in _SEPARATED_TIERS[:-1]])
    offsets = np.array([tier[1] for tier in _SEPARATED_TIERS])
    deg = order + offsets[np.searchsorted(thresholds, ratio, side="right")]
    return np.maximum(deg, 2)


def _pair_units(mesh: SurfaceMesh, order: int):
    """Work units (case, Ts, Ss, perm_x, perm_y) and their prebuilt rules.

    Unit order (coincident, common edge, common vertex, separated tiers by
    increasing degree, pairs lexicographic within each) is deterministic;
    chunk sizes depend only on the rule sizes.
    """
    F = len(mesh.triangles)
    edge_pairs, vertex_pairs = _adjacent_pairs(mesh)
    rules = {}

    def rule_for(case, rule_order):
        key = (case, rule_order)
        if key not in rules:
            rules[key] = panel_pair_rule(case, rule_order)
        return rules[key]

    units = []

    def add_units(case, rule_order, Ts, Ss, px, py):
        rule = rule_for(case, rule_order)
        size = max(1, _CHUNK_BUDGET // len(rule.weights))
        for sl in _chunks(len(Ts), size):
            units.append(
                (
                    key_of(case, rule_order),
                    Ts[sl],
                    Ss[sl],
                    None if px is None else px[sl],
                    None if py is None else py[sl],
                )
            )

    def key_of(case, rule_order):
        return (case, rule_order)

    ts = np.arange(F)
    add_units("coincident", order, ts, ts, None, None)

    if edge_pairs:
        Ts = np.array([t for t, _ in edge_pairs])
        Ss = np.array([s for _, s in edge_pairs])
        px, py = _edge_case_perms(mesh, edge_pairs)
        add_units("common_edge", order, Ts, Ss, px, py)
    if vertex_pairs:
        Ts = np.array([t for t, _ in vertex_pairs])
        Ss = np.array([s for _, s in vertex_pairs])
        px, py = _vertex_case_perms(mesh, vertex_pairs)
        add_units("common_vertex", order, Ts, Ss, px, py)

    adjacent = [set() for _ in range(F)]
    for t, s in edge_pairs + vertex_pairs:
        adjacent[t].add(s)
    centroid = mesh.vertices[mesh.triangles].mean(axis=1)
    by_degree = {}
    for t in range(F):
        s = np.arange(t + 1, F)
        if adjacent[t]:
            s = s[~np.isin(s, sorted(adjacent[t]))]
        if len(s) == 0:
            continue
        dist = np.linalg.norm(centroid[s] - centroid[t], axis=1)
        deg = _separated_degree(order, dist / np.maximum(mesh.h[t], mesh.h[s]))
        for d in np.unique(deg):
            sel = s[deg == d]
            bucket = by_degree.setdefault(int(d), ([], []))
            bucket[0].append(np.full(len(sel), t))
            bucket[1].append(sel)
    for d in sorted(by_degree):
        Ts = np.concatenate(by_degree[d][0])
        Ss = np.concatenate(by_degree[d][1])
        add_units("separated", d, Ts, Ss, None, None)

    return units, rules


def _permuted_vertices(mesh, Ts, perm):
    tri = mesh.vertices[mesh.triangles[Ts]]
    if perm is None:
        return tri
    return np.take_along_axis(tri, perm[:, :, None], axis=1)


def _unit_moments(mesh, k, unit, rules, first_only=False):
    """The four kernel moments of one chunk of pairs.

    Returns (I00, Ix, Iy, Ixy) with shapes (P,), (P, 3), (P, 3), (P,);
    the last three are None when first_only is set.
    """
    (case, order), Ts, Ss, px, py = unit
    rule = rules[(case, order)]
    tx = _permuted_vertices(mesh, Ts, px)
    ty = _permuted_vertices(mesh, Ss, py)
    x = np.matmul(rule.bary_x, tx)  # (P, n, 3)
    y = np.matmul(rule.bary_y, ty)
    d = x - y
    d *= d
    r = np.sqrt(d.sum(axis=2))
    if k == 0.0:
        ker = 1.0 / (_FOUR_PI * r)
    else:
        ker = np.exp(1j * k * r)
        ker /= _FOUR_PI * r
    wk = rule.weights[None, :] * ker
    scale = 4.0 * mesh.area[Ts] * mesh.area[Ss]
    I00 = scale * wk.sum(axis=1)
    if first_only:
        return I00, None, None, None
    Ix = scale[:, None] * np.matmul(wk[:, None, :], x)[:, 0, :]
    Iy = scale[:, None] * np.matmul(wk[:, None, :], y)[:, 0, :]
    xy = np.einsum("pnc,pnc->pn", x, y)
    Ixy = scale * np.einsum("pn,pn->p", wk, xy)
    return I00, Ix, Iy, Ixy


def _unit_blocks(mesh, k, C, G, unit, rules):
    """Local 3x3 V- and A-blocks for one chunk of pairs."""
    _, Ts, Ss, _, _ = unit
    I00, Ix, Iy, Ixy = _unit_moments(mesh, k, unit, rules)
    ct, cs = C[Ts], C[Ss]
    gt, gs = G[Ts], G[Ss]
    dt, ds = 2.0 * gt, 2.0 * gs
    blkV = dt[:, :, None] * ds[:, None, :] * I00[:, None, None]
    blkA = (
        np.matmul(ct, np.swapaxes(cs, 1, 2)) * I00[:, None, None]
        + np.matmul(ct, Iy[:, :, None]) * gs[:, None, :]
        + gt[:, :, None] * np.matmul(cs, Ix[:, :, None])[:, None, :, 0]
        + gt[:, :, None] * gs[:, None, :] * Ixy[:, None, None]
    )
    return blkV, blkA


def _windowed_map(fn, items, threads):
    """Map with a thread pool, yielding results in submission order."""
    if threads <= 1:
        for item in items:
            yield fn(item)
        return
    window = max(4 * threads, 8)
    pending = deque()
    with ThreadPoolExecutor(max_workers=threads) as pool:
        for item in items:
            pending.append(pool.submit(fn, item))
            if len(pending) >= window:
                yield pending.popleft().result()
        while pending:
            yield pending.popleft().result()


def assemble_blocks(mesh: SurfaceMesh, rt: RTSpace, k: float, order: int = 8,
                    threads: int = 1):
    """Assemble the two Galerkin blocks of the EFIE form separately.

    Returns (AV, AA) with AV[e, e'] = <V_k div psi_e', div psi_e> and
    AA[e, e'] = <A_k psi_e', psi_e>; the EFIE matrix is AV - k^2 AA.  Both
    blocks are exactly complex symmetric: pairs are assembled once for
    t <= s and mirrored, with diagonal blocks symmetrized.

    Parameters
    ----------
    mesh, rt : SurfaceMesh, RTSpace
    k : float
        Wavenumber, >= 0.
    order : int
        Base quadrature order: points per direction of the transformed
        singular rules, and the anchor for the graded separated degrees.
    threads : int
        Worker threads; the result is bitwise independent of this value.
    """
    if k < 0.0:
        raise ValueError("wavenumber must be nonnegative")
    C, G = _basis_affine(rt)
    E = rt.ndof
    AV = np.zeros((E, E), dtype=complex)
    AA = np.zeros((E, E), dtype=complex)
    units, rules = _pair_units(mesh, order)
    te = mesh.tri_edges

    def work(unit):
        return _unit_blocks(mesh, k, C, G, unit, rules)

    for unit, (blkV, blkA) in zip(units, _windowed_map(work, units, threads)):
        (case, _), Ts, Ss, _, _ = unit
        ix, iy = te[Ts], te[Ss]
        if case == "coincident":
            blkV = 0.5 * (blkV + np.swapaxes(blkV, 1, 2))
            blkA = 0.5 * (blkA + np.swapaxes(blkA, 1, 2))
            np.add.at(AV, (ix[:, :, None], iy[:, None, :]), blkV)
            np.add.at(AA, (ix[:, :, None], iy[:, None, :]), blkA)
        else:
            np.add.at(AV, (ix[:, :, None], iy[:, None, :]), blkV)
            np.add.at(AA, (ix[:, :, None], iy[:, None, :]), blkA)
            np.add.at(AV, (iy[:, :, None], ix[:, None, :]), np.swapaxes(blkV, 1, 2))
            np.add.at(AA, (iy[:, :, None], ix[:, None, :]), np.swapaxes(blkA, 1, 2))
    return AV, AA


def assemble_matrix(mesh: SurfaceMesh, rt: RTSpace, k: float, order: int = 8,
                    threads: int = 1):
    """Assemble the EFIE Galerkin matrix A = AV - k^2 AA.

    See assemble_blocks for parameters; the result is complex symmetric by
    construction and real for k = 0.
    """
    AV, AA = assemble_blocks(mesh, rt, k, order=order, threads=threads)
    return AV - k**2 * AA


def assemble_p0_gram(mesh: SurfaceMesh, k: float = 0.0, order: int = 8,
                     threads: int = 1):
    """Single-layer Gram matrix on piecewise constants.

    G[t, s] = int_t int_s G_k(x, y); at k = 0 this matrix is real symmetric
    positive definite.
    """
    F = len(mesh.triangles)
    out = np.zeros((F, F), dtype=complex)
    units, rules = _pair_units(mesh, order)

    def work(unit):
        return _unit_moments(mesh, k, unit, rules, first_only=True)[0]

    for unit, I00 in zip(units, _windowed_map(work, units, threads)):
        (case, _), Ts, Ss, _, _ = unit
        out[Ts, Ss] = I00
        if case != "coincident":
            out[Ss, Ts] = I00
    return out


def assemble_rhs(mesh: SurfaceMesh, rt: RTSpace, wave: IncidentWave,
                 order: int = 6):
    """Load vector b[e] = int f . psi_e with f the tangential wave trace."""
    pts, w = gauss_triangle(order)
    bary = np.column_stack([1.0 - pts[:, 0] - pts[:, 1], pts[:, 0], pts[:, 1]])
    b = np.zeros(rt.ndof, dtype=complex)
    verts = mesh.vertices[mesh.triangles]
    for t in range(len(mesh.triangles)):
        x = bary @ verts[t]
        f = wave.tangential_trace(x, mesh.normal[t])
        psi = rt.basis_values(t, bary)
        b[mesh.tri_edges[t]] += 2.0 * mesh.area[t] * np.einsum(
            "q,iqc,qc->i", w, psi, f
        )
    return b


@dataclass
class ComplexDenseSystem:
    """Assembled dense Galerkin system and its solve byproducts.

    The DOF ordering is the mesh's sorted edge list.  x, residual and
    cond_estimate are filled in by solve.
    """

    A: np.ndarray
    b: np.ndarray
    k: float
    order: int
    order_rhs: int
    x: np.ndarray = None
    residual: float = None
    cond_estimate: float = None


def build_system(mesh: SurfaceMesh, rt: RTSpace, k: float, wave: IncidentWave,
                 order: int = 8, order_rhs: int = 6, threads: int = 1):
    """Assemble matrix and right-hand side into a ComplexDenseSystem."""
    A = assemble_matrix(mesh, rt, k, order=order, threads=threads)
    b = assemble_rhs(mesh, rt, wave, order=order_rhs)
    return ComplexDenseSystem(A, b, k, order, order_rhs)


def solve(system: ComplexDenseSystem):
    """Solve the assembled system by dense LU with one refinement step.

    Stores the solution, the relative linear residual and a one-norm
    condition estimate on the system and returns the solution vector.

    Raises
    ------
    numpy.linalg.LinAlgError
        If the matrix is numerically singular, which signals a wavenumber
        at or near an interior resonance or a degenerate mesh.
    """
    A, b = system.A, system.b
    anorm = np.linalg.norm(A, 1)
    with warnings.catch_warnings():
        # the factorization's singularity warning duplicates the error
        # raised from the diagonal and condition checks below
        warnings.simplefilter("ignore", LinAlgWarning)
        lu, piv = lu_factor(A)
    diag = np.abs(np.diag(lu))
    if not np.all(np.isfinite(lu)) or diag.min() == 0.0:
        raise np.linalg.LinAlgError(
            "matrix is numerically singular (wavenumber near an interior "
            "resonance, or degenerate mesh)"
        )
    rcond = lapack.zgecon(lu, anorm)[0]
    if rcond < 1e-15:
        raise np.linalg.LinAlgError(
            "matrix is numerically singular (wavenumber near an interior "
            "resonance, or degenerate mesh); 1-norm condition estimate "
            f"{1.0 / max(rcond, 1e-300):.3e}"
        )
    x = lu_solve((lu, piv), b)
    x = x + lu_solve((lu, piv), b - A @ x)
    bnorm = np.linalg.norm(b)
    res = np.linalg.norm(A @ x - b) / (bnorm if bnorm > 0.0 else 1.0)
    system.x = x
    system.residual = float(res)
    system.cond_estimate = float(1.0 / rcond)
    return x


def energy_surrogate(v: DiscreteFunction, order: int = 8, threads: int = 1,
                     blocks=None):
    """Static energy of an RT0 current, a computable norm surrogate.

    Evaluates Re[<V_0 div v, div conj(v)> + <A_0 v, conj(v)>] with the
    k = 0 operators; both terms are positive semidefinite quadratic forms,
    so the value is nonnegative up to quadrature error.

    Parameters
    ----------
    v : DiscreteFunction
        RT0 coefficient vector.
    order : int
        Assembly quadrature order for the static blocks.
    threads : int
        Worker threads for the assembly.
    blocks : (AV, AA) pair, optional
        Precomputed static blocks of v's space, to amortize repeated calls.
    """
    space = v.space
    if not isinstance(space, RTSpace):
        raise TypeError("energy surrogate needs an RT0 function")
    if blocks is None:
        blocks = assemble_blocks(space.mesh, space, 0.0, order=order,
                                 threads=threads)
    AV, AA = blocks
    c = np.asarray(v.coefficients, dtype=complex)
    m = (AV + AA) @ c
    value = float(np.real(np.conj(c) @ m))
    scale = float((np.abs(c) ** 2).sum()) * max(
        float(np.abs(AV).max() + np.abs(AA).max()), 1e-300
    )
    if value < -1e-12 * scale:
        raise ArithmeticError(
            f"energy surrogate is negative beyond tolerance: {value:.3e}"
        )
    return max(value, 0.0)


_SYSTEM_FORMAT = "efiebem-dense-system"


def dump_system(system: ComplexDenseSystem, path):
    """Export an assembled system as one JSON header line plus raw bytes.

    The header documents the layout; the payload is the matrix in row-major
    order followed by the right-hand side and, if the system was solved,
    the solution, all as little-endian complex128 (interleaved re/im
    float64 pairs).  DOF ordering is the mesh's sorted edge list.
    """
    n = len(system.b)
    header = {
        "format": _SYSTEM_FORMAT,
        "version": 1,
        "dofs": n,
        "dtype": "complex128 little-endian (interleaved re/im float64)",
        "layout": "A row-major (dofs*dofs), b (dofs), then x (dofs) if "
                  "solved",
        "dof_ordering": "edges sorted lexicographically by vertex index "
                        "pair",
        "k": system.k,
        "order": system.order,
        "order_rhs": system.order_rhs,
        "has_solution": system.x is not None,
        "residual": system.residual,
        "cond_estimate": system.cond_estimate,
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("ascii") + b"\n")
        fh.write(np.ascontiguousarray(system.A, dtype="<c16").tobytes())
        fh.write(np.ascontiguousarray(system.b, dtype="<c16").tobytes())
        if system.x is not None:
            fh.write(np.ascontiguousarray(system.x, dtype="<c16").tobytes())


def load_system(path) -> ComplexDenseSystem:
    """Read a system written by dump_system."""
    with open(path, "rb") as fh:
        header = json.loads(fh.readline().decode("ascii"))
        raw = fh.read()
    if header.get("format") != _SYSTEM_FORMAT:
        raise ValueError(f"not a dense system dump: {path}")
    n = header["dofs"]
    flat = np.frombuffer(raw, dtype="<c16")
    expect = n * n + n + (n if header["has_solution"] else 0)
    if len(flat) != expect:
        raise ValueError(
            f"payload holds {len(flat)} values, header implies {expect}")
    system = ComplexDenseSystem(
        A=flat[:n * n].reshape(n, n).astype(np.complex128),
        b=flat[n * n:n * n + n].astype(np.complex128),
        k=header["k"], order=header["order"], order_rhs=header["order_rhs"],
    )
    if header["has_solution"]:
        system.x = flat[n * n + n:].astype(np.complex128)
        system.residual = header["residual"]
        system.cond_estimate = header["cond_estimate"]
    return system
