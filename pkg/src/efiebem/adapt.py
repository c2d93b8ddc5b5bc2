"""Bulk marking, refinement drivers and convergence studies.

run_adaptive iterates assemble, solve, estimate, mark, refine until an
iteration or degree-of-freedom budget is hit; run_uniform_study solves a
chain of uniform refinements and reports, per level, the estimator total
and an effectivity ratio against the next finer solution transferred by
the natural inclusion of the coarse space.  Both drivers append one row
per solve to a StudyLog whose CSV export is deterministic for a fixed
configuration and mesh: wall times are kept in the JSON export only, so
repeated runs compare bitwise on the CSV.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field

import numpy as np

from .assembly import IncidentWave, build_system, energy_surrogate, solve
from .estimator import IndicatorSet, compute_indicators, compute_residuals
from .mesh import SurfaceMesh, refine_marked, refine_uniform
from .spaces import DiscreteFunction, RTSpace

__all__ = [
    "AdaptConfig",
    "AdaptResult",
    "StudyLog",
    "mark_dorfler",
    "prolong_rt",
    "run_adaptive",
    "run_uniform_study",
]


@dataclass(frozen=True)
class AdaptConfig:
    """Driver parameters shared by the adaptive and uniform studies.

    Parameters
    ----------
    wave : IncidentWave
        Incident data; its wavenumber must equal k.
    k : float
        Wavenumber of the assembled operator.
    theta : float
        Bulk fraction in (0, 1]; 1 marks every element with a nonzero
        indicator.
    max_iters : int
        Refinement steps allowed in run_adaptive (0 solves and estimates
        once without refining).
    max_dofs : int
        Stop refining once the current space reaches this size.
    order, order_rhs, order_residual : int
        Quadrature orders for the matrix, the load vector and the
        residual sampling rule.
    threads : int
        Worker threads for assembly and residual evaluation.
    """

    wave: IncidentWave
    k: float = 1.0
    theta: float = 0.5
    max_iters: int = 4
    max_dofs: int = 20000
    order: int = 8
    order_rhs: int = 6
    order_residual: int = 4
    threads: int = 1

    def __post_init__(self):
        if not 0.0 < self.theta <= 1.0:
            raise ValueError("theta must be in (0, 1]")
        if self.max_iters < 0:
            raise ValueError("max_iters must be nonnegative")
        if self.max_dofs < 1:
            raise ValueError("max_dofs must be positive")
        if self.k < 0.0:
            raise ValueError("wavenumber must be nonnegative")
        if abs(self.wave.k - self.k) > 1e-12 * max(self.k, 1.0):
            raise ValueError("wave and config wavenumbers differ")


_COLUMNS = ("iteration", "dofs", "h_max", "eta", "osc", "marked",
            "effectivity")


def _fmt(value):
    if value is None:
        return ""
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return f"{float(value):.17g}"


@dataclass
class StudyLog:
    """Append-only per-solve rows of a refinement study."""

    rows: list = field(default_factory=list)

    def append(self, **row):
        if self.rows and row["dofs"] < self.rows[-1]["dofs"]:
            raise ValueError("dofs must be non-decreasing across iterations")
        self.rows.append(row)

    def column(self, name):
        return [row.get(name) for row in self.rows]

    def to_csv(self, path):
        """Write one row per iteration; excludes wall time so identical
        runs produce bitwise-identical files."""
        lines = [",".join(_COLUMNS)]
        for row in self.rows:
            lines.append(",".join(_fmt(row.get(c)) for c in _COLUMNS))
        with open(path, "w", newline="") as fh:
            fh.write("\n".join(lines) + "\n")

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump({"rows": self.rows}, fh, indent=1, sort_keys=True)
            fh.write("\n")


def mark_dorfler(ind: IndicatorSet, theta: float):
    """Minimal greedy bulk marking.

    Elements are taken in order of decreasing squared indicator (ties by
    element index) until their cumulative share reaches theta times the
    total; the returned indices are sorted ascending.  theta = 1 marks
    exactly the elements with nonzero indicator, bypassing the cumulative
    sum so that contributions too small to move the floating-point total
    are still marked.
    """
    if not 0.0 < theta <= 1.0:
        raise ValueError("theta must be in (0, 1]")
    etasq = ind.eta_T**2
    if theta == 1.0:
        return np.nonzero(etasq > 0.0)[0].astype(np.int64)
    order = np.lexsort((np.arange(len(etasq)), -etasq))
    csum = np.cumsum(etasq[order])
    total = csum[-1] if len(csum) else 0.0
    if total == 0.0:
        return np.empty(0, dtype=np.int64)
    m = int(np.searchsorted(csum, theta * total, side="left")) + 1
    return np.sort(order[:m])


def prolong_rt(u: DiscreteFunction, fine_space: RTSpace,
               records) -> DiscreteFunction:
    """Represent a coarse RT0 function exactly on a red refinement.

    Every fine triangle must descend from a single coarse triangle (the
    records of a uniform refinement guarantee that), on which the coarse
    function is affine; the fine edge coefficient is then the midpoint
    normal flux of that affine restriction times the edge length, which
    the midpoint rule integrates exactly.

    Raises
    ------
    ValueError
        If the records merge green pairs (the coarse function is not
        affine over an undone pair) or do not cover the fine mesh.
    """
    coarse_space = u.space
    if not isinstance(coarse_space, RTSpace) or not isinstance(
            fine_space, RTSpace):
        raise TypeError("prolongation needs RT0 spaces")
    fine = fine_space.mesh
    parent = np.full(len(fine.triangles), -1, dtype=np.int64)
    for rec in records:
        if len(rec.merged) > 1:
            raise ValueError(
                "prolongation across a green undo is not defined")
        for child in rec.children:
            parent[child] = rec.parent
    if (parent < 0).any():
        raise ValueError("refinement records do not cover the fine mesh")

    const, slope = coarse_space.panel_linear(u.coefficients)
    nedges = len(fine.edges)
    ref_tri = fine.edge_tris[:, 0]
    loc = (fine.tri_edges[ref_tri] == np.arange(nedges)[:, None]).argmax(axis=1)
    nu = fine.edge_normals()[ref_tri, loc]
    mid = fine.vertices[fine.edges].mean(axis=1)
    par = parent[ref_tri]
    vals = const[par] + slope[par, None] * mid
    coeffs = fine_space.sign[ref_tri, loc] * fine.edge_length() * np.einsum(
        "ec,ec->e", vals, nu)
    return DiscreteFunction(fine_space, coeffs)


def _solve_estimate(mesh: SurfaceMesh, cfg: AdaptConfig):
    rt = RTSpace(mesh)
    system = build_system(mesh, rt, cfg.k, cfg.wave, order=cfg.order,
                          order_rhs=cfg.order_rhs, threads=cfg.threads)
    solve(system)
    U = DiscreteFunction(rt, system.x)
    res = compute_residuals(mesh, rt, U, cfg.wave, cfg.k,
                            order=cfg.order_residual, threads=cfg.threads)
    ind = compute_indicators(res, provenance={
        "k": cfg.k, "order": cfg.order, "order_rhs": cfg.order_rhs,
        "order_residual": cfg.order_residual})
    return rt, system, U, ind


@dataclass
class AdaptResult:
    """Final state of an adaptive run together with its log."""

    log: StudyLog
    mesh: SurfaceMesh
    solution: DiscreteFunction
    indicators: IndicatorSet


def run_adaptive(mesh0: SurfaceMesh, cfg: AdaptConfig,
                 on_iteration=None) -> AdaptResult:
    """Solve, estimate, mark and refine until a budget is hit.

    Appends one row per solve (max_iters refinements give max_iters + 1
    rows unless the marking empties first).  on_iteration, if given, is
    called as on_iteration(iteration, mesh, indicators) after each
    estimate, before any refinement.
    """
    mesh = mesh0
    log = StudyLog()
    it = 0
    while True:
        t0 = time.perf_counter()
        rt, _system, U, ind = _solve_estimate(mesh, cfg)
        stop = it >= cfg.max_iters or rt.ndof >= cfg.max_dofs
        marked = (np.empty(0, dtype=np.int64) if stop
                  else mark_dorfler(ind, cfg.theta))
        log.append(iteration=it, dofs=rt.ndof, h_max=float(mesh.h.max()),
                   eta=ind.eta, osc=ind.osc, marked=int(len(marked)),
                   effectivity=None,
                   wall_time=time.perf_counter() - t0)
        if on_iteration is not None:
            on_iteration(it, mesh, ind)
        if stop or len(marked) == 0:
            return AdaptResult(log, mesh, U, ind)
        mesh, _records = refine_marked(mesh, marked)
        it += 1


def run_uniform_study(mesh0: SurfaceMesh, levels: int, cfg: AdaptConfig,
                      on_level=None) -> StudyLog:
    """Solve a chain of uniform refinements and log one row per level.

    Each row's effectivity column holds eta divided by the square root
    of the static energy of (U_fine - U), with U transferred to the next
    level by prolong_rt; the last level has no finer solution and leaves
    the column empty.  on_level, if given, is called as
    on_level(level, mesh, indicators) after each estimate.
    """
    if levels < 1:
        raise ValueError("levels must be at least 1")
    mesh = mesh0
    snapshots = []
    chains = []
    for level in range(levels):
        t0 = time.perf_counter()
        rt, _system, U, ind = _solve_estimate(mesh, cfg)
        wall = time.perf_counter() - t0
        snapshots.append((mesh, rt, U, ind, wall))
        if on_level is not None:
            on_level(level, mesh, ind)
        if level < levels - 1:
            mesh, records = refine_uniform(mesh)
            chains.append(records)

    effectivity = [None] * levels
    for level in range(levels - 1):
        _cm, _crt, cu, cind, _cw = snapshots[level]
        _fm, frt, fu, _find, _fw = snapshots[level + 1]
        transferred = prolong_rt(cu, frt, chains[level])
        diff = DiscreteFunction(
            frt, fu.coefficients - transferred.coefficients)
        energy = energy_surrogate(diff, order=cfg.order, threads=cfg.threads)
        effectivity[level] = (cind.eta / float(np.sqrt(energy))
                              if energy > 0.0 else float("inf"))

    log = StudyLog()
    for level, (m, rt, _u, ind, wall) in enumerate(snapshots):
        marked = len(m.triangles) if level < levels - 1 else 0
        log.append(iteration=level, dofs=rt.ndof, h_max=float(m.h.max()),
                   eta=ind.eta, osc=ind.osc, marked=marked,
                   effectivity=effectivity[level], wall_time=wall)
    return log
