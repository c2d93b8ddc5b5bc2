"""Residual fields, element indicators and oscillation terms.

Given a discrete current U, the error is driven by two computable
residual densities, sampled at interior Gauss points of every element:

    R|_T = f + k^2 (A_k U)_tan + grad_t(V_k div U)   (tangential 3-vector)
    r|_T = curl_t f + k^2 n.curl(A_k U)              (scalar)

Both use the on-surface layer-potential evaluators; f and curl_t f come
from the incident wave in closed form.  The element indicator is

    eta_T^2 = h_T ||R||_T^2 + h_T ||r||_T^2,

and the oscillation terms measure the distance of each residual to its
elementwise mean, osc(T) = h_T^(1/2) ||R - mean_T R||_T, with the mean
taken in the same quadrature rule as the norms so that the elementwise
Pythagoras identity ||R||^2 = |mean|^2 |T| + ||R - mean||^2 is exact.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .assembly import IncidentWave, _windowed_map, trace_curl_f
from .kernels import SurfaceDensity, eval_Ak, eval_curl_Ak, eval_grad_Vk_div
from .mesh import SurfaceMesh, save_mesh
from .quadrature import gauss_triangle
from .spaces import DiscreteFunction

__all__ = [
    "ResidualField",
    "IndicatorSet",
    "compute_residuals",
    "compute_indicators",
    "global_summary",
    "indicators_to_csv",
    "indicators_to_vtk",
]


@dataclass
class ResidualField:
    """Residual densities sampled elementwise at interior Gauss nodes.

    Attributes
    ----------
    mesh : SurfaceMesh
    order : int
        Degree of the sampling rule (shared by norms and means).
    weights : (q,) float array
        Reference rule weights, summing to 1/2.
    nodes : (F, q, 3) float array
        Physical sample points.
    R : (F, q, 3) complex array
        Tangential vector residual samples.
    r : (F, q) complex array
        Scalar residual samples.
    R_mean, r_mean : (F, 3) and (F,) complex arrays
        Rule-weighted elementwise means.
    R_norm, r_norm : (F,) float arrays
        Elementwise L2 norms.
    R_fluct, r_fluct : (F,) float arrays
        Elementwise L2 norms of the residual minus its mean.
    """

    mesh: SurfaceMesh
    order: int
    weights: np.ndarray
    nodes: np.ndarray
    R: np.ndarray
    r: np.ndarray
    R_mean: np.ndarray = field(init=False)
    r_mean: np.ndarray = field(init=False)
    R_norm: np.ndarray = field(init=False)
    r_norm: np.ndarray = field(init=False)
    R_fluct: np.ndarray = field(init=False)
    r_fluct: np.ndarray = field(init=False)

    def __post_init__(self):
        w = self.weights
        area = self.mesh.area
        wsum = w.sum()
        self.R_mean = np.einsum("q,fqc->fc", w, self.R) / wsum
        self.r_mean = (w[None, :] * self.r).sum(axis=1) / wsum
        dR = self.R - self.R_mean[:, None, :]
        dr = self.r - self.r_mean[:, None]
        self.R_norm = np.sqrt(2.0 * area * np.einsum(
            "q,fq->f", w, (self.R * self.R.conj()).real.sum(axis=2)))
        self.r_norm = np.sqrt(2.0 * area * np.einsum(
            "q,fq->f", w, (self.r * self.r.conj()).real))
        self.R_fluct = np.sqrt(2.0 * area * np.einsum(
            "q,fq->f", w, (dR * dR.conj()).real.sum(axis=2)))
        self.r_fluct = np.sqrt(2.0 * area * np.einsum(
            "q,fq->f", w, (dr * dr.conj()).real))


@dataclass
class IndicatorSet:
    """Element indicators, oscillation terms and their global sums."""

    mesh: SurfaceMesh
    eta_T: np.ndarray
    osc_R: np.ndarray
    osc_r: np.ndarray
    provenance: dict

    @property
    def eta(self):
        return float(np.sqrt((self.eta_T**2).sum()))

    @property
    def osc(self):
        return float(np.sqrt((self.osc_R**2).sum() + (self.osc_r**2).sum()))


def compute_residuals(mesh: SurfaceMesh, rt, U: DiscreteFunction,
                      wave: IncidentWave, k: float, order: int = 4,
                      mode: str = "auto", threads: int = 1) -> ResidualField:
    """Sample the residual densities of a discrete solution.

    Parameters
    ----------
    mesh, rt : SurfaceMesh, RTSpace
    U : DiscreteFunction
        Discrete current on rt.
    wave : IncidentWave
        Incident data (its wavenumber must equal k).
    k : float
        Wavenumber.
    order : int
        Degree of the interior sampling rule.
    mode : str
        Evaluation mode forwarded to the layer-potential evaluators.
    threads : int
        Worker threads over elements; results are bitwise independent of
        this value.
    """
    if abs(wave.k - k) > 1e-12 * max(k, 1.0):
        raise ValueError("wave and system wavenumbers differ")
    pts, w = gauss_triangle(order)
    bary = np.column_stack([1.0 - pts[:, 0] - pts[:, 1], pts[:, 0], pts[:, 1]])
    if np.min(bary) <= 1e-12:
        raise ValueError("sampling rule must have interior nodes")
    q = len(w)
    F = len(mesh.triangles)
    verts = mesh.vertices[mesh.triangles]
    nodes = np.einsum("qb,fbc->fqc", bary, verts)
    density = SurfaceDensity("tangential_rt0", U.coefficients, mesh)

    def element_residuals(t):
        n = mesh.normal[t]
        X = nodes[t]
        f = wave.tangential_trace(X, n)
        a = eval_Ak(k, density, X, on_element=t, mode=mode)
        a_tan = a - np.outer(a @ n, n)
        g = eval_grad_Vk_div(k, density, X, on_element=t, mode=mode)
        Rt = f + k**2 * a_tan + g
        leak = np.abs(Rt @ n).max()
        scale = max(np.abs(Rt).max(), 1e-300)
        if leak > 1e-10 * scale:
            raise ArithmeticError(
                f"residual normal leakage {leak:.3e} on element {t} "
                f"exceeds 1e-10 of scale {scale:.3e}"
            )
        rt_samples = trace_curl_f(wave, n)(X) + k**2 * eval_curl_Ak(
            k, density, X, on_element=t, mode=mode
        )
        return Rt - np.outer(Rt @ n, n), rt_samples

    R = np.empty((F, q, 3), dtype=complex)
    r = np.empty((F, q), dtype=complex)
    for t, (Rt, rt_samples) in zip(
        range(F), _windowed_map(element_residuals, range(F), threads)
    ):
        R[t] = Rt
        r[t] = rt_samples
    return ResidualField(mesh, order, w, nodes, R, r)


def compute_indicators(res: ResidualField, provenance: dict = None
                       ) -> IndicatorSet:
    """Element indicators and oscillation terms from a residual field."""
    h = res.mesh.h
    eta_T = np.sqrt(h * (res.R_norm**2 + res.r_norm**2))
    osc_R = np.sqrt(h) * res.R_fluct
    osc_r = np.sqrt(h) * res.r_fluct
    return IndicatorSet(res.mesh, eta_T, osc_R, osc_r, dict(provenance or {}))


def global_summary(ind: IndicatorSet) -> dict:
    """Convergence-table row: global estimator, oscillation, size data."""
    return {
        "eta": ind.eta,
        "osc": ind.osc,
        "dofs": len(ind.mesh.edges),
        "h_max": float(ind.mesh.h.max()),
    }


def indicators_to_csv(ind: IndicatorSet, path):
    """Write per-element indicators as CSV with a fixed schema."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["element_id", "h", "eta", "osc_R", "osc_r"])
        for t in range(len(ind.mesh.triangles)):
            writer.writerow(
                [
                    t,
                    f"{ind.mesh.h[t]:.17g}",
                    f"{ind.eta_T[t]:.17g}",
                    f"{ind.osc_R[t]:.17g}",
                    f"{ind.osc_r[t]:.17g}",
                ]
            )


def indicators_to_vtk(ind: IndicatorSet, path):
    """Write the mesh with indicator cell data as legacy ASCII VTK."""
    save_mesh(
        ind.mesh,
        path,
        fmt="vtk",
        cell_data={"eta": ind.eta_T, "osc_R": ind.osc_R, "osc_r": ind.osc_r},
    )
