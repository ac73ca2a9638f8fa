"""Error functionals for homogenization studies and log-log rate fitting.

All norms are element quadrature on the fine mesh.  The corrected gradient
(slow gradient plus cell-scale corrector detail, without the eps-small
interpolation-derivative terms) is used in every gradient functional; the
weighted functional multiplies the pointwise mismatch by the exact boundary
distance.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import (
    QuadratureRule,
    ScalarField,
    element_gradients_at,
    element_quadrature_points,
    element_values_at,
    gauss_rule,
    same_mesh,
)
from .solve import Reconstruction
from .unfold import CellIndexMap, boundary_distance, layer_indicator

CHUNK = 65536
CSV_HEADER = "epsilon,e_l2,e_h1_corr,e_weighted,e_interior,e_layer"


class InteriorBoxError(ValueError):
    """The interior box is not strictly inside the active domain."""


@dataclass(frozen=True)
class ErrorReport:
    """One epsilon's worth of error functionals."""

    epsilon: float
    e_l2: float
    e_h1_corr: float
    e_weighted: float
    e_interior: float
    e_layer: float
    interior_margin: float
    margin_clears_layers: bool  # margin >= 4*sqrt(n)*eps

    def csv_row(self) -> str:
        return ",".join(
            repr(v)
            for v in (self.epsilon, self.e_l2, self.e_h1_corr, self.e_weighted,
                      self.e_interior, self.e_layer)
        )

    def as_dict(self) -> dict:
        return {
            "epsilon": self.epsilon,
            "e_l2": self.e_l2,
            "e_h1_corr": self.e_h1_corr,
            "e_weighted": self.e_weighted,
            "e_interior": self.e_interior,
            "e_layer": self.e_layer,
            "interior_margin": self.interior_margin,
            "margin_clears_layers": self.margin_clears_layers,
        }


def _interior_margin(mesh, box) -> float:
    o = np.asarray(mesh.origin)
    e = np.asarray(mesh.extent)
    lo = np.asarray([b[0] for b in box], dtype=float)
    hi = np.asarray([b[1] for b in box], dtype=float)
    if np.any(hi <= lo):
        raise InteriorBoxError("interior box is empty")
    margin = min(float((lo - o).min()), float((o + e - hi).min()))
    if mesh.active_mask is not None:
        corner = o + e / 2.0
        dx = max(0.0, float(corner[0] - hi[0]))
        dy = max(0.0, float(corner[1] - hi[1]))
        if dx == 0.0 and dy == 0.0:
            raise InteriorBoxError("interior box overlaps the removed quadrant")
        margin = min(margin, float(np.hypot(dx, dy)))
    if margin <= 0.0:
        raise InteriorBoxError(f"interior box margin {margin} is not positive")
    return margin


def error_report(
    fine: ScalarField,
    recon: Reconstruction,
    cmap: CellIndexMap,
    interior_box,
    rule: QuadratureRule | None = None,
) -> ErrorReport:
    """Evaluate every error functional for one epsilon.

    ``interior_box`` is a per-axis sequence of (lo, hi) strictly inside the
    domain.  The report records whether the box stays clear of the widest
    boundary layer at this epsilon rather than rejecting it, so shrinking
    epsilon ladders remain comparable on a fixed box.
    """
    mesh = fine.mesh
    if not same_mesh(mesh, recon.base.mesh) or not same_mesh(mesh, cmap.mesh):
        raise ValueError("fine solution, reconstruction, and map must share one mesh")
    if np.isscalar(interior_box[0]):
        interior_box = (interior_box,)
    if len(interior_box) != mesh.dim:
        raise InteriorBoxError("interior box dimension mismatch")
    margin = _interior_margin(mesh, interior_box)
    eps = cmap.epsilon

    if rule is None:
        rule = gauss_rule(mesh.dim)
    elems = mesh.active_elements()
    layer_mask = layer_indicator(cmap, 3)[elems]
    centers = mesh.element_origin(elems) + mesh.h / 2.0
    lo = np.asarray([b[0] for b in interior_box])
    hi = np.asarray([b[1] for b in interior_box])
    interior_mask = np.all((centers > lo) & (centers < hi), axis=1)

    vol = float(np.prod(mesh.h))
    acc = dict(l2=0.0, h1=0.0, weighted=0.0, interior=0.0, layer=0.0)
    max_rho = 0.0
    for start in range(0, len(elems), CHUNK):
        sel = slice(start, start + CHUNK)
        chunk = elems[sel]
        u = element_values_at(fine, rule, chunk)
        gu = element_gradients_at(fine, rule, chunk)
        base = element_values_at(recon.base, rule, chunk)
        rv, rg = recon.eval_elements(chunk, rule)
        pts = element_quadrature_points(mesh, rule, chunk)
        rho = boundary_distance(mesh, pts.reshape(-1, mesh.dim)).reshape(u.shape)
        max_rho = max(max_rho, float(rho.max()))
        dgrad2 = ((gu - rg) ** 2).sum(axis=2)
        acc["l2"] += vol * float(np.einsum("eq,q->", (u - base) ** 2, rule.weights))
        acc["h1"] += vol * float(np.einsum("eq,q->", dgrad2, rule.weights))
        acc["weighted"] += vol * float(np.einsum("eq,q->", rho**2 * dgrad2, rule.weights))
        imask = interior_mask[sel]
        if imask.any():
            idev = (u[imask] - rv[imask]) ** 2 + dgrad2[imask]
            acc["interior"] += vol * float(np.einsum("eq,q->", idev, rule.weights))
        lmask = layer_mask[sel]
        if lmask.any():
            gr2 = (gu[lmask] ** 2).sum(axis=2)
            acc["layer"] += vol * float(np.einsum("eq,q->", gr2, rule.weights))

    report = ErrorReport(
        epsilon=eps,
        e_l2=float(np.sqrt(acc["l2"])),
        e_h1_corr=float(np.sqrt(acc["h1"])),
        e_weighted=float(np.sqrt(acc["weighted"])),
        e_interior=float(np.sqrt(acc["interior"])),
        e_layer=float(np.sqrt(acc["layer"])),
        interior_margin=margin,
        margin_clears_layers=bool(margin >= 4 * np.sqrt(mesh.dim) * eps),
    )
    if report.e_weighted > max_rho * report.e_h1_corr * (1 + 1e-12) + 1e-300:
        raise RuntimeError("weighted error exceeds max(rho) times the global error")
    return report


@dataclass(frozen=True)
class RateFit:
    """Least-squares slope of log(error) against log(epsilon)."""

    slope: float
    intercept: float
    r_squared: float
    points: tuple


def fit_rate(points, min_points: int = 3) -> RateFit:
    """Fit the convergence order from (epsilon, error) pairs.

    Raises ValueError for fewer than ``min_points`` pairs, non-positive
    errors (below-tolerance measurements must be dropped by the caller), or
    repeated epsilon values.
    """
    pts = [(float(e), float(v)) for e, v in points]
    if len(pts) < min_points:
        raise ValueError(f"need at least {min_points} points, got {len(pts)}")
    eps = np.array([p[0] for p in pts])
    err = np.array([p[1] for p in pts])
    if np.any(err <= 0.0):
        raise ValueError("rate fit requires strictly positive errors")
    if len(np.unique(eps)) != len(eps):
        raise ValueError("epsilon values must be distinct")
    x = np.log(eps)
    y = np.log(err)
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_tot = float(((y - y.mean()) ** 2).sum())
    ss_res = float((resid**2).sum())
    r2 = 1.0 if ss_tot == 0.0 else 1.0 - ss_res / ss_tot
    return RateFit(float(slope), float(intercept), float(r2), tuple(pts))
