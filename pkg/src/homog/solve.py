"""Fine-scale oscillating solves, homogenized solves, and the first-order
two-scale reconstruction.

The fine problem finds u in the Q1 space with the chosen boundary condition
such that ``integral of A({x/eps}) grad u . grad v = integral of f v``.  The
homogenized problem replaces the oscillating coefficient by the constant
effective tensor.  The reconstruction augments the homogenized solution with
cell-scale detail:

    value(x)    = Phi(x) + eps * sum_i Q_i(x) * chi_i({x/eps})
    gradient(x) = grad Phi(x) + sum_i Q_i(x) * grad chi_i({x/eps})

where Q_i is the slow part of the recovered derivative dPhi/dx_i.  The
gradient surrogate deliberately omits the eps * grad(Q_i) * chi_i terms.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .cell import CorrectorSet, HomogenizedTensor
from .coeff import CoefficientField, Constant, fractional_part, validate_ellipticity
from .grid import (
    QuadratureRule,
    ScalarField,
    StructuredMesh,
    boundary_nodes,
    element_gradients_at,
    element_values_at,
    eval_field_batch,
    eval_gradient_batch,
    gauss_rule,
    integrate,
    integrate_field,
    same_mesh,
    shape_gradients,
)
from .sparse import Dirichlet, ZeroMean, assemble_load, assemble_stiffness, cg_solve
from .unfold import CellIndexMap, build_cell_map, scale_split

RhsLike = Callable[[np.ndarray], np.ndarray] | ScalarField

DIRICHLET_FULL = "dirichlet_full"
NEUMANN_FULL = "neumann_full"


@dataclass(frozen=True)
class BoundaryCondition:
    kind: str

    def __post_init__(self):
        if self.kind not in (DIRICHLET_FULL, NEUMANN_FULL):
            raise ValueError(f"unsupported boundary condition {self.kind!r}")


@dataclass(frozen=True, eq=False)
class ProblemInstance:
    """An oscillating diffusion problem on an epsilon-aligned fine mesh."""

    domain_mesh: StructuredMesh
    coefficient: CoefficientField
    rhs: RhsLike
    bc: BoundaryCondition
    n_per_unit: int  # epsilon = 1 / n_per_unit

    def __post_init__(self):
        build_cell_map(self.domain_mesh, self.n_per_unit)  # alignment check
        validate_ellipticity(self.coefficient)

    @property
    def epsilon(self) -> float:
        return 1.0 / self.n_per_unit


def _constraint_for(mesh: StructuredMesh, bc: BoundaryCondition):
    if bc.kind == DIRICHLET_FULL:
        return Dirichlet(boundary_nodes(mesh))
    return ZeroMean()


def _rhs_values(mesh: StructuredMesh, rhs: RhsLike):
    if isinstance(rhs, ScalarField):
        return lambda pts: eval_field_batch(rhs, pts)
    return rhs


def _check_solution(system, x, b, field_norms, c_ell, rel_tol):
    """Galerkin residual and discrete energy bounds, asserted per solve."""
    bnorm = np.linalg.norm(b)
    if bnorm > 0:
        res = np.linalg.norm(b - system.matrix @ x) / bnorm
        allowed = max(1e-9, 10.0 * rel_tol)
        if res > allowed:
            raise RuntimeError(f"Galerkin residual {res:.3e} exceeds {allowed:.1e}")
    energy = float(x @ (system.matrix @ x))
    load = float(b @ x)
    grad_norm2, u_norm, f_norm = field_norms
    slack = 1e-8 * max(1.0, energy, abs(load))
    if c_ell * grad_norm2 > energy + slack:
        raise RuntimeError("ellipticity energy bound violated")
    if load > u_norm * f_norm + slack:
        raise RuntimeError("Cauchy-Schwarz load bound violated")


def _solve(mesh, sampler, rhs, bc, rel_tol, c_ell, rule=None):
    constraint = _constraint_for(mesh, bc)
    system = assemble_stiffness(mesh, sampler, constraint, rule)
    f = _rhs_values(mesh, rhs)
    if bc.kind == NEUMANN_FULL:
        total = integrate(mesh, f)
        if abs(total) > 1e-10:
            raise ValueError(f"Neumann problem needs a zero-mean rhs, got integral {total:.3e}")
    b = system.reduce(assemble_load(mesh, f, rule))
    x = cg_solve(system, b, rel_tol=rel_tol)
    values = system.expand(x)
    field = ScalarField(mesh, values)
    grad_norm2 = _h1_seminorm_sq(field)
    u_norm = np.sqrt(integrate_field(ScalarField(mesh, values * values)))
    f_norm = np.sqrt(integrate(mesh, lambda p: np.asarray(f(p)) ** 2))
    _check_solution(system, x, b, (grad_norm2, u_norm, f_norm), c_ell, rel_tol)
    if bc.kind == NEUMANN_FULL:
        area = integrate(mesh, lambda p: np.ones(len(p)))
        values = values - integrate_field(field) / area
        # eliminated never-active nodes stay at zero
        field = ScalarField(mesh, values)
    return field


def _h1_seminorm_sq(field: ScalarField) -> float:
    mesh = field.mesh
    rule = gauss_rule(mesh.dim)
    elems = mesh.active_elements()
    vol = float(np.prod(mesh.h))
    total = 0.0
    for start in range(0, len(elems), 65536):
        chunk = elems[start : start + 65536]
        g = element_gradients_at(field, rule, chunk)
        total += vol * float(np.einsum("eqd,eqd,q->", g, g, rule.weights))
    return total


def solve_fine(instance: ProblemInstance, points_per_period: int, rel_tol: float = 1e-10) -> ScalarField:
    """Q1 solution of the oscillating problem with A sampled through x/eps."""
    mesh = instance.domain_mesh
    cmap = build_cell_map(mesh, instance.n_per_unit)
    if points_per_period < 4:
        raise ValueError("points_per_period must be at least 4")
    if any(mk != points_per_period for mk in cmap.m):
        raise ValueError(
            f"fine mesh has {cmap.m} elements per cell, expected {points_per_period}"
        )
    eps = instance.epsilon
    field = instance.coefficient

    def sampler(pts):
        return field.sample_batch(pts / eps)

    c_ell, _ = validate_ellipticity(field)
    return _solve(mesh, sampler, instance.rhs, instance.bc, rel_tol, c_ell)


def solve_homogenized(
    tensor: HomogenizedTensor,
    rhs: RhsLike,
    bc: BoundaryCondition,
    mesh: StructuredMesh,
    rel_tol: float = 1e-10,
) -> ScalarField:
    """Q1 solution of the constant-coefficient effective problem.

    With full Dirichlet or full Neumann data a constant skew part of the
    tensor is invisible to the variational problem, so the symmetric part is
    assembled.
    """
    sym = 0.5 * (tensor.matrix + tensor.matrix.T)
    coeff = Constant(tuple(map(tuple, sym)))
    c_ell, _ = validate_ellipticity(coeff)

    def sampler(pts):
        return coeff.sample_batch(pts)

    return _solve(mesh, sampler, rhs, bc, rel_tol, c_ell)


def recovered_gradient_fields(phi: ScalarField) -> tuple[ScalarField, ...]:
    """Nodal derivative fields by volume-weighted averaging of the adjacent
    element-average gradients."""
    mesh = phi.mesh
    center = np.full((1, mesh.dim), 0.5)
    gref = shape_gradients(center)[0] / mesh.h  # (2^n, n)
    elems = mesh.active_elements()
    corner_vals = phi.values[mesh.element_nodes(elems)]
    gcenter = corner_vals @ gref  # (E, n) element-average gradients
    sums = np.zeros((mesh.n_nodes, mesh.dim))
    counts = np.zeros(mesh.n_nodes)
    conn = mesh.element_nodes(elems)
    for a in range(conn.shape[1]):
        np.add.at(sums, conn[:, a], gcenter)
        np.add.at(counts, conn[:, a], 1.0)
    counts[counts == 0] = 1.0
    nodal = sums / counts[:, None]
    return tuple(ScalarField(mesh, nodal[:, d]) for d in range(mesh.dim))


@dataclass(frozen=True, eq=False)
class Reconstruction:
    """First-order two-scale approximation built from the homogenized
    solution and the correctors."""

    base: ScalarField
    correctors: CorrectorSet
    cmap: CellIndexMap
    q_derivatives: tuple[ScalarField, ...]

    @property
    def epsilon(self) -> float:
        return self.cmap.epsilon

    def _cell_points(self, points: np.ndarray) -> np.ndarray:
        return fractional_part(np.atleast_2d(points) / self.epsilon)

    def values_at(self, points: np.ndarray) -> np.ndarray:
        points = np.atleast_2d(points)
        out = eval_field_batch(self.base, points)
        y = self._cell_points(points)
        for q, chi in zip(self.q_derivatives, self.correctors.chi):
            out = out + self.epsilon * eval_field_batch(q, points) * eval_field_batch(chi, y)
        return out

    def gradients_at(self, points: np.ndarray) -> np.ndarray:
        points = np.atleast_2d(points)
        out = eval_gradient_batch(self.base, points)
        y = self._cell_points(points)
        for q, chi in zip(self.q_derivatives, self.correctors.chi):
            out = out + eval_field_batch(q, points)[:, None] * eval_gradient_batch(chi, y)
        return out

    def eval_elements(self, elems: np.ndarray, rule: QuadratureRule) -> tuple[np.ndarray, np.ndarray]:
        """Values and corrected gradients at the quadrature points of fine
        elements, via per-period gathers (cell mesh resolution matches the
        fine mesh inside each cell)."""
        mesh = self.base.mesh
        m = np.asarray(self.cmap.m)
        emulti = mesh.element_multi_index(elems)
        local = emulti % m
        cell_mesh = self.correctors.cell_mesh
        cell_elem = cell_mesh.element_flat_index(local)
        vals = element_values_at(self.base, rule, elems)
        grads = element_gradients_at(self.base, rule, elems)
        for q, chi in zip(self.q_derivatives, self.correctors.chi):
            qv = element_values_at(q, rule, elems)
            chiv = element_values_at(chi, rule, np.arange(cell_mesh.n_elements))
            chig = element_gradients_at(chi, rule, np.arange(cell_mesh.n_elements))
            vals = vals + self.epsilon * qv * chiv[cell_elem]
            grads = grads + qv[:, :, None] * chig[cell_elem]
        return vals, grads


def reconstruct(phi0: ScalarField, correctors: CorrectorSet, cmap: CellIndexMap) -> Reconstruction:
    """Assemble the two-scale reconstruction of a homogenized solution."""
    if not same_mesh(phi0.mesh, cmap.mesh):
        raise ValueError("homogenized solution must live on the cell map's fine mesh")
    cell_mesh = correctors.cell_mesh
    if tuple(cell_mesh.divisions) != tuple(cmap.m):
        raise ValueError(
            f"cell mesh divisions {cell_mesh.divisions} must equal the fine "
            f"elements per cell {cmap.m}"
        )
    derivs = recovered_gradient_fields(phi0)
    q_parts = tuple(scale_split(d, cmap)[0] for d in derivs)
    return Reconstruction(phi0, correctors, cmap, q_parts)
