"""Corrector cell problems on the periodic unit cell and the homogenized
tensor.

For each direction i the corrector solves, in the discrete periodic space
with zero mean,

    integral over Y of  A grad(chi_i + y_i) . grad(psi)  =  0   for all psi.

Adjoint correctors solve the same problem with the coefficient transposed.
The homogenized tensor is the cell quadrature of

    A_ij = integral over Y of  grad(y_i + chi_i) . A grad(y_j + chi_j).

Non-symmetric coefficients are handled by splitting the stiffness into its
symmetric positive part (solved by CG) plus a skew part applied through an
outer defect-correction loop; the final residual always meets the requested
tolerance on the full system.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .coeff import CoefficientField, validate_ellipticity
from .grid import (
    QuadratureRule,
    ScalarField,
    StructuredMesh,
    element_gradients_at,
    gauss_rule,
)
from .sparse import (
    Periodic,
    SolverError,
    _assemble_matrix,
    assemble_gradient_load,
    assemble_stiffness,
    cg_solve,
)

MAX_DEFECT_ITERATIONS = 64


@dataclass(frozen=True, eq=False)
class CorrectorSet:
    """Zero-mean periodic correctors (and adjoints) on the cell mesh."""

    cell_mesh: StructuredMesh
    chi: tuple[ScalarField, ...]
    chi_adjoint: tuple[ScalarField, ...]
    coefficient: CoefficientField


@dataclass(frozen=True, eq=False)
class HomogenizedTensor:
    matrix: np.ndarray
    ellipticity: tuple[float, float]

    def __post_init__(self):
        object.__setattr__(self, "matrix", np.atleast_2d(np.asarray(self.matrix, dtype=float)))

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]


def unit_cell_mesh(dim: int, divisions: int = 64) -> StructuredMesh:
    """The reference cell (0,1)^dim with uniform divisions."""
    return StructuredMesh((0.0,) * dim, (1.0,) * dim, (divisions,) * dim)


def _check_cell_mesh(field: CoefficientField, cell_mesh: StructuredMesh) -> None:
    if cell_mesh.dim != field.dim:
        raise ValueError("cell mesh and coefficient dimensions differ")
    if cell_mesh.active_mask is not None:
        raise ValueError("cell problems require a full box mesh on the unit cell")
    if not np.allclose(cell_mesh.origin, 0.0) or not np.allclose(cell_mesh.extent, 1.0):
        raise ValueError("cell mesh must cover the unit cell (0,1)^n")


def _solve_with_skew(system, skew, rhs, rel_tol):
    """Solve (S + N) x = rhs where S is the SPD system and N is skew."""
    norm_b = np.linalg.norm(rhs)
    x = cg_solve(system, rhs, rel_tol=rel_tol)
    if skew is None or norm_b == 0.0:
        return x
    for _ in range(MAX_DEFECT_ITERATIONS):
        residual = rhs - system.matrix @ x - skew @ x
        residual -= residual.mean()
        if np.linalg.norm(residual) <= rel_tol * norm_b:
            return x
        x = x + cg_solve(system, residual, rel_tol=rel_tol)
        x -= x.mean()
    achieved = float(np.linalg.norm(rhs - system.matrix @ x - skew @ x) / norm_b)
    raise SolverError("defect iteration for the skew part stalled", achieved)


def solve_correctors(
    field: CoefficientField,
    cell_mesh: StructuredMesh,
    rel_tol: float = 1e-10,
) -> CorrectorSet:
    """Solve the n periodic cell problems and their adjoints."""
    validate_ellipticity(field)
    _check_cell_mesh(field, cell_mesh)
    n = field.dim
    rule = gauss_rule(n)

    def sym_sampler(pts):
        a = field.sample_batch(pts)
        return 0.5 * (a + np.swapaxes(a, 1, 2))

    system = assemble_stiffness(cell_mesh, sym_sampler, Periodic(), rule)
    skew = None
    if not field.symmetric:

        def skew_sampler(pts):
            a = field.sample_batch(pts)
            return 0.5 * (a - np.swapaxes(a, 1, 2))

        skew = _assemble_matrix(
            cell_mesh, skew_sampler, system.node_to_dof, system.dimension, rule, validate=False
        )

    def solve_family(coeff: CoefficientField, skew_sign: float) -> tuple[ScalarField, ...]:
        out = []
        for i in range(n):

            def rhs_sampler(pts, i=i):
                return -coeff.sample_batch(pts)[:, :, i]

            b = system.reduce(assemble_gradient_load(cell_mesh, rhs_sampler, rule))
            x = _solve_with_skew(system, None if skew is None else skew_sign * skew, b, rel_tol)
            x = x - x.mean()  # zero mean over the periodic torus
            out.append(ScalarField(cell_mesh, system.expand(x)))
        return tuple(out)

    chi = solve_family(field, 1.0)
    if field.symmetric:
        chi_adj = chi
    else:
        chi_adj = solve_family(field.transposed(), -1.0)
    return CorrectorSet(cell_mesh, chi, chi_adj, field)


def homogenized_tensor(field: CoefficientField, correctors: CorrectorSet) -> HomogenizedTensor:
    """Quadrature evaluation of the effective tensor from the correctors."""
    if correctors.coefficient is not field and correctors.coefficient != field:
        raise ValueError("correctors were computed for a different coefficient field")
    mesh = correctors.cell_mesh
    if mesh.dim != field.dim:
        raise ValueError("mesh dimension mismatch between correctors and coefficient")
    n = field.dim
    rule = gauss_rule(n)
    elems = mesh.active_elements()
    pts = mesh.element_origin(elems)[:, None, :] + rule.points[None, :, :] * mesh.h
    a = field.sample_batch(pts.reshape(-1, n)).reshape(len(elems), len(rule.weights), n, n)
    grads = np.empty((n, len(elems), len(rule.weights), n))
    for i in range(n):
        grads[i] = element_gradients_at(correctors.chi[i], rule, elems)
        grads[i, :, :, i] += 1.0
    vol = float(np.prod(mesh.h))
    mat = vol * np.einsum("ieqk,eqkl,jeql,q->ij", grads, a, grads, rule.weights, optimize=True)
    c, big_c = validate_ellipticity(field)
    return HomogenizedTensor(mat, (c, big_c))
