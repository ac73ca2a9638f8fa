"""Assembly of symmetric positive (semi-)definite Q1 stiffness systems and a
preconditioned conjugate-gradient solver.

The bilinear form is ``(u, v) -> integral of (A grad u) . grad v`` with the
matrix coefficient sampled at quadrature points.  Constraints are applied
structurally: Dirichlet rows/columns are eliminated, periodic slave nodes are
folded onto their masters, and pure-Neumann (zero-mean) systems are left
singular with the constant mode projected out inside the solver.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.sparse as sp

from .grid import (
    QuadratureRule,
    ScalarField,
    StructuredMesh,
    active_nodes,
    element_quadrature_points,
    eval_field_batch,
    gauss_rule,
    shape_gradients,
    shape_values,
)

CHUNK_ELEMENTS = 65536


class AssemblyError(ValueError):
    """The coefficient sampler violated its symmetry/ellipticity contract."""


class SolverError(RuntimeError):
    """CG failed to reach the requested tolerance."""

    def __init__(self, message: str, achieved: float):
        super().__init__(f"{message} (achieved relative residual {achieved:.3e})")
        self.achieved = achieved


@dataclass(frozen=True)
class NoConstraint:
    kind = "none"


@dataclass(frozen=True)
class ZeroMean:
    kind = "zero_mean"


@dataclass(frozen=True, eq=False)
class Dirichlet:
    kind = "dirichlet"
    nodes: np.ndarray  # node indices eliminated (homogeneous)

    def __post_init__(self):
        object.__setattr__(self, "nodes", np.asarray(self.nodes, dtype=int))


@dataclass(frozen=True)
class Periodic:
    """Identify opposite-face nodes of a box mesh (slave -> master folding)."""

    kind = "periodic"


Constraint = NoConstraint | ZeroMean | Dirichlet | Periodic


def periodic_node_map(mesh: StructuredMesh) -> np.ndarray:
    """Map every node to its master under opposite-face identification."""
    if mesh.active_mask is not None:
        raise ValueError("periodic constraints require a full box mesh")
    multi = mesh.node_multi_index(np.arange(mesh.n_nodes))
    folded = multi % np.asarray(mesh.divisions)
    return mesh.node_flat_index(folded)


def _dof_map(mesh: StructuredMesh, constraint: Constraint) -> tuple[np.ndarray, int]:
    """node -> dof index (-1 if eliminated), plus the dof count."""
    node_to_dof = np.full(mesh.n_nodes, -1, dtype=int)
    if isinstance(constraint, Periodic):
        masters = periodic_node_map(mesh)
        unique = np.flatnonzero(masters == np.arange(mesh.n_nodes))
        compact = np.full(mesh.n_nodes, -1, dtype=int)
        compact[unique] = np.arange(len(unique))
        return compact[masters], len(unique)
    present = active_nodes(mesh)
    if isinstance(constraint, Dirichlet):
        keep = np.ones(mesh.n_nodes, dtype=bool)
        keep[constraint.nodes] = False
        present = present[keep[present]]
    node_to_dof[present] = np.arange(len(present))
    return node_to_dof, len(present)


def _validate_samples(a: np.ndarray, dim: int) -> None:
    scale = max(1.0, float(np.abs(a).max()))
    if dim == 1:
        if np.any(a[:, 0, 0] <= 0):
            raise AssemblyError("sampler returned a non-elliptic (non-positive) value")
        return
    asym = np.abs(a[:, 0, 1] - a[:, 1, 0]).max()
    if asym > 1e-10 * scale:
        raise AssemblyError(f"sampler returned non-symmetric matrices (max dev {asym:.3e})")
    mid = 0.5 * (a[:, 0, 0] + a[:, 1, 1])
    rad = np.sqrt((0.5 * (a[:, 0, 0] - a[:, 1, 1])) ** 2 + (0.5 * (a[:, 0, 1] + a[:, 1, 0])) ** 2)
    if np.any(mid - rad <= 0):
        raise AssemblyError("sampler returned a non-elliptic matrix (eigenvalue <= 0)")


def _assemble_matrix(
    mesh: StructuredMesh,
    sampler: Callable[[np.ndarray], np.ndarray],
    node_to_dof: np.ndarray,
    ndof: int,
    rule: QuadratureRule,
    validate: bool,
) -> sp.csr_matrix:
    dim = mesh.dim
    vol = float(np.prod(mesh.h))
    grads = shape_gradients(rule.points) / mesh.h  # (Q, 2^n, n)
    elems = mesh.active_elements()
    rows_all, cols_all, vals_all = [], [], []
    nloc = grads.shape[1]
    for start in range(0, len(elems), CHUNK_ELEMENTS):
        chunk = elems[start : start + CHUNK_ELEMENTS]
        pts = element_quadrature_points(mesh, rule, chunk).reshape(-1, dim)
        a = np.asarray(sampler(pts), dtype=float).reshape(len(chunk), len(rule.weights), dim, dim)
        if validate:
            _validate_samples(a.reshape(-1, dim, dim), dim)
        ke = vol * np.einsum("q,qai,eqij,qbj->eab", rule.weights, grads, a, grads, optimize=True)
        dofs = node_to_dof[mesh.element_nodes(chunk)]  # (E, 2^n)
        rows = np.broadcast_to(dofs[:, :, None], (len(chunk), nloc, nloc))
        cols = np.broadcast_to(dofs[:, None, :], (len(chunk), nloc, nloc))
        keep = (rows >= 0) & (cols >= 0)
        rows_all.append(rows[keep].astype(np.int64))
        cols_all.append(cols[keep].astype(np.int64))
        vals_all.append(ke[keep])
    mat = sp.coo_matrix(
        (np.concatenate(vals_all), (np.concatenate(rows_all), np.concatenate(cols_all))),
        shape=(ndof, ndof),
    ).tocsr()
    mat.sum_duplicates()
    return mat


@dataclass(frozen=True, eq=False)
class SparseSystem:
    """A constrained stiffness system in compressed-row storage."""

    matrix: sp.csr_matrix
    constraint: Constraint
    node_to_dof: np.ndarray
    n_nodes: int

    @property
    def dimension(self) -> int:
        return self.matrix.shape[0]

    @property
    def needs_projection(self) -> bool:
        return isinstance(self.constraint, (ZeroMean, Periodic))

    def reduce(self, full: np.ndarray) -> np.ndarray:
        """Fold a full nodal vector (e.g. a load) into dof space."""
        out = np.zeros(self.dimension)
        mask = self.node_to_dof >= 0
        np.add.at(out, self.node_to_dof[mask], np.asarray(full)[mask])
        return out

    def expand(self, x: np.ndarray) -> np.ndarray:
        """Spread a dof vector back to all nodes (eliminated nodes get 0)."""
        full = np.zeros(self.n_nodes)
        mask = self.node_to_dof >= 0
        full[mask] = np.asarray(x)[self.node_to_dof[mask]]
        return full


def assemble_stiffness(
    mesh: StructuredMesh,
    matrix_sampler: Callable[[np.ndarray], np.ndarray],
    constraint: Constraint,
    rule: QuadratureRule | None = None,
) -> SparseSystem:
    """Assemble the Q1 stiffness of ``(A grad u, grad v)`` under a constraint.

    ``matrix_sampler`` receives an (P, n) array of points and must return
    (P, n, n) symmetric matrices with positive eigenvalues; violations raise
    AssemblyError.  Entry (a, b) couples test function a with trial
    function b.
    """
    if rule is None:
        rule = gauss_rule(mesh.dim)
    node_to_dof, ndof = _dof_map(mesh, constraint)
    matrix = _assemble_matrix(mesh, matrix_sampler, node_to_dof, ndof, rule, validate=True)
    return SparseSystem(matrix, constraint, node_to_dof, mesh.n_nodes)


def assemble_load(
    mesh: StructuredMesh,
    f: Callable[[np.ndarray], np.ndarray] | ScalarField,
    rule: QuadratureRule | None = None,
) -> np.ndarray:
    """Full-size nodal load vector ``b[a] = integral of f N_a``."""
    if rule is None:
        rule = gauss_rule(mesh.dim)
    vol = float(np.prod(mesh.h))
    shp = shape_values(rule.points)  # (Q, 2^n)
    elems = mesh.active_elements()
    b = np.zeros(mesh.n_nodes)
    for start in range(0, len(elems), CHUNK_ELEMENTS):
        chunk = elems[start : start + CHUNK_ELEMENTS]
        pts = element_quadrature_points(mesh, rule, chunk).reshape(-1, mesh.dim)
        if isinstance(f, ScalarField):
            fv = eval_field_batch(f, pts)
        else:
            fv = np.asarray(f(pts), dtype=float)
        fv = fv.reshape(len(chunk), len(rule.weights))
        contrib = vol * np.einsum("q,qa,eq->ea", rule.weights, shp, fv)
        np.add.at(b, mesh.element_nodes(chunk).ravel(), contrib.ravel())
    return b


def assemble_gradient_load(
    mesh: StructuredMesh,
    vector_sampler: Callable[[np.ndarray], np.ndarray],
    rule: QuadratureRule | None = None,
) -> np.ndarray:
    """Full-size load ``b[a] = integral of V . grad N_a`` for a vector field V."""
    if rule is None:
        rule = gauss_rule(mesh.dim)
    vol = float(np.prod(mesh.h))
    grads = shape_gradients(rule.points) / mesh.h  # (Q, 2^n, n)
    elems = mesh.active_elements()
    b = np.zeros(mesh.n_nodes)
    for start in range(0, len(elems), CHUNK_ELEMENTS):
        chunk = elems[start : start + CHUNK_ELEMENTS]
        pts = element_quadrature_points(mesh, rule, chunk).reshape(-1, mesh.dim)
        v = np.asarray(vector_sampler(pts), dtype=float).reshape(
            len(chunk), len(rule.weights), mesh.dim
        )
        contrib = vol * np.einsum("q,qad,eqd->ea", rule.weights, grads, v)
        np.add.at(b, mesh.element_nodes(chunk).ravel(), contrib.ravel())
    return b


def default_max_iter(dimension: int) -> int:
    return 50 * int(np.sqrt(dimension)) + 1000


def cg_solve(
    system: SparseSystem,
    rhs: np.ndarray,
    rel_tol: float = 1e-10,
    max_iter: int | None = None,
) -> np.ndarray:
    """Jacobi-preconditioned conjugate gradients on the constrained system.

    Zero-mean and periodic systems are singular with the constant mode in the
    kernel; the mode is removed from the right-hand side and from every
    iterate, and the returned vector has zero algebraic mean.  Raises
    SolverError when the tolerance is not met within ``max_iter``.
    """
    a = system.matrix
    b = np.array(rhs, dtype=float)
    if b.shape != (system.dimension,):
        raise ValueError(f"rhs length {b.shape} does not match dimension {system.dimension}")
    if max_iter is None:
        max_iter = default_max_iter(system.dimension)
    project = system.needs_projection
    if project:
        b -= b.mean()
    norm_b = np.linalg.norm(b)
    x = np.zeros_like(b)
    if norm_b == 0.0:
        return x
    inv_diag = 1.0 / a.diagonal()
    r = b.copy()
    z = inv_diag * r
    p = z.copy()
    rz = float(r @ z)
    for _ in range(max_iter):
        ap = a @ p
        alpha = rz / float(p @ ap)
        x += alpha * p
        r -= alpha * ap
        if project:
            r -= r.mean()
            x -= x.mean()
        if np.linalg.norm(r) <= rel_tol * norm_b:
            # the recurrence residual drifts over long runs; accept only the
            # true residual, restarting the recursion from it otherwise
            r = b - a @ x
            if project:
                r -= r.mean()
            if np.linalg.norm(r) <= rel_tol * norm_b:
                return x
            z = inv_diag * r
            p = z.copy()
            rz = float(r @ z)
            continue
        z = inv_diag * r
        rz_new = float(r @ z)
        p = z + (rz_new / rz) * p
        rz = rz_new
    achieved = float(np.linalg.norm(b - a @ x) / norm_b)
    raise SolverError(f"CG did not converge in {max_iter} iterations", achieved)
