"""Structured axis-aligned meshes with multilinear (Q1) elements.

Meshes are uniform tensor-product grids in 1 or 2 dimensions.  Node
coordinates are never stored: node ``(i0, i1)`` sits at
``origin + (i0*h0, i1*h1)`` and carries the flat index
``i0 + (d0+1)*i1`` (axis 0 varies fastest).  Element ``(e0, e1)`` has the
flat index ``e0 + d0*e1``.  An optional per-element activity mask supports
L-shaped domains (upper-right quadrant removed).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np


class OutsideDomainError(ValueError):
    """A point falls outside the (active) mesh domain."""


@dataclass(frozen=True, eq=False)
class QuadratureRule:
    """Reference-element quadrature: points in [0,1]^n, weights summing to 1."""

    points: np.ndarray  # (Q, n)
    weights: np.ndarray  # (Q,)

    def __post_init__(self):
        pts = np.atleast_2d(np.asarray(self.points, dtype=float))
        w = np.asarray(self.weights, dtype=float)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", w)
        if abs(w.sum() - 1.0) > 1e-14:
            raise ValueError(f"quadrature weights sum to {w.sum()!r}, expected 1")
        if np.any(w <= 0):
            raise ValueError("quadrature weights must be positive")
        if pts.min() < 0.0 or pts.max() > 1.0:
            raise ValueError("quadrature points must lie in the closed reference element")


def gauss_rule(dim: int, points_per_axis: int = 2) -> QuadratureRule:
    """Tensor-product Gauss-Legendre rule on [0,1]^dim.

    The default two points per axis integrate per-axis cubics exactly.
    """
    nodes, weights = np.polynomial.legendre.leggauss(points_per_axis)
    nodes = 0.5 * (nodes + 1.0)
    weights = 0.5 * weights
    if dim == 1:
        return QuadratureRule(nodes[:, None], weights)
    # axis 0 fastest, matching the node ordering convention
    p0, p1 = np.meshgrid(nodes, nodes, indexing="ij")
    w0, w1 = np.meshgrid(weights, weights, indexing="ij")
    pts = np.stack([p0.ravel(order="F"), p1.ravel(order="F")], axis=1)
    return QuadratureRule(pts, (w0 * w1).ravel(order="F"))


@dataclass(frozen=True, eq=False)
class StructuredMesh:
    """Uniform axis-aligned mesh on a box, optionally with inactive elements."""

    origin: tuple[float, ...]
    extent: tuple[float, ...]
    divisions: tuple[int, ...]
    active_mask: np.ndarray | None = None  # flat bool per element, True = active

    def __post_init__(self):
        object.__setattr__(self, "origin", tuple(float(v) for v in np.atleast_1d(self.origin)))
        object.__setattr__(self, "extent", tuple(float(v) for v in np.atleast_1d(self.extent)))
        object.__setattr__(self, "divisions", tuple(int(v) for v in np.atleast_1d(self.divisions)))
        if self.dim not in (1, 2):
            raise ValueError(f"only 1D and 2D meshes are supported, got dim={self.dim}")
        if any(d < 1 for d in self.divisions):
            raise ValueError(f"divisions must be >= 1 per axis, got {self.divisions}")
        if any(e <= 0 for e in self.extent):
            raise ValueError(f"extent must be positive per axis, got {self.extent}")
        if self.active_mask is not None:
            mask = np.asarray(self.active_mask, dtype=bool)
            if mask.shape != (self.n_elements,):
                raise ValueError("active_mask must be flat with one flag per element")
            object.__setattr__(self, "active_mask", mask)

    @property
    def dim(self) -> int:
        return len(self.divisions)

    @property
    def h(self) -> np.ndarray:
        return np.asarray(self.extent) / np.asarray(self.divisions)

    @property
    def n_nodes(self) -> int:
        return int(np.prod([d + 1 for d in self.divisions]))

    @property
    def n_elements(self) -> int:
        return int(np.prod(self.divisions))

    @property
    def nodes_per_axis(self) -> tuple[int, ...]:
        return tuple(d + 1 for d in self.divisions)

    def active_elements(self) -> np.ndarray:
        """Flat indices of active elements, in increasing order."""
        if self.active_mask is None:
            return np.arange(self.n_elements)
        return np.flatnonzero(self.active_mask)

    def element_multi_index(self, elems: np.ndarray) -> np.ndarray:
        """Flat element index -> (E, dim) integer multi-index."""
        elems = np.asarray(elems)
        if self.dim == 1:
            return elems[:, None]
        d0 = self.divisions[0]
        return np.stack([elems % d0, elems // d0], axis=1)

    def element_flat_index(self, multi: np.ndarray) -> np.ndarray:
        multi = np.asarray(multi)
        if self.dim == 1:
            return multi[..., 0]
        return multi[..., 0] + self.divisions[0] * multi[..., 1]

    def node_flat_index(self, multi: np.ndarray) -> np.ndarray:
        multi = np.asarray(multi)
        if self.dim == 1:
            return multi[..., 0]
        return multi[..., 0] + (self.divisions[0] + 1) * multi[..., 1]

    def node_multi_index(self, nodes: np.ndarray) -> np.ndarray:
        nodes = np.asarray(nodes)
        if self.dim == 1:
            return nodes[:, None]
        n0 = self.divisions[0] + 1
        return np.stack([nodes % n0, nodes // n0], axis=1)

    def node_coordinates(self, nodes: np.ndarray | None = None) -> np.ndarray:
        """Coordinates of the given flat node indices (all nodes if None)."""
        if nodes is None:
            nodes = np.arange(self.n_nodes)
        multi = self.node_multi_index(np.asarray(nodes))
        return np.asarray(self.origin) + multi * self.h

    def element_nodes(self, elems: np.ndarray) -> np.ndarray:
        """Corner node indices of each element, axis-0-fastest local order.

        2D local order: (0,0), (1,0), (0,1), (1,1).
        """
        multi = self.element_multi_index(np.asarray(elems))
        if self.dim == 1:
            base = multi[:, 0]
            return np.stack([base, base + 1], axis=1)
        n0 = self.divisions[0] + 1
        base = multi[:, 0] + n0 * multi[:, 1]
        return np.stack([base, base + 1, base + n0, base + n0 + 1], axis=1)

    def element_origin(self, elems: np.ndarray) -> np.ndarray:
        multi = self.element_multi_index(np.asarray(elems))
        return np.asarray(self.origin) + multi * self.h

    def locate(self, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Containing element and local [0,1]^n coordinate for each point.

        Points on element faces resolve to the forward element (half-open
        convention); the far domain boundary clamps to the last element.  If
        the resolved element is inactive, a containing active neighbour is
        substituted when one exists.  Raises OutsideDomainError otherwise.
        """
        points = np.atleast_2d(np.asarray(points, dtype=float))
        h = self.h
        rel = (points - np.asarray(self.origin)) / h
        div = np.asarray(self.divisions)
        tol = 1e-12 * np.maximum(1.0, np.abs(rel).max()) if rel.size else 0.0
        if np.any(rel < -tol) or np.any(rel > div + tol):
            raise OutsideDomainError("point outside mesh bounding box")
        emulti = np.clip(np.floor(rel).astype(int), 0, div - 1)
        local = rel - emulti
        elems = self.element_flat_index(emulti)
        if self.active_mask is not None:
            bad = ~self.active_mask[elems]
            for k in np.flatnonzero(bad):
                elems[k], emulti[k], local[k] = self._active_neighbour(emulti[k], local[k])
        return elems, local

    def _active_neighbour(self, emulti, local):
        # a point on a face of an inactive element may belong to an active one
        for shift in _face_shifts(self.dim):
            cand = emulti + shift
            if np.any(cand < 0) or np.any(cand >= np.asarray(self.divisions)):
                continue
            loc = local - shift
            if loc.min() < -1e-12 or loc.max() > 1.0 + 1e-12:
                continue
            flat = int(self.element_flat_index(cand[None])[0])
            if self.active_mask[flat]:
                return flat, cand, np.clip(loc, 0.0, 1.0)
        raise OutsideDomainError("point outside the active region")


def _face_shifts(dim: int):
    if dim == 1:
        return [np.array([-1]), np.array([1])]
    return [
        np.array(s)
        for s in [(-1, 0), (0, -1), (1, 0), (0, 1), (-1, -1), (1, -1), (-1, 1), (1, 1)]
    ]


def same_mesh(a: StructuredMesh, b: StructuredMesh) -> bool:
    """Structural mesh equality (geometry, divisions, and activity)."""
    if a is b:
        return True
    if (a.origin, a.extent, a.divisions) != (b.origin, b.extent, b.divisions):
        return False
    if (a.active_mask is None) != (b.active_mask is None):
        return False
    return a.active_mask is None or bool(np.array_equal(a.active_mask, b.active_mask))


def build_mesh(origin, extent, divisions, shape: str = "box") -> StructuredMesh:
    """Build a box or L-shaped mesh (L-shape: upper-right quadrant removed)."""
    mesh = StructuredMesh(origin, extent, divisions, None)
    if shape == "box":
        return mesh
    if shape != "l_shape":
        raise ValueError(f"unknown shape {shape!r}")
    if mesh.dim != 2:
        raise ValueError("l_shape requires a 2D mesh")
    if any(d % 2 for d in mesh.divisions):
        raise ValueError("l_shape requires even divisions per axis")
    d0, d1 = mesh.divisions
    e = np.arange(mesh.n_elements)
    e0, e1 = e % d0, e // d0
    mask = ~((e0 >= d0 // 2) & (e1 >= d1 // 2))
    return StructuredMesh(origin, extent, divisions, mask)


@dataclass(frozen=True, eq=False)
class ScalarField:
    """Nodal values of a Q1 function, one value per mesh node."""

    mesh: StructuredMesh
    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.shape != (self.mesh.n_nodes,):
            raise ValueError(
                f"values shape {vals.shape} does not match node count {self.mesh.n_nodes}"
            )
        if not np.all(np.isfinite(vals)):
            raise ValueError("field values must all be finite")
        object.__setattr__(self, "values", vals)


def shape_values(local: np.ndarray) -> np.ndarray:
    """Q1 shape functions at local coordinates: (P, n) -> (P, 2^n)."""
    local = np.atleast_2d(local)
    if local.shape[1] == 1:
        t = local[:, 0]
        return np.stack([1.0 - t, t], axis=1)
    s, t = local[:, 0], local[:, 1]
    return np.stack([(1 - s) * (1 - t), s * (1 - t), (1 - s) * t, s * t], axis=1)


def shape_gradients(local: np.ndarray) -> np.ndarray:
    """Q1 shape gradients w.r.t. local coordinates: (P, n) -> (P, 2^n, n)."""
    local = np.atleast_2d(local)
    if local.shape[1] == 1:
        p = local.shape[0]
        g = np.empty((p, 2, 1))
        g[:, 0, 0] = -1.0
        g[:, 1, 0] = 1.0
        return g
    s, t = local[:, 0], local[:, 1]
    g = np.empty((local.shape[0], 4, 2))
    g[:, 0, 0] = -(1 - t)
    g[:, 1, 0] = 1 - t
    g[:, 2, 0] = -t
    g[:, 3, 0] = t
    g[:, 0, 1] = -(1 - s)
    g[:, 1, 1] = -s
    g[:, 2, 1] = 1 - s
    g[:, 3, 1] = s
    return g


def eval_field_batch(field: ScalarField, points: np.ndarray) -> np.ndarray:
    """Multilinear interpolation of nodal values at many points."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    elems, local = field.mesh.locate(points)
    corner = field.values[field.mesh.element_nodes(elems)]
    return np.einsum("pa,pa->p", shape_values(local), corner)


def eval_field(field: ScalarField, point) -> float:
    """Value of the Q1 interpolant at one point inside the active region."""
    return float(eval_field_batch(field, np.atleast_2d(point))[0])


def eval_gradient_batch(field: ScalarField, points: np.ndarray) -> np.ndarray:
    """Gradient of the Q1 interpolant at many (element-interior) points."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    elems, local = field.mesh.locate(points)
    corner = field.values[field.mesh.element_nodes(elems)]
    grads = shape_gradients(local) / field.mesh.h
    return np.einsum("pad,pa->pd", grads, corner)


def eval_gradient(field: ScalarField, point) -> np.ndarray:
    """Gradient at one point (element-wise defined; point should be interior)."""
    return eval_gradient_batch(field, np.atleast_2d(point))[0]


def element_quadrature_points(
    mesh: StructuredMesh, rule: QuadratureRule, elems: np.ndarray | None = None
) -> np.ndarray:
    """Global coordinates of quadrature points: (E, Q, n)."""
    if elems is None:
        elems = mesh.active_elements()
    orig = mesh.element_origin(elems)
    return orig[:, None, :] + rule.points[None, :, :] * mesh.h


def integrate(
    mesh: StructuredMesh,
    integrand: Callable[[np.ndarray], np.ndarray],
    rule: QuadratureRule | None = None,
) -> float:
    """Quadrature of ``integrand`` over the active region.

    The integrand receives an (P, n) array of points and must return (P,)
    values; each sample must be finite.
    """
    if rule is None:
        rule = gauss_rule(mesh.dim)
    elems = mesh.active_elements()
    vol = float(np.prod(mesh.h))
    pts = element_quadrature_points(mesh, rule, elems)
    vals = np.asarray(integrand(pts.reshape(-1, mesh.dim)), dtype=float)
    if not np.all(np.isfinite(vals)):
        raise ValueError("integrand returned a non-finite sample")
    vals = vals.reshape(len(elems), len(rule.weights))
    return float(vol * np.sum(vals @ rule.weights))


def integrate_field(field: ScalarField, rule: QuadratureRule | None = None) -> float:
    """Exact integral of the Q1 field over the active region."""
    mesh = field.mesh
    if rule is None:
        rule = gauss_rule(mesh.dim)
    elems = mesh.active_elements()
    corner = field.values[mesh.element_nodes(elems)]
    vol = float(np.prod(mesh.h))
    weights = rule.weights @ shape_values(rule.points)  # (2^n,)
    return float(vol * np.sum(corner @ weights))


def element_values_at(field: ScalarField, rule: QuadratureRule, elems: np.ndarray) -> np.ndarray:
    """Field values at each element's quadrature points: (E, Q)."""
    corner = field.values[field.mesh.element_nodes(elems)]
    return corner @ shape_values(rule.points).T


def element_gradients_at(field: ScalarField, rule: QuadratureRule, elems: np.ndarray) -> np.ndarray:
    """Field gradients at each element's quadrature points: (E, Q, n)."""
    corner = field.values[field.mesh.element_nodes(elems)]
    grads = shape_gradients(rule.points) / field.mesh.h  # (Q, 2^n, n)
    return np.einsum("qad,ea->eqd", grads, corner)


def boundary_nodes(mesh: StructuredMesh) -> np.ndarray:
    """Nodes on the boundary of the active region (outer box and, for
    L-shaped meshes, the reentrant edges)."""
    if mesh.dim == 1:
        return np.array([0, mesh.divisions[0]])
    n0, n1 = mesh.nodes_per_axis
    nodes = np.arange(mesh.n_nodes)
    i0, i1 = nodes % n0, nodes // n0
    if mesh.active_mask is None:
        on = (i0 == 0) | (i0 == n0 - 1) | (i1 == 0) | (i1 == n1 - 1)
        return nodes[on]
    # node counts of adjacent active elements: interior active nodes touch 4
    counts = np.zeros(mesh.n_nodes, dtype=int)
    conn = mesh.element_nodes(mesh.active_elements())
    np.add.at(counts, conn.ravel(), 1)
    return nodes[(counts > 0) & (counts < 4)]


def active_nodes(mesh: StructuredMesh) -> np.ndarray:
    """Nodes belonging to at least one active element."""
    if mesh.active_mask is None:
        return np.arange(mesh.n_nodes)
    conn = mesh.element_nodes(mesh.active_elements())
    present = np.zeros(mesh.n_nodes, dtype=bool)
    present[conn.ravel()] = True
    return np.flatnonzero(present)
