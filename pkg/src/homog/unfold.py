"""Two-scale operator toolbox on epsilon-aligned structured meshes.

For epsilon = 1/N the domain is tiled by cells ``eps*(xi + (0,1)^n)`` with
integer lattice indices xi, and every fine-mesh element lies inside exactly
one cell.  The module provides

* ``split_point``        -- x = eps*xi + eps*y with y in [0,1)^n,
* ``unfold``             -- T(phi)(xi, y) = phi(eps*(xi + y)),
* ``average``            -- the inverse-direction map (left inverse of T),
* ``cell_means``         -- exact Q1 cell averages M(phi)(xi),
* ``scale_split``        -- slow part Q(phi) (Q1 interpolation over the
                            lattice of forward-cell means) and remainder
                            R(phi) = phi - Q(phi),
* ``layer_indicator``    -- elements within k*sqrt(n)*eps of the boundary,
* ``distance_weight``    -- exact boundary distance rho and min(rho/eps, 1).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import (
    ScalarField,
    StructuredMesh,
    active_nodes,
    same_mesh,
    shape_values,
)


class AlignmentError(ValueError):
    """epsilon is not 1/N or the fine mesh is not nested in the cell lattice."""


def _as_int(value: float, what: str) -> int:
    r = round(value)
    if abs(value - r) > 1e-9:
        raise AlignmentError(f"{what} = {value!r} is not an integer")
    return int(r)


@dataclass(frozen=True, eq=False)
class CellIndexMap:
    """Lattice bookkeeping tying a fine mesh to its epsilon-cell tiling."""

    mesh: StructuredMesh
    n_per_unit: int  # N with epsilon = 1/N
    lo: tuple[int, ...]  # lattice index of the domain corner
    counts: tuple[int, ...]  # cells per axis
    m: tuple[int, ...]  # fine elements per cell per axis
    cells: np.ndarray  # (K, n) absolute lattice indices of active cells
    cell_lookup: np.ndarray  # dense (counts) -> position in cells, -1 inactive

    @property
    def epsilon(self) -> float:
        return 1.0 / self.n_per_unit

    @property
    def dim(self) -> int:
        return self.mesh.dim

    def element_cell_position(self, elems: np.ndarray) -> np.ndarray:
        """Position in ``cells`` of the cell containing each fine element."""
        multi = self.mesh.element_multi_index(elems)
        local = multi // np.asarray(self.m)
        if self.dim == 1:
            return self.cell_lookup[local[:, 0]]
        return self.cell_lookup[local[:, 0], local[:, 1]]


def build_cell_map(mesh: StructuredMesh, n_per_unit: int) -> CellIndexMap:
    """Validate epsilon-alignment and enumerate the cells meeting the domain."""
    n = int(n_per_unit)
    if n < 1:
        raise AlignmentError("epsilon must equal 1/N for a positive integer N")
    dim = mesh.dim
    lo, counts, m = [], [], []
    for k in range(dim):
        lo.append(_as_int(mesh.origin[k] * n, "origin/epsilon"))
        counts.append(_as_int(mesh.extent[k] * n, "extent/epsilon"))
        if counts[-1] < 1 or mesh.divisions[k] % counts[-1]:
            raise AlignmentError(
                f"fine divisions {mesh.divisions[k]} are not nested in {counts[-1]} cells"
            )
        m.append(mesh.divisions[k] // counts[-1])
    if dim == 1:
        multis = np.arange(counts[0])[:, None]
    else:
        g0, g1 = np.meshgrid(np.arange(counts[0]), np.arange(counts[1]), indexing="ij")
        multis = np.stack([g0.ravel(), g1.ravel()], axis=1)
    active = np.ones(len(multis), dtype=bool)
    if mesh.active_mask is not None:
        # with an aligned reentrant corner every element block is uniformly
        # active or inactive; count active elements per block to verify
        emulti = mesh.element_multi_index(np.arange(mesh.n_elements))
        local = emulti // np.asarray(m)
        flat = local[:, 0] if dim == 1 else local[:, 0] * counts[1] + local[:, 1]
        per_cell = np.bincount(flat, weights=mesh.active_mask.astype(float),
                               minlength=len(multis))
        block = int(np.prod(m))
        if np.any((per_cell > 0) & (per_cell < block)):
            raise AlignmentError("the reentrant corner is not aligned with the cell lattice")
        key = multis[:, 0] if dim == 1 else multis[:, 0] * counts[1] + multis[:, 1]
        active = per_cell[key] == block
    cells = multis[active] + np.asarray(lo)
    lookup = np.full(tuple(counts), -1, dtype=int)
    pos = np.arange(len(cells))
    if dim == 1:
        lookup[cells[:, 0] - lo[0]] = pos
    else:
        lookup[cells[:, 0] - lo[0], cells[:, 1] - lo[1]] = pos
    return CellIndexMap(mesh, n, tuple(lo), tuple(counts), tuple(m), cells, lookup)


def split_point(x, epsilon: float) -> tuple[np.ndarray, np.ndarray]:
    """Integer/fractional splitting x = eps*xi + eps*y with y in [0,1)^n."""
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    rel = np.atleast_1d(np.asarray(x, dtype=float)) / epsilon
    xi = np.floor(rel).astype(int)
    return xi, rel - xi


@dataclass(frozen=True, eq=False)
class UnfoldedField:
    """Per-cell Y-grids of values: (x-cell, y) -> value."""

    map: CellIndexMap
    y_resolution: int
    values: np.ndarray  # (K, r+1) in 1D, (K, r+1, r+1) in 2D, [cell, i0(, i1)]

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        r = self.y_resolution
        expected = (len(self.map.cells),) + (r + 1,) * self.map.dim
        if vals.shape != expected:
            raise ValueError(f"values shape {vals.shape}, expected {expected}")
        if not np.all(np.isfinite(vals)):
            raise ValueError("unfolded values must be finite")
        object.__setattr__(self, "values", vals)


def unfold(field: ScalarField, cmap: CellIndexMap, y_resolution: int) -> UnfoldedField:
    """Two-scale unfolding sampled on a uniform Y-grid per cell."""
    if not same_mesh(field.mesh, cmap.mesh):
        raise ValueError("field mesh does not match the cell map")
    r = int(y_resolution)
    eps = cmap.epsilon
    dim = cmap.dim
    axes = [np.arange(r + 1) / r] * dim
    if dim == 1:
        ygrid = axes[0][:, None]
    else:
        g0, g1 = np.meshgrid(axes[0], axes[1], indexing="ij")
        ygrid = np.stack([g0.ravel(), g1.ravel()], axis=1)
    pts = eps * (cmap.cells[:, None, :] + ygrid[None, :, :])
    from .grid import eval_field_batch

    vals = eval_field_batch(field, pts.reshape(-1, dim))
    shape = (len(cmap.cells),) + (r + 1,) * dim
    return UnfoldedField(cmap, r, vals.reshape(shape))


def _cell_active(cmap: CellIndexMap, c: np.ndarray) -> bool:
    rel = c - np.asarray(cmap.lo)
    if np.any(rel < 0) or np.any(rel >= np.asarray(cmap.counts)):
        return False
    pos = cmap.cell_lookup[tuple(rel)] if cmap.dim == 2 else cmap.cell_lookup[rel[0]]
    return bool(pos >= 0)


def _containing_cell(cmap: CellIndexMap, rel: np.ndarray) -> np.ndarray:
    """Cell multi-index (absolute) containing points given as x/eps.

    The far domain boundary is closed (clamped to the last cell).  When the
    half-open cell of a point is inactive, a neighbouring containing cell is
    preferred (points on cell faces); points genuinely inside the removed
    quadrant resolve to the nearest fully interior cell by index clamping.
    """
    lo = np.asarray(cmap.lo)
    hi = lo + np.asarray(cmap.counts)
    cell = np.clip(np.floor(rel).astype(int), lo, hi - 1)
    if cmap.mesh.active_mask is None:
        return cell
    pos = cmap.cell_lookup[tuple((cell - lo).T)] if cmap.dim == 2 else cmap.cell_lookup[(cell - lo)[:, 0]]
    half = lo + np.asarray(cmap.counts) // 2
    for idx in np.flatnonzero(pos < 0):
        c = cell[idx].copy()
        on_face = [k for k in range(cmap.dim) if rel[idx][k] == c[k]]
        resolved = False
        for axes in ([(k,) for k in on_face] + ([tuple(on_face)] if len(on_face) > 1 else [])):
            cand = c.copy()
            for k in axes:
                cand[k] -= 1
            if _cell_active(cmap, cand):
                cell[idx] = cand
                resolved = True
                break
        if not resolved:
            # interior of the removed quadrant: clamp the axis closest to it
            excess = c - (half - 1)
            axis = int(np.argmin(excess))
            c[axis] = half[axis] - 1
            cell[idx] = c
    return cell


def average(ufield: UnfoldedField) -> ScalarField:
    """Map an unfolded field back to the fine mesh.

    The value at node x is the Y-grid interpolation at y = {x/eps} in the
    cell containing x; composed with ``unfold`` this is the identity.
    """
    cmap = ufield.map
    mesh = cmap.mesh
    eps = cmap.epsilon
    r = ufield.y_resolution
    nodes = active_nodes(mesh)
    x = mesh.node_coordinates(nodes)
    rel = x / eps
    cell = _containing_cell(cmap, rel)
    y = rel - cell
    pos = cmap.cell_lookup[tuple((cell - np.asarray(cmap.lo)).T)] if cmap.dim == 2 else cmap.cell_lookup[(cell - np.asarray(cmap.lo))[:, 0]]
    s = y * r
    sub = np.clip(np.floor(s).astype(int), 0, r - 1)
    loc = s - sub
    w = shape_values(loc)  # (P, 2^n)
    flat = ufield.values.reshape(len(cmap.cells), -1)
    out = np.zeros(mesh.n_nodes)
    if cmap.dim == 1:
        corners = np.stack([sub[:, 0], sub[:, 0] + 1], axis=1)
    else:
        # flat Y-grid index is i0*(r+1) + i1; order matches shape_values
        base = sub[:, 0] * (r + 1) + sub[:, 1]
        corners = np.stack([base, base + (r + 1), base + 1, base + r + 2], axis=1)
    vals = flat[pos[:, None], corners]
    out[nodes] = np.einsum("pa,pa->p", w, vals)
    return ScalarField(mesh, out)


def cell_means(field: ScalarField, cmap: CellIndexMap) -> np.ndarray:
    """Exact mean of the Q1 field over each active cell (one value per cell)."""
    if not same_mesh(field.mesh, cmap.mesh):
        raise ValueError("field mesh does not match the cell map")
    mesh = cmap.mesh
    elems = mesh.active_elements()
    corner = field.values[mesh.element_nodes(elems)]
    # the integral of a Q1 function over an element is vol * mean(corners)
    elem_int = float(np.prod(mesh.h)) * corner.mean(axis=1)
    pos = cmap.element_cell_position(elems)
    means = np.zeros(len(cmap.cells))
    np.add.at(means, pos, elem_int)
    return means / cmap.epsilon ** cmap.dim


def _lattice_values(cmap: CellIndexMap, means: np.ndarray) -> np.ndarray:
    """Per-lattice-node value = mean over the forward cell.

    Nodes whose forward cell leaves the domain (outer top/right rows, and the
    removed quadrant of an L-shape) take a first-order extrapolation from the
    two nearest cells along the axis that exits the domain soonest; a bare
    clamp would perturb the slow part at first order in the boundary ring.
    Processing in ascending index order keeps every stencil already filled.
    """
    lo = np.asarray(cmap.lo)
    counts = np.asarray(cmap.counts)
    shape = tuple(counts + 1)
    vals = np.full(shape, np.nan)
    filled = np.zeros(shape, dtype=bool)
    cells_rel = cmap.cells - lo
    if cmap.dim == 1:
        vals[cells_rel[:, 0]] = means
        filled[cells_rel[:, 0]] = True
    else:
        vals[cells_rel[:, 0], cells_rel[:, 1]] = means
        filled[cells_rel[:, 0], cells_rel[:, 1]] = True
    half = counts // 2
    missing = np.argwhere(~filled)
    for node in missing[np.lexsort(missing.T[::-1])]:
        excess = np.full(cmap.dim, np.inf)
        for k in range(cmap.dim):
            if node[k] >= counts[k]:
                excess[k] = node[k] - (counts[k] - 1)
            elif cmap.mesh.active_mask is not None and np.all(node >= half):
                excess[k] = node[k] - (half[k] - 1)
        axis = int(np.argmin(excess))
        idx = tuple(node)
        below = list(node)
        below[axis] -= 1
        below2 = list(node)
        below2[axis] -= 2
        if below2[axis] >= 0:
            vals[idx] = 2.0 * vals[tuple(below)] - vals[tuple(below2)]
        else:
            vals[idx] = vals[tuple(below)]
        filled[idx] = True
    return vals


def scale_split(field: ScalarField, cmap: CellIndexMap) -> tuple[ScalarField, ScalarField]:
    """Slow/fast splitting (Q(phi), R(phi)) with R = phi - Q(phi) nodewise.

    Q(phi) is the Q1 interpolation, over the epsilon-lattice, of the nodal
    data ``lattice node xi -> mean of phi over the forward cell``; its
    restriction to the fine mesh is exact because a multilinear function on a
    cell restricts to Q1 data on the nested fine nodes.
    """
    means = cell_means(field, cmap)
    lattice = _lattice_values(cmap, means)
    mesh = cmap.mesh
    lo = np.asarray(cmap.lo)
    nodes = np.arange(mesh.n_nodes)
    x = mesh.node_coordinates(nodes)
    rel = x / cmap.epsilon
    cell = _containing_cell(cmap, rel)
    t = rel - cell
    w = shape_values(t)
    base = cell - lo
    if cmap.dim == 1:
        corners = np.stack([lattice[base[:, 0]], lattice[base[:, 0] + 1]], axis=1)
    else:
        corners = np.stack(
            [
                lattice[base[:, 0], base[:, 1]],
                lattice[base[:, 0] + 1, base[:, 1]],
                lattice[base[:, 0], base[:, 1] + 1],
                lattice[base[:, 0] + 1, base[:, 1] + 1],
            ],
            axis=1,
        )
    qvals = np.einsum("pa,pa->p", w, corners)
    q_part = ScalarField(mesh, qvals)
    r_part = ScalarField(mesh, field.values - qvals)
    return q_part, r_part


def boundary_distance(mesh: StructuredMesh, points: np.ndarray) -> np.ndarray:
    """Exact Euclidean distance to the boundary of the active region."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    o = np.asarray(mesh.origin)
    e = np.asarray(mesh.extent)
    if mesh.active_mask is None:
        sides = np.minimum(points - o, o + e - points)
        return sides.min(axis=1)
    corner = o + e / 2.0
    far = o + e
    segments = [
        (np.array([o[0], o[1]]), np.array([far[0], o[1]])),  # bottom
        (np.array([o[0], o[1]]), np.array([o[0], far[1]])),  # left
        (np.array([o[0], far[1]]), np.array([corner[0], far[1]])),  # top (kept half)
        (np.array([far[0], o[1]]), np.array([far[0], corner[1]])),  # right (kept half)
        (np.array([corner[0], corner[1]]), np.array([corner[0], far[1]])),  # reentrant v
        (np.array([corner[0], corner[1]]), np.array([far[0], corner[1]])),  # reentrant h
    ]
    dist = np.full(len(points), np.inf)
    for a, b in segments:
        ab = b - a
        t = np.clip((points - a) @ ab / (ab @ ab), 0.0, 1.0)
        proj = a + t[:, None] * ab
        dist = np.minimum(dist, np.linalg.norm(points - proj, axis=1))
    return dist


def layer_indicator(cmap: CellIndexMap, k: int) -> np.ndarray:
    """Mask of fine elements whose center lies within k*sqrt(n)*eps of the
    boundary (False on inactive elements)."""
    if k not in (1, 2, 3, 4):
        raise ValueError("layer index k must be in {1, 2, 3, 4}")
    mesh = cmap.mesh
    mask = np.zeros(mesh.n_elements, dtype=bool)
    elems = mesh.active_elements()
    centers = mesh.element_origin(elems) + mesh.h / 2.0
    dist = boundary_distance(mesh, centers)
    mask[elems] = dist < k * np.sqrt(mesh.dim) * cmap.epsilon
    return mask


def distance_weight(mesh: StructuredMesh, kind: str = "rho", epsilon: float | None = None) -> ScalarField:
    """Nodal field of the boundary distance rho, or min(rho/eps, 1)."""
    values = np.zeros(mesh.n_nodes)
    nodes = active_nodes(mesh)
    rho = boundary_distance(mesh, mesh.node_coordinates(nodes))
    if kind == "rho":
        values[nodes] = rho
    elif kind == "rho_eps":
        if epsilon is None or epsilon <= 0:
            raise ValueError("rho_eps requires a positive epsilon")
        values[nodes] = np.minimum(rho / epsilon, 1.0)
    else:
        raise ValueError(f"unknown distance weight kind {kind!r}")
    return ScalarField(mesh, values)
