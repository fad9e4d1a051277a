"""Uniform lattices on balls B_R in dimension 1 or 2, and fields on them.

Nodes are the points ``k*h`` of the origin-centered lattice lying in the
closed ball; ordering is lexicographic in the integer index, which every
other module relies on.  Quadrature is the midpoint rule with weight ``h^N``
per node; boundary cells are not trimmed.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Grid",
    "Field",
    "make_grid",
    "same_grid",
    "integrate",
    "sup_norm",
    "inf_on",
    "restrict",
    "field_to_csv",
]

DEFAULT_MAX_NODES = 40_000_000


@dataclass(frozen=True, eq=False)
class Grid:
    """Uniform lattice intersected with the closed ball of radius R."""

    dimension: int
    radius: float
    spacing: float
    index: np.ndarray = field(repr=False)  # (n,) or (n, 2) integer lattice indices

    @property
    def n_nodes(self):
        return self.index.shape[0]

    @property
    def nodes(self):
        """Node coordinates, shape (n,) in 1D and (n, 2) in 2D."""
        return self.index * self.spacing

    def radii(self):
        x = self.nodes
        if self.dimension == 1:
            return np.abs(x)
        return np.sqrt(np.sum(x * x, axis=1))

    def box_halfwidth(self):
        """Half-width of the bounding lattice box, in cells."""
        return int(np.max(np.abs(self.index)))

    def embed_indices(self):
        """Flat positions of the nodes inside the bounding box array."""
        m = self.box_halfwidth()
        side = 2 * m + 1
        if self.dimension == 1:
            return self.index + m
        return (self.index[:, 0] + m) * side + (self.index[:, 1] + m)


@dataclass
class Field:
    """Real-valued samples on the nodes of a grid."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.grid.n_nodes,):
            raise ValueError(
                f"field has {self.values.shape} values for {self.grid.n_nodes} nodes"
            )
        if not np.all(np.isfinite(self.values)):
            raise ValueError("field values must be finite")

    def copy(self):
        return Field(self.grid, self.values.copy())


def same_grid(a, b):
    """Cheap structural identity check for grids."""
    if a is b:
        return True
    return (
        a.dimension == b.dimension
        and a.n_nodes == b.n_nodes
        and abs(a.spacing - b.spacing) <= 1e-12 * a.spacing
        and abs(a.radius - b.radius) <= 1e-12 * max(a.radius, 1.0)
    )


def make_grid(N, R, h, max_nodes=DEFAULT_MAX_NODES):
    """Lattice {k h} intersected with the closed ball of radius R.

    Requires 2R/h to be integral so the cells tile [-R, R] exactly.
    """
    if N not in (1, 2):
        raise ValueError(f"dimension N must be 1 or 2, got {N}")
    if R <= 0 or h <= 0:
        raise ValueError("R and h must be positive")
    ncells = 2.0 * R / h
    if abs(ncells - round(ncells)) > 1e-9 * max(1.0, ncells):
        raise ValueError(f"2R/h = {ncells} is not an integer")

    kmax = int(math.floor(R / h + 1e-9))
    if N == 1:
        est = 2 * kmax + 1
        if est > max_nodes:
            raise ValueError(f"grid would have {est} nodes, cap is {max_nodes}")
        idx = np.arange(-kmax, kmax + 1, dtype=np.int64)
    else:
        est = (2 * kmax + 1) ** 2
        if est > max_nodes:
            raise ValueError(f"grid would have up to {est} nodes, cap is {max_nodes}")
        rng = np.arange(-kmax, kmax + 1, dtype=np.int64)
        ii, jj = np.meshgrid(rng, rng, indexing="ij")
        keep = (ii * ii + jj * jj) * (h * h) <= R * R * (1 + 1e-12)
        idx = np.column_stack([ii[keep], jj[keep]])
    return Grid(dimension=N, radius=float(R), spacing=float(h), index=idx)


def integrate(f):
    """Midpoint-rule integral: sum of values times h^N.

    Uses exact (fsum) accumulation so the result is independent of node
    ordering, which the reflection-symmetry property relies on.
    """
    hN = f.grid.spacing ** f.grid.dimension
    return math.fsum(f.values.tolist()) * hN


def sup_norm(f):
    """Max absolute nodal value."""
    return float(np.max(np.abs(f.values))) if f.values.size else 0.0


def inf_on(f, mask):
    """Min of the field over the nodes selected by a boolean mask."""
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != f.values.shape:
        raise ValueError("mask shape does not match field")
    if not mask.any():
        raise ValueError("empty node subset")
    return float(np.min(f.values[mask]))


def _index_map(sub, sup):
    """Positions of sub-grid nodes inside the super-grid, or None."""
    if sub.dimension != sup.dimension:
        return None
    if abs(sub.spacing - sup.spacing) > 1e-12 * sup.spacing:
        return None
    if sub.dimension == 1:
        if np.any(sub.index < sup.index[0]) or np.any(sub.index > sup.index[-1]):
            return None
        return sub.index - sup.index[0]
    lookup = {tuple(k): i for i, k in enumerate(sup.index)}
    out = np.empty(sub.n_nodes, dtype=np.int64)
    for i, k in enumerate(sub.index):
        j = lookup.get(tuple(k))
        if j is None:
            return None
        out[i] = j
    return out


def restrict(f, sub_grid):
    """Restrict a field to a nested sub-grid (same spacing, smaller ball)."""
    pos = _index_map(sub_grid, f.grid)
    if pos is None:
        raise ValueError("grids are not nested (spacing or node mismatch)")
    return Field(sub_grid, f.values[pos])


def field_to_csv(f, path):
    """One row per node: x (and y in 2D), value. 17 significant digits."""
    g = f.grid
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        if g.dimension == 1:
            w.writerow(["x", "value"])
            for x, v in zip(g.nodes, f.values):
                w.writerow([format(x, ".17g"), format(v, ".17g")])
        else:
            w.writerow(["x", "y", "value"])
            for (x, y), v in zip(g.nodes, f.values):
                w.writerow([format(x, ".17g"), format(y, ".17g"), format(v, ".17g")])
