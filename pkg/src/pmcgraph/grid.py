"""Structured grids over flat 1D/2D base domains, and fields living on them.

A grid is a uniform tensor-product lattice over a box.  Each axis is either
periodic (the box is a circle factor; the right edge wraps to the left) or
dirichlet (both edge node layers are boundary).  Grids and fields are
immutable after construction.
"""

from __future__ import annotations

import numpy as np

from .expr import ExprNode, eval_checked, parse_expr

__all__ = [
    "BaseGrid",
    "ScalarField",
    "VectorField",
    "build_grid",
    "field_from_expr",
    "make_field",
    "constant_field",
    "sup_norm",
    "write_field_csv",
    "read_field_csv",
    "refine_grid",
    "refine_field",
]

_TOPOLOGIES = ("periodic", "dirichlet")


def _as_tuple(value, dimension, caster, name):
    if np.isscalar(value) or isinstance(value, str):
        value = (value,) * dimension
    value = tuple(caster(v) for v in value)
    if len(value) != dimension:
        raise ValueError(f"{name} must have one entry per axis, got {value!r}")
    return value


class BaseGrid:
    """Uniform lattice on a 1D interval or 2D rectangle.

    Attributes
    ----------
    dimension : int
        1 or 2.
    shape : tuple of int
        Nodes per axis (>= 4 each).
    lengths : tuple of float
        Box edge lengths (> 0).
    topology : tuple of str
        'periodic' or 'dirichlet' per axis.
    origin : tuple of float
        Coordinate of node index 0 on each axis.
    spacing : tuple of float
        Node spacing: length/shape on periodic axes (the seam node is not
        duplicated), length/(shape-1) on dirichlet axes.
    """

    def __init__(self, dimension, shape, lengths, topology, origin=None):
        dimension = int(dimension)
        if dimension not in (1, 2):
            raise ValueError(f"dimension must be 1 or 2, got {dimension}")
        self.dimension = dimension
        self.shape = _as_tuple(shape, dimension, int, "shape")
        for s in self.shape:
            if s < 4:
                raise ValueError(f"need at least 4 nodes per axis, got shape {self.shape}")
        self.lengths = _as_tuple(lengths, dimension, float, "lengths")
        for L in self.lengths:
            if not (L > 0 and np.isfinite(L)):
                raise ValueError(f"axis lengths must be positive, got {self.lengths}")
        topo = _as_tuple(topology, dimension, str, "topology")
        for t in topo:
            if t not in _TOPOLOGIES:
                raise ValueError(f"topology entries must be 'periodic' or 'dirichlet', got {t!r}")
        self.topology = topo
        if origin is None:
            origin = (0.0,) * dimension
        self.origin = _as_tuple(origin, dimension, float, "origin")

        self.spacing = tuple(
            L / s if t == "periodic" else L / (s - 1)
            for L, s, t in zip(self.lengths, self.shape, self.topology))
        self.node_count = int(np.prod(self.shape))

        coords = []
        for o, s, h in zip(self.origin, self.shape, self.spacing):
            axis = o + h * np.arange(s, dtype=float)
            axis.flags.writeable = False
            coords.append(axis)
        self.axis_coords = tuple(coords)

        mask = np.zeros(self.shape, dtype=bool)
        for ax, t in enumerate(self.topology):
            if t == "dirichlet":
                sel = [slice(None)] * dimension
                sel[ax] = 0
                mask[tuple(sel)] = True
                sel[ax] = -1
                mask[tuple(sel)] = True
        mask.flags.writeable = False
        self.boundary_mask = mask

    # -- derived views ----------------------------------------------------

    def node_positions(self):
        """Meshgrid of node coordinates, tuple of arrays shaped like the grid."""
        if self.dimension == 1:
            return (self.axis_coords[0],)
        out = np.meshgrid(*self.axis_coords, indexing="ij")
        for a in out:
            a.flags.writeable = False
        return tuple(out)

    def boundary_indices(self):
        """Sorted flat (row-major) indices of boundary nodes."""
        return np.flatnonzero(self.boundary_mask.reshape(-1))

    def interior_mask(self):
        return ~self.boundary_mask

    def is_fully_periodic(self):
        return all(t == "periodic" for t in self.topology)

    def max_spacing(self):
        return max(self.spacing)

    # -- identity ----------------------------------------------------------

    def _key(self):
        return (self.dimension, self.shape, self.lengths, self.topology, self.origin)

    def __eq__(self, other):
        return isinstance(other, BaseGrid) and self._key() == other._key()

    def __hash__(self):
        return hash(self._key())

    def __repr__(self):
        topo = ",".join(t[0] for t in self.topology)
        return f"BaseGrid(dim={self.dimension}, shape={self.shape}, topology={topo})"


def build_grid(dimension, shape, lengths, topology, origin=None):
    """Construct a `BaseGrid`; see the class docstring for conventions."""
    return BaseGrid(dimension, shape, lengths, topology, origin)


class ScalarField:
    """One real value per grid node, stored shaped like the grid."""

    def __init__(self, grid, values):
        values = np.array(values, dtype=float, copy=True)
        if values.shape != grid.shape:
            if values.size == grid.node_count:
                values = values.reshape(grid.shape)
            else:
                raise ValueError(
                    f"field values of shape {values.shape} do not fit grid {grid.shape}")
        if not np.isfinite(values).all():
            bad = int(np.flatnonzero(~np.isfinite(values.reshape(-1)))[0])
            raise ValueError(f"field contains a non-finite value at flat node {bad}")
        values.flags.writeable = False
        self.grid = grid
        self.values = values

    def copy_values(self):
        return np.array(self.values, copy=True)

    def __repr__(self):
        lo, hi = float(self.values.min()), float(self.values.max())
        return f"ScalarField(range=[{lo:.6g}, {hi:.6g}], grid={self.grid!r})"


class VectorField:
    """Per-axis component arrays, node- or face-centered.

    Face-centered component k lives on the faces normal to axis k: a
    periodic axis has as many faces as nodes (face i joins nodes i, i+1 mod
    s), a dirichlet axis one fewer.
    """

    def __init__(self, grid, components, centering):
        if centering not in ("node", "face"):
            raise ValueError(f"centering must be 'node' or 'face', got {centering!r}")
        components = tuple(np.array(c, dtype=float, copy=True) for c in components)
        if len(components) != grid.dimension:
            raise ValueError(
                f"need {grid.dimension} components, got {len(components)}")
        for ax, comp in enumerate(components):
            want = face_shape(grid, ax) if centering == "face" else grid.shape
            if comp.shape != want:
                raise ValueError(
                    f"component {ax} has shape {comp.shape}, expected {want}")
            comp.flags.writeable = False
        self.grid = grid
        self.components = components
        self.centering = centering


def face_shape(grid, axis):
    """Shape of the face array normal to `axis`."""
    shp = list(grid.shape)
    if grid.topology[axis] == "dirichlet":
        shp[axis] -= 1
    return tuple(shp)


def face_positions(grid, axis):
    """Coordinates of face centers normal to `axis`, tuple of shaped arrays."""
    coords = []
    for ax in range(grid.dimension):
        c = grid.axis_coords[ax]
        if ax == axis:
            c = c + 0.5 * grid.spacing[ax]
            if grid.topology[ax] == "dirichlet":
                c = c[:-1]
        coords.append(c)
    if grid.dimension == 1:
        return (coords[0],)
    return tuple(np.meshgrid(*coords, indexing="ij"))


def make_field(grid, values):
    return ScalarField(grid, values)


def constant_field(grid, value):
    return ScalarField(grid, np.full(grid.shape, float(value)))


_FIELD_VARS = {1: ("x1",), 2: ("x1", "x2")}


def field_from_expr(grid, expr):
    """Evaluate an expression of the base coordinates at every node.

    `expr` may be source text or an already-parsed node; only x1 (and x2 in
    2D) are available.  Referencing anything else is rejected with the
    offending name in the message.
    """
    allowed = _FIELD_VARS[grid.dimension]
    if isinstance(expr, str):
        node = parse_expr(expr, allowed)
    elif isinstance(expr, ExprNode):
        node = expr
        extra = node.variables() - frozenset(allowed)
        if extra:
            raise ValueError(
                f"field expression uses variable '{sorted(extra)[0]}' "
                f"not defined on a {grid.dimension}D base grid")
    else:
        raise TypeError(f"expr must be text or an ExprNode, got {type(expr)!r}")
    pos = grid.node_positions()
    env = {name: pos[i] for i, name in enumerate(allowed)}
    values = eval_checked(node, env, label="field expression")
    values = np.broadcast_to(values, grid.shape)
    return ScalarField(grid, values)


def _same_grid(a, b, what):
    if a.grid != b.grid:
        raise ValueError(f"{what} are defined on different grids")


def sup_norm(a, b=None):
    """Sup norm of a field, or of the difference of two fields on one grid."""
    if b is None:
        return float(np.max(np.abs(a.values)))
    _same_grid(a, b, "sup_norm operands")
    return float(np.max(np.abs(a.values - b.values)))


# ---------------------------------------------------------------------------
# Field CSV round-trip.  Header then one node value per line, row-major
# (first axis slowest).


def _fmt(x):
    return format(float(x), ".17g")


def write_field_csv(field, path):
    grid = field.grid
    head = (
        f"# dim={grid.dimension}"
        f" shape={','.join(str(s) for s in grid.shape)}"
        f" lengths={','.join(_fmt(L) for L in grid.lengths)}"
        f" topology={','.join(t[0] for t in grid.topology)}"
        f" origin={','.join(_fmt(o) for o in grid.origin)}"
    )
    lines = [head]
    lines.extend(_fmt(v) for v in field.values.reshape(-1))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_field_csv(path):
    with open(path) as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    if not lines or not lines[0].startswith("#"):
        raise ValueError(f"{path}: missing field header line")
    fields = {}
    for part in lines[0].lstrip("#").split():
        key, _, val = part.partition("=")
        fields[key] = val
    try:
        dim = int(fields["dim"])
        shape = tuple(int(s) for s in fields["shape"].split(","))
        lengths = tuple(float(s) for s in fields["lengths"].split(","))
        topo = tuple({"p": "periodic", "d": "dirichlet"}[s]
                     for s in fields["topology"].split(","))
        origin = tuple(float(s) for s in fields["origin"].split(","))
    except (KeyError, ValueError) as exc:
        raise ValueError(f"{path}: bad field header: {exc}") from exc
    grid = build_grid(dim, shape, lengths, topo, origin)
    values = np.array([float(v) for v in lines[1:]], dtype=float)
    if values.size != grid.node_count:
        raise ValueError(
            f"{path}: expected {grid.node_count} values, found {values.size}")
    return ScalarField(grid, values.reshape(grid.shape))


# ---------------------------------------------------------------------------
# One level of uniform refinement (used for stability/refinement studies)


def refine_grid(grid):
    """Halve the spacing: periodic axes double, dirichlet axes go s -> 2s-1."""
    shape = tuple(
        2 * s if t == "periodic" else 2 * s - 1
        for s, t in zip(grid.shape, grid.topology))
    return build_grid(grid.dimension, shape, grid.lengths, grid.topology, grid.origin)


def _refine_axis(values, axis, topology):
    # cubic 4-point midpoints: linear interpolation leaves gradient kinks at
    # the coarse nodes whose second differences at the fine spacing are O(1),
    # which would wreck the discrete curvature of any refined field
    n = values.shape[axis]
    values = np.moveaxis(values, axis, 0)
    if topology == "periodic":
        out = np.empty((2 * n,) + values.shape[1:], dtype=float)
        out[0::2] = values
        if n < 4:
            out[1::2] = 0.5 * (values + np.roll(values, -1, axis=0))
        else:
            out[1::2] = (-np.roll(values, 1, axis=0) + 9.0 * values
                         + 9.0 * np.roll(values, -1, axis=0)
                         - np.roll(values, -2, axis=0)) / 16.0
    else:
        out = np.empty((2 * n - 1,) + values.shape[1:], dtype=float)
        out[0::2] = values
        if n < 4:
            out[1::2] = 0.5 * (values[:-1] + values[1:])
        else:
            mids = np.empty((n - 1,) + values.shape[1:], dtype=float)
            mids[1:-1] = (-values[:-3] + 9.0 * values[1:-2]
                          + 9.0 * values[2:-1] - values[3:]) / 16.0
            mids[0] = (5.0 * values[0] + 15.0 * values[1]
                       - 5.0 * values[2] + values[3]) / 16.0
            mids[-1] = (5.0 * values[-1] + 15.0 * values[-2]
                        - 5.0 * values[-3] + values[-4]) / 16.0
            out[1::2] = mids
    return np.moveaxis(out, 0, axis)


def refine_field(field, fine_grid=None):
    """Interpolate a field onto the grid one refinement finer.

    Midpoints are filled by cubic 4-point interpolation (one-sided at
    dirichlet ends, linear on axes too short for it), so smooth fields keep
    their discrete curvature through refinement.
    """
    grid = field.grid
    if fine_grid is None:
        fine_grid = refine_grid(grid)
    values = field.copy_values()
    for ax in range(grid.dimension):
        values = _refine_axis(values, ax, grid.topology[ax])
    return ScalarField(fine_grid, values)
