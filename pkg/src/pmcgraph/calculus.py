"""Discrete calculus on structured grids: gradients, flux divergence,
nonparametric mean curvature, graph Laplacian, quadrature.

All divergence-type operators are assembled in conservative (flux) form:
face fluxes first, then differenced back to nodes.  On dirichlet axes the
divergence is only meaningful at interior nodes; boundary nodes carry 0 by
convention in every nodal output.

Face conventions for axis k: face i joins nodes i and i+1 along k (wrapping
on periodic axes, so a periodic axis has one face per node and a dirichlet
axis one fewer).  The along-axis gradient on a face is the exact two-point
difference; transverse components are the average of the centered node
differences at the two endpoints.
"""

from __future__ import annotations

import numpy as np

from .grid import ScalarField, VectorField, face_shape

__all__ = [
    "gradient",
    "flux_divergence",
    "mean_curvature_product",
    "graph_laplacian",
    "integrate",
    "node_gradients",
    "face_gradients",
]


# ---------------------------------------------------------------------------
# gradients


def _centered_axis_diff(values, axis, h, topology):
    """Node-centered first difference along one axis."""
    if topology == "periodic":
        return (np.roll(values, -1, axis) - np.roll(values, 1, axis)) / (2.0 * h)
    out = np.empty_like(values)
    v = np.moveaxis(values, axis, 0)
    o = np.moveaxis(out, axis, 0)
    o[1:-1] = (v[2:] - v[:-2]) / (2.0 * h)
    # second-order one-sided at the two dirichlet layers
    o[0] = (-3.0 * v[0] + 4.0 * v[1] - v[2]) / (2.0 * h)
    o[-1] = (3.0 * v[-1] - 4.0 * v[-2] + v[-3]) / (2.0 * h)
    return out


def node_gradients(grid, values):
    """List of node-centered partial-derivative arrays, one per axis."""
    return [
        _centered_axis_diff(values, ax, grid.spacing[ax], grid.topology[ax])
        for ax in range(grid.dimension)
    ]


def gradient(field):
    """Node-centered gradient of a scalar field.

    Centered differences inside/periodically; second-order one-sided stencils
    on dirichlet boundary layers, so the result is defined at every node.
    """
    comps = node_gradients(field.grid, field.values)
    return VectorField(field.grid, comps, "node")


def _to_faces(values, axis, topology):
    """Average node values onto the faces of `axis`."""
    if topology == "periodic":
        return 0.5 * (values + np.roll(values, -1, axis))
    v = np.moveaxis(values, axis, 0)
    return np.moveaxis(0.5 * (v[:-1] + v[1:]), 0, axis)


def _along_face_diff(values, axis, h, topology):
    """Exact two-point difference across the faces of `axis`."""
    if topology == "periodic":
        return (np.roll(values, -1, axis) - values) / h
    return np.diff(values, axis=axis) / h


def face_gradients(grid, values, axis):
    """All gradient components of `values` on the faces of `axis`.

    Returns a list of arrays shaped like the face array: entry `axis` is the
    exact along-face difference, other entries are endpoint averages of the
    centered node differences.
    """
    comps = []
    for m in range(grid.dimension):
        if m == axis:
            comps.append(_along_face_diff(values, axis, grid.spacing[axis],
                                          grid.topology[axis]))
        else:
            d = _centered_axis_diff(values, m, grid.spacing[m], grid.topology[m])
            comps.append(_to_faces(d, axis, grid.topology[axis]))
    return comps


# ---------------------------------------------------------------------------
# divergence


def flux_divergence(vfield):
    """Nodal divergence of a face-centered vector field.

    Interior nodes receive the conservative difference of adjacent face
    values; nodes on a dirichlet boundary are set to 0.  On an all-periodic
    grid the output sums to zero against the cell volumes (telescoping).
    """
    if vfield.centering != "face":
        raise ValueError("flux_divergence needs a face-centered field")
    grid = vfield.grid
    return ScalarField(grid, _div_values(grid, vfield.components))


def _div_values(grid, face_comps):
    """flux_divergence on raw arrays (no VectorField wrapping)."""
    out = np.zeros(grid.shape)
    for ax in range(grid.dimension):
        V = face_comps[ax]
        h = grid.spacing[ax]
        if grid.topology[ax] == "periodic":
            out += (V - np.roll(V, 1, ax)) / h
        else:
            o = np.moveaxis(out, ax, 0)
            o[1:-1] += np.moveaxis(np.diff(V, axis=ax), ax, 0) / h
    out[grid.boundary_mask] = 0.0
    return out


# ---------------------------------------------------------------------------
# nonparametric operators


def _face_slope_data(grid, values, axis):
    """(gradient components, slope factor omega) on the faces of `axis`."""
    comps = face_gradients(grid, values, axis)
    sq = np.zeros(face_shape(grid, axis))
    for c in comps:
        sq += c * c
    omega = np.sqrt(1.0 + sq)
    return comps, omega


def mean_curvature_product_values(grid, values):
    comps = []
    for ax in range(grid.dimension):
        g, omega = _face_slope_data(grid, values, ax)
        comps.append(g[ax] / omega)
    return -_div_values(grid, comps)


def mean_curvature_product(field):
    """Mean curvature of the graph of `field` in the flat product metric.

    -div(Du/omega) with omega = sqrt(1+|Du|^2), assembled face-wise; the
    sign convention makes an upward bulge (a cap) positive.  Boundary nodes
    carry 0.
    """
    return ScalarField(field.grid, mean_curvature_product_values(field.grid, field.values))


def graph_laplacian(field, phi):
    """Laplace-Beltrami of `phi` along the graph of `field`.

    Flux form of (1/omega) d_i(omega g^{ij} d_j phi) with the induced-metric
    inverse g^{ij} = delta^{ij} - u_i u_j / omega^2 evaluated from face
    gradients of the graph function.  Boundary nodes carry 0.
    """
    if field.grid != phi.grid:
        raise ValueError("graph_laplacian operands are on different grids")
    grid = field.grid
    u = field.values
    comps = []
    for ax in range(grid.dimension):
        gu, omega = _face_slope_data(grid, u, ax)
        gphi = face_gradients(grid, phi.values, ax)
        inner = sum(gu[m] * gphi[m] for m in range(grid.dimension))
        flux = omega * (gphi[ax] - gu[ax] * inner / (omega * omega))
        comps.append(flux)
    div = _div_values(grid, comps)
    grads = node_gradients(grid, u)
    omega_node = np.sqrt(1.0 + sum(g * g for g in grads))
    out = div / omega_node
    out[grid.boundary_mask] = 0.0
    return ScalarField(grid, out)


# ---------------------------------------------------------------------------
# quadrature


def _axis_weights(grid, ax):
    w = np.full(grid.shape[ax], grid.spacing[ax])
    if grid.topology[ax] == "dirichlet":
        w[0] *= 0.5
        w[-1] *= 0.5
    return w


def quadrature_weights(grid):
    """Trapezoid tensor-product weights, shaped like the grid."""
    w = _axis_weights(grid, 0)
    if grid.dimension == 1:
        return w
    return np.outer(w, _axis_weights(grid, 1))


def integrate(field):
    """Trapezoid-rule integral of a field over the base domain."""
    return float(np.sum(quadrature_weights(field.grid) * field.values))
