"""Matrix-free finite-volume operators on mesh_fields.Field objects.

All operators use the Gauss (divergence) theorem on the uniform grid:
face values are central averages of the two adjacent cells on internal
faces and the field's own stored boundary values on boundary faces.
This is the discretization the full-order solver uses, and the Galerkin
module applies the very same functions to POD modes so that the reduced
operators are projections of the full-order ones.

Boundary derivative helpers (one-sided normal differences, tangential
differences along patch runs, linear extrapolation of cell scalars to
boundary faces) live here as well; they serve both the pressure Poisson
boundary condition of the solver and the boundary-curl reduced matrix.
"""

import numpy as np

from .mesh_fields import SIDE_NORMALS, ScalarField, VectorField


def _side_geometry(mesh, side):
    """(face area, center distance) for faces on the given side."""
    if side < 2:
        return mesh.dy, mesh.dx
    return mesh.dx, mesh.dy


def face_fluxes(u):
    """Outward volumetric flux per cell and side, shape (n_cells, 4).

    Internal faces use central interpolation; boundary faces use the
    field's stored boundary values. Shared faces appear twice with
    opposite signs, so the representation is conservative.
    """
    m = u.mesh
    vals = u.cell_values
    flux = np.zeros((m.n_cells, 4))
    for side in range(4):
        area, _ = _side_geometry(m, side)
        nb = m.nbr[:, side]
        has = nb >= 0
        uf = 0.5 * (vals[has] + vals[nb[has]])
        flux[has, side] = area * (uf @ SIDE_NORMALS[side])
    bvals = u.global_boundary_values()
    flux[m.bf_cell, m.bf_side] = m.bf_area * np.einsum(
        "fc,fc->f", bvals, SIDE_NORMALS[m.bf_side])
    return flux


def divergence(u):
    """Gauss divergence of a vector field -> ScalarField."""
    m = u.mesh
    out = face_fluxes(u).sum(axis=1) / m.cell_volumes
    return ScalarField(m, out)


def gradient(p):
    """Gauss gradient of a scalar field -> VectorField."""
    m = p.mesh
    vals = p.cell_values
    out = np.zeros((m.n_cells, 2))
    for side in range(4):
        area, _ = _side_geometry(m, side)
        nb = m.nbr[:, side]
        has = nb >= 0
        pf = 0.5 * (vals[has] + vals[nb[has]])
        out[has] += area * pf[:, None] * SIDE_NORMALS[side]
    bvals = p.global_boundary_values()
    np.add.at(out, m.bf_cell,
              (m.bf_area * bvals)[:, None] * SIDE_NORMALS[m.bf_side])
    return VectorField(m, out / m.cell_volumes[:, None])


def laplacian(f):
    """Compact FV Laplacian (scalar or vector field), using the field's
    boundary values through one-sided wall-distance differences."""
    m = f.mesh
    vals = f.cell_values
    out = np.zeros_like(vals)
    for side in range(4):
        area, delta = _side_geometry(m, side)
        nb = m.nbr[:, side]
        has = nb >= 0
        out[has] += (area / delta) * (vals[nb[has]] - vals[has])
    bvals = f.global_boundary_values()
    coef = m.bf_area / m.bf_dist
    contrib = (bvals - vals[m.bf_cell])
    if vals.ndim == 2:
        np.add.at(out, m.bf_cell, coef[:, None] * contrib)
        out = out / m.cell_volumes[:, None]
    else:
        np.add.at(out, m.bf_cell, coef * contrib)
        out = out / m.cell_volumes
    return type(f)(m, out)


def convection(flux, f, blend=1.0):
    """Divergence of (advecting flux x advected field f).

    flux is a (n_cells, 4) outward flux array (see face_fluxes). blend
    interpolates the advected face value between central (blend = 1)
    and first-order upwind (blend = 0); boundary faces always use the
    field's stored boundary values. Returns a field like f.
    """
    m = f.mesh
    vals = f.cell_values
    vec = vals.ndim == 2
    out = np.zeros_like(vals)
    for side in range(4):
        nb = m.nbr[:, side]
        has = nb >= 0
        fo, fn = vals[has], vals[nb[has]]
        central = 0.5 * (fo + fn)
        if blend < 1.0:
            fl = flux[has, side]
            up = np.where((fl >= 0.0)[:, None] if vec else (fl >= 0.0), fo, fn)
            ff = blend * central + (1.0 - blend) * up
        else:
            ff = central
        w = flux[has, side]
        out[has] += (w[:, None] * ff) if vec else (w * ff)
    bvals = f.global_boundary_values()
    w = flux[m.bf_cell, m.bf_side]
    np.add.at(out, m.bf_cell, (w[:, None] * bvals) if vec else (w * bvals))
    if vec:
        return type(f)(m, out / m.cell_volumes[:, None])
    return type(f)(m, out / m.cell_volumes)


def curl(u):
    """z-component of the curl of a vector field -> ScalarField.

    Gauss form: (1/V) sum over faces of area * (n x u_f)_z."""
    m = u.mesh
    vals = u.cell_values
    out = np.zeros(m.n_cells)
    for side in range(4):
        area, _ = _side_geometry(m, side)
        nb = m.nbr[:, side]
        has = nb >= 0
        uf = 0.5 * (vals[has] + vals[nb[has]])
        n = SIDE_NORMALS[side]
        out[has] += area * (n[0] * uf[:, 1] - n[1] * uf[:, 0])
    bvals = u.global_boundary_values()
    n = SIDE_NORMALS[m.bf_side]
    np.add.at(out, m.bf_cell,
              m.bf_area * (n[:, 0] * bvals[:, 1] - n[:, 1] * bvals[:, 0]))
    return ScalarField(m, out / m.cell_volumes)


# ------------------------------------------------- boundary-face helpers

def extrapolate_to_boundary(mesh, cell_scalar):
    """Linear one-sided extrapolation of a cell scalar to every boundary
    face: 1.5 v_P - 0.5 v_PP with PP the next cell inward, falling back
    to v_P where no second cell exists. Returns shape (n_bfaces,)."""
    v = np.asarray(cell_scalar, dtype=np.float64)
    cells = mesh.bf_cell
    inward = mesh.nbr[cells, mesh.bf_side ^ 1]   # opposite side neighbour
    vp = v[cells]
    vpp = np.where(inward >= 0, v[np.maximum(inward, 0)], vp)
    return 1.5 * vp - 0.5 * vpp


def boundary_tangential_derivative(mesh, face_values):
    """Derivative of per-boundary-face values along the boundary tangent
    t = z x n, using central differences where both tangential
    neighbours exist on the same side and one-sided differences at run
    ends. face_values has shape (n_bfaces,); returns the same shape."""
    v = np.asarray(face_values, dtype=np.float64)
    spacing = np.where(mesh.bf_side < 2, mesh.dy, mesh.dx)
    nxt, prv = mesh.bf_tnext, mesh.bf_tprev
    out = np.zeros(mesh.n_bfaces)
    both = (nxt >= 0) & (prv >= 0)
    out[both] = (v[nxt[both]] - v[prv[both]]) / (2.0 * spacing[both])
    only_n = (nxt >= 0) & (prv < 0)
    out[only_n] = (v[nxt[only_n]] - v[only_n.nonzero()[0]]) / spacing[only_n]
    only_p = (nxt < 0) & (prv >= 0)
    out[only_p] = (v[only_p.nonzero()[0]] - v[prv[only_p]]) / spacing[only_p]
    return out


def boundary_normal_gradient(mesh, field):
    """One-sided normal derivative (value_face - value_cell)/(d/2) per
    boundary face; shape (n_bfaces,) or (n_bfaces, 2)."""
    bvals = field.global_boundary_values()
    cv = field.cell_values[mesh.bf_cell]
    d = mesh.bf_dist
    if bvals.ndim == 2:
        return (bvals - cv) / d[:, None]
    return (bvals - cv) / d


def boundary_vorticity(u):
    """Vorticity at boundary faces: cell-centered Gauss curl linearly
    extrapolated to the faces (one-sided)."""
    return extrapolate_to_boundary(u.mesh, curl(u).cell_values)


def boundary_curl_normal_component(u):
    """n . (curl curl u) at boundary faces, which in 2D reduces to the
    tangential derivative of the vorticity along the boundary."""
    return boundary_tangential_derivative(u.mesh, boundary_vorticity(u))
