"""Structured 2D finite-volume meshes, boundary patches and cell fields.

The mesh is a uniform Cartesian grid of which a subset of cells may be
active (blocked-mask representation), so rectangular domains and the
T-junction live on one index space. Active cells are numbered compactly
0..n_cells-1; every side of an active cell is either an internal face
shared with an active neighbour or a boundary face owned by exactly one
named patch.

Unit depth is assumed in the third dimension, so cell "volumes" are
areas [m^2] and face "areas" are lengths [m]. Fields are cell-centered
(piecewise constant per cell) and additionally carry one value per
boundary face per patch; all inner products are volume/area weighted
discrete L2 products.

Side indexing used throughout: 0 = east (+x), 1 = west (-x),
2 = north (+y), 3 = south (-y).
"""

import hashlib

import numpy as np

SIDE_E, SIDE_W, SIDE_N, SIDE_S = 0, 1, 2, 3
SIDE_NORMALS = np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]])
# offset of the neighbouring cell across each side
SIDE_OFFSETS = np.array([[1, 0], [-1, 0], [0, 1], [0, -1]], dtype=np.int64)

DIRICHLET, WALL, OUTLET = "dirichlet", "wall", "outlet"


class BoundaryPatch:
    """Named set of boundary faces with outward normals and areas.

    kind is one of "dirichlet" (velocity-controlled), "wall" (no slip)
    or "outlet" (zero-gradient velocity, fixed pressure level).
    """

    def __init__(self, name, kind, face_ids, mesh):
        self.name = name
        self.kind = kind
        self.face_ids = np.asarray(face_ids, dtype=np.int64)
        self._mesh = mesh

    @property
    def n_faces(self):
        return self.face_ids.size

    @property
    def cells(self):
        return self._mesh.bf_cell[self.face_ids]

    @property
    def sides(self):
        return self._mesh.bf_side[self.face_ids]

    @property
    def normals(self):
        return SIDE_NORMALS[self.sides]

    @property
    def face_areas(self):
        return self._mesh.bf_area[self.face_ids]

    @property
    def face_centers(self):
        return self._mesh.bf_center[self.face_ids]


class StructuredMesh2D:
    """Uniform Cartesian grid with an active-cell mask and named patches.

    Construction is done by the build_* helpers; the constructor takes
    the bounding grid, the mask and a patch assignment function mapping
    each boundary face to a (name, kind) pair.
    """

    def __init__(self, nx, ny, dx, dy, active_mask, patch_of_face, origin=(0.0, 0.0)):
        self.nx = int(nx)
        self.ny = int(ny)
        self.dx = float(dx)
        self.dy = float(dy)
        self.origin = (float(origin[0]), float(origin[1]))
        mask = np.asarray(active_mask, dtype=bool)
        if mask.shape != (self.ny, self.nx):
            raise ValueError("active_mask must have shape (ny, nx)")
        if self.dx <= 0.0 or self.dy <= 0.0:
            raise ValueError("cell sizes must be strictly positive")
        self.active_mask = mask

        # compact numbering of active cells
        flat = mask.ravel()
        self.n_cells = int(flat.sum())
        if self.n_cells == 0:
            raise ValueError("mesh has no active cells")
        self.full2active = -np.ones(self.ny * self.nx, dtype=np.int64)
        self.full2active[flat] = np.arange(self.n_cells)
        act_flat = np.flatnonzero(flat)
        self.cell_iy, self.cell_ix = np.divmod(act_flat, self.nx)

        ox, oy = self.origin
        self.cell_centers = np.column_stack([
            ox + (self.cell_ix + 0.5) * self.dx,
            oy + (self.cell_iy + 0.5) * self.dy,
        ])
        self.cell_volumes = np.full(self.n_cells, self.dx * self.dy)

        # neighbour table: active index of the cell across each side, -1 at boundary
        self.nbr = -np.ones((self.n_cells, 4), dtype=np.int64)
        for side in range(4):
            jx = self.cell_ix + SIDE_OFFSETS[side, 0]
            jy = self.cell_iy + SIDE_OFFSETS[side, 1]
            inside = (jx >= 0) & (jx < self.nx) & (jy >= 0) & (jy < self.ny)
            idx = np.where(inside, jy * self.nx + jx, 0)
            nb = np.where(inside, self.full2active[idx], -1)
            self.nbr[:, side] = nb

        self._build_boundary_faces(patch_of_face)
        self._signature = None

    # -------------------------------------------------- boundary registry

    def _build_boundary_faces(self, patch_of_face):
        cells, sides = np.nonzero(self.nbr < 0)
        self.n_bfaces = cells.size
        self.bf_cell = cells.astype(np.int64)
        self.bf_side = sides.astype(np.int64)
        self.bf_area = np.where(sides < 2, self.dy, self.dx)
        ox, oy = self.origin
        cx = ox + (self.cell_ix[cells] + 0.5) * self.dx
        cy = oy + (self.cell_iy[cells] + 0.5) * self.dy
        nx_, ny_ = SIDE_NORMALS[sides, 0], SIDE_NORMALS[sides, 1]
        self.bf_center = np.column_stack([cx + 0.5 * self.dx * nx_,
                                          cy + 0.5 * self.dy * ny_])
        # distance from cell center to the face
        self.bf_dist = np.where(sides < 2, 0.5 * self.dx, 0.5 * self.dy)

        # map (cell, side) -> global boundary face id for tangential lookups
        key = self.bf_cell * 4 + self.bf_side
        face_of = dict(zip(key.tolist(), range(self.n_bfaces)))

        # tangential neighbours along the boundary: t_hat = z_hat x n
        # side E: t=( 0, 1)   side W: t=(0,-1)   side N: t=(-1,0)   side S: t=(1,0)
        tang = {SIDE_E: (0, 1), SIDE_W: (0, -1), SIDE_N: (-1, 0), SIDE_S: (1, 0)}
        self.bf_tnext = -np.ones(self.n_bfaces, dtype=np.int64)
        self.bf_tprev = -np.ones(self.n_bfaces, dtype=np.int64)
        for f in range(self.n_bfaces):
            c, s = self.bf_cell[f], self.bf_side[f]
            tx, ty = tang[int(s)]
            for sign_, store in ((1, self.bf_tnext), (-1, self.bf_tprev)):
                jx = self.cell_ix[c] + sign_ * tx
                jy = self.cell_iy[c] + sign_ * ty
                if 0 <= jx < self.nx and 0 <= jy < self.ny:
                    nb = self.full2active[jy * self.nx + jx]
                    if nb >= 0:
                        g = face_of.get(int(nb) * 4 + int(s))
                        if g is not None:
                            store[f] = g

        # patch assignment: every boundary face must land in exactly one patch
        names, kinds, members = [], {}, {}
        for f in range(self.n_bfaces):
            name, kind = patch_of_face(self, f)
            if name not in members:
                names.append(name)
                kinds[name] = kind
                members[name] = []
            elif kinds[name] != kind:
                raise ValueError(f"patch {name!r} assigned conflicting kinds")
            members[name].append(f)
        self.patches = [BoundaryPatch(n, kinds[n], members[n], self) for n in names]
        self._patch_by_name = {p.name: p for p in self.patches}
        self.bf_patch = np.empty(self.n_bfaces, dtype=np.int64)
        for ip, p in enumerate(self.patches):
            self.bf_patch[p.face_ids] = ip

    # -------------------------------------------------- lookups

    def patch(self, name):
        try:
            return self._patch_by_name[name]
        except KeyError:
            raise ValueError(f"mesh has no patch named {name!r}") from None

    @property
    def patch_names(self):
        return [p.name for p in self.patches]

    def dirichlet_patches(self):
        return [p for p in self.patches if p.kind == DIRICHLET]

    def signature(self):
        """Stable content hash used to detect mesh mismatches."""
        if self._signature is None:
            h = hashlib.sha256()
            h.update(np.array([self.nx, self.ny], dtype=np.int64).tobytes())
            h.update(np.array([self.dx, self.dy, *self.origin]).tobytes())
            h.update(np.packbits(self.active_mask).tobytes())
            for p in self.patches:
                h.update(p.name.encode())
                h.update(p.kind.encode())
                h.update(p.face_ids.tobytes())
            self._signature = h.hexdigest()
        return self._signature

    def same_mesh(self, other):
        return self is other or self.signature() == other.signature()


# -------------------------------------------------------------- builders

def build_cavity_mesh(n, L):
    """Uniform n x n cavity of side length L with patches "lid" (top)
    and "walls" (the other three sides)."""
    n = int(n)
    if n < 4:
        raise ValueError("cavity mesh requires n >= 4")
    if L <= 0.0:
        raise ValueError("cavity side length must be positive")
    h = float(L) / n
    mask = np.ones((n, n), dtype=bool)

    def patch_of_face(mesh, f):
        if mesh.bf_side[f] == SIDE_N:
            return "lid", DIRICHLET
        return "walls", WALL

    return StructuredMesh2D(n, n, h, h, mask, patch_of_face)


def build_tjunction_mesh(nw, nl, h=None):
    """Blocked grid shaped like a T: a horizontal bar carrying the two
    inlet arms and a vertical stem carrying the outlet.

    nw: channel width in cells (each inlet is nw cells wide),
    nl: arm length in cells. The bar spans 2*nl cells horizontally and
    nw vertically; the stem is 2*nw cells wide and nl//2 tall, centered,
    opening downward ("outlet"). Patches: "inlet1" (left edge),
    "inlet2" (right edge), "outlet" (bottom edge), "walls" (the rest).
    h is the cell size [m]; default makes the inlet width nw*h = 0.5 m.
    """
    nw, nl = int(nw), int(nl)
    if nw < 4:
        raise ValueError("t-junction requires nw >= 4")
    if nl < nw:
        raise ValueError("t-junction requires nl >= nw (arms would overlap)")
    if nl // 2 < 1:
        raise ValueError("t-junction stem has zero height")
    if h is None:
        h = 0.5 / nw
    h = float(h)

    nx, ny = 2 * nl, nw + nl // 2
    stem_h = nl // 2
    mask = np.zeros((ny, nx), dtype=bool)
    mask[stem_h:stem_h + nw, :] = True              # horizontal bar
    mask[:stem_h, nl - nw:nl + nw] = True           # stem (outlet arm)

    def patch_of_face(mesh, f):
        c, s = mesh.bf_cell[f], mesh.bf_side[f]
        ix, iy = mesh.cell_ix[c], mesh.cell_iy[c]
        if s == SIDE_W and ix == 0:
            return "inlet1", DIRICHLET
        if s == SIDE_E and ix == nx - 1:
            return "inlet2", DIRICHLET
        if s == SIDE_S and iy == 0:
            return "outlet", OUTLET
        return "walls", WALL

    return StructuredMesh2D(nx, ny, h, h, mask, patch_of_face)


# -------------------------------------------------------------- fields

class Field:
    """Cell-centered field with per-patch boundary-face values.

    cell_values has shape (n_cells,) for scalars or (n_cells, 2) for
    vectors; boundary_values maps patch name -> array of matching
    trailing shape with one row per patch face.
    """

    ncomp = None

    def __init__(self, mesh, cell_values, boundary_values=None, time_stamp=None):
        self.mesh = mesh
        vals = np.asarray(cell_values, dtype=np.float64)
        if self.ncomp == 1:
            vals = vals.reshape(mesh.n_cells)
        else:
            vals = vals.reshape(mesh.n_cells, 2)
        self.cell_values = vals
        self.time_stamp = time_stamp
        bshape = (lambda nf: (nf,) if self.ncomp == 1 else (nf, 2))
        self.boundary_values = {}
        for p in mesh.patches:
            self.boundary_values[p.name] = np.zeros(bshape(p.n_faces))
        if boundary_values is not None:
            for name, arr in boundary_values.items():
                arr = np.asarray(arr, dtype=np.float64)
                want = bshape(mesh.patch(name).n_faces)
                if arr.shape != want:
                    raise ValueError(
                        f"boundary values for patch {name!r} have shape "
                        f"{arr.shape}, expected {want}")
                self.boundary_values[name] = arr.copy()

    @classmethod
    def zeros(cls, mesh, time_stamp=None):
        shape = (mesh.n_cells,) if cls.ncomp == 1 else (mesh.n_cells, 2)
        return cls(mesh, np.zeros(shape), time_stamp=time_stamp)

    def copy(self):
        out = type(self)(self.mesh, self.cell_values.copy(),
                         time_stamp=self.time_stamp)
        for name, arr in self.boundary_values.items():
            out.boundary_values[name] = arr.copy()
        return out

    def global_boundary_values(self):
        """Boundary values collected over the global face registry."""
        m = self.mesh
        shape = (m.n_bfaces,) if self.ncomp == 1 else (m.n_bfaces, 2)
        out = np.empty(shape)
        for p in m.patches:
            out[p.face_ids] = self.boundary_values[p.name]
        return out

    def set_global_boundary_values(self, values):
        m = self.mesh
        for p in m.patches:
            self.boundary_values[p.name] = np.array(values[p.face_ids])

    # linear arithmetic (combines boundary values as well, so that modes
    # built from snapshots inherit their boundary data)
    def _binary(self, other, op):
        if not isinstance(other, Field) or other.ncomp != self.ncomp:
            return NotImplemented
        if not self.mesh.same_mesh(other.mesh):
            raise ValueError("fields live on different meshes")
        out = type(self)(self.mesh, op(self.cell_values, other.cell_values))
        for name in self.boundary_values:
            out.boundary_values[name] = op(self.boundary_values[name],
                                           other.boundary_values[name])
        return out

    def __add__(self, other):
        return self._binary(other, np.add)

    def __sub__(self, other):
        return self._binary(other, np.subtract)

    def __mul__(self, a):
        a = float(a)
        out = type(self)(self.mesh, self.cell_values * a)
        for name in self.boundary_values:
            out.boundary_values[name] = self.boundary_values[name] * a
        return out

    __rmul__ = __mul__

    def __neg__(self):
        return self * -1.0


class ScalarField(Field):
    ncomp = 1


class VectorField(Field):
    ncomp = 2

    def component(self, c):
        """One velocity component as a ScalarField (boundary values kept)."""
        out = ScalarField(self.mesh, self.cell_values[:, c])
        for name, arr in self.boundary_values.items():
            out.boundary_values[name] = arr[:, c].copy()
        return out


def _check_compatible(a, b):
    if a.ncomp != b.ncomp:
        raise ValueError("fields have different component counts")
    if not a.mesh.same_mesh(b.mesh):
        raise ValueError("fields live on different meshes")


def inner_product(a, b):
    """Discrete L2 inner product over the domain: sum of (a . b) * volume."""
    _check_compatible(a, b)
    if a.ncomp == 1:
        return float(np.dot(a.cell_values * a.mesh.cell_volumes, b.cell_values))
    prod = np.einsum("ic,ic->i", a.cell_values, b.cell_values)
    return float(np.dot(prod, a.mesh.cell_volumes))


def l2_norm(a):
    return float(np.sqrt(max(inner_product(a, a), 0.0)))


def boundary_inner_product(a, b, patch):
    """Discrete L2 inner product over one patch: sum of (a . b) * face area."""
    _check_compatible(a, b)
    if isinstance(patch, BoundaryPatch):
        patch = patch.name
    p = a.mesh.patch(patch)
    va, vb = a.boundary_values[p.name], b.boundary_values[p.name]
    if a.ncomp == 1:
        return float(np.dot(va * p.face_areas, vb))
    return float(np.dot(np.einsum("fc,fc->f", va, vb), p.face_areas))
