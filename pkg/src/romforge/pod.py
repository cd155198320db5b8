"""Proper orthogonal decomposition of snapshot ensembles.

The decomposition works with the snapshot correlation matrix
C_ij = (u_i, u_j) in the volume-weighted L2 inner product (no 1/N
prefactor; the eigenvalue sum then equals the total snapshot energy
sum_i ||u_i||^2, which the tests rely on). Modes are linear
combinations of the snapshots scaled by 1/sqrt(lambda_k) and then
renormalized explicitly to unit L2 norm, removing the residual
round-off of the eigensolve and any correlation-scaling convention.
Because modes are snapshot combinations, their boundary values are the
same combinations of the snapshot boundary values, so boundary
integrals of the reduced operators stay consistent with the full-order
fields.

Inhomogeneous velocity Dirichlet boundaries are handled by lifting:
each controlled patch gets one unit-norm divergence-free lifting field
whose scaled multiples carry the boundary data, the snapshots are
homogenized by subtracting the scaled liftings, and the POD runs on
the homogenized ensemble. The extended basis stores the liftings ahead
of the POD modes. The multiplier reproducing a physical boundary
vector g is not g itself (normalization changed the boundary trace);
each lifting stores its own mean boundary vector and converts via a
least-squares match, exact when g is parallel to the generating
boundary vector.
"""

import numpy as np

from .mesh_fields import ScalarField, VectorField, inner_product, l2_norm

#: eigenvalues below this fraction of the leading one count as zero rank
RANK_RTOL = 1e-12


class LiftingFunction:
    """Unit-norm velocity field carrying the Dirichlet data of one patch.

    The raw field (typically a potential-flow or steady solution at
    unit boundary velocity) is normalized to unit L2 norm; `scale`
    keeps the pre-normalization norm. `coefficient(g)` returns the
    multiplier c such that c * field matches the boundary vector g on
    the patch in the least-squares sense.
    """

    def __init__(self, field, patch_name):
        if field.ncomp != 2:
            raise ValueError("lifting functions are velocity fields")
        patch = field.mesh.patch(patch_name)    # raises for unknown names
        nrm = l2_norm(field)
        if nrm <= 1e-14:
            raise ValueError(
                f"cannot normalize lifting for patch {patch_name!r}: "
                f"field norm {nrm:.3g} is numerically zero")
        self.field = field * (1.0 / nrm)
        self.scale = nrm
        self.patch_name = patch_name
        bv = self.field.boundary_values[patch_name]
        w = patch.face_areas / patch.face_areas.sum()
        self.boundary_vector = np.einsum("f,fc->c", w, bv)
        s2 = float(self.boundary_vector @ self.boundary_vector)
        if s2 <= 1e-28:
            raise ValueError(
                f"lifting for patch {patch_name!r} has zero boundary trace")
        self._s2 = s2

    def coefficient(self, g):
        """Multiplier matching boundary data g ((2,) or (n, 2))."""
        g = np.asarray(g, dtype=np.float64)
        return g @ self.boundary_vector / self._s2


def normalize_lifting(field):
    """The field scaled to unit L2 norm; rejects zero-norm input."""
    nrm = l2_norm(field)
    if nrm <= 1e-14:
        raise ValueError(f"field norm {nrm:.3g} is numerically zero")
    return field * (1.0 / nrm)


class PodBasis:
    """Ordered mode list, optionally prefixed by lifting functions.

    modes[i] for i < n_lift are the (unit-norm) lifting fields; the
    rest are POD modes. eigenvalues is the full descending snapshot
    spectrum of the decomposition the POD modes came from, independent
    of how many modes were kept.
    """

    def __init__(self, mesh, modes, eigenvalues, liftings=None,
                 component_tag="velocity"):
        self.mesh = mesh
        self.liftings = list(liftings) if liftings else []
        self.modes = [lf.field for lf in self.liftings] + list(modes)
        self.eigenvalues = np.asarray(eigenvalues, dtype=np.float64)
        self.component_tag = component_tag

    @property
    def n_lift(self):
        return len(self.liftings)

    @property
    def n_modes(self):
        return len(self.modes)

    @property
    def pod_modes(self):
        return self.modes[self.n_lift:]


def extend_basis_with_lifting(basis, liftings):
    """New basis with the lifting fields prepended (their coefficients
    carry the boundary data during time integration)."""
    if basis.n_lift:
        raise ValueError("basis already carries lifting functions")
    return PodBasis(basis.mesh, basis.pod_modes, basis.eigenvalues,
                    liftings=liftings, component_tag=basis.component_tag)


class CoefficientTrajectory:
    """Reduced coefficients over time: a (velocity), b (pressure), and
    the reconstructed boundary values per controlled patch."""

    def __init__(self, times, a, b=None, u_bc=None, wall_time=None):
        self.times = np.asarray(times, dtype=np.float64)
        self.a = np.asarray(a, dtype=np.float64)
        if self.a.ndim != 2 or self.a.shape[0] != self.times.size:
            raise ValueError("coefficient array must be (n_times, n_modes)")
        self.b = None if b is None else np.asarray(b, dtype=np.float64)
        if self.b is not None and self.b.shape[0] != self.times.size:
            raise ValueError("pressure coefficients disagree with times")
        self.u_bc = {} if u_bc is None else {
            k: np.asarray(v, dtype=np.float64) for k, v in u_bc.items()}
        for k, v in self.u_bc.items():
            if v.shape != (self.times.size, 2):
                raise ValueError(f"boundary trace for {k!r} must be "
                                 f"(n_times, 2)")
        self.wall_time = wall_time

    def __len__(self):
        return self.times.size


def _stack(fields):
    """Cell and global-boundary value arrays of the ensemble, plus the
    square-rooted volume weights for exact Gram symmetry."""
    mesh = fields[0].mesh
    ncomp = fields[0].ncomp
    for f in fields[1:]:
        if not mesh.same_mesh(f.mesh) or f.ncomp != ncomp:
            raise ValueError("snapshot ensemble mixes meshes or field kinds")
    cells = np.stack([f.cell_values.reshape(-1) for f in fields], axis=1)
    bnd = np.stack([f.global_boundary_values().reshape(-1) for f in fields],
                   axis=1)
    w = np.sqrt(np.repeat(mesh.cell_volumes, ncomp))
    return mesh, ncomp, cells, bnd, w


def correlation_matrix(fields):
    """Snapshot Gram matrix C_ij = (u_i, u_j), exactly symmetric."""
    if not fields:
        raise ValueError("need at least one snapshot")
    _, _, cells, _, w = _stack(fields)
    Y = cells * w[:, None]
    return Y.T @ Y


def _make_field(mesh, ncomp, cell_col, bnd_col):
    if ncomp == 1:
        f = ScalarField(mesh, cell_col)
        f.set_global_boundary_values(bnd_col)
    else:
        f = VectorField(mesh, cell_col.reshape(-1, 2))
        f.set_global_boundary_values(bnd_col.reshape(-1, 2))
    return f


def compute_pod(fields, n_modes, component_tag=None):
    """POD basis of the ensemble with the leading n_modes modes.

    Rejects n_modes beyond the numerical rank (eigenvalues above
    RANK_RTOL times the leading one), reporting the achievable rank.
    Mode signs follow the convention that the cell entry of largest
    magnitude is positive.
    """
    if n_modes < 1:
        raise ValueError("n_modes must be at least 1")
    if not fields:
        raise ValueError("need at least one snapshot")
    mesh, ncomp, cells, bnd, w = _stack(fields)
    if component_tag is None:
        component_tag = "velocity" if ncomp == 2 else "pressure"
    Y = cells * w[:, None]
    C = Y.T @ Y
    lam, Q = np.linalg.eigh(C)
    lam = lam[::-1].copy()
    Q = Q[:, ::-1].copy()
    np.clip(lam, 0.0, None, out=lam)
    rank = int(np.count_nonzero(lam > RANK_RTOL * lam[0])) if lam[0] > 0.0 \
        else 0
    if n_modes > rank:
        raise ValueError(
            f"requested {n_modes} modes but the snapshot ensemble has "
            f"numerical rank {rank}")
    coeff = Q[:, :n_modes] / (len(fields) * np.sqrt(lam[:n_modes]))
    mode_cells = cells @ coeff
    mode_bnd = bnd @ coeff
    modes = []
    for k in range(n_modes):
        f = _make_field(mesh, ncomp, mode_cells[:, k], mode_bnd[:, k])
        f = f * (1.0 / l2_norm(f))
        peak = f.cell_values.flat[np.argmax(np.abs(f.cell_values))]
        if peak < 0.0:
            f = -f
        modes.append(f)
    return PodBasis(mesh, modes, lam, component_tag=component_tag)


def cumulative_energy(eigenvalues):
    """Fractions of snapshot energy captured by the leading k modes,
    for every k (non-decreasing, ending at 1)."""
    lam = np.asarray(eigenvalues, dtype=np.float64)
    total = lam.sum()
    if total <= 0.0:
        raise ValueError("eigenvalue spectrum carries no energy")
    return np.cumsum(lam) / total


def _trace_from(snapshots, liftings, bc_trace):
    if bc_trace is None:
        if not hasattr(snapshots, "bc_trace"):
            raise ValueError("bc_trace is required when passing a bare "
                             "field list")
        bc_trace = snapshots.bc_trace
    missing = {lf.patch_name for lf in liftings} - set(bc_trace)
    if missing:
        raise ValueError(f"boundary trace missing patches: {sorted(missing)}")
    return bc_trace


def homogenize_snapshots(snapshots, liftings, bc_trace=None):
    """Subtract the scaled lifting fields from every velocity snapshot.

    snapshots is a SnapshotSet (whose recorded bc_trace is used unless
    one is passed explicitly) or a bare list of velocity fields with an
    explicit bc_trace. Returns (fields, coeffs) where coeffs[n, j] is
    the multiplier of lifting j at snapshot n; the homogenized fields
    carry (numerically) zero boundary values on the controlled patches.
    """
    fields_in = snapshots.velocity_fields \
        if hasattr(snapshots, "velocity_fields") else list(snapshots)
    bc_trace = _trace_from(snapshots, liftings, bc_trace)
    n_snap = len(fields_in)
    for lf in liftings:
        if len(bc_trace[lf.patch_name]) != n_snap:
            raise ValueError("boundary trace length disagrees with the "
                             "snapshot count")
    if liftings:
        coeffs = np.column_stack([
            np.atleast_1d(lf.coefficient(np.asarray(bc_trace[lf.patch_name])))
            for lf in liftings])
    else:
        coeffs = np.zeros((n_snap, 0))
    fields = []
    for n, u in enumerate(fields_in):
        h = u.copy()
        for j, lf in enumerate(liftings):
            h = h - coeffs[n, j] * lf.field
        fields.append(h)
    return fields, coeffs


def project_field(field, basis):
    """Coefficients a_i = (phi_i, field) over all basis modes.

    For a basis with liftings the caller must pass the already
    homogenized field; the lifting coefficients are boundary data, not
    L2 projections.
    """
    return np.array([inner_product(m, field) for m in basis.modes])


def reconstruct(basis, coeffs, u_bc=None):
    """Linear combination of the basis modes as a Field.

    Either coeffs covers every mode (liftings included), or u_bc maps
    each lifting patch to its multiplier (the LiftingFunction
    coefficient of the scheduled boundary vector) and coeffs covers the
    POD modes only.
    """
    coeffs = np.asarray(coeffs, dtype=np.float64)
    if u_bc is not None:
        lead = np.array([u_bc[lf.patch_name] for lf in basis.liftings])
        coeffs = np.concatenate([lead, coeffs])
    if coeffs.size != basis.n_modes:
        raise ValueError(f"expected {basis.n_modes} coefficients, "
                         f"got {coeffs.size}")
    out = basis.modes[0] * coeffs[0]
    for c, m in zip(coeffs[1:], basis.modes[1:]):
        out = out + c * m
    return out


def project_snapshots(basis, snapshots, pressure=False):
    """Optimal reduced coefficients of every snapshot in the basis.

    Lifting coefficients come from the recorded BC trace (exact
    boundary enforcement); POD-mode coefficients are L2 projections of
    the homogenized fields. With pressure=True the snapshots' pressure
    fields are projected instead (no lifting in that case).
    """
    fields = snapshots.pressure_fields if pressure \
        else snapshots.velocity_fields
    if pressure or not basis.liftings:
        coeffs = np.array([[inner_product(m, f) for m in basis.modes]
                           for f in fields])
        return CoefficientTrajectory(snapshots.times, coeffs)
    homog, lift_coeffs = homogenize_snapshots(snapshots, basis.liftings)
    pod_coeffs = np.array([[inner_product(m, f) for m in basis.pod_modes]
                           for f in homog])
    return CoefficientTrajectory(snapshots.times,
                                 np.hstack([lift_coeffs, pod_coeffs]))
