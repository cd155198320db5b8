"""Galerkin projection of the flow equations onto POD bases.

With velocity modes phi_i (lifting fields first, when present) and
pressure modes chi_i, the reduced momentum system is

    M da/dt + C(a) a - nu A a + B b = 0,

and the reduced pressure Poisson equation closing it is

    D b + G(a) a - nu N a - T da/dt = 0,

with

    M_ij  = (phi_i, phi_j)               mass
    A_ij  = (phi_i, lap phi_j)           diffusion
    B_ij  = (phi_i, grad chi_j)          pressure gradient
    C_ijk = (phi_i, div(phi_j x phi_k))  convection (j convecting)
    D_ij  = (grad chi_i, grad chi_j)     pressure stiffness
    G_ijk = (grad chi_i, div(phi_j x phi_k))
    N_ij  = (n x grad chi_i, curl phi_j)_Gamma
    T_ij  = (chi_i, n . phi_j)_Gamma

Every projection applies the discrete full-order operators to the
modes (matrix-free) and takes inner products, so the reduced operators
are exact projections of the full-order ones; convection uses pure
central interpolation to keep the tensors bilinear in their arguments.
The boundary matrices use the stored boundary values of the modes and
integrate over the whole boundary; they vanish identically on patches
whose mode values are zero (walls for T, the fixed-level outlet for
both). In 2D the integrand of N is the tangential boundary derivative
of chi_i times the boundary vorticity of phi_j, the latter from
one-sided extrapolation of the cell curl.

Penalty boundary enforcement adds, per controlled patch l and velocity
component c, the Gram matrix and moment vector of the mode boundary
values over that patch:

    P1[l,c]_ij = (phi_i^c, phi_j^c)_{L2(Gamma_l)}
    P2[l,c]_i  = (phi_i^c, 1)_{L2(Gamma_l)}
"""

import numpy as np

from . import operators as ops
from .mesh_fields import SIDE_NORMALS, inner_product

#: default cap on the basis size for dense tensor assembly (N^3 storage)
MAX_TENSOR_MODES = 50


def _check_bases(velocity_basis, pressure_basis=None, mesh=None):
    if mesh is not None and not velocity_basis.mesh.same_mesh(mesh):
        raise ValueError("velocity basis does not live on the given mesh")
    for m in velocity_basis.modes:
        if m.ncomp != 2:
            raise ValueError("velocity basis contains a non-vector mode")
    if pressure_basis is not None:
        if not velocity_basis.mesh.same_mesh(pressure_basis.mesh):
            raise ValueError("velocity and pressure bases live on "
                             "different meshes")
        for m in pressure_basis.modes:
            if m.ncomp != 1:
                raise ValueError("pressure basis contains a non-scalar mode")


def assemble_momentum(basis_u, basis_p, mesh, nu):
    """Mass, diffusion and pressure-gradient matrices (M, A, B).

    A excludes the viscosity factor (it multiplies A in the reduced
    equation); nu is accepted for interface symmetry and validation
    only.
    """
    if nu <= 0.0:
        raise ValueError("viscosity must be positive")
    _check_bases(basis_u, basis_p, mesh)
    phis = basis_u.modes
    chis = basis_p.modes
    ru, rp = len(phis), len(chis)
    M = np.empty((ru, ru))
    A = np.empty((ru, ru))
    laps = [ops.laplacian(p) for p in phis]
    for j in range(ru):
        for i in range(ru):
            M[i, j] = inner_product(phis[i], phis[j])
            A[i, j] = inner_product(phis[i], laps[j])
    B = np.empty((ru, rp))
    for j, chi in enumerate(chis):
        g = ops.gradient(chi)
        for i in range(ru):
            B[i, j] = inner_product(phis[i], g)
    return M, A, B


def assemble_convective_tensor(basis_u, mesh, test_fields=None,
                               cap=MAX_TENSOR_MODES):
    """Third-order tensor T_ijk = (w_i, div(phi_j x phi_k)).

    The test fields w_i default to the velocity modes themselves
    (giving the momentum tensor C); passing pressure-mode gradients
    gives the PPE tensor G. Index j is the convecting field. Dense
    storage grows with the cube of the mode count, so cap guards it.
    """
    _check_bases(basis_u, mesh=mesh)
    phis = basis_u.modes
    if test_fields is None:
        test_fields = phis
    r = len(phis)
    if r > cap:
        raise ValueError(
            f"refusing to assemble a dense {r}^3 convective tensor "
            f"(cap {cap} modes)")
    out = np.empty((len(test_fields), r, r))
    for j in range(r):
        flux = ops.face_fluxes(phis[j])
        for k in range(r):
            dconv = ops.convection(flux, phis[k], blend=1.0)
            for i, wf in enumerate(test_fields):
                out[i, j, k] = inner_product(wf, dconv)
    return out


def assemble_ppe(basis_u, basis_p, mesh, nu, cap=MAX_TENSOR_MODES):
    """PPE matrices (D, G, N_mat, T_mat) for the pressure closure."""
    if nu <= 0.0:
        raise ValueError("viscosity must be positive")
    _check_bases(basis_u, basis_p, mesh)
    phis = basis_u.modes
    chis = basis_p.modes
    ru, rp = len(phis), len(chis)

    grads = [ops.gradient(chi) for chi in chis]
    D = np.empty((rp, rp))
    for j in range(rp):
        for i in range(rp):
            D[i, j] = inner_product(grads[i], grads[j])
    G = assemble_convective_tensor(basis_u, mesh, test_fields=grads, cap=cap)

    areas = mesh.bf_area
    normals = SIDE_NORMALS[mesh.bf_side]
    chi_bnd = [chi.global_boundary_values() for chi in chis]
    dchi_dt = [ops.boundary_tangential_derivative(mesh, cb)
               for cb in chi_bnd]
    omega_bnd = [ops.boundary_vorticity(phi) for phi in phis]
    phi_bnd = [phi.global_boundary_values() for phi in phis]

    N_mat = np.empty((rp, ru))
    T_mat = np.empty((rp, ru))
    for j in range(ru):
        un = np.einsum("fc,fc->f", phi_bnd[j], normals)
        for i in range(rp):
            N_mat[i, j] = float(np.sum(areas * dchi_dt[i] * omega_bnd[j]))
            T_mat[i, j] = float(np.sum(areas * chi_bnd[i] * un))
    return D, G, N_mat, T_mat


def assemble_penalty(basis_u, patch_names):
    """Boundary Gram matrices and moment vectors for penalty control.

    Returns (P1, P2) with shapes (n_patches, 2, r, r) and
    (n_patches, 2, r), ordered like patch_names; the per-component
    split mirrors the per-direction penalty factors.
    """
    _check_bases(basis_u)
    mesh = basis_u.mesh
    phis = basis_u.modes
    r = len(phis)
    P1 = np.zeros((len(patch_names), 2, r, r))
    P2 = np.zeros((len(patch_names), 2, r))
    for l, name in enumerate(patch_names):
        patch = mesh.patch(name)
        a = patch.face_areas
        vals = np.stack([phi.boundary_values[name] for phi in phis])
        for c in range(2):
            V = vals[:, :, c]                       # (r, n_faces)
            P1[l, c] = (V * a) @ V.T
            P2[l, c] = V @ a
    return P1, P2


def _patch_boundary_means(basis_u, patch_names):
    """Area-weighted mean boundary vector of every mode on every named
    patch, shape (n_patches, 2, r)."""
    mesh = basis_u.mesh
    out = np.zeros((len(patch_names), 2, basis_u.n_modes))
    for l, name in enumerate(patch_names):
        patch = mesh.patch(name)
        w = patch.face_areas / patch.face_areas.sum()
        for i, phi in enumerate(basis_u.modes):
            out[l, :, i] = np.einsum("f,fc->c", w,
                                     phi.boundary_values[name])
    return out


class ReducedSystem:
    """All reduced operators plus the metadata needed to run them.

    Penalty blocks are None unless assembled. Lifting bookkeeping
    (n_lift, lifting_patches, lifting_boundary_vectors) mirrors the
    velocity basis so time integration can pin the lifting coefficients
    to the boundary schedule without the basis at hand; boundary_means
    holds the modes' mean boundary vectors on every controlled patch
    for boundary-value reconstruction, and penalty_face_values the
    per-face mode traces for the max-residual tuning variant.
    """

    def __init__(self, nu, M, A, B, C, D, G, N_mat, T_mat,
                 n_lift=0, lifting_patches=(), lifting_boundary_vectors=None,
                 P1=None, P2=None, penalty_patches=(), penalty_patch_areas=None,
                 boundary_means=None, penalty_face_values=None,
                 mesh_signature="", lineage=None):
        self.nu = float(nu)
        self.M, self.A, self.B, self.C = M, A, B, C
        self.D, self.G = D, G
        self.N_mat, self.T_mat = N_mat, T_mat
        self.n_lift = int(n_lift)
        self.lifting_patches = tuple(lifting_patches)
        if lifting_boundary_vectors is None:
            lifting_boundary_vectors = np.zeros((self.n_lift, 2))
        self.lifting_boundary_vectors = np.asarray(lifting_boundary_vectors,
                                                   dtype=np.float64)
        self.P1, self.P2 = P1, P2
        self.penalty_patches = tuple(penalty_patches)
        if penalty_patch_areas is None:
            penalty_patch_areas = np.zeros(len(self.penalty_patches))
        self.penalty_patch_areas = np.asarray(penalty_patch_areas,
                                              dtype=np.float64)
        if boundary_means is None:
            boundary_means = np.zeros((len(self.controlled_patches), 2,
                                       self.M.shape[0]))
        self.boundary_means = np.asarray(boundary_means, dtype=np.float64)
        self.penalty_face_values = None if penalty_face_values is None \
            else [np.asarray(v, dtype=np.float64) for v in penalty_face_values]
        self.mesh_signature = mesh_signature
        self.lineage = dict(lineage or {})
        self._validate()

    def _validate(self):
        ru, rp = self.r_u, self.r_p
        expect = {"M": (ru, ru), "A": (ru, ru), "B": (ru, rp),
                  "C": (ru, ru, ru), "D": (rp, rp), "G": (rp, ru, ru),
                  "N_mat": (rp, ru), "T_mat": (rp, ru)}
        for name, shape in expect.items():
            arr = getattr(self, name)
            if arr.shape != shape:
                raise ValueError(f"operator {name} has shape {arr.shape}, "
                                 f"expected {shape}")
        if self.lifting_boundary_vectors.shape != (self.n_lift, 2):
            raise ValueError("lifting boundary vectors disagree with "
                             "the lifting count")
        if (self.P1 is None) != (self.P2 is None):
            raise ValueError("penalty blocks must come as a pair")
        if self.P1 is not None:
            npat = len(self.penalty_patches)
            if self.P1.shape != (npat, 2, ru, ru) or \
                    self.P2.shape != (npat, 2, ru):
                raise ValueError("penalty blocks disagree with basis size")
            if self.penalty_patch_areas.shape != (npat,):
                raise ValueError("penalty patch areas disagree with "
                                 "the patch count")
        if self.boundary_means.shape != (len(self.controlled_patches), 2, ru):
            raise ValueError("boundary means disagree with the controlled "
                             "patch count")

    @property
    def r_u(self):
        return self.M.shape[0]

    @property
    def r_p(self):
        return self.D.shape[0]

    @property
    def has_penalty(self):
        return self.P1 is not None

    @property
    def controlled_patches(self):
        """Patches whose boundary values the ROM enforces, lifting
        patches first."""
        return self.lifting_patches + self.penalty_patches


def build_reduced_system(basis_u, basis_p, nu, penalty_patches=(),
                         lineage=None, cap=MAX_TENSOR_MODES):
    """Assemble every reduced operator for the given bases.

    penalty_patches selects the Dirichlet patches that get penalty
    blocks (empty for the lifting method); lifting bookkeeping comes
    from the velocity basis.
    """
    mesh = basis_u.mesh
    penalty_patches = tuple(penalty_patches)
    M, A, B = assemble_momentum(basis_u, basis_p, mesh, nu)
    C = assemble_convective_tensor(basis_u, mesh, cap=cap)
    D, G, N_mat, T_mat = assemble_ppe(basis_u, basis_p, mesh, nu, cap=cap)
    P1 = P2 = None
    areas = None
    face_values = None
    if penalty_patches:
        P1, P2 = assemble_penalty(basis_u, penalty_patches)
        areas = [mesh.patch(n).face_areas.sum() for n in penalty_patches]
        # per-face traces, shape (2, r, n_faces) per patch
        face_values = [
            np.stack([phi.boundary_values[n] for phi in basis_u.modes],
                     axis=1).transpose(2, 1, 0)
            for n in penalty_patches]
    lbv = [lf.boundary_vector for lf in basis_u.liftings]
    controlled = tuple(lf.patch_name for lf in basis_u.liftings) \
        + penalty_patches
    return ReducedSystem(
        nu, M, A, B, C, D, G, N_mat, T_mat,
        n_lift=basis_u.n_lift,
        lifting_patches=[lf.patch_name for lf in basis_u.liftings],
        lifting_boundary_vectors=np.array(lbv).reshape(-1, 2),
        P1=P1, P2=P2, penalty_patches=penalty_patches,
        penalty_patch_areas=areas,
        boundary_means=_patch_boundary_means(basis_u, controlled),
        penalty_face_values=face_values,
        mesh_signature=mesh.signature(), lineage=lineage)
