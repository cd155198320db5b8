"""Full-order incompressible Navier-Stokes solvers on the FV mesh.

Transient scheme (solve_transient)
----------------------------------
Segregated outer loop per time step, in the PIMPLE spirit:

  1. implicit momentum predictor
         c0/dt u + div(F u) - nu lap(u) = rhs_time/dt - grad(p)
     with the convecting face fluxes F lagged and the pressure gradient
     explicit from the latest pressure field;
  2. velocity correction: exact discrete projection of the predicted
     cell velocities onto the divergence constraint D u + b(t) = 0
     (Gauss divergence with the scheduled boundary fluxes), solved via
     the normal equations with the adjoint of D as correction
     direction, so the discrete continuity residual per step is at the
     linear-solver level by construction;
  3. pressure Poisson solve on the corrected velocity,
         lap(p) = -div(div(u x u)),
     with the Neumann boundary condition
         n . grad(p) = -(nu n . (curl curl u) + n . d(bc)/dt)
     on Dirichlet-velocity boundaries (curl-curl reduces in 2D to the
     tangential derivative of the vorticity, evaluated one-sided at the
     boundary; the schedule derivative is analytic) and a fixed level
     at the outlet, or a pinned reference cell when every boundary is
     Neumann. The resulting pressure drives the next predictor and is
     what snapshots store.

Time integration is BDF2 bootstrapped with one implicit-Euler step.
The steady solver runs the same machinery in pseudo-time until the
steady momentum residual drops below tolerance, which plays the role of
a SIMPLE-style under-relaxed iteration. The potential-flow solver
produces divergence-free lifting fields from a Laplace problem followed
by the same exact projection.
"""

import hashlib
import json
import time as _time

import numpy as np
import scipy.sparse as sp

from . import operators as ops
from .errors import ConfigError, NumericalError
from .linsolve import DEFAULT_TOL, LinearSolver
from .mesh_fields import (DIRICHLET, OUTLET, SIDE_NORMALS, WALL,
                          ScalarField, VectorField)
from .schedule import BCSchedule


class FomConfig:
    """Parameters of a transient full-order run.

    bc_schedule maps every Dirichlet patch name to a BCSchedule.
    initial_field_source is "zero", "steady" or "file" (the latter
    reads a velocity field from initial_file).
    """

    def __init__(self, nu, dt, t_end, snapshot_interval, bc_schedule,
                 n_outer=2, n_inner=2, lin_tol=DEFAULT_TOL,
                 initial_field_source="zero", initial_file=None,
                 convection_blend=1.0, divergence_patience=50):
        if nu <= 0.0:
            raise ConfigError("kinematic viscosity must be positive")
        if dt <= 0.0:
            raise ConfigError("time step must be positive")
        if t_end <= 0.0:
            raise ConfigError("t_end must be positive")
        steps = snapshot_interval / dt
        if abs(steps - round(steps)) > 1e-9:
            raise ConfigError("snapshot_interval must be an integer multiple of dt")
        if abs(t_end / dt - round(t_end / dt)) > 1e-9:
            raise ConfigError("t_end must be an integer multiple of dt")
        if initial_field_source not in ("zero", "steady", "file"):
            raise ConfigError(f"unknown initial_field_source {initial_field_source!r}")
        if initial_field_source == "file" and not initial_file:
            raise ConfigError("initial_field_source 'file' requires initial_file")
        if not 0.0 <= convection_blend <= 1.0:
            raise ConfigError("convection_blend must lie in [0, 1]")
        self.nu = float(nu)
        self.dt = float(dt)
        self.t_end = float(t_end)
        self.snapshot_interval = float(snapshot_interval)
        self.bc_schedule = dict(bc_schedule)
        self.n_outer = int(n_outer)
        self.n_inner = int(n_inner)
        self.lin_tol = float(lin_tol)
        self.initial_field_source = initial_field_source
        self.initial_file = initial_file
        self.convection_blend = float(convection_blend)
        self.divergence_patience = int(divergence_patience)

    def to_dict(self):
        return {
            "nu": self.nu, "dt": self.dt, "t_end": self.t_end,
            "snapshot_interval": self.snapshot_interval,
            "bc_schedule": {k: v.to_list() for k, v in self.bc_schedule.items()},
            "n_outer": self.n_outer, "n_inner": self.n_inner,
            "lin_tol": self.lin_tol,
            "initial_field_source": self.initial_field_source,
            "initial_file": self.initial_file,
            "convection_blend": self.convection_blend,
        }

    def provenance_hash(self):
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


class SnapshotSet:
    """Time-stamped velocity/pressure snapshot sequence with the BC trace."""

    def __init__(self, mesh, times, velocity_fields, pressure_fields,
                 bc_trace, config_hash="", wall_time=None):
        times = np.asarray(times, dtype=np.float64)
        if not (len(times) == len(velocity_fields) == len(pressure_fields)):
            raise ValueError("snapshot lists must have equal length")
        if times.size > 1 and not np.all(np.diff(times) > 0.0):
            raise ValueError("snapshot times must be strictly increasing")
        self.mesh = mesh
        self.times = times
        self.velocity_fields = list(velocity_fields)
        self.pressure_fields = list(pressure_fields)
        self.bc_trace = {k: np.asarray(v, dtype=np.float64)
                         for k, v in bc_trace.items()}
        self.config_hash = config_hash
        self.wall_time = wall_time

    def __len__(self):
        return self.times.size


# ----------------------------------------------------------- assembly

def _scheduled_boundary_values(mesh, schedules, t, u_cells):
    """Per-patch boundary-value dict at time t: scheduled vectors on
    Dirichlet patches, zeros on walls, cell copies on outlets."""
    out = {}
    for p in mesh.patches:
        if p.kind == DIRICHLET:
            out[p.name] = np.tile(schedules[p.name](t), (p.n_faces, 1))
        elif p.kind == OUTLET:
            out[p.name] = u_cells[p.cells].copy()
        else:
            out[p.name] = np.zeros((p.n_faces, 2))
    return out


def _velocity_field(mesh, u_cells, bc_vals, t=None):
    f = VectorField(mesh, u_cells, time_stamp=t)
    for name, arr in bc_vals.items():
        f.boundary_values[name] = np.asarray(arr, dtype=np.float64)
    return f


def build_divergence_operator(mesh):
    """Sparse Gauss-divergence operator D working on stacked cell
    velocities [u_x; u_y] (net outward flux per cell) and the masks
    needed to assemble its fixed boundary part b(t).

    Outlet faces contribute to D (zero-gradient copy); Dirichlet and
    wall faces carry prescribed values and go into b.
    """
    n = mesh.n_cells
    rows, cols, data = [], [], []
    for side in range(4):
        area, _ = ops._side_geometry(mesh, side)
        nb = mesh.nbr[:, side]
        has = np.flatnonzero(nb >= 0)
        nrm = SIDE_NORMALS[side]
        comp = 0 if side < 2 else 1
        sgn = nrm[comp]
        rows.extend([has, has])
        cols.extend([has + comp * n, nb[has] + comp * n])
        half = np.full(has.size, 0.5 * area * sgn)
        data.extend([half, half])
    is_outlet = np.array([mesh.patches[ip].kind == OUTLET
                          for ip in mesh.bf_patch])
    of = np.flatnonzero(is_outlet)
    if of.size:
        comp = np.where(mesh.bf_side[of] < 2, 0, 1)
        sgn = SIDE_NORMALS[mesh.bf_side[of], comp]
        rows.append(mesh.bf_cell[of])
        cols.append(mesh.bf_cell[of] + comp * n)
        data.append(mesh.bf_area[of] * sgn)
    D = sp.csr_matrix((np.concatenate(data),
                       (np.concatenate(rows), np.concatenate(cols))),
                      shape=(n, 2 * n))
    return D, ~is_outlet


def _fixed_boundary_flux(mesh, bc_vals, fixed_mask):
    """b(t): net prescribed boundary flux per cell from non-outlet faces."""
    b = np.zeros(mesh.n_cells)
    gvals = np.zeros((mesh.n_bfaces, 2))
    for p in mesh.patches:
        gvals[p.face_ids] = bc_vals[p.name]
    f = np.flatnonzero(fixed_mask)
    fl = mesh.bf_area[f] * np.einsum("fc,fc->f", gvals[f],
                                     SIDE_NORMALS[mesh.bf_side[f]])
    np.add.at(b, mesh.bf_cell[f], fl)
    return b


class DivergenceProjector:
    """Exact projection of cell velocities onto D u + b = 0."""

    def __init__(self, mesh, lin_tol=DEFAULT_TOL):
        self.mesh = mesh
        self.D, self.fixed_mask = build_divergence_operator(mesh)
        DDt = (self.D @ self.D.T).tolil()
        self.pin = None
        if not any(p.kind == OUTLET for p in mesh.patches):
            # all boundary fluxes prescribed: multipliers defined up to a
            # constant; pin the cell nearest the origin
            self.pin = int(np.argmin(np.einsum("ic,ic->i", mesh.cell_centers,
                                               mesh.cell_centers)))
            DDt.rows[self.pin] = [self.pin]
            DDt.data[self.pin] = [1.0]
        self.solver = LinearSolver(DDt.tocsc(), symmetric=self.pin is None,
                                   tol=lin_tol, cached=True)

    def project(self, u_cells, bc_vals):
        flat = np.concatenate([u_cells[:, 0], u_cells[:, 1]])
        b = _fixed_boundary_flux(self.mesh, bc_vals, self.fixed_mask)
        rhs = -(self.D @ flat + b)
        if self.pin is not None:
            rhs = rhs - rhs.mean()     # make the singular system compatible
            rhs[self.pin] = 0.0
        lam = self.solver.solve(rhs)
        corr = self.D.T @ lam
        n = self.mesh.n_cells
        return u_cells + np.column_stack([corr[:n], corr[n:]])


class PressurePoisson:
    """Compact-Laplacian PPE with the curl-curl Neumann boundary
    condition on Dirichlet-velocity boundaries and fixed outlet level."""

    def __init__(self, mesh, nu, lin_tol=DEFAULT_TOL, blend=1.0):
        self.mesh = mesh
        self.nu = float(nu)
        self.blend = float(blend)
        n = mesh.n_cells
        rows, cols, data = [], [], []
        for side in range(4):
            area, delta = ops._side_geometry(mesh, side)
            nb = mesh.nbr[:, side]
            has = np.flatnonzero(nb >= 0)
            w = area / delta
            rows.extend([has, has])
            cols.extend([has, nb[has]])
            data.extend([np.full(has.size, -w), np.full(has.size, w)])
        self.is_pdirichlet = np.array(
            [mesh.patches[ip].kind == OUTLET for ip in mesh.bf_patch])
        pf = np.flatnonzero(self.is_pdirichlet)
        if pf.size:
            w = mesh.bf_area[pf] / mesh.bf_dist[pf]
            rows.append(mesh.bf_cell[pf])
            cols.append(mesh.bf_cell[pf])
            data.append(-w)
            self.pin = None
        else:
            self.pin = int(np.argmin(np.einsum("ic,ic->i", mesh.cell_centers,
                                               mesh.cell_centers)))
        A = sp.lil_matrix((n, n))
        A += sp.csr_matrix((np.concatenate(data),
                            (np.concatenate(rows), np.concatenate(cols))),
                           shape=(n, n))
        if self.pin is not None:
            A.rows[self.pin] = [self.pin]
            A.data[self.pin] = [1.0]
        self.solver = LinearSolver(A.tocsc(), symmetric=False, tol=lin_tol,
                                   cached=True)

    def boundary_flux(self, u_field, schedules, t):
        """Neumann data n . grad(p) per boundary face (zero where the
        pressure is Dirichlet)."""
        m = self.mesh
        q = -self.nu * ops.boundary_curl_normal_component(u_field)
        for p in m.patches:
            if p.kind == DIRICHLET:
                dfdt = schedules[p.name].derivative(t)
                q[p.face_ids] -= p.normals @ dfdt
            elif p.kind == OUTLET:
                q[p.face_ids] = 0.0
        return q

    def solve(self, u_field, fluxes, schedules, t):
        """Returns the pressure as a ScalarField with boundary values
        consistent with the Neumann/Dirichlet data used."""
        m = self.mesh
        conv = ops.convection(fluxes, u_field, blend=self.blend)
        conv.set_global_boundary_values(conv.cell_values[m.bf_cell])
        rhs = -ops.divergence(conv).cell_values * m.cell_volumes
        q = self.boundary_flux(u_field, schedules, t)
        neu = np.flatnonzero(~self.is_pdirichlet)
        np.add.at(rhs, m.bf_cell[neu], -m.bf_area[neu] * q[neu])
        if self.pin is not None:
            rhs = rhs - m.cell_volumes * (rhs.sum() / m.cell_volumes.sum())
            rhs[self.pin] = 0.0
        p_cells = self.solver.solve(rhs)
        p = ScalarField(m, p_cells, time_stamp=t)
        bvals = p_cells[m.bf_cell] + q * m.bf_dist
        bvals[self.is_pdirichlet] = 0.0
        p.set_global_boundary_values(bvals)
        return p


class MomentumAssembler:
    """Implicit momentum matrix/RHS for one velocity component pair.

    The u and v components share the matrix (same boundary kinds on all
    faces), so one assembly serves two right-hand sides.
    """

    def __init__(self, mesh, nu, blend=1.0):
        self.mesh = mesh
        self.nu = float(nu)
        self.blend = float(blend)
        m = mesh
        self.is_dirichlet = np.array(
            [m.patches[ip].kind in (DIRICHLET, WALL) for ip in m.bf_patch])

    def assemble(self, c0_over_dt, fluxes):
        """Matrix for (c0/dt) u + div(F u) - nu lap(u), integrated over
        cells, plus the constant boundary RHS pieces (per component)."""
        m = self.mesh
        n = m.n_cells
        rows, cols, data = [], [], []
        diag = m.cell_volumes * c0_over_dt
        rows.append(np.arange(n)); cols.append(np.arange(n)); data.append(diag)
        g = self.blend
        for side in range(4):
            area, delta = ops._side_geometry(m, side)
            nb = m.nbr[:, side]
            has = np.flatnonzero(nb >= 0)
            F = fluxes[has, side]
            upw = (F >= 0.0).astype(np.float64)
            c_own = F * (0.5 * g + (1.0 - g) * upw) + self.nu * area / delta
            c_nbr = F * (0.5 * g + (1.0 - g) * (1.0 - upw)) - self.nu * area / delta
            rows.extend([has, has])
            cols.extend([has, nb[has]])
            data.extend([c_own, c_nbr])
        # boundary faces
        bd = np.flatnonzero(self.is_dirichlet)
        if bd.size:
            cells = m.bf_cell[bd]
            wdiff = self.nu * m.bf_area[bd] / m.bf_dist[bd]
            rows.append(cells); cols.append(cells); data.append(wdiff)
        bo = np.flatnonzero(~self.is_dirichlet)
        if bo.size:   # outlet: zero-gradient, convective flux on the diagonal
            cells = m.bf_cell[bo]
            rows.append(cells); cols.append(cells)
            data.append(fluxes[cells, m.bf_side[bo]])
        A = sp.csr_matrix((np.concatenate(data),
                           (np.concatenate(rows), np.concatenate(cols))),
                          shape=(n, n))
        return A

    def boundary_rhs(self, fluxes, bc_vals):
        """RHS contribution of Dirichlet faces: diffusion plus the known
        convective boundary flux. Shape (n_cells, 2)."""
        m = self.mesh
        rhs = np.zeros((m.n_cells, 2))
        bd = np.flatnonzero(self.is_dirichlet)
        gvals = np.zeros((m.n_bfaces, 2))
        for p in m.patches:
            gvals[p.face_ids] = bc_vals[p.name]
        cells = m.bf_cell[bd]
        wdiff = self.nu * m.bf_area[bd] / m.bf_dist[bd]
        F = fluxes[cells, m.bf_side[bd]]
        np.add.at(rhs, cells, (wdiff - F)[:, None] * gvals[bd])
        return rhs


# -------------------------------------------------------------- solvers

class _TransientState:
    def __init__(self, mesh, u0, p0, fluxes):
        self.u = u0
        self.u_prev = u0.copy()
        self.p = p0
        self.fluxes = fluxes


def _steady_residual(mesh, nu, u_field, p_field, fluxes, blend):
    conv = ops.convection(fluxes, u_field, blend=blend)
    lap = ops.laplacian(u_field)
    gp = ops.gradient(p_field)
    r = conv.cell_values - nu * lap.cell_values + gp.cell_values
    return float(np.max(np.abs(r)))


def _check_schedules(mesh, schedules):
    names = {p.name for p in mesh.dirichlet_patches()}
    missing = names - set(schedules)
    if missing:
        raise ConfigError(f"no BC schedule for Dirichlet patches: {sorted(missing)}")


def solve_transient(mesh, config):
    """Advance the full-order model over [0, t_end], returning snapshots
    every snapshot_interval (the initial condition included)."""
    _check_schedules(mesh, config.bc_schedule)
    t_start = _time.perf_counter()
    schedules = config.bc_schedule
    nu, dt, blend = config.nu, config.dt, config.convection_blend

    if config.initial_field_source == "zero":
        u = np.zeros((mesh.n_cells, 2))
    elif config.initial_field_source == "steady":
        steady = {name: BCSchedule.constant(*sch(0.0))
                  for name, sch in schedules.items()}
        u_f, _ = solve_steady(mesh, nu, steady, blend=blend,
                              lin_tol=config.lin_tol)
        u = u_f.cell_values.copy()
    else:
        from . import io as _io
        field = _io.read_field(config.initial_file, mesh)
        if field.ncomp != 2:
            raise ConfigError("initial_file must hold a velocity field")
        u = field.cell_values.copy()

    projector = DivergenceProjector(mesh, config.lin_tol)
    ppe = PressurePoisson(mesh, nu, config.lin_tol, blend=blend)
    momentum = MomentumAssembler(mesh, nu, blend=blend)

    bc_vals = _scheduled_boundary_values(mesh, schedules, 0.0, u)
    u = projector.project(u, bc_vals)           # make the IC admissible
    u_field = _velocity_field(mesh, u, bc_vals, 0.0)
    fluxes = ops.face_fluxes(u_field)
    p_field = ppe.solve(u_field, fluxes, schedules, 0.0)

    if schedules:
        u_ref = max(max(np.linalg.norm(s(t))
                        for t in np.linspace(0.0, config.t_end, 7))
                    for s in schedules.values())
    else:
        u_ref = 0.0
    u_ref = max(u_ref, float(np.max(np.abs(u)) if u.size else 0.0), 1e-12)

    times = [0.0]
    vel_fields = [u_field.copy()]
    p_fields = [p_field.copy()]
    bc_trace = {name: [sch(0.0)] for name, sch in schedules.items()}

    n_steps = int(round(config.t_end / dt))
    snap_every = int(round(config.snapshot_interval / dt))
    u_prev = u.copy()
    u_prevprev = None
    res_prev = np.inf
    grow_streak = 0

    for k in range(1, n_steps + 1):
        t1 = k * dt
        if u_prevprev is None:
            c0, rhs_t = 1.0, u_prev.copy()
        else:
            c0, rhs_t = 1.5, 2.0 * u_prev - 0.5 * u_prevprev
        u_iter = u.copy()
        for _outer in range(config.n_outer):
            bc_vals = _scheduled_boundary_values(mesh, schedules, t1, u_iter)
            A = momentum.assemble(c0 / dt, fluxes)
            gp = ops.gradient(p_field).cell_values
            rhs = (mesh.cell_volumes[:, None] * (rhs_t / dt - gp)
                   + momentum.boundary_rhs(fluxes, bc_vals))
            solver = LinearSolver(A, symmetric=False, tol=config.lin_tol)
            u_star = np.column_stack([solver.solve(rhs[:, 0]),
                                      solver.solve(rhs[:, 1])])
            # corrector: exact projection, then the pressure consistent
            # with the corrected field (a single pass suffices because
            # the projection enforces continuity exactly)
            bc_vals = _scheduled_boundary_values(mesh, schedules, t1, u_star)
            u_star = projector.project(u_star, bc_vals)
            bc_vals = _scheduled_boundary_values(mesh, schedules, t1, u_star)
            u_field = _velocity_field(mesh, u_star, bc_vals, t1)
            fluxes = ops.face_fluxes(u_field)
            p_field = ppe.solve(u_field, fluxes, schedules, t1)
            u_iter = u_star

        if not np.all(np.isfinite(u_iter)):
            raise NumericalError(f"non-finite velocity at step {k} (t = {t1:g})")
        umax = float(np.max(np.abs(u_iter)))
        if umax > 1e3 * u_ref:
            raise NumericalError(
                f"velocity magnitude {umax:.3g} exceeds guard at step {k}")
        jump = float(np.max(np.abs(u_iter - u_prev)))
        if jump > res_prev:
            grow_streak += 1
            if grow_streak > config.divergence_patience and jump > 2.0 * u_ref:
                raise NumericalError(
                    f"per-step velocity change growing for "
                    f"{grow_streak} consecutive steps (step {k})")
        else:
            grow_streak = 0
        res_prev = jump

        u_prevprev = u_prev
        u_prev = u_iter
        u = u_iter

        if k % snap_every == 0:
            times.append(t1)
            vel_fields.append(u_field.copy())
            p_fields.append(p_field.copy())
            for name, sch in schedules.items():
                bc_trace[name].append(sch(t1))

    wall = _time.perf_counter() - t_start
    return SnapshotSet(mesh, times, vel_fields, p_fields,
                       {k: np.array(v) for k, v in bc_trace.items()},
                       config_hash=config.provenance_hash(), wall_time=wall)


def solve_steady(mesh, nu, bc_schedule, blend=1.0, lin_tol=DEFAULT_TOL,
                 pseudo_cfl=10.0, tol=1e-6, max_iters=20000, check_every=10):
    """Steady solution by under-relaxed fixed-point iteration (implicit
    pseudo-time stepping of the transient machinery). bc_schedule maps
    Dirichlet patches to BCSchedule objects, evaluated at t = 0; they
    must be stationary. Returns (velocity, pressure) with the steady
    momentum residual below tol * U_ref^2 / L_ref."""
    _check_schedules(mesh, bc_schedule)
    schedules = {}
    for name, sch in bc_schedule.items():
        v = sch(0.0)
        if np.any(np.abs(sch.derivative(0.0)) > 0.0):
            raise ConfigError("steady solve requires stationary BCs")
        schedules[name] = BCSchedule.constant(v[0], v[1])

    u_ref = max((float(np.linalg.norm(s(0.0))) for s in schedules.values()),
                default=0.0)
    l_ref = max(mesh.nx * mesh.dx, mesh.ny * mesh.dy)
    h = min(mesh.dx, mesh.dy)
    dt = pseudo_cfl * h / (u_ref if u_ref > 0.0 else 1.0)
    res_scale = (u_ref ** 2 / l_ref) if u_ref > 0.0 else 1.0

    projector = DivergenceProjector(mesh, lin_tol)
    ppe = PressurePoisson(mesh, nu, lin_tol, blend=blend)
    momentum = MomentumAssembler(mesh, nu, blend=blend)

    u = np.zeros((mesh.n_cells, 2))
    bc_vals = _scheduled_boundary_values(mesh, schedules, 0.0, u)
    u = projector.project(u, bc_vals)
    u_field = _velocity_field(mesh, u, bc_vals)
    fluxes = ops.face_fluxes(u_field)
    p_field = ppe.solve(u_field, fluxes, schedules, 0.0)

    res = np.inf
    for it in range(1, max_iters + 1):
        A = momentum.assemble(1.0 / dt, fluxes)
        gp = ops.gradient(p_field).cell_values
        rhs = (mesh.cell_volumes[:, None] * (u / dt - gp)
               + momentum.boundary_rhs(fluxes, bc_vals))
        solver = LinearSolver(A, symmetric=False, tol=lin_tol)
        u_new = np.column_stack([solver.solve(rhs[:, 0]),
                                 solver.solve(rhs[:, 1])])
        bc_vals = _scheduled_boundary_values(mesh, schedules, 0.0, u_new)
        u_new = projector.project(u_new, bc_vals)
        bc_vals = _scheduled_boundary_values(mesh, schedules, 0.0, u_new)
        u_field = _velocity_field(mesh, u_new, bc_vals)
        fluxes = ops.face_fluxes(u_field)
        p_field = ppe.solve(u_field, fluxes, schedules, 0.0)
        if not np.all(np.isfinite(u_new)):
            raise NumericalError(f"non-finite velocity in steady iteration {it}")
        u = u_new
        if it % check_every == 0:
            res = _steady_residual(mesh, nu, u_field, p_field, fluxes, blend)
            if res < tol * res_scale:
                return u_field, p_field
    raise NumericalError(
        f"steady solve did not converge within {max_iters} iterations "
        f"(residual {res:.3g}, tolerance {tol * res_scale:.3g})")


def solve_potential_flow(mesh, inlet_spec, lin_tol=DEFAULT_TOL):
    """Divergence-free potential-flow field for lifting generation.

    inlet_spec maps Dirichlet patch names to prescribed uniform velocity
    vectors (one patch at its unit value, the others zero when building
    a lifting basis). Solves the Laplace potential problem with the
    prescribed normal influx, fixes the level at the outlet, then
    projects exactly onto the discrete divergence constraint so the
    returned cell field has machine-level Gauss divergence. Wall
    boundary values keep the tangential slip of the adjacent cell.
    """
    names = {p.name for p in mesh.dirichlet_patches()}
    missing = names - set(inlet_spec)
    if missing:
        raise ConfigError(f"no inlet value for Dirichlet patches: {sorted(missing)}")
    if not any(p.kind == OUTLET for p in mesh.patches):
        raise NumericalError("potential flow needs an outlet patch to fix "
                             "the pressure level (singular system otherwise)")
    spec = {}
    for name, v in inlet_spec.items():
        v = v(0.0) if callable(v) else np.asarray(v, dtype=np.float64)
        spec[name] = v.reshape(2)

    n = mesh.n_cells
    rows, cols, data = [], [], []
    for side in range(4):
        area, delta = ops._side_geometry(mesh, side)
        nb = mesh.nbr[:, side]
        has = np.flatnonzero(nb >= 0)
        w = area / delta
        rows.extend([has, has])
        cols.extend([has, nb[has]])
        data.extend([np.full(has.size, -w), np.full(has.size, w)])
    rhs = np.zeros(n)
    out_faces = []
    for p in mesh.patches:
        if p.kind == DIRICHLET:
            # prescribed influx: n . grad(phi) = u . n
            un = np.einsum("fc,c->f", p.normals, spec[p.name])
            np.add.at(rhs, p.cells, -p.face_areas * un)
        elif p.kind == OUTLET:
            out_faces.append(p.face_ids)
    of = np.concatenate(out_faces)
    w = mesh.bf_area[of] / mesh.bf_dist[of]
    rows.append(mesh.bf_cell[of]); cols.append(mesh.bf_cell[of]); data.append(-w)
    A = sp.csr_matrix((np.concatenate(data),
                       (np.concatenate(rows), np.concatenate(cols))),
                      shape=(n, n))
    phi = LinearSolver(A.tocsc(), symmetric=True, tol=lin_tol,
                       cached=True).solve(rhs)

    phi_field = ScalarField(mesh, phi)
    bvals = phi[mesh.bf_cell].copy()
    for p in mesh.patches:
        if p.kind == DIRICHLET:
            un = np.einsum("fc,c->f", p.normals, spec[p.name])
            bvals[p.face_ids] = phi[p.cells] + un * mesh.bf_dist[p.face_ids]
        elif p.kind == OUTLET:
            bvals[p.face_ids] = 0.0
    phi_field.set_global_boundary_values(bvals)
    u0 = ops.gradient(phi_field).cell_values

    bc_vals = {}
    for p in mesh.patches:
        if p.kind == DIRICHLET:
            bc_vals[p.name] = np.tile(spec[p.name], (p.n_faces, 1))
        else:
            bc_vals[p.name] = np.zeros((p.n_faces, 2))
    projector = DivergenceProjector(mesh, lin_tol)
    u = projector.project(u0, bc_vals)

    field = VectorField(mesh, u)
    for p in mesh.patches:
        if p.kind == DIRICHLET:
            field.boundary_values[p.name] = np.tile(spec[p.name], (p.n_faces, 1))
        elif p.kind == OUTLET:
            field.boundary_values[p.name] = u[p.cells].copy()
        else:
            # slip wall: keep the tangential component of the inner cell
            nrm = p.normals
            uc = u[p.cells]
            un = np.einsum("fc,fc->f", uc, nrm)
            field.boundary_values[p.name] = uc - un[:, None] * nrm
    return field
