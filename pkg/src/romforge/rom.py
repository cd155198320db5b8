"""Time integration of the reduced system and boundary enforcement.

The coupled unknowns per step are the velocity coefficients a and the
pressure coefficients b. Implicit Euler in time gives the nonlinear
residuals

    R_u = M (a - a_n)/dt + C:aa - nu A a + B b
          [+ sum_lc tau_lc (P1_lc a - g_lc(t) P2_lc)]
    R_p = D b + G:aa - nu N a - T (a - a_n)/dt

solved by Newton with the exact Jacobian (the system is quadratic in a
and linear in b, so convergence from the previous step is fast).

Boundary enforcement comes in three flavors, selected by
RomConfig.method:

* lifting: the leading coefficients belong to unit-norm lifting fields
  and are pinned each step to the multiplier reproducing the scheduled
  boundary vector; their momentum rows are replaced by the pin.
* penalty: all modes are free, and per-patch, per-component penalty
  factors tau push the reconstructed boundary value toward the
  schedule. tune_penalty calibrates the factors on the leading n_tau
  steps: a step is accepted only once its boundary residuals are
  within epsilon, and every violating factor is multiplied by
  residual/epsilon (> 1), so factors grow strictly until their
  residual passes.
* none: no enforcement at all; with a quiescent initial state the
  trajectory stays exactly zero because nothing couples the boundary
  data into the system.
"""

import time as _time

import numpy as np

from .errors import ConfigError, NumericalError
from .mesh_fields import inner_product
from .pod import CoefficientTrajectory

METHODS = ("lifting", "penalty", "none")


class PenaltyConfig:
    """Knobs of the iterative penalty calibration.

    n_tau is the number of leading time steps the tuner evaluates;
    tau_cap aborts runaway factors before the system turns
    ill-conditioned; residual_mode picks the scalar reduction of the
    per-face boundary mismatch (area-weighted patch mean by default,
    or the per-face maximum).
    """

    def __init__(self, tau0=1.0, epsilon=1e-5, n_tau=5,
                 max_tuning_iters=100, tau_cap=1e12, residual_mode="mean"):
        if tau0 <= 0.0:
            raise ConfigError("tau0 must be positive")
        if epsilon <= 0.0:
            raise ConfigError("epsilon must be positive")
        if n_tau < 1:
            raise ConfigError("n_tau must be at least 1")
        if max_tuning_iters < 1:
            raise ConfigError("max_tuning_iters must be at least 1")
        if tau_cap <= tau0:
            raise ConfigError("tau_cap must exceed tau0")
        if residual_mode not in ("mean", "max"):
            raise ConfigError(f"unknown residual_mode {residual_mode!r}")
        self.tau0 = float(tau0)
        self.epsilon = float(epsilon)
        self.n_tau = int(n_tau)
        self.max_tuning_iters = int(max_tuning_iters)
        self.tau_cap = float(tau_cap)
        self.residual_mode = residual_mode


class RomConfig:
    """Parameters of a reduced online run."""

    def __init__(self, dt, t_online, method, bc_schedule=None,
                 newton_tol=1e-10, newton_max_iter=30, penalty=None):
        if dt <= 0.0:
            raise ConfigError("dt must be positive")
        if t_online <= 0.0:
            raise ConfigError("t_online must be positive")
        if method not in METHODS:
            raise ConfigError(f"unknown method {method!r}; "
                              f"expected one of {METHODS}")
        self.dt = float(dt)
        self.t_online = float(t_online)
        self.method = method
        self.bc_schedule = dict(bc_schedule or {})
        for name, sch in self.bc_schedule.items():
            if not sch.covers(self.t_online):
                raise ConfigError(f"schedule for patch {name!r} does not "
                                  f"cover [0, {self.t_online:g}]")
        self.newton_tol = float(newton_tol)
        self.newton_max_iter = int(newton_max_iter)
        self.penalty = penalty


def lifting_coefficients(system, bc_schedules, t):
    """Pinned coefficients of the lifting modes at time t."""
    out = np.empty(system.n_lift)
    for j, name in enumerate(system.lifting_patches):
        s = system.lifting_boundary_vectors[j]
        g = bc_schedules[name](t)
        out[j] = float(g @ s) / float(s @ s)
    return out


def reconstruct_boundary_value(basis_u, coeffs, patch_name, component):
    """Area-weighted mean of the reconstructed velocity component over
    a patch: sum_f A_f sum_i a_i phi_i(f) / sum_f A_f."""
    patch = basis_u.mesh.patch(patch_name)
    if patch.n_faces == 0:
        raise ValueError(f"patch {patch_name!r} has no faces")
    coeffs = np.asarray(coeffs, dtype=np.float64)
    vals = np.stack([m.boundary_values[patch_name][:, component]
                     for m in basis_u.modes])
    w = patch.face_areas / patch.face_areas.sum()
    return float(coeffs @ (vals @ w))


def penalty_targets(system, bc_schedules, t):
    """Scheduled boundary vectors per penalty patch, shape (n_pat, 2)."""
    return np.array([bc_schedules[name](t)
                     for name in system.penalty_patches])


def apply_penalty_terms(system, a, tau, u_bc):
    """Penalty contribution to the momentum residual and Jacobian.

    u_bc holds the scheduled boundary vectors per penalty patch,
    shape (n_patches, 2). Returns (residual_rows, jacobian_block) with
    residual_rows = sum_lc tau_lc (P1_lc a - u_bc_lc P2_lc) and
    jacobian_block = sum_lc tau_lc P1_lc.
    """
    if not system.has_penalty:
        raise ConfigError("system carries no penalty blocks")
    tau = np.asarray(tau, dtype=np.float64)
    u_bc = np.asarray(u_bc, dtype=np.float64)
    npat = len(system.penalty_patches)
    if tau.shape != (npat, 2):
        raise ConfigError(f"tau must have shape ({npat}, 2)")
    if u_bc.shape != (npat, 2):
        raise ConfigError(f"u_bc must have shape ({npat}, 2)")
    J = np.einsum("lc,lcij->ij", tau, system.P1)
    r = J @ a - np.einsum("lc,lc,lci->i", tau, u_bc, system.P2)
    return r, J


class _Stepper:
    """Preassembled pieces of the per-step Newton solve."""

    def __init__(self, system, dt, tau=None):
        self.sys = system
        self.dt = float(dt)
        self.nl = system.n_lift
        self.K_u = system.M / dt - system.nu * system.A
        if system.has_penalty and tau is not None:
            self.tau = np.asarray(tau, dtype=np.float64)
            self.J_pen = np.einsum("lc,lcij->ij", self.tau, system.P1)
            self.K_u = self.K_u + self.J_pen
        else:
            self.tau = None
        self.K_p = -system.nu * system.N_mat - system.T_mat / dt

    def residual(self, a, b, a_n, rhs_pen):
        sys = self.sys
        Ru = (self.K_u @ a - sys.M @ a_n / self.dt
              + np.einsum("ijk,j,k->i", sys.C, a, a)
              + sys.B @ b)
        if rhs_pen is not None:
            Ru = Ru - rhs_pen
        Rp = (sys.D @ b + np.einsum("ijk,j,k->i", sys.G, a, a)
              + self.K_p @ a + sys.T_mat @ a_n / self.dt)
        return Ru, Rp

    def jacobian(self, a):
        sys = self.sys
        Ca = np.einsum("ijk,k->ij", sys.C, a) + \
            np.einsum("ikj,k->ij", sys.C, a)
        Ga = np.einsum("ijk,k->ij", sys.G, a) + \
            np.einsum("ikj,k->ij", sys.G, a)
        ru, rp = sys.r_u, sys.r_p
        J = np.zeros((ru + rp, ru + rp))
        J[:ru, :ru] = self.K_u + Ca
        J[:ru, ru:] = sys.B
        J[ru:, :ru] = self.K_p + Ga
        J[ru:, ru:] = sys.D
        return J

    def step(self, a_n, b_n, pins=None, targets=None,
             newton_tol=1e-10, max_newton=30):
        """One implicit-Euler step. pins holds the prescribed values of
        the lifting coefficients at the new time level; targets the
        scheduled penalty boundary vectors (n_pat, 2)."""
        sys = self.sys
        ru = sys.r_u
        nl = self.nl
        rhs_pen = None
        if self.tau is not None and targets is not None:
            rhs_pen = np.einsum("lc,lc,lci->i", self.tau, targets, sys.P2)
        a = a_n.copy()
        b = b_n.copy()
        if pins is not None and nl:
            a[:nl] = pins
        scale = max(1.0, float(np.max(np.abs(a_n))),
                    float(np.max(np.abs(b_n))))
        if self.tau is not None:
            # penalty rows scale with tau; the attainable residual floor
            # grows with it
            scale *= max(1.0, float(self.tau.max()))
        for _ in range(max_newton):
            Ru, Rp = self.residual(a, b, a_n, rhs_pen)
            if nl:
                Ru = Ru.copy()
                Ru[:nl] = 0.0     # pinned rows are satisfied by construction
            res = max(float(np.max(np.abs(Ru))), float(np.max(np.abs(Rp))))
            if res <= newton_tol * scale:
                return a, b
            J = self.jacobian(a)
            if nl:
                J[:nl, :] = 0.0
                J[np.arange(nl), np.arange(nl)] = 1.0
            try:
                dx = np.linalg.solve(J, -np.concatenate([Ru, Rp]))
            except np.linalg.LinAlgError as exc:
                raise NumericalError(f"singular reduced Jacobian: {exc}")
            a = a + dx[:ru]
            b = b + dx[ru:]
            x_scale = max(1.0, float(np.max(np.abs(a))),
                          float(np.max(np.abs(b))))
            if float(np.max(np.abs(dx))) <= 1e-13 * x_scale:
                return a, b
        raise NumericalError(
            f"reduced Newton iteration stalled (residual {res:.3g}, "
            f"tolerance {newton_tol * scale:.3g})")


def _check_bc(system, config):
    if config.method == "lifting" and not system.n_lift:
        raise ConfigError("lifting method needs a system assembled on an "
                          "extended basis")
    if config.method == "penalty" and not system.has_penalty:
        raise ConfigError("penalty method needs penalty blocks in the "
                          "system")
    needed = set(system.lifting_patches)
    if config.method == "penalty":
        needed |= set(system.penalty_patches)
    missing = needed - set(config.bc_schedule)
    if missing:
        raise ConfigError(f"no BC schedule for patches: {sorted(missing)}")


def _boundary_trace(system, A):
    """Reconstructed mean boundary vectors per controlled patch for a
    whole coefficient history A (n_times, r_u)."""
    out = {}
    for l, name in enumerate(system.controlled_patches):
        out[name] = A @ system.boundary_means[l].T
    return out


def integrate(system, config, ic, tau=None, guard=1e6):
    """Advance the reduced system from ic = (a0, b0) over
    [0, t_online], returning the trajectory sampled at every step.

    tau is the penalty factor array (n_patches, 2); required when
    config.method is "penalty" (typically from tune_penalty).
    """
    _check_bc(system, config)
    a0, b0 = ic
    a0 = np.asarray(a0, dtype=np.float64)
    b0 = np.asarray(b0, dtype=np.float64)
    if a0.shape != (system.r_u,) or b0.shape != (system.r_p,):
        raise ConfigError("initial coefficients disagree with the system")
    if config.method == "penalty" and tau is None:
        raise ConfigError("penalty integration needs tau factors")
    dt, t_end = config.dt, config.t_online
    n_steps = int(round(t_end / dt))
    if abs(n_steps * dt - t_end) > 1e-9 * max(1.0, t_end):
        raise ConfigError("t_online must be an integer multiple of dt")
    t_start = _time.perf_counter()
    use_pen = config.method == "penalty"
    stepper = _Stepper(system, dt, tau=tau if use_pen else None)
    use_lift = config.method == "lifting"
    times = np.linspace(0.0, t_end, n_steps + 1)
    A = np.empty((n_steps + 1, system.r_u))
    B = np.empty((n_steps + 1, system.r_p))
    A[0], B[0] = a0, b0
    a, b = a0.copy(), b0.copy()
    ref = max(1.0, float(np.max(np.abs(a0))) if a0.size else 1.0)
    for k in range(1, n_steps + 1):
        t1 = times[k]
        pins = lifting_coefficients(system, config.bc_schedule, t1) \
            if use_lift else None
        targets = penalty_targets(system, config.bc_schedule, t1) \
            if use_pen else None
        a, b = stepper.step(a, b, pins=pins, targets=targets,
                            newton_tol=config.newton_tol,
                            max_newton=config.newton_max_iter)
        if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
            raise NumericalError(f"non-finite reduced state at t = {t1:g}")
        if float(np.max(np.abs(a))) > guard * ref:
            raise NumericalError(
                f"reduced coefficients exceed stability guard at t = {t1:g}")
        A[k], B[k] = a, b
    return CoefficientTrajectory(times, A, B,
                                 u_bc=_boundary_trace(system, A),
                                 wall_time=_time.perf_counter() - t_start)


def project_initial_conditions(u0, p0, basis_u, basis_p, bc0=None):
    """Reduced initial state (a0, b0) from full-order fields.

    Lifting coefficients are matched to the boundary data (from bc0, a
    patch-name -> vector dict, or else from the boundary values stored
    on u0); the homogenized remainder is projected onto the POD modes,
    and p0 onto the pressure modes.
    """
    u = u0
    lift_coeffs = []
    for lf in basis_u.liftings:
        if bc0 is not None and lf.patch_name in bc0:
            g = np.asarray(bc0[lf.patch_name], dtype=np.float64)
        else:
            patch = u0.mesh.patch(lf.patch_name)
            bv = u0.boundary_values[lf.patch_name]
            w = patch.face_areas / patch.face_areas.sum()
            g = np.einsum("f,fc->c", w, bv)
        c = float(lf.coefficient(g))
        lift_coeffs.append(c)
        u = u - c * lf.field
    a_pod = [inner_product(m, u) for m in basis_u.pod_modes]
    a0 = np.array(lift_coeffs + a_pod)
    b0 = np.array([inner_product(m, p0) for m in basis_p.modes])
    return a0, b0


class PenaltyTuneResult:
    """Outcome of the iterative penalty calibration.

    trace lists one (tau_before_update, residuals) pair per update, so
    monotone growth of the factors is inspectable after the fact.
    """

    def __init__(self, tau, residuals, iterations, converged, trace):
        self.tau = tau
        self.residuals = residuals
        self.iterations = iterations
        self.converged = converged
        self.trace = trace


def _step_residuals(system, a, targets, mode):
    """Boundary mismatch per penalty patch/component for one state."""
    npat = len(system.penalty_patches)
    r = np.empty((npat, 2))
    off = len(system.lifting_patches)
    for l in range(npat):
        if mode == "mean":
            vals = system.boundary_means[off + l] @ a
            r[l] = np.abs(vals - targets[l])
        else:
            fv = system.penalty_face_values[l]       # (2, r, n_faces)
            rec = np.einsum("crf,r->cf", fv, a)
            r[l] = np.max(np.abs(rec - targets[l][:, None]), axis=1)
    return r


def tune_penalty(system, config, ic=None):
    """Calibrate the penalty factors on the leading n_tau time steps.

    Marching through those steps, each one is accepted only when the
    reconstructed boundary values match the schedule within epsilon;
    otherwise every violating patch-component factor is multiplied by
    its residual/epsilon (> 1, so factors grow strictly) and the step
    is retried. Factors above tau_cap abort; exhausting
    max_tuning_iters returns the best factors with converged=False.
    The returned factors are meant for the whole online run.
    """
    _check_bc(system, config)
    if config.method != "penalty":
        raise ConfigError("tuning requires method='penalty'")
    pen = config.penalty or PenaltyConfig()
    npat = len(system.penalty_patches)
    tau = np.full((npat, 2), pen.tau0)
    eps = pen.epsilon
    trace = []
    updates = 0
    if ic is None:
        a = np.zeros(system.r_u)
        b = np.zeros(system.r_p)
    else:
        a = np.asarray(ic[0], dtype=np.float64).copy()
        b = np.asarray(ic[1], dtype=np.float64).copy()

    residuals = np.full((npat, 2), np.inf)
    k = 1
    while k <= pen.n_tau:
        t1 = k * config.dt
        stepper = _Stepper(system, config.dt, tau=tau)
        targets = penalty_targets(system, config.bc_schedule, t1)
        pins = lifting_coefficients(system, config.bc_schedule, t1) \
            if system.n_lift else None
        a_new, b_new = stepper.step(a, b, pins=pins, targets=targets,
                                    newton_tol=config.newton_tol,
                                    max_newton=config.newton_max_iter)
        r = _step_residuals(system, a_new, targets, pen.residual_mode)
        residuals = np.maximum(residuals, r) if k > 1 else r.copy()
        if np.all(r <= eps):
            a, b = a_new, b_new
            k += 1
            continue
        if updates >= pen.max_tuning_iters:
            return PenaltyTuneResult(tau, r, updates, False, trace)
        trace.append((tau.copy(), r.copy()))
        bad = r > eps
        tau[bad] *= r[bad] / eps
        updates += 1
        if np.any(tau > pen.tau_cap):
            raise NumericalError(
                f"penalty factors exceeded the cap {pen.tau_cap:g} after "
                f"{updates} updates (system likely ill-conditioned)")

    # verification pass over the tuned steps with frozen factors
    verify = RomConfig(config.dt, pen.n_tau * config.dt, "penalty",
                       bc_schedule=config.bc_schedule,
                       newton_tol=config.newton_tol,
                       newton_max_iter=config.newton_max_iter,
                       penalty=pen)
    a0 = np.zeros(system.r_u) if ic is None \
        else np.asarray(ic[0], dtype=np.float64)
    b0 = np.zeros(system.r_p) if ic is None \
        else np.asarray(ic[1], dtype=np.float64)
    traj = integrate(system, verify, (a0, b0), tau=tau)
    worst = np.zeros((npat, 2))
    for k in range(1, len(traj)):
        targets = penalty_targets(system, config.bc_schedule, traj.times[k])
        r = _step_residuals(system, traj.a[k], targets, pen.residual_mode)
        worst = np.maximum(worst, r)
    return PenaltyTuneResult(tau, worst, updates,
                             bool(np.all(worst <= eps)), trace)
